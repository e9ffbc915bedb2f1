"""Unified edit-instruction template: grammar, parser, and renderer.

The template reads

    Make {pronoun} facial expression {type} {intensity}
    and turn {pronoun} head {N} degrees {direction} [and {N} degrees {direction}]

with either clause optional (but not both absent).  Parsing is
case-insensitive; rendering emits the canonical capitalized form.  Sign
convention, used consistently by the kinematics module: "left" and "up" are
the positive yaw/pitch directions, "right" and "down" negative.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import ParseError, RangeError

EXPRESSION_TYPES = ("happy", "sad", "angry", "scared", "surprised", "disgusted", "neutral")
INTENSITY_LEVELS = ("slightly", "normally", "strongly")
AXES = ("yaw", "pitch")
PRONOUNS = ("his", "her", "his/her")
DEFAULT_INTENSITY = "normally"
MAX_DEGREES = 90


@dataclass(frozen=True)
class Expression:
    type: str
    intensity: str = DEFAULT_INTENSITY

    def __post_init__(self):
        if self.type not in EXPRESSION_TYPES:
            raise RangeError(f"unknown expression type {self.type!r}")
        if self.intensity not in INTENSITY_LEVELS:
            raise RangeError(f"unknown intensity {self.intensity!r}")


@dataclass(frozen=True)
class Rotation:
    axis: str
    degrees: int

    def __post_init__(self):
        if self.axis not in AXES:
            raise RangeError(f"unknown rotation axis {self.axis!r}")
        d = self.degrees
        if not isinstance(d, int) or isinstance(d, bool):
            raise RangeError("degrees must be an integer")
        if d == 0:
            raise RangeError("zero-degree rotation clause is not allowed")
        if abs(d) > MAX_DEGREES:
            raise RangeError(f"|degrees| must be <= {MAX_DEGREES}, got {d}")


@dataclass(frozen=True)
class EditInstruction:
    expression: Expression | None = None
    rotations: tuple = ()
    pronoun: str = "his/her"

    def __post_init__(self):
        object.__setattr__(self, "rotations", tuple(self.rotations))
        if self.expression is None and not self.rotations:
            raise RangeError("instruction needs an expression or at least one rotation")
        if self.pronoun not in PRONOUNS:
            raise RangeError(f"unknown pronoun {self.pronoun!r}")
        if len(self.rotations) > 2:
            raise RangeError("at most two rotation clauses")
        axes = [r.axis for r in self.rotations]
        if len(set(axes)) != len(axes):
            raise RangeError("duplicate rotation axis")

    def yaw(self) -> int:
        return next((r.degrees for r in self.rotations if r.axis == "yaw"), 0)

    def pitch(self) -> int:
        return next((r.degrees for r in self.rotations if r.axis == "pitch"), 0)


def instruction_to_json_obj(e: EditInstruction) -> dict:
    return {
        "expression": (
            None
            if e.expression is None
            else {"type": e.expression.type, "intensity": e.expression.intensity}
        ),
        "rotations": [{"axis": r.axis, "degrees": r.degrees} for r in e.rotations],
        "pronoun": e.pronoun,
    }


def instruction_from_json_obj(obj: dict) -> EditInstruction:
    expr = None
    if obj.get("expression") is not None:
        eo = obj["expression"]
        expr = Expression(eo["type"], eo.get("intensity", DEFAULT_INTENSITY))
    rots = tuple(Rotation(r["axis"], int(r["degrees"])) for r in obj.get("rotations", ()))
    return EditInstruction(expr, rots, obj.get("pronoun", "his/her"))


@dataclass
class _Token:
    word: str  # lowercased
    offset: int  # byte offset in the original text


def _tokenize(text: str) -> list:
    toks = []
    for m in re.finditer(r"\S+", text):
        word = m.group(0).lower().rstrip(".")
        offset = len(text[: m.start()].encode("utf-8"))
        if word:
            toks.append(_Token(word, offset))
    return toks


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.toks = _tokenize(text)
        self.pos = 0

    def _offset(self) -> int:
        if self.pos < len(self.toks):
            return self.toks[self.pos].offset
        return len(self.text.encode("utf-8"))

    def peek(self) -> str | None:
        if self.pos < len(self.toks):
            return self.toks[self.pos].word
        return None

    def take(self) -> _Token:
        tok = self.toks[self.pos]
        self.pos += 1
        return tok

    def expect(self, *choices: str) -> _Token:
        word = self.peek()
        if word is None or word not in choices:
            want = " or ".join(repr(c) for c in choices)
            raise ParseError(f"expected {want}, got {word!r}", self._offset())
        return self.take()

    def parse(self) -> EditInstruction:
        if not self.toks:
            raise ParseError("empty instruction", 0)
        expression = None
        rotations: list = []
        pronoun = None

        head = self.peek()
        if head == "make":
            expression, pronoun = self._expr_clause()
            if self.peek() == "and":
                self.take()
                self.expect("turn")
                rotations, p2 = self._pose_clause()
                if p2 != pronoun:
                    raise ParseError("pronoun mismatch between clauses", self._offset())
        elif head == "turn":
            self.take()
            rotations, pronoun = self._pose_clause()
        else:
            raise ParseError(f"expected 'make' or 'turn', got {head!r}", self._offset())

        if self.pos != len(self.toks):
            raise ParseError(f"trailing input {self.peek()!r}", self._offset())
        try:
            return EditInstruction(expression, tuple(rotations), pronoun)
        except RangeError as e:
            raise ParseError(str(e), 0) from e

    def _expr_clause(self):
        self.expect("make")
        pronoun = self.expect(*PRONOUNS).word
        self.expect("facial")
        self.expect("expression")
        word = self.peek()
        if word is None or word not in EXPRESSION_TYPES:
            raise ParseError(f"unrecognized expression word {word!r}", self._offset())
        etype = self.take().word
        intensity = DEFAULT_INTENSITY
        if self.peek() in INTENSITY_LEVELS:
            intensity = self.take().word
        return Expression(etype, intensity), pronoun

    def _pose_clause(self):
        # caller consumed "turn"
        pronoun = self.expect(*PRONOUNS).word
        self.expect("head")
        rotations = [self._angle_term()]
        if self.peek() == "and":
            self.take()
            rotations.append(self._angle_term())
        return rotations, pronoun

    def _angle_term(self) -> Rotation:
        word = self.peek()
        num_off = self._offset()
        if word is None or not re.fullmatch(r"-?\d+", word):
            raise ParseError(f"expected a degree number, got {word!r}", self._offset())
        magnitude = int(self.take().word)
        self.expect("degrees")
        direction = self.peek()
        if direction == "to":
            self.take()
            self.expect("the")
            direction = self.expect("left", "right").word
        elif direction in ("left", "right", "up", "down"):
            direction = self.take().word
        else:
            raise ParseError(f"missing direction word, got {direction!r}", self._offset())
        sign = {"left": +1, "right": -1, "up": +1, "down": -1}[direction]
        axis = "yaw" if direction in ("left", "right") else "pitch"
        try:
            return Rotation(axis, sign * magnitude)
        except RangeError as e:
            raise ParseError(str(e), num_off) from e


def parse_instruction(text: str) -> EditInstruction:
    """Parse instruction text; raises ParseError with a byte offset on failure."""
    return _Parser(text).parse()


def _angle_phrase(r: Rotation) -> str:
    mag = abs(r.degrees)
    if r.axis == "yaw":
        direction = "to the left" if r.degrees > 0 else "to the right"
    else:
        direction = "up" if r.degrees > 0 else "down"
    return f"{mag} degrees {direction}"


def render_instruction(e: EditInstruction) -> str:
    """Emit the canonical template string; parse_instruction inverts it."""
    parts = []
    if e.expression is not None:
        parts.append(
            f"make {e.pronoun} facial expression {e.expression.type} {e.expression.intensity}"
        )
    if e.rotations:
        terms = " and ".join(_angle_phrase(r) for r in e.rotations)
        parts.append(f"turn {e.pronoun} head {terms}")
    text = " and ".join(parts)
    return text[0].upper() + text[1:]
