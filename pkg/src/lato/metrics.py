"""Edit-evaluation metrics: SSIM, edit amplitudes, rectified identity score.

The rectified identity-preservation score undercuts the classic failure where
a model copies the source image and banks a perfect identity similarity: the
identity score is docked by how far the realized edit amplitude falls from
the instructed one, in either direction. Amplitudes live on [0, 1]: the
instructed side comes from a deterministic lookup table, the realized side
from 1 - SSIM between source and edit.
"""

import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, RangeError, ShapeError
from .instruction import EditInstruction, parse_instruction
from .landmarks import landmark_l1_error, parse_landmarks
from .pgm import read_pgm

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_L = 255.0

REPORT_SCHEMA_VERSION = 1


def _ssim_kernel() -> np.ndarray:
    half = SSIM_WINDOW // 2
    g = np.exp(-0.5 * (np.arange(-half, half + 1) / SSIM_SIGMA) ** 2)
    return g / g.sum()


def _corr_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    # separable Gaussian-weighted window sums, valid placements only
    rows = np.lib.stride_tricks.sliding_window_view(img, len(g), axis=1) @ g
    return np.lib.stride_tricks.sliding_window_view(rows, len(g), axis=0) @ g


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean local SSIM over Gaussian 11x11 windows (sigma 1.5) on [0, 255].

    Windows are evaluated only where they fit entirely inside the image.
    Identical inputs give exactly 1.0; the value can be negative for
    anti-correlated structure.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or a.shape != b.shape:
        raise ShapeError(f"images must be equal 2-D shapes, got {a.shape} vs {b.shape}")
    if a.shape[0] < SSIM_WINDOW or a.shape[1] < SSIM_WINDOW:
        raise ShapeError(f"images must be at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {a.shape}")
    for name, img in (("a", a), ("b", b)):
        if img.min() < 0 or img.max() > 255:
            raise ShapeError(f"image {name} intensities must be 8-bit (0..255)")
    g = _ssim_kernel()
    c1 = (SSIM_K1 * SSIM_L) ** 2
    c2 = (SSIM_K2 * SSIM_L) ** 2
    mu_a = _corr_valid(a, g)
    mu_b = _corr_valid(b, g)
    var_a = _corr_valid(a * a, g) - mu_a * mu_a
    var_b = _corr_valid(b * b, g) - mu_b * mu_b
    cov = _corr_valid(a * b, g) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float((num / den).mean())


def realized_amplitude(source: np.ndarray, edited: np.ndarray) -> float:
    """Edit strength actually present in the pixels: 1 - clamped SSIM."""
    return 1.0 - float(np.clip(ssim(source, edited), 0.0, 1.0))


@dataclass(frozen=True)
class AmplitudeTable:
    """Instructed-edit strength lookup; configuration values, not measurements."""

    slightly: float = 0.12
    normally: float = 0.25
    strongly: float = 0.40
    per_30deg: float = 0.15

    def __post_init__(self):
        for name in ("slightly", "normally", "strongly", "per_30deg"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {v}")


DEFAULT_AMPLITUDE_TABLE = AmplitudeTable()


def expected_amplitude(ins: EditInstruction, table: AmplitudeTable = DEFAULT_AMPLITUDE_TABLE) -> float:
    """Instructed edit strength: intensity base plus 0.15 per 30 degrees."""
    if ins is None:
        raise ConfigError("cannot derive an expected amplitude without an instruction")
    total = 0.0
    if ins.expression is not None:
        total += getattr(table, ins.expression.intensity)
    for r in ins.rotations:
        total += table.per_30deg * abs(r.degrees) / 30.0
    return min(1.0, total)


@dataclass(frozen=True)
class IpInputs:
    s_arc: float
    phi_ins: float
    phi_real: float
    alpha: float = 2.0
    eps: float = 1e-5

    def __post_init__(self):
        for name in ("s_arc", "phi_ins", "phi_real"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise RangeError(f"{name} must be in [0, 1], got {v}")
        if self.alpha <= 0:
            raise RangeError(f"alpha must be positive, got {self.alpha}")
        if self.eps <= 0:
            raise RangeError(f"eps must be positive, got {self.eps}")


def rip_penalty(inp: IpInputs) -> float:
    """Amplitude-mismatch penalty p = |(phi_ins - phi_real)/(phi_ins + eps)|^alpha.

    Capped at 1 so that a zero instructed amplitude with a nonzero realized
    edit saturates the penalty instead of exploding.
    """
    ratio = abs(inp.phi_ins - inp.phi_real) / (inp.phi_ins + inp.eps)
    return min(1.0, float(ratio**inp.alpha))


def rectified_ip(inp: IpInputs) -> float:
    """s_rip = max(0, s_arc - p): identity credit only for a faithful edit."""
    return max(0.0, inp.s_arc - rip_penalty(inp))


def _mean_or_none(values: list):
    present = [v for v in values if v is not None]
    return float(np.mean(present)) if present else None


@dataclass
class EvalReport:
    samples: list
    aggregates: dict
    missing: dict
    count: int
    provenance: str
    schema_version: int = REPORT_SCHEMA_VERSION

    def to_json_obj(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "provenance": self.provenance,
            "count": self.count,
            "aggregates": self.aggregates,
            "missing": self.missing,
            "samples": self.samples,
        }


METRIC_NAMES = ("SC", "VQ", "NA", "IP", "landmark_error")


def _eval_record(obj: dict, scorers, table: AmplitudeTable) -> dict:
    rec_id = str(obj.get("id", ""))
    row = {"id": rec_id, "SC": None, "VQ": None, "NA": None, "IP": None,
           "landmark_error": None}
    refs = [obj.get("source_image"), obj.get("edited_image")]
    for name, scorer in (("SC", scorers.sc), ("VQ", scorers.vq), ("NA", scorers.na)):
        try:
            row[name] = float(scorer.score(rec_id, refs))
        except Exception:
            pass  # scorer failures leave the metric missing, the run continues
    try:
        phi_real = realized_amplitude(read_pgm(obj["source_image"]),
                                      read_pgm(obj["edited_image"]))
        ins_text = obj.get("instruction")
        phi_ins = expected_amplitude(parse_instruction(ins_text), table) if ins_text else 0.0
        s_arc = obj["s_arc"] if "s_arc" in obj else scorers.identity.score(rec_id, refs)
        row["IP"] = rectified_ip(IpInputs(s_arc=float(s_arc), phi_ins=phi_ins,
                                          phi_real=phi_real))
    except Exception:
        pass  # unreadable images or bad fields: IP stays missing
    try:
        if "predicted_landmarks" in obj and "target_landmarks" in obj:
            pred = parse_landmarks(json.dumps(obj["predicted_landmarks"]))
            tgt = parse_landmarks(json.dumps(obj["target_landmarks"]))
            row["landmark_error"] = landmark_l1_error(pred, tgt)
    except Exception:
        pass  # malformed landmark payloads: error stays missing
    return row


@dataclass
class EvalScorers:
    sc: object
    vq: object
    na: object
    identity: object
    provenance: str = "mock"


def mock_eval_scorers(seed: int = 0) -> EvalScorers:
    from .curation import MockScorer

    return EvalScorers(sc=MockScorer("sc", seed), vq=MockScorer("vq", seed),
                       na=MockScorer("na", seed), identity=MockScorer("identity", seed),
                       provenance="mock")


def evaluate(lines, scorers: EvalScorers, table: AmplitudeTable = DEFAULT_AMPLITUDE_TABLE) -> EvalReport:
    """Score a JSONL result manifest record by record.

    A failing scorer or unreadable image marks that metric missing for that
    record and the run continues; aggregates are means over present values.
    """
    samples = []
    for line in lines:
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError:
            samples.append({"id": None, "SC": None, "VQ": None, "NA": None,
                            "IP": None, "landmark_error": None})
            continue
        samples.append(_eval_record(obj, scorers, table))
    aggregates = {m: _mean_or_none([s[m] for s in samples]) for m in METRIC_NAMES}
    missing = {m: sum(1 for s in samples if s[m] is None) for m in METRIC_NAMES}
    return EvalReport(samples=samples, aggregates=aggregates, missing=missing,
                      count=len(samples), provenance=scorers.provenance)
