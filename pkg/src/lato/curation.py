"""Pair-manifest curation: quality, diversity, identity, and pose stages.

Manifests are JSONL, one landmark pair per line. Each record runs through the
stage chain in order and stops at its first failure; every input record is
re-emitted with its accumulated stage decisions so downstream tooling can see
exactly why something was dropped. External scorers (aesthetics, semantic
difference, identity similarity, expression agreement) sit behind a small
interface with a deterministic offline mock and an optional HTTP client.
"""

import hashlib
import json
import urllib.error
import urllib.request
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigError,
    GeometryError,
    NumericError,
    ParseError,
    SchemaError,
    ShapeError,
    StageError,
)
from .instruction import EditInstruction, Expression, Rotation, render_instruction, parse_instruction
from .kinematics import HeadPose, estimate_pose, pose_deviation
from .landmarks import LandmarkSet, change_score, parse_landmarks
from .pgm import read_pgm

STAGES = ("quality", "diversity", "identity", "pose")


@dataclass(frozen=True)
class CurationConfig:
    centroid_band: float = 0.2
    landmark_area_min: float = 0.07
    blur_min: float = 50.0
    sharpness_floor: bool = True
    aesthetic_min: float = 0.5
    change_score_min: float = 23.0
    change_score_max: float = 120.0
    semantic_diff_min: float = 0.4
    identity_min: float = 0.9
    pose_tolerance_deg: float = 10.0

    def __post_init__(self):
        if not 0.0 < self.centroid_band <= 1.0:
            raise ConfigError(f"centroid_band must be in (0, 1], got {self.centroid_band}")
        if not 0.0 < self.landmark_area_min < 1.0:
            raise ConfigError(f"landmark_area_min must be in (0, 1), got {self.landmark_area_min}")
        if self.blur_min < 0:
            raise ConfigError(f"blur_min must be non-negative, got {self.blur_min}")
        if not 0.0 <= self.aesthetic_min <= 1.0:
            raise ConfigError(f"aesthetic_min must be in [0, 1], got {self.aesthetic_min}")
        if self.change_score_min < 0 or self.change_score_min >= self.change_score_max:
            raise ConfigError(
                f"need 0 <= change_score_min < change_score_max, got "
                f"[{self.change_score_min}, {self.change_score_max}]"
            )
        if not 0.0 <= self.semantic_diff_min <= 1.0:
            raise ConfigError(f"semantic_diff_min must be in [0, 1], got {self.semantic_diff_min}")
        if not 0.0 <= self.identity_min <= 1.0:
            raise ConfigError(f"identity_min must be in [0, 1], got {self.identity_min}")
        if self.pose_tolerance_deg <= 0:
            raise ConfigError(f"pose_tolerance_deg must be positive, got {self.pose_tolerance_deg}")


def config_from_json(text: str) -> CurationConfig:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        raise SchemaError(f"invalid config JSON: {e}") from e
    if not isinstance(obj, dict):
        raise SchemaError("config must be a JSON object")
    known = set(CurationConfig.__dataclass_fields__)
    extra = set(obj) - known
    if extra:
        raise SchemaError(f"unknown config keys {sorted(extra)}")
    return CurationConfig(**obj)


@dataclass
class StageDecision:
    stage: str
    passed: bool
    score: float = None
    threshold: float = None
    reason: str = None
    sub_scores: dict = None

    def to_json_obj(self) -> dict:
        out = {"stage": self.stage, "passed": self.passed}
        if self.score is not None:
            out["score"] = self.score
        if self.threshold is not None:
            out["threshold"] = self.threshold
        if self.reason is not None:
            out["reason"] = self.reason
        if self.sub_scores is not None:
            out["sub_scores"] = self.sub_scores
        return out


@dataclass
class PairRecord:
    id: str
    source_image: str
    target_image: str
    source_landmarks: LandmarkSet
    target_landmarks: LandmarkSet
    instruction: str = None
    stage_decisions: list = field(default_factory=list)
    raw: dict = None


def parse_record(line: str) -> PairRecord:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as e:
        raise SchemaError(f"invalid record JSON: {e}") from e
    if not isinstance(obj, dict):
        raise SchemaError("record must be a JSON object")
    for key in ("id", "source_image", "target_image", "source_landmarks", "target_landmarks"):
        if key not in obj:
            raise SchemaError(f"record missing {key!r}")
    ins = obj.get("instruction")
    if ins is not None and not isinstance(ins, str):
        raise SchemaError("instruction must be a string")
    return PairRecord(
        id=str(obj["id"]),
        source_image=str(obj["source_image"]),
        target_image=str(obj["target_image"]),
        source_landmarks=parse_landmarks(json.dumps(obj["source_landmarks"])),
        target_landmarks=parse_landmarks(json.dumps(obj["target_landmarks"])),
        instruction=ins,
        raw=obj,
    )


class MockScorer:
    """Deterministic stand-in: seeded hash of the record id, uniform [0, 1)."""

    def __init__(self, kind: str, seed: int = 0):
        self.kind = kind
        self.seed = seed

    def score(self, rec_id: str, refs) -> float:
        digest = hashlib.sha256(f"{self.seed}:{self.kind}:{rec_id}".encode()).hexdigest()
        return int(digest[:12], 16) / float(16**12)


class HttpScorer:
    """Remote scorer: POST {"id", "kind", "refs"} -> {"score": float}."""

    def __init__(self, kind: str, url: str, timeout: float = 5.0, retries: int = 2):
        self.kind = kind
        self.url = url
        self.timeout = timeout
        self.retries = retries

    def score(self, rec_id: str, refs) -> float:
        payload = json.dumps({"id": rec_id, "kind": self.kind, "refs": list(refs)}).encode()
        last = None
        for _ in range(self.retries + 1):
            try:
                req = urllib.request.Request(
                    self.url, data=payload, headers={"Content-Type": "application/json"})
                with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                    body = json.loads(resp.read())
                return float(body["score"])
            except (urllib.error.URLError, OSError, ValueError, KeyError) as e:
                last = e
        raise StageError(
            f"{self.kind} scorer failed after {self.retries} retries: {last}"
        )


@dataclass
class ScorerSuite:
    aesthetic: object
    semantic_diff: object
    identity: object
    expression: object


def mock_scorers(seed: int = 0) -> ScorerSuite:
    return ScorerSuite(
        aesthetic=MockScorer("aesthetic", seed),
        semantic_diff=MockScorer("semantic_diff", seed),
        identity=MockScorer("identity", seed),
        expression=MockScorer("expression", seed),
    )


def http_scorers(url: str, timeout: float = 5.0, retries: int = 2) -> ScorerSuite:
    return ScorerSuite(
        aesthetic=HttpScorer("aesthetic", url, timeout, retries),
        semantic_diff=HttpScorer("semantic_diff", url, timeout, retries),
        identity=HttpScorer("identity", url, timeout, retries),
        expression=HttpScorer("expression", url, timeout, retries),
    )


_LAPLACIAN = np.array([[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]])
_GAUSS_RADIUS = 3


def _gauss_kernel(sigma: float = 1.0) -> np.ndarray:
    k = np.arange(-_GAUSS_RADIUS, _GAUSS_RADIUS + 1, dtype=np.float64)
    w = np.exp(-0.5 * (k / sigma) ** 2)
    return w / w.sum()


def _conv2_reflect(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    kh, kw = kernel.shape
    ry, rx = kh // 2, kw // 2
    padded = np.pad(img, ((ry, ry), (rx, rx)), mode="reflect")
    out = np.zeros_like(img)
    for dy in range(kh):
        for dx in range(kw):
            if kernel[dy, dx] == 0.0:
                continue
            out += kernel[dy, dx] * padded[dy : dy + img.shape[0], dx : dx + img.shape[1]]
    return out


def blur_score(image: np.ndarray) -> float:
    """Sharpness proxy: variance of the Laplacian-of-Gaussian response.

    Gaussian sigma 1.0 (radius 3), 3x3 Laplacian, reflect padding with the
    edge pixel not repeated. Higher means sharper.
    """
    img = np.asarray(image)
    if img.ndim != 2 or img.shape[0] < 7 or img.shape[1] < 7:
        raise ShapeError(f"image must be at least 7x7, got {img.shape}")
    if img.dtype != np.uint8 and (img.min() < 0 or img.max() > 255):
        raise ShapeError("intensities must be 8-bit (0..255)")
    img = img.astype(np.float64)
    g = _gauss_kernel(1.0)
    smoothed = _conv2_reflect(_conv2_reflect(img, g[None, :]), g[:, None])
    response = _conv2_reflect(smoothed, _LAPLACIAN)
    return float(response.var())


def _centroid_band(cfg: CurationConfig) -> tuple:
    half = cfg.centroid_band / 2.0
    return 0.5 - half, 0.5 + half


def quality_filter(rec: PairRecord, cfg: CurationConfig, scorers: ScorerSuite) -> StageDecision:
    """Stage 1: face placement, face size, sharpness, aesthetics."""
    f = rec.source_landmarks
    w, h = f.canvas
    cx, cy = f.points.mean(axis=0)
    lo, hi = _centroid_band(cfg)
    sub = {"centroid_x_frac": cx / w, "centroid_y_frac": cy / h}
    dec = StageDecision(stage="quality", passed=False, sub_scores=sub)
    if not (lo <= cx / w <= hi and lo <= cy / h <= hi):
        dec.reason = "centroid"
        return dec
    span = f.points.max(axis=0) - f.points.min(axis=0)
    area_frac = float(span[0] * span[1]) / (w * h)
    sub["box_area_frac"] = area_frac
    if area_frac < cfg.landmark_area_min:
        dec.reason = "area"
        dec.threshold = cfg.landmark_area_min
        return dec
    try:
        img = read_pgm(rec.source_image)
    except (OSError, SchemaError) as e:
        dec.reason = f"io: {e}"
        return dec
    blur = blur_score(img)
    sub["blur"] = blur
    sharp_enough = blur >= cfg.blur_min if cfg.sharpness_floor else blur <= cfg.blur_min
    if not sharp_enough:
        dec.reason = "blur"
        dec.threshold = cfg.blur_min
        return dec
    if scorers.aesthetic is None:
        raise ConfigError("no aesthetic scorer configured")
    aesthetic = scorers.aesthetic.score(rec.id, [rec.source_image])
    sub["aesthetic"] = aesthetic
    if aesthetic < cfg.aesthetic_min:
        dec.reason = "aesthetic"
        dec.threshold = cfg.aesthetic_min
        return dec
    dec.passed = True
    return dec


def diversity_filter(rec: PairRecord, cfg: CurationConfig, scorers: ScorerSuite) -> StageDecision:
    """Stage 2: enough landmark motion, not copy-paste, semantically distinct."""
    score = change_score(rec.source_landmarks, rec.target_landmarks)
    sub = {"change_score": score}
    dec = StageDecision(stage="diversity", passed=False, score=score, sub_scores=sub)
    if score < cfg.change_score_min:
        dec.reason = "too-static"
        dec.threshold = cfg.change_score_min
        return dec
    if score > cfg.change_score_max:
        dec.reason = "copy-paste/outlier band"
        dec.threshold = cfg.change_score_max
        return dec
    if scorers.semantic_diff is None:
        raise ConfigError("no semantic-diff scorer configured")
    semantic = scorers.semantic_diff.score(rec.id, [rec.source_image, rec.target_image])
    sub["semantic_diff"] = semantic
    if semantic < cfg.semantic_diff_min:
        dec.reason = "semantic"
        dec.threshold = cfg.semantic_diff_min
        return dec
    dec.passed = True
    return dec


def identity_filter(rec: PairRecord, cfg: CurationConfig, scorers: ScorerSuite) -> StageDecision:
    """Stage 3: same person on both sides."""
    if scorers.identity is None:
        raise ConfigError("no identity scorer configured")
    score = scorers.identity.score(rec.id, [rec.source_image, rec.target_image])
    passed = score >= cfg.identity_min
    return StageDecision(stage="identity", passed=passed, score=score,
                         threshold=cfg.identity_min,
                         reason=None if passed else "identity")


def instructed_pose_delta(instruction_text: str) -> HeadPose:
    """Extract the instructed (pitch, yaw) delta; None without rotation clauses."""
    if not instruction_text:
        return None
    ins = parse_instruction(instruction_text)
    if not ins.rotations:
        return None
    return HeadPose(pitch=float(ins.pitch()), yaw=float(ins.yaw()))


def pose_validate(rec: PairRecord, target_pose: HeadPose, cfg: CurationConfig) -> StageDecision:
    """Stage 4: achieved rigid rotation matches the instructed one."""
    if target_pose is None:
        return StageDecision(stage="pose", passed=True, reason="not-applicable")
    src = estimate_pose(rec.source_landmarks)
    tgt = estimate_pose(rec.target_landmarks)
    achieved = HeadPose(pitch=tgt.pitch - src.pitch, yaw=tgt.yaw - src.yaw)
    dev = pose_deviation(achieved, target_pose)
    passed = dev <= cfg.pose_tolerance_deg
    return StageDecision(stage="pose", passed=passed, score=dev,
                         threshold=cfg.pose_tolerance_deg,
                         reason=None if passed else "pose",
                         sub_scores={"achieved_pitch": achieved.pitch,
                                     "achieved_yaw": achieved.yaw})


def make_instruction(rec: PairRecord, expression: Expression = None,
                     pose_delta=None, pronoun: str = "his/her") -> EditInstruction:
    """Render an edit instruction from an expression label and/or pose delta.

    Rotation clauses come from the nonzero integer-rounded components of
    pose_delta (pitch, yaw). The rendered text is attached to the record.
    """
    rotations = []
    if pose_delta is not None:
        pitch, yaw = (pose_delta.pitch, pose_delta.yaw) if isinstance(pose_delta, HeadPose) \
            else (float(pose_delta[0]), float(pose_delta[1]))
        if round(yaw) != 0:
            rotations.append(Rotation(axis="yaw", degrees=int(round(yaw))))
        if round(pitch) != 0:
            rotations.append(Rotation(axis="pitch", degrees=int(round(pitch))))
    if expression is None and not rotations:
        raise StageError("no-edit: neither an expression nor a pose change")
    ins = EditInstruction(expression=expression, rotations=tuple(rotations), pronoun=pronoun)
    rec.instruction = render_instruction(ins)
    if rec.raw is not None:
        rec.raw["instruction"] = rec.instruction
    return ins


def _run_stage(rec: PairRecord, stage: str, cfg: CurationConfig,
               scorers: ScorerSuite) -> StageDecision:
    if stage == "quality":
        return quality_filter(rec, cfg, scorers)
    if stage == "diversity":
        return diversity_filter(rec, cfg, scorers)
    if stage == "identity":
        return identity_filter(rec, cfg, scorers)
    return pose_validate(rec, instructed_pose_delta(rec.instruction), cfg)


def curate_record(rec: PairRecord, cfg: CurationConfig, scorers: ScorerSuite) -> bool:
    """Run the stage chain on one record, stopping at the first failure.

    Returns True when every stage passed. A scorer or estimator blow-up is
    recorded as a failing decision with an error reason (the record is
    quarantined, not dropped silently).
    """
    for stage in STAGES:
        try:
            dec = _run_stage(rec, stage, cfg, scorers)
        except (StageError, ParseError, GeometryError, NumericError) as e:
            # scorer/estimator failure: quarantine the record, keep streaming
            rec.stage_decisions.append(
                StageDecision(stage=stage, passed=False, reason=f"error: {e}"))
            return False
        rec.stage_decisions.append(dec)
        if not dec.passed:
            return False
    return True


def record_to_json_line(rec: PairRecord) -> str:
    obj = dict(rec.raw) if rec.raw is not None else {"id": rec.id}
    obj["stage_decisions"] = [d.to_json_obj() for d in rec.stage_decisions]
    obj["passed"] = bool(rec.stage_decisions) and all(
        d.passed for d in rec.stage_decisions) and len(rec.stage_decisions) == len(STAGES)
    return json.dumps(obj, ensure_ascii=False)


def curate(lines, cfg: CurationConfig, scorers: ScorerSuite, out) -> dict:
    """Stream a JSONL manifest through the filter chain.

    lines is any iterable of JSONL strings; out is a writable text file
    object. Malformed lines are counted and skipped, never fatal. Returns a
    summary with per-stage evaluation counts and pass rates.
    """
    stage_eval = {s: 0 for s in STAGES}
    stage_pass = {s: 0 for s in STAGES}
    records_in = 0
    malformed = 0
    quarantined = 0
    passed_all = 0
    for line in lines:
        if not line.strip():
            continue
        records_in += 1
        try:
            rec = parse_record(line)
        except SchemaError:
            malformed += 1
            continue
        ok = curate_record(rec, cfg, scorers)
        for dec in rec.stage_decisions:
            stage_eval[dec.stage] += 1
            if dec.passed:
                stage_pass[dec.stage] += 1
            if dec.reason and dec.reason.startswith("error:"):
                quarantined += 1
        if ok:
            passed_all += 1
        out.write(record_to_json_line(rec))
        out.write("\n")
    return {
        "records_in": records_in,
        "malformed": malformed,
        "quarantined": quarantined,
        "passed_all": passed_all,
        "stages": {
            s: {
                "evaluated": stage_eval[s],
                "passed": stage_pass[s],
                "rate": (stage_pass[s] / stage_eval[s]) if stage_eval[s] else 0.0,
            }
            for s in STAGES
        },
    }


def curate_paths(in_path: str, out_path: str, cfg: CurationConfig,
                 scorers: ScorerSuite) -> dict:
    with open(in_path, "r", encoding="utf-8") as src:
        with open(out_path, "w", encoding="utf-8") as dst:
            return curate(src, cfg, scorers, dst)
