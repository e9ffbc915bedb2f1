"""Deterministic landmark predictor: pose estimation, rigid rotation via 3D
template lifting, expression deformation, reasoning trace, sanity checks.

Conventions, used consistently across the toolkit:
  - image X grows right, Y grows down, Z grows toward the camera;
  - +yaw turns the face toward image-left, +pitch tilts it up;
  - rotation order is R_x(pitch) @ R_y(yaw), roll fixed to 0 for synthesis.
"""

from __future__ import annotations

import functools
import hashlib
import json
import pathlib
from dataclasses import dataclass

import numpy as np

from .errors import GeometryError, ParseError, RangeError, SanityError, SchemaError
from .instruction import (
    EXPRESSION_TYPES,
    INTENSITY_LEVELS,
    EditInstruction,
    instruction_to_json_obj,
)
from .landmarks import (
    LandmarkSet,
    REGIONS,
    interocular_distance,
    serialize_landmarks,
)

ASSET_DIR = pathlib.Path(__file__).parent / "assets"
MAX_RIGID_ANGLE = 60.0

NOSE_BRIDGE = (27, 28, 29, 30)
BRIDGE_RATIO_TOLERANCE = 0.35


@dataclass(frozen=True)
class HeadPose:
    """Estimated pitch/yaw in degrees."""

    pitch: float
    yaw: float

    def __post_init__(self):
        if not (np.isfinite(self.pitch) and np.isfinite(self.yaw)):
            raise RangeError("pose angles must be finite")


@dataclass(frozen=True)
class CanonicalFace3D:
    """68-point 3D face template on the 512 canvas, Z toward the camera."""

    points: np.ndarray  # (68, 3)
    canvas: tuple
    schema_version: int

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.shape != (68, 3):
            raise SchemaError(f"template must be (68, 3), got {pts.shape}")
        pts = pts.copy()
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    def project(self) -> LandmarkSet:
        """Orthographic front view (drop Z)."""
        return LandmarkSet(self.points[:, :2], self.canvas)


def _asset_bytes(name: str) -> bytes:
    return (ASSET_DIR / name).read_bytes()


def asset_hashes() -> dict:
    """SHA-256 of the shipped asset files, for model headers and pinning."""
    return {
        name: hashlib.sha256(_asset_bytes(name)).hexdigest()
        for name in ("face_template.json", "expression_fields.json")
    }


@functools.lru_cache(maxsize=1)
def load_template() -> CanonicalFace3D:
    obj = json.loads(_asset_bytes("face_template.json"))
    return CanonicalFace3D(
        np.array(obj["points"], dtype=np.float64),
        tuple(obj["canvas"]),
        int(obj["schema_version"]),
    )


@functools.lru_cache(maxsize=1)
def load_expression_fields() -> dict:
    obj = json.loads(_asset_bytes("expression_fields.json"))
    fields = {}
    for name, vecs in obj["fields"].items():
        arr = np.array(vecs, dtype=np.float64)
        if arr.shape != (68, 2):
            raise SchemaError(f"expression field {name!r} must be (68, 2)")
        arr.flags.writeable = False
        fields[name] = arr
    multipliers = {k: float(v) for k, v in obj["intensity_multipliers"].items()}
    return {"fields": fields, "multipliers": multipliers}


def template_2d() -> LandmarkSet:
    return load_template().project()


def rotation_matrix(dpitch_deg: float, dyaw_deg: float) -> np.ndarray:
    """R_x(pitch) @ R_y(yaw) under the sign conventions above."""
    p = np.radians(dpitch_deg)
    y = np.radians(dyaw_deg)
    cp, sp = np.cos(p), np.sin(p)
    cy, sy = np.cos(y), np.sin(y)
    rx = np.array([[1, 0, 0], [0, cp, -sp], [0, sp, cp]])
    ry = np.array([[cy, 0, -sy], [0, 1, 0], [sy, 0, cy]])
    return rx @ ry


def _fit_template(f: LandmarkSet):
    """Weak-perspective Procrustes fit of the 3D template to 2D points.

    Returns (R, scale, template_centroid, points_centroid).  The first two
    rows of R, times scale, map centered template coordinates to centered
    image coordinates.
    """
    tpl = load_template().points
    t_bar = tpl.mean(axis=0)
    tc = tpl - t_bar
    p_bar = f.points.mean(axis=0)
    pc = f.points - p_bar

    sol, *_ = np.linalg.lstsq(tc, pc, rcond=None)
    a = sol.T  # (2, 3) projection rows
    s1 = float(np.linalg.norm(a[0]))
    s2 = float(np.linalg.norm(a[1]))
    if s1 < 1e-9 or s2 < 1e-9:
        raise GeometryError("degenerate landmark set: projection rows collapse")
    rows = np.vstack([a[0] / s1, a[1] / s2])
    if np.linalg.norm(np.cross(rows[0], rows[1])) < 1e-6:
        raise GeometryError("degenerate landmark set: collinear projection rows")
    # nearest orthonormal pair, then complete the rotation by cross product
    u, _, vt = np.linalg.svd(rows, full_matrices=False)
    ortho = u @ vt
    r3 = np.cross(ortho[0], ortho[1])
    rot = np.vstack([ortho, r3])
    scale = 0.5 * (s1 + s2)
    return rot, scale, t_bar, p_bar


def estimate_pose(f: LandmarkSet) -> HeadPose:
    """Pitch/yaw of the best-fit rigid template pose, in degrees."""
    rot, _, _, _ = _fit_template(f)
    yaw = np.degrees(np.arcsin(np.clip(-rot[0, 2], -1.0, 1.0)))
    pitch = np.degrees(np.arctan2(-rot[1, 2], rot[2, 2]))
    if abs(pitch) > 90.0 or abs(yaw) > 90.0:
        raise GeometryError(f"estimated pose out of range: pitch {pitch}, yaw {yaw}")
    return HeadPose(float(pitch), float(yaw))


def pose_deviation(est: HeadPose, target: HeadPose) -> float:
    """Euclidean angle deviation sqrt(dpitch^2 + dyaw^2), in degrees."""
    return float(np.hypot(est.pitch - target.pitch, est.yaw - target.yaw))


def lift_to_3d(f: LandmarkSet) -> np.ndarray:
    """Lift to (68, 3) using the pose-aligned template's depth per point."""
    rot, scale, t_bar, _ = _fit_template(f)
    tc = load_template().points - t_bar
    z = scale * (tc @ rot.T)[:, 2]
    return np.column_stack([f.points, z])


def rotate_lifted(points3d: np.ndarray, dyaw: float, dpitch: float) -> np.ndarray:
    """Rotate lifted points about their 3D centroid; no projection or clamp."""
    pts = np.asarray(points3d, dtype=np.float64)
    c = pts.mean(axis=0)
    return (pts - c) @ rotation_matrix(dpitch, dyaw).T + c


def apply_rigid_rotation(f: LandmarkSet, dyaw: float, dpitch: float) -> LandmarkSet:
    """Rigidly rotate the head by (dyaw, dpitch) degrees.

    Lifts each point to 3D with the fitted template depth, rotates about the
    3D centroid, reprojects orthographically, restores the original 2D
    centroid, and clamps to the canvas.
    """
    if not (np.isfinite(dyaw) and np.isfinite(dpitch)):
        raise RangeError("rotation angles must be finite")
    if abs(dyaw) > MAX_RIGID_ANGLE or abs(dpitch) > MAX_RIGID_ANGLE:
        raise RangeError(f"|dyaw| and |dpitch| must be <= {MAX_RIGID_ANGLE} degrees")
    if dyaw == 0.0 and dpitch == 0.0:
        return f
    rotated = rotate_lifted(lift_to_3d(f), dyaw, dpitch)
    out = rotated[:, :2]
    out = out + (f.points.mean(axis=0) - out.mean(axis=0))
    return LandmarkSet(out, f.canvas).clamp()


def apply_expression(f: LandmarkSet, etype: str, intensity: str = "normally") -> LandmarkSet:
    """Add the expression displacement field, scaled by intensity and face size.

    Field vectors are authored on the template; they scale linearly with the
    intensity multiplier and with interocular_distance(f) relative to the
    template.  "neutral" is the identity.
    """
    if etype not in EXPRESSION_TYPES:
        raise ParseError(f"unknown expression type {etype!r}", 0)
    if intensity not in INTENSITY_LEVELS:
        raise ParseError(f"unknown intensity {intensity!r}", 0)
    if etype == "neutral":
        return f
    data = load_expression_fields()
    scale = data["multipliers"][intensity] * (
        interocular_distance(f) / interocular_distance(template_2d())
    )
    return f.with_points(f.points + scale * data["fields"][etype])


def sanity_check(src: LandmarkSet, pred: LandmarkSet) -> LandmarkSet:
    """Rule-based geometric guard over a predicted landmark set.

    Clamps to canvas, restores the nose-bridge rigid scale when the median
    segment ratio drifts more than 35% from the source, and rejects
    impossible geometry (non-monotone nose bridge, crossed eyes).
    """
    out = pred.clamp()
    diagnostics: dict = {"rescaled": False, "scale_applied": 1.0}

    src_pts = src.points
    seg_src = [
        float(np.linalg.norm(src_pts[b] - src_pts[a]))
        for a, b in zip(NOSE_BRIDGE, NOSE_BRIDGE[1:])
    ]
    if min(seg_src) < 1e-9:
        raise GeometryError("source nose bridge is degenerate")
    seg_pred = [
        float(np.linalg.norm(out.points[b] - out.points[a]))
        for a, b in zip(NOSE_BRIDGE, NOSE_BRIDGE[1:])
    ]
    ratios = [p / s for p, s in zip(seg_pred, seg_src)]
    median_ratio = float(np.median(ratios))
    diagnostics["median_bridge_ratio"] = median_ratio
    if abs(median_ratio - 1.0) > BRIDGE_RATIO_TOLERANCE:
        if median_ratio < 1e-9:
            raise SanityError("collapsed nose bridge in prediction", diagnostics)
        factor = 1.0 / median_ratio
        c = out.points.mean(axis=0)
        out = LandmarkSet((out.points - c) * factor + c, out.canvas).clamp()
        diagnostics["rescaled"] = True
        diagnostics["scale_applied"] = factor

    ys = out.points[list(NOSE_BRIDGE), 1]
    diagnostics["bridge_monotone"] = bool(np.all(np.diff(ys) >= 0.0))
    left_x = float(out.points[list(REGIONS.left_eye), 0].mean())
    right_x = float(out.points[list(REGIONS.right_eye), 0].mean())
    diagnostics["eye_order_ok"] = left_x < right_x

    if not diagnostics["bridge_monotone"]:
        raise SanityError("nose bridge not monotone in Y", diagnostics)
    if not diagnostics["eye_order_ok"]:
        raise SanityError("right eye is left of left eye", diagnostics)
    return out


@dataclass(frozen=True)
class TraceStage:
    name: str
    text: str
    payload: dict


STAGE_NAMES = (
    "initial_state_analysis",
    "instruction_decomposition",
    "kinematic_chain_reasoning",
    "coordinate_estimation",
)


@dataclass(frozen=True)
class ReasoningTrace:
    """Four ordered stages justifying a landmark prediction."""

    stages: tuple
    result: LandmarkSet

    def __post_init__(self):
        names = tuple(s.name for s in self.stages)
        if names != STAGE_NAMES:
            raise SchemaError(f"trace stages must be {STAGE_NAMES}, got {names}")

    def to_json_obj(self) -> dict:
        return {
            "schema_version": 1,
            "stages": [
                {"name": s.name, "text": s.text, "payload": s.payload}
                for s in self.stages
            ],
        }


def _expression_guess(f: LandmarkSet):
    """Crude frontal-residual correlation against the authored fields."""
    rot, scale, t_bar, p_bar = _fit_template(f)
    tc = load_template().points - t_bar
    proj = scale * (tc @ rot.T)[:, :2] + p_bar
    residual = (f.points - proj).ravel()
    rms = float(np.sqrt(np.mean(residual**2)))
    if rms < 2.0:
        return "neutral", 0.0
    best_name, best_cos = "neutral", 0.0
    rnorm = float(np.linalg.norm(residual))
    for name, field in load_expression_fields()["fields"].items():
        fv = field.ravel()
        c = float(residual @ fv) / (rnorm * float(np.linalg.norm(fv)))
        if c > best_cos:
            best_name, best_cos = name, c
    if best_cos < 0.35:
        return "neutral", best_cos
    return best_name, best_cos


def _region_summary(before: LandmarkSet, after: LandmarkSet) -> dict:
    summary = {}
    delta = after.points - before.points
    for name, rng in REGIONS.regions().items():
        d = delta[list(rng)]
        summary[name] = {
            "mean_dx": float(d[:, 0].mean()),
            "mean_dy": float(d[:, 1].mean()),
            "max_abs": float(np.abs(d).max()),
        }
    return summary


def predict_landmarks(f: LandmarkSet, ins: EditInstruction):
    """Deterministic landmark prediction; returns (LandmarkSet, ReasoningTrace)."""
    pose = estimate_pose(f)
    guess_type, guess_conf = _expression_guess(f)
    stage1 = TraceStage(
        "initial_state_analysis",
        f"Starting pose is pitch {pose.pitch:.1f}, yaw {pose.yaw:.1f} degrees; "
        f"the face reads as {guess_type}.",
        {
            "pose": {"pitch": pose.pitch, "yaw": pose.yaw},
            "expression_guess": {"type": guess_type, "confidence": guess_conf},
        },
    )

    dyaw = float(ins.yaw())
    dpitch = float(ins.pitch())
    wants_expression = ins.expression is not None and ins.expression.type != "neutral"
    stage2 = TraceStage(
        "instruction_decomposition",
        f"Requested rotation: yaw {dyaw:+.0f}, pitch {dpitch:+.0f} degrees; "
        f"expression change: "
        + (
            f"{ins.expression.type} ({ins.expression.intensity})"
            if wants_expression
            else "none"
        )
        + ".",
        {"instruction": instruction_to_json_obj(ins)},
    )

    moved = apply_rigid_rotation(f, dyaw, dpitch)
    if wants_expression:
        moved = apply_expression(moved, ins.expression.type, ins.expression.intensity)
    summary = _region_summary(f, moved)
    stage3 = TraceStage(
        "kinematic_chain_reasoning",
        "Per-region displacement after rigid rotation and expression deformation: "
        + "; ".join(
            f"{name} moves ({v['mean_dx']:+.1f}, {v['mean_dy']:+.1f}) px on average"
            for name, v in summary.items()
        )
        + ".",
        {"regions": summary},
    )

    out = sanity_check(f, moved)
    stage4 = TraceStage(
        "coordinate_estimation",
        "Final coordinates after geometric sanity checks.",
        {"landmarks": json.loads(serialize_landmarks(out))},
    )
    trace = ReasoningTrace((stage1, stage2, stage3, stage4), out)
    return out, trace


def smooth_landmarks(f: LandmarkSet) -> LandmarkSet:
    """Smoothing hook; intentionally the identity."""
    return f


def synthesize_landmarks(n: int, seed: int = 0, canvas: tuple = (512, 512)) -> list:
    """Generate n synthetic landmark sets from the template.

    Each sample applies a random expression, a random rotation, and a mild
    similarity jitter.  Deterministic for a given seed.
    """
    if n < 0:
        raise RangeError("n must be non-negative")
    rng = np.random.default_rng(seed)
    base = template_2d()
    if canvas != base.canvas:
        base = LandmarkSet(base.points, canvas)
    out = []
    for _ in range(n):
        etype = EXPRESSION_TYPES[int(rng.integers(0, len(EXPRESSION_TYPES)))]
        intensity = INTENSITY_LEVELS[int(rng.integers(0, len(INTENSITY_LEVELS)))]
        dyaw = float(rng.uniform(-35.0, 35.0))
        dpitch = float(rng.uniform(-35.0, 35.0))
        scale = float(rng.uniform(0.9, 1.1))
        shift = rng.uniform(-25.0, 25.0, size=2)

        f = apply_expression(base, etype, intensity)
        f = apply_rigid_rotation(f, dyaw, dpitch)
        c = f.points.mean(axis=0)
        pts = (f.points - c) * scale + c + shift
        out.append(LandmarkSet(pts, canvas).clamp())
    return out
