"""68-point facial landmark data model, JSON schema, and difference scores.

Landmark sets live on a fixed pixel canvas (default 512x512) and follow the
standard 68-point ordering: jaw 0-16, brows 17-26, nose 27-35, eyes 36-47,
mouth 48-67.  The JSON wire format groups points into four regions
("JAW/BROWS", "NOSE", "EYES", "MOUTH") in canonical order.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import GeometryError, NumericError, SchemaError, ShapeError, UnitError

N_POINTS = 68
DEFAULT_CANVAS = (512, 512)

# Region index ranges are fixed by the 68-point convention.
JAW = range(0, 17)
BROWS = range(17, 27)
NOSE = range(27, 36)
EYES = range(36, 48)
LEFT_EYE = range(36, 42)
RIGHT_EYE = range(42, 48)
MOUTH = range(48, 68)
# Inner set: eyes plus mouth, the regions that carry most expression signal.
INNER = list(range(36, 68))

# JSON wire schema: key -> (start index, point count).  "JAW/BROWS" carries
# jaw and brow points together (27), matching the region-grouped layout.
JSON_REGIONS = (
    ("JAW/BROWS", 0, 27),
    ("NOSE", 27, 9),
    ("EYES", 36, 12),
    ("MOUTH", 48, 20),
)


@dataclass(frozen=True)
class RegionMap:
    """Named index ranges over the 68-point layout."""

    jaw: range = JAW
    brows: range = BROWS
    nose: range = NOSE
    left_eye: range = LEFT_EYE
    right_eye: range = RIGHT_EYE
    mouth: range = MOUTH
    inner: tuple = tuple(INNER)

    def regions(self) -> dict:
        return {
            "jaw": self.jaw,
            "brows": self.brows,
            "nose": self.nose,
            "eyes": EYES,
            "mouth": self.mouth,
        }


REGIONS = RegionMap()


@dataclass(frozen=True)
class LandmarkSet:
    """Immutable ordered set of 68 (X, Y) pixel coordinates."""

    points: np.ndarray
    canvas: tuple = DEFAULT_CANVAS

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.shape != (N_POINTS, 2):
            raise ShapeError(f"expected (68, 2) points, got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise NumericError("landmark coordinates must be finite")
        w, h = self.canvas
        if not (w > 0 and h > 0):
            raise UnitError(f"canvas must be positive, got {self.canvas}")
        pts = pts.copy()
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "canvas", (int(w), int(h)))

    def clamp(self) -> "LandmarkSet":
        """Return a copy with every coordinate clamped into the canvas."""
        w, h = self.canvas
        pts = self.points.copy()
        pts[:, 0] = np.clip(pts[:, 0], 0.0, w - 1.0)
        pts[:, 1] = np.clip(pts[:, 1], 0.0, h - 1.0)
        return LandmarkSet(pts, self.canvas)

    def with_points(self, pts) -> "LandmarkSet":
        return LandmarkSet(pts, self.canvas)

    def region(self, indices) -> np.ndarray:
        return self.points[list(indices)]

    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0)

    def bbox(self) -> tuple:
        """(x_min, y_min, x_max, y_max) of the landmark extent."""
        lo = self.points.min(axis=0)
        hi = self.points.max(axis=0)
        return (float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1]))


def _check_region_array(name: str, arr) -> list:
    if not isinstance(arr, list):
        raise SchemaError(f"region {name!r} must be an array")
    out = []
    for entry in arr:
        if (
            not isinstance(entry, list)
            or len(entry) != 2
            or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in entry)
        ):
            raise SchemaError(f"region {name!r} must contain 2-element number arrays")
        out.append((float(entry[0]), float(entry[1])))
    return out


def parse_landmarks(json_text: str, canvas: tuple = DEFAULT_CANVAS) -> LandmarkSet:
    """Parse the region-grouped landmark JSON into a LandmarkSet.

    The object must carry exactly the four region keys with their canonical
    point counts; points are reassembled into 0-67 order.
    """
    try:
        obj = json.loads(json_text)
    except json.JSONDecodeError as e:
        raise SchemaError(f"invalid JSON: {e}") from e
    if not isinstance(obj, dict):
        raise SchemaError("landmark document must be a JSON object")
    expected = {k for k, _, _ in JSON_REGIONS}
    got = set(obj.keys())
    if got != expected:
        missing = expected - got
        extra = got - expected
        parts = []
        if missing:
            parts.append(f"missing {sorted(missing)}")
        if extra:
            parts.append(f"unexpected {sorted(extra)}")
        raise SchemaError("wrong region key set: " + ", ".join(parts))

    pts = np.zeros((N_POINTS, 2), dtype=np.float64)
    for name, start, count in JSON_REGIONS:
        vals = _check_region_array(name, obj[name])
        if len(vals) != count:
            raise SchemaError(f"region {name!r} must have {count} points, got {len(vals)}")
        pts[start : start + count] = vals
    return LandmarkSet(pts, canvas)


def _fmt_number(v: float) -> str:
    # Minimal-digit formatting: integers stay integers so integer landmark
    # JSON round-trips bit-exactly through parse/serialize.
    v = float(v)
    if math.isfinite(v) and v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def serialize_landmarks(f: LandmarkSet) -> str:
    """Serialize to the region-grouped JSON schema in canonical key order."""
    parts = []
    for name, start, count in JSON_REGIONS:
        rows = []
        for x, y in f.points[start : start + count]:
            rows.append(f"[{_fmt_number(x)}, {_fmt_number(y)}]")
        parts.append(f'"{name}": [' + ", ".join(rows) + "]")
    return "{" + ", ".join(parts) + "}"


def eye_centers(f: LandmarkSet) -> tuple:
    """(left, right) eye centers as arithmetic means of the six points each."""
    left = f.points[list(LEFT_EYE)].mean(axis=0)
    right = f.points[list(RIGHT_EYE)].mean(axis=0)
    return left, right


def interocular_distance(f: LandmarkSet) -> float:
    """Euclidean distance between the two eye centers, in pixels."""
    left, right = eye_centers(f)
    d = float(np.hypot(*(right - left)))
    if d <= 0.0:
        raise GeometryError("coincident eye centers: interocular distance is zero")
    return d


def _require_same_canvas(a: LandmarkSet, b: LandmarkSet):
    if a.canvas != b.canvas:
        raise UnitError(f"canvas mismatch: {a.canvas} vs {b.canvas}")


def change_score(a: LandmarkSet, b: LandmarkSet) -> float:
    """Composite landmark change score, in pixels.

    score = 0.7 * inner_diff + 0.3 * overall_diff, where inner_diff is the
    mean absolute per-coordinate difference over the 32 inner points (eyes
    and mouth, 64 coordinates) and overall_diff the mean over all 136
    coordinates.
    """
    _require_same_canvas(a, b)
    diff = np.abs(a.points - b.points)
    inner_diff = float(diff[INNER].mean())
    overall_diff = float(diff.mean())
    return 0.7 * inner_diff + 0.3 * overall_diff


def change_score_normalized(a: LandmarkSet, b: LandmarkSet) -> float:
    """change_score divided by the interocular distance of `a`.

    Unitless variant; no calibrated threshold is shipped for it.
    """
    return change_score(a, b) / interocular_distance(a)


def landmark_l1_error(pred: LandmarkSet, target: LandmarkSet) -> float:
    """Mean absolute difference over all 136 coordinates, in pixels."""
    _require_same_canvas(pred, target)
    return float(np.abs(pred.points - target.points).mean())
