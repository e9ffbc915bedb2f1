"""Three-axis rotary positional encoding.

Every token carries a (text, row, column) position. Image tokens take their
grid cell, text tokens count along the text axis, and landmark tokens are
anchored to the latent-grid cell covering their pixel, so a landmark and the
image patch under it share one position exactly. Rotations act on adjacent
coordinate pairs inside per-axis sub-bands of the head dimension and preserve
vector norms, which keeps attention logits a function of position differences
only.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, RangeError, ShapeError
from .landmarks import LandmarkSet


@dataclass(frozen=True)
class PositionTriple:
    """Token placement (t, h, w): text index, grid row, grid column."""

    t: int
    h: int
    w: int

    def __post_init__(self):
        for name in ("t", "h", "w"):
            v = getattr(self, name)
            if v != int(v):
                raise RangeError(f"position {name} must be an integer, got {v!r}")
            if v < 0:
                raise RangeError(f"position {name} must be non-negative, got {v}")
            object.__setattr__(self, name, int(v))

    def as_tuple(self) -> tuple:
        return (self.t, self.h, self.w)


@dataclass(frozen=True)
class RopeLayout:
    """Split of one attention head across the three position axes."""

    head_dim: int = 64
    sub_dims: tuple = (16, 24, 24)
    base: float = 10000.0

    def __post_init__(self):
        if self.head_dim <= 0:
            raise ConfigError(f"head_dim must be positive, got {self.head_dim}")
        if len(self.sub_dims) != 3:
            raise ConfigError(f"need one sub-dim per axis, got {self.sub_dims}")
        for d in self.sub_dims:
            if d < 0 or d % 2 != 0:
                raise ConfigError(f"sub-dims must be even and non-negative, got {self.sub_dims}")
        if sum(self.sub_dims) != self.head_dim:
            raise ConfigError(
                f"sub-dims {self.sub_dims} must sum to head_dim {self.head_dim}"
            )
        if self.base <= 0:
            raise ConfigError(f"frequency base must be positive, got {self.base}")
        object.__setattr__(self, "sub_dims", tuple(int(d) for d in self.sub_dims))


DEFAULT_LAYOUT = RopeLayout()


def text_positions(n: int) -> list:
    """Positions for a text segment: token i sits at (i, 0, 0)."""
    if n < 0:
        raise ConfigError(f"segment length must be non-negative, got {n}")
    return [PositionTriple(i, 0, 0) for i in range(n)]


def image_positions(grid_h: int, grid_w: int, column_major: bool = False) -> list:
    """Positions for a flattened grid of image tokens.

    Row-major by default: token i maps to (0, i // grid_w, i % grid_w). The
    column-major flag flips the enumeration; the two agree on which cells
    exist, only the flattening order differs, and square grids make the
    choice invisible to downstream position arithmetic.
    """
    if grid_h < 1 or grid_w < 1:
        raise ConfigError(f"grid dims must be >= 1, got {grid_h}x{grid_w}")
    if column_major:
        return [PositionTriple(0, i % grid_h, i // grid_h) for i in range(grid_h * grid_w)]
    return [PositionTriple(0, i // grid_w, i % grid_w) for i in range(grid_h * grid_w)]


def landmark_positions(f: LandmarkSet, stride: int = 16) -> list:
    """Anchor each landmark to the latent-grid cell covering its pixel.

    A point at (X, Y) gets (0, Y // stride, X // stride), the exact triple of
    the image token whose patch contains that pixel.
    """
    if stride <= 0:
        raise ConfigError(f"stride must be positive, got {stride}")
    w, h = f.canvas
    if w % stride or h % stride:
        raise ConfigError(f"stride {stride} must divide the canvas {f.canvas}")
    grid_w, grid_h = w // stride, h // stride
    cols = np.clip(np.floor(f.points[:, 0] / stride).astype(int), 0, grid_w - 1)
    rows = np.clip(np.floor(f.points[:, 1] / stride).astype(int), 0, grid_h - 1)
    return [PositionTriple(0, int(r), int(c)) for r, c in zip(rows, cols)]


def position_array(triples) -> np.ndarray:
    """Stack positions into an (n, 3) integer array."""
    out = np.empty((len(triples), 3), dtype=np.int64)
    for i, p in enumerate(triples):
        out[i] = p.as_tuple() if isinstance(p, PositionTriple) else tuple(p)
    return out


def _as_positions(p, n_lead):
    # Accept one triple (applied to every vector) or one triple per vector.
    # Raw int triples are allowed so displacement math (negative offsets,
    # inverse rotations) stays expressible; PositionTriple itself only ever
    # names a real token slot and stays non-negative.
    if isinstance(p, PositionTriple):
        return np.asarray(p.as_tuple(), dtype=np.int64), False
    arr = np.asarray(p, dtype=np.int64)
    if arr.shape == (3,):
        return arr, False
    if arr.ndim == 2 and arr.shape[1] == 3:
        if n_lead is None or arr.shape[0] != n_lead:
            raise ShapeError(
                f"got {arr.shape[0]} positions for leading axis {n_lead}"
            )
        return arr, True
    raise ShapeError(f"positions must be a triple or an (n, 3) array, got {arr.shape}")


def apply_rope(vec: np.ndarray, p, layout: RopeLayout = DEFAULT_LAYOUT) -> np.ndarray:
    """Rotate per-axis sub-bands of vec by its position.

    vec is (head_dim,) or (..., head_dim). p is a PositionTriple, a raw
    (t, h, w) integer triple, or a sequence of triples matched to vec's
    leading axis (per-token positions broadcast across any middle axes,
    which is the multi-head case). Pure rotation: norms are preserved and
    applying the negated position undoes the call.
    """
    vec = np.asarray(vec, dtype=np.float64)
    if vec.shape[-1] != layout.head_dim:
        raise ShapeError(
            f"vector dim {vec.shape[-1]} does not match head_dim {layout.head_dim}"
        )
    if isinstance(p, (list, tuple)) and p and isinstance(p[0], PositionTriple):
        p = position_array(p)
    pos, per_token = _as_positions(p, vec.shape[0] if vec.ndim > 1 else None)

    out = vec.copy()
    offset = 0
    for axis in range(3):
        d_axis = layout.sub_dims[axis]
        if d_axis == 0:
            continue
        half = d_axis // 2
        inv_freq = layout.base ** (-2.0 * np.arange(half) / d_axis)
        if per_token:
            theta = pos[:, axis, None].astype(np.float64) * inv_freq
            shape = (vec.shape[0],) + (1,) * (vec.ndim - 2) + (half,)
            theta = theta.reshape(shape)
        else:
            theta = float(pos[axis]) * inv_freq
        cos, sin = np.cos(theta), np.sin(theta)
        band = vec[..., offset : offset + d_axis]
        x1, x2 = band[..., 0::2], band[..., 1::2]
        out[..., offset : offset + d_axis : 2] = x1 * cos - x2 * sin
        out[..., offset + 1 : offset + d_axis : 2] = x1 * sin + x2 * cos
        offset += d_axis
    return out
