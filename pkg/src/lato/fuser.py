"""Unified token sequence assembly and a reference attention forward pass.

Text, source-image, facial, and noisy-image tokens are concatenated into one
sequence with per-token grid positions, so a single bidirectional attention
stack sees all modalities at once. Facial tokens enter through a small linear
adapter and can be swapped for learnable unconditional rows, which is what
makes landmark-aware classifier-free guidance possible at sampling time.
Everything here is inference-shape computation with seeded or loaded weights;
there is no training loop.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericError, RangeError, ShapeError
from .landmarks import N_POINTS, LandmarkSet
from .posenc import (
    DEFAULT_LAYOUT,
    RopeLayout,
    apply_rope,
    image_positions,
    landmark_positions,
    position_array,
    text_positions,
)
from .tokenizer import FacialTokens


def _as_segment(z, name):
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2:
        raise ShapeError(f"{name} must be 2-D (length, d_model), got {z.shape}")
    return z


@dataclass(frozen=True)
class TokenSequence:
    """Concatenated modal tokens in fixed segment order with their positions."""

    z_t: np.ndarray
    z_s: np.ndarray
    z_f: np.ndarray
    z_n: np.ndarray
    positions: list

    def __post_init__(self):
        object.__setattr__(self, "z_t", _as_segment(self.z_t, "z_t"))
        object.__setattr__(self, "z_s", _as_segment(self.z_s, "z_s"))
        object.__setattr__(self, "z_n", _as_segment(self.z_n, "z_n"))
        d = self.z_t.shape[1]
        if self.z_f is not None:
            object.__setattr__(self, "z_f", _as_segment(self.z_f, "z_f"))
            if self.z_f.shape[0] != N_POINTS:
                raise ShapeError(f"landmark segment must hold {N_POINTS} tokens, got {self.z_f.shape[0]}")
        for name in ("z_s", "z_f", "z_n"):
            z = getattr(self, name)
            if z is not None and z.shape[1] != d:
                raise ShapeError(f"{name} has d_model {z.shape[1]}, expected {d}")
        if len(self.positions) != self.total:
            raise ShapeError(
                f"{len(self.positions)} positions for {self.total} tokens"
            )

    @property
    def lengths(self) -> tuple:
        l_f = 0 if self.z_f is None else self.z_f.shape[0]
        return (self.z_t.shape[0], self.z_s.shape[0], l_f, self.z_n.shape[0])

    @property
    def offsets(self) -> tuple:
        return tuple(np.cumsum(self.lengths).tolist())

    @property
    def total(self) -> int:
        return sum(self.lengths)

    def tokens(self) -> np.ndarray:
        parts = [self.z_t, self.z_s, self.z_n] if self.z_f is None else [
            self.z_t, self.z_s, self.z_f, self.z_n]
        return np.concatenate(parts, axis=0)


@dataclass(frozen=True)
class LandmarkAdapter:
    """Linear projection lifting code embeddings into the model width."""

    w: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "w", np.asarray(self.w, dtype=np.float64))
        object.__setattr__(self, "b", np.asarray(self.b, dtype=np.float64))
        if self.w.ndim != 2 or self.b.shape != (self.w.shape[1],):
            raise ShapeError(
                f"adapter bias {self.b.shape} must match output dim of {self.w.shape}"
            )

    def apply(self, embeddings: np.ndarray) -> np.ndarray:
        embeddings = np.asarray(embeddings, dtype=np.float64)
        if embeddings.shape[-1] != self.w.shape[0]:
            raise ShapeError(
                f"embeddings dim {embeddings.shape[-1]} does not match adapter input {self.w.shape[0]}"
            )
        return embeddings @ self.w + self.b


@dataclass(frozen=True)
class UncondTokens:
    """Learnable stand-in rows for the landmark segment plus their drop rate."""

    tokens: np.ndarray
    rho: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "tokens", np.asarray(self.tokens, dtype=np.float64))
        if self.tokens.ndim != 2 or self.tokens.shape[0] != N_POINTS:
            raise ShapeError(f"need ({N_POINTS}, d_model) tokens, got {self.tokens.shape}")
        if not 0.0 <= self.rho <= 1.0:
            raise ConfigError(f"replacement probability must be in [0, 1], got {self.rho}")


@dataclass(frozen=True)
class AttentionBlockParams:
    """One attention block: four square projections, head count, rope layout."""

    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray
    n_heads: int
    layout: RopeLayout = DEFAULT_LAYOUT

    def __post_init__(self):
        for name in ("w_q", "w_k", "w_v", "w_o"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        d = self.w_q.shape[0]
        for name in ("w_q", "w_k", "w_v", "w_o"):
            if getattr(self, name).shape != (d, d):
                raise ShapeError(f"{name} must be ({d}, {d}), got {getattr(self, name).shape}")
        if self.n_heads < 1 or d % self.n_heads != 0:
            raise ConfigError(f"d_model {d} not divisible by {self.n_heads} heads")
        if d // self.n_heads != self.layout.head_dim:
            raise ConfigError(
                f"head_dim {d // self.n_heads} does not match layout head_dim {self.layout.head_dim}"
            )

    @property
    def d_model(self) -> int:
        return self.w_q.shape[0]


def init_adapter(d_code: int, d_model: int, seed: int = 0) -> LandmarkAdapter:
    rng = np.random.default_rng(seed)
    return LandmarkAdapter(
        w=rng.normal(0.0, 1.0 / math.sqrt(d_code), (d_code, d_model)),
        b=np.zeros(d_model),
    )


def init_uncond(d_model: int, seed: int = 0, rho: float = 0.1) -> UncondTokens:
    rng = np.random.default_rng(seed)
    return UncondTokens(tokens=rng.normal(0.0, 0.02, (N_POINTS, d_model)), rho=rho)


def init_attention(d_model: int, n_heads: int, seed: int = 0,
                   layout: RopeLayout = None) -> AttentionBlockParams:
    if layout is None:
        layout = DEFAULT_LAYOUT
    rng = np.random.default_rng(seed)
    scale = 1.0 / math.sqrt(d_model)
    w = lambda: rng.normal(0.0, scale, (d_model, d_model))
    return AttentionBlockParams(w_q=w(), w_k=w(), w_v=w(), w_o=w(),
                                n_heads=n_heads, layout=layout)


def _grid_dims(length: int, grid, name: str) -> tuple:
    if grid is not None:
        gh, gw = grid
        if gh * gw != length:
            raise ConfigError(f"{name} grid {gh}x{gw} does not match length {length}")
        return int(gh), int(gw)
    side = math.isqrt(length)
    if side * side != length:
        raise ConfigError(
            f"{name} length {length} is not a perfect square; pass an explicit grid"
        )
    return side, side


def assemble(z_t, z_s, tokens, z_n, adapter: LandmarkAdapter,
             f: LandmarkSet = None, stride: int = 16,
             grid_s=None, grid_n=None) -> TokenSequence:
    """Build the unified sequence: text, source image, landmarks, noisy image.

    Facial embeddings are projected by the adapter; landmark positions come
    from the pixel coordinates in f, everything else from grid enumeration.
    Pass tokens=None (and f=None) to assemble without a landmark segment.
    """
    z_t = _as_segment(z_t, "z_t")
    z_s = _as_segment(z_s, "z_s")
    z_n = _as_segment(z_n, "z_n")
    positions = list(text_positions(z_t.shape[0]))
    if z_s.shape[0]:
        positions += image_positions(*_grid_dims(z_s.shape[0], grid_s, "z_s"))
    z_f = None
    if tokens is not None:
        if f is None:
            raise ConfigError("landmark tokens need their LandmarkSet for positions")
        if not isinstance(tokens, FacialTokens):
            raise ShapeError(f"expected FacialTokens, got {type(tokens).__name__}")
        z_f = adapter.apply(tokens.embeddings)
        if z_f.shape[1] != z_t.shape[1]:
            raise ShapeError(
                f"adapter output dim {z_f.shape[1]} does not match d_model {z_t.shape[1]}"
            )
        positions += landmark_positions(f, stride)
    if z_n.shape[0]:
        positions += image_positions(*_grid_dims(z_n.shape[0], grid_n, "z_n"))
    return TokenSequence(z_t=z_t, z_s=z_s, z_f=z_f, z_n=z_n, positions=positions)


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def attention_forward(seq: TokenSequence, params: AttentionBlockParams) -> np.ndarray:
    """Full bidirectional attention over the sequence, positions on Q and K only."""
    z = seq.tokens()
    if not np.all(np.isfinite(z)):
        raise NumericError("non-finite token values entering attention")
    if z.shape[1] != params.d_model:
        raise ShapeError(f"sequence d_model {z.shape[1]} vs params {params.d_model}")
    n, d = z.shape
    hd = params.layout.head_dim
    heads = params.n_heads
    pos = position_array(seq.positions)
    q = apply_rope((z @ params.w_q).reshape(n, heads, hd), pos, params.layout)
    k = apply_rope((z @ params.w_k).reshape(n, heads, hd), pos, params.layout)
    v = (z @ params.w_v).reshape(n, heads, hd)
    logits = np.einsum("nhd,mhd->hnm", q, k) / math.sqrt(hd)
    attn = _softmax_rows(logits)
    ctx = np.einsum("hnm,mhd->nhd", attn, v)
    return ctx.reshape(n, d) @ params.w_o


def replace_uncond(seq: TokenSequence, uncond: UncondTokens,
                   rng: np.random.Generator, rho: float = None) -> TokenSequence:
    """One Bernoulli draw per sequence: maybe swap the whole landmark segment.

    Positions are kept as-is so the unconditional rows still sit on the
    landmark grid cells; only the content is dropped.
    """
    if seq.z_f is None:
        raise ConfigError("sequence has no landmark segment to replace")
    if rho is None:
        rho = uncond.rho
    if not 0.0 <= rho <= 1.0:
        raise ConfigError(f"replacement probability must be in [0, 1], got {rho}")
    if uncond.tokens.shape[1] != seq.z_f.shape[1]:
        raise ShapeError(
            f"uncond d_model {uncond.tokens.shape[1]} vs sequence {seq.z_f.shape[1]}"
        )
    if rng.random() >= rho:
        return seq
    return TokenSequence(z_t=seq.z_t, z_s=seq.z_s, z_f=uncond.tokens,
                         z_n=seq.z_n, positions=seq.positions)


def cfg_combine(uncond_out, cond_out, w: float) -> np.ndarray:
    """Guided output: uncond_out + w * (cond_out - uncond_out)."""
    uncond_out = np.asarray(uncond_out, dtype=np.float64)
    cond_out = np.asarray(cond_out, dtype=np.float64)
    if uncond_out.shape != cond_out.shape:
        raise ShapeError(f"shape mismatch {uncond_out.shape} vs {cond_out.shape}")
    # algebraically u + w*(c - u); this grouping returns the endpoints
    # bit-exactly at w = 0 and w = 1
    return (1.0 - w) * uncond_out + w * cond_out


def attention_cost(lengths) -> dict:
    """Token and pairwise-logit counts for landmark vs rendered conditioning.

    The rendered variant swaps the 68 landmark tokens for a dense grid the
    size of the noisy-image segment (a rendered condition map lives on the
    same latent grid as the generation target). Costs are closed-form counts,
    not wall-clock.
    """
    if len(lengths) != 4:
        raise ShapeError(f"expected (l_t, l_s, l_f, l_n), got {lengths!r}")
    l_t, l_s, l_f, l_n = (int(v) for v in lengths)
    if min(l_t, l_s, l_f, l_n) < 0:
        raise RangeError(f"lengths must be non-negative, got {lengths!r}")
    total = l_t + l_s + l_f + l_n
    rendered_total = l_t + l_s + l_n + l_n
    return {
        "tokens_total": total,
        "pairwise_logits": total * total,
        "rendered_tokens_total": rendered_total,
        "rendered_pairwise_logits": rendered_total * rendered_total,
        "relative_cost_vs_rendered": (total / rendered_total) ** 2
        if rendered_total else float("nan"),
    }
