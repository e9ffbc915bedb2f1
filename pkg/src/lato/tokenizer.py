"""VQ landmark tokenizer: encoder, nearest-neighbor quantizer, mirrored decoder.

The network is a small fixed architecture (per-point embedding, residual
1-D convolution blocks along the 68-token axis, codebook, mirrored decoder)
trained with hand-derived backward passes; no autodiff dependency.

Coordinates are normalized per axis to [-1, 1] before encoding and
denormalized (and clamped to the canvas) after decoding.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import ConfigError, NumericError, RangeError, SchemaError, ShapeError, UnitError
from .landmarks import N_POINTS, LandmarkSet
from .kinematics import asset_hashes

_MAGIC = b"LATOMDL1"
_SCHEMA_VERSION = 1

# Adam constants; fixed, not worth configuration surface. The second-moment
# horizon is short because the small model's curvature shifts quickly.
_B1 = 0.9
_B2 = 0.99
_EPS = 1e-8


@dataclass(frozen=True)
class TokenizerConfig:
    """Desk-scale defaults; the reference scale (m=8192, d=3072) is config-reachable."""

    m: int = 256
    d: int = 64
    beta: float = 0.25
    blocks: int = 4
    lr: float = 1e-3
    batch: int = 32
    steps: int = 12000
    reset_interval: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.m < 2:
            raise ConfigError(f"codebook size m must be >= 2, got {self.m}")
        if self.d < 2 or self.d % 2 != 0:
            raise ConfigError(f"code dimension d must be even and >= 2, got {self.d}")
        if not self.beta > 0:
            raise ConfigError(f"commitment weight beta must be > 0, got {self.beta}")
        if self.blocks < 1:
            raise ConfigError(f"blocks must be >= 1, got {self.blocks}")
        if not self.lr > 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if self.batch < 1:
            raise ConfigError(f"batch must be >= 1, got {self.batch}")
        if self.steps < 1:
            raise ConfigError(f"steps must be >= 1, got {self.steps}")
        if self.reset_interval < 1:
            raise ConfigError(f"reset_interval must be >= 1, got {self.reset_interval}")


@dataclass
class TokenizerModel:
    config: TokenizerConfig
    canvas: tuple[int, int]
    params: dict[str, np.ndarray]
    asset_hashes: dict[str, str] = field(default_factory=asset_hashes)
    schema_version: int = _SCHEMA_VERSION

    @property
    def codebook(self) -> np.ndarray:
        return self.params["codebook"]

    def param_names(self) -> list[str]:
        return sorted(self.params)


@dataclass(frozen=True)
class FacialTokens:
    indices: np.ndarray
    embeddings: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        emb = np.asarray(self.embeddings, dtype=np.float64)
        if idx.shape != (N_POINTS,):
            raise ShapeError(f"expected {N_POINTS} token indices, got shape {idx.shape}")
        if emb.ndim != 2 or emb.shape[0] != N_POINTS:
            raise ShapeError(f"expected ({N_POINTS}, d) embeddings, got shape {emb.shape}")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "embeddings", emb)


@dataclass
class TrainLog:
    """Per-step loss terms plus the dead-code reset history."""

    total: np.ndarray
    rec: np.ndarray
    commit: np.ndarray
    align: np.ndarray
    batch_utilization: np.ndarray
    resets: list[dict]
    usage: np.ndarray  # cumulative per-code selection counts over training


def _normalize(points: np.ndarray, canvas: tuple[int, int]) -> np.ndarray:
    w, h = canvas
    out = np.empty_like(points, dtype=np.float64)
    out[..., 0] = (points[..., 0] - w / 2.0) / (w / 2.0)
    out[..., 1] = (points[..., 1] - h / 2.0) / (h / 2.0)
    return out


def _denormalize(points: np.ndarray, canvas: tuple[int, int]) -> np.ndarray:
    w, h = canvas
    out = np.empty_like(points, dtype=np.float64)
    out[..., 0] = points[..., 0] * (w / 2.0) + w / 2.0
    out[..., 1] = points[..., 1] * (h / 2.0) + h / 2.0
    return out


def _matmul(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    # (B, L, k) @ (k, d) + (d,)
    return x @ w + b


def _conv3(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    # kernel-3 convolution along the token axis, written as three shifted
    # matmuls; w is (3d, d) stacked as [left tap, center tap, right tap].
    # Sequence ends use replicate padding so boundary tokens keep a full
    # local context instead of seeing zeros.
    d = x.shape[-1]
    y = x @ w[d : 2 * d]
    y += b
    y[:, 1:] += x[:, :-1] @ w[:d]
    y[:, 0] += x[:, 0] @ w[:d]
    y[:, :-1] += x[:, 1:] @ w[2 * d :]
    y[:, -1] += x[:, -1] @ w[2 * d :]
    return y


def _conv3_backward(x: np.ndarray, w: np.ndarray, dy: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # returns (dx, dw, db) for y = _conv3(x, w, b)
    d = x.shape[-1]
    flat = lambda t: t.reshape(-1, t.shape[-1])
    dw = np.empty_like(w)
    dw[:d] = flat(x[:, :-1]).T @ flat(dy[:, 1:])
    dw[:d] += x[:, 0].T @ dy[:, 0]
    dw[d : 2 * d] = flat(x).T @ flat(dy)
    dw[2 * d :] = flat(x[:, 1:]).T @ flat(dy[:, :-1])
    dw[2 * d :] += x[:, -1].T @ dy[:, -1]
    db = dy.sum(axis=(0, 1))
    dx = dy @ w[d : 2 * d].T
    dx[:, :-1] += dy[:, 1:] @ w[:d].T
    dx[:, 0] += dy[:, 0] @ w[:d].T
    dx[:, 1:] += dy[:, :-1] @ w[2 * d :].T
    dx[:, -1] += dy[:, -1] @ w[2 * d :].T
    return dx, dw, db


def _block_names(prefix: str, i: int) -> tuple[str, str, str, str]:
    return (f"{prefix}{i}.w1", f"{prefix}{i}.b1", f"{prefix}{i}.w2", f"{prefix}{i}.b2")


def init_model(config: TokenizerConfig, canvas: tuple[int, int] = (512, 512)) -> TokenizerModel:
    """Fresh parameters; second conv of every residual block is zero so each
    block is the identity at initialization."""
    rng = np.random.default_rng(config.seed)
    d = config.d
    params: dict[str, np.ndarray] = {}
    params["embed.w"] = rng.normal(0.0, 0.5, (2, d))
    params["embed.b"] = np.zeros(d)
    for prefix in ("enc", "dec"):
        for i in range(config.blocks):
            w1, b1, w2, b2 = _block_names(prefix, i)
            params[w1] = rng.normal(0.0, np.sqrt(2.0 / (3 * d)), (3 * d, d))
            params[b1] = np.zeros(d)
            params[w2] = np.zeros((3 * d, d))
            params[b2] = np.zeros(d)
    params["head.w"] = rng.normal(0.0, np.sqrt(1.0 / d), (d, 2))
    params["head.b"] = np.zeros(2)
    params["codebook"] = rng.normal(0.0, np.sqrt(1.0 / d), (config.m, d))
    return TokenizerModel(config=config, canvas=tuple(canvas), params=params)


_NORM_EPS = 1e-8
_LATENT_SCALE = 1.0


def _encoder_forward(params: dict, config: TokenizerConfig, xn: np.ndarray, cache: list | None = None) -> np.ndarray:
    h = _matmul(xn, params["embed.w"], params["embed.b"])
    if cache is not None:
        cache.append(("embed", xn))
    for i in range(config.blocks):
        w1, b1, w2, b2 = _block_names("enc", i)
        a = _conv3(h, params[w1], params[b1])
        r = np.maximum(a, 0.0)
        out = h + _conv3(r, params[w2], params[b2])
        if cache is not None:
            cache.append((w1, h, a, r))
        h = out
    # final sample-level RMS normalization pins the overall latent scale so
    # training cannot run away in magnitude, while per-position magnitudes
    # stay informative for the quantizer
    scale = np.sqrt((h**2).mean(axis=(-2, -1), keepdims=True) + _NORM_EPS) / _LATENT_SCALE
    y = h / scale
    if cache is not None:
        cache.append(("rmsnorm", y, scale))
    return y


def _rmsnorm_backward(entry: tuple, dy: np.ndarray) -> np.ndarray:
    _, y, scale = entry
    proj = (dy * y).mean(axis=(-2, -1), keepdims=True) / _LATENT_SCALE**2
    return (dy - y * proj) / scale


def _decoder_forward(params: dict, config: TokenizerConfig, q: np.ndarray, cache: list | None = None) -> np.ndarray:
    h = q
    for i in range(config.blocks):
        w1, b1, w2, b2 = _block_names("dec", i)
        a = _conv3(h, params[w1], params[b1])
        r = np.maximum(a, 0.0)
        out = h + _conv3(r, params[w2], params[b2])
        if cache is not None:
            cache.append((w1, h, a, r))
        h = out
    y = _matmul(h, params["head.w"], params["head.b"])
    if cache is not None:
        cache.append(("head", h))
    return y


def _block_backward(params: dict, grads: dict, entry: tuple, dy: np.ndarray) -> np.ndarray:
    w1_name, x, a, r = entry
    prefix = w1_name[: -len(".w1")]

    dr, dw2, db2 = _conv3_backward(r, params[prefix + ".w2"], dy)
    grads[prefix + ".w2"] += dw2
    grads[prefix + ".b2"] += db2
    da = dr * (a > 0.0)
    dx, dw1, db1 = _conv3_backward(x, params[w1_name], da)
    grads[w1_name] += dw1
    grads[prefix + ".b1"] += db1
    return dy + dx


def encode(model: TokenizerModel, f: LandmarkSet) -> np.ndarray:
    """Deterministic forward pass on normalized coordinates -> (68, d) latents."""
    if tuple(f.canvas) != tuple(model.canvas):
        raise UnitError(f"canvas {f.canvas} does not match model normalization {model.canvas}")
    xn = _normalize(f.points[None, :, :], model.canvas)
    return _encoder_forward(model.params, model.config, xn)[0]


def quantize(latents: np.ndarray, codebook: np.ndarray) -> FacialTokens:
    """Per-position argmin of squared Euclidean distance; ties break toward
    the lowest index."""
    lat = np.asarray(latents, dtype=np.float64)
    cb = np.asarray(codebook, dtype=np.float64)
    if cb.ndim != 2 or cb.shape[0] == 0:
        raise ConfigError("codebook must be a nonempty (m, d) matrix")
    if lat.ndim != 2 or lat.shape[1] != cb.shape[1]:
        raise ShapeError(f"latent dim {lat.shape} incompatible with codebook {cb.shape}")
    d2 = ((lat[:, None, :] - cb[None, :, :]) ** 2).sum(axis=2)
    indices = np.argmin(d2, axis=1)
    return FacialTokens(indices=indices, embeddings=cb[indices])


def decode(model: TokenizerModel, tokens: FacialTokens) -> LandmarkSet:
    """Tokens -> landmark coordinates, clamped to the model canvas."""
    m = model.config.m
    if np.any(tokens.indices < 0) or np.any(tokens.indices >= m):
        raise RangeError(f"token index out of range for codebook size {m}")
    q = model.codebook[tokens.indices][None, :, :]
    yn = _decoder_forward(model.params, model.config, q)[0]
    pts = _denormalize(yn, model.canvas)
    return LandmarkSet(points=pts, canvas=model.canvas).clamp()


def tokenize(model: TokenizerModel, f: LandmarkSet) -> FacialTokens:
    return quantize(encode(model, f), model.codebook)


def _train_quantize(latents: np.ndarray, codebook: np.ndarray) -> np.ndarray:
    # matmul distance form (argmin of |e|^2 - 2 e.c + |c|^2); used only inside
    # the training loop where throughput matters
    b, l, d = latents.shape
    flat = latents.reshape(b * l, d)
    d2 = (flat**2).sum(axis=1, keepdims=True) - 2.0 * flat @ codebook.T + (codebook**2).sum(axis=1)
    return np.argmin(d2, axis=1).reshape(b, l)


def _adam_update(params, grads, state, lr, t):
    for name in sorted(params):
        g = grads[name]
        m, v = state[name]
        m *= _B1
        m += (1 - _B1) * g
        v *= _B2
        v += (1 - _B2) * g * g
        mhat = m / (1 - _B1**t)
        vhat = v / (1 - _B2**t)
        params[name] -= lr * mhat / (np.sqrt(vhat) + _EPS)


def train(config: TokenizerConfig, dataset) -> tuple[TokenizerModel, TrainLog]:
    """Optimize encoder/decoder/codebook on a stream of LandmarkSet samples.

    Loss per step: mean-L1 reconstruction + beta * mean commitment
    (E toward sg[C]) + mean codebook alignment (C toward sg[E]); the decoder
    gradient crosses the quantizer via the straight-through estimator.
    Codes unused since the previous reset are reinitialized every
    ``reset_interval`` steps to encoder outputs from the current batch.
    """
    faces = list(dataset)
    if not faces:
        raise ConfigError("training dataset is empty")
    if len(faces) < config.batch:
        raise ConfigError(f"dataset yields {len(faces)} samples; batch needs {config.batch}")
    canvas = tuple(faces[0].canvas)
    for f in faces:
        if tuple(f.canvas) != canvas:
            raise UnitError("training samples disagree on canvas size")
    data = _normalize(np.stack([f.points for f in faces]), canvas)

    model = init_model(config, canvas)
    # optimization runs in float32 for throughput; the returned model and the
    # serialized form are float64
    params = {name: p.astype(np.float32) for name, p in model.params.items()}
    data = data.astype(np.float32)
    rng = np.random.default_rng(config.seed + 1)  # decoupled from init stream
    state = {name: (np.zeros_like(p), np.zeros_like(p)) for name, p in params.items()}

    n_steps = config.steps
    log = TrainLog(
        total=np.zeros(n_steps),
        rec=np.zeros(n_steps),
        commit=np.zeros(n_steps),
        align=np.zeros(n_steps),
        batch_utilization=np.zeros(n_steps),
        resets=[],
        usage=np.zeros(config.m, dtype=np.int64),
    )
    used_since_reset: set[int] = set()

    for step in range(n_steps):
        idx = rng.integers(0, len(faces), size=config.batch)
        xn = data[idx]
        bsz = config.batch

        cache: list = []
        latents = _encoder_forward(params, config, xn, cache)

        codebook = params["codebook"]
        indices = _train_quantize(latents, codebook)
        q = codebook[indices]

        dec_cache: list = []
        recon = _decoder_forward(params, config, q, dec_cache)

        n_coord = recon.size
        n_lat = latents.size
        diff = recon - xn
        # per-element mean reductions: beta stays meaningful across d and the
        # commitment gradient keeps stabilizing the encoder near its codes
        rec_loss = np.abs(diff).mean()
        resid = latents - q
        commit_loss = (resid**2).mean()
        align_loss = commit_loss  # same value; gradients route to C, not E
        total = rec_loss + config.beta * commit_loss + align_loss
        if not np.isfinite(total):
            raise NumericError(
                "non-finite training loss; diagnostics: "
                + json.dumps({"step": step, "rec": float(rec_loss), "commit": float(commit_loss)})
            )

        grads = {name: np.zeros_like(p) for name, p in params.items()}

        # reconstruction backward through the decoder
        dy = np.sign(diff) / n_coord
        head_entry = dec_cache.pop()
        h_final = head_entry[1]
        flatten = lambda t: t.reshape(bsz * N_POINTS, -1)
        grads["head.w"] += flatten(h_final).T @ flatten(dy)
        grads["head.b"] += dy.sum(axis=(0, 1))
        dh = dy @ params["head.w"].T
        for entry in reversed(dec_cache):
            dh = _block_backward(params, grads, entry, dh)
        dq = dh

        # straight-through copy + commitment pull on encoder outputs
        dlat = dq + config.beta * 2.0 * resid / n_lat
        # codebook alignment term: scatter per-position gradients into rows
        dcode_rows = 2.0 * (q - latents) / n_lat
        np.add.at(grads["codebook"], indices.reshape(-1), dcode_rows.reshape(-1, config.d))

        embed_entry = cache[0]
        de = _rmsnorm_backward(cache[-1], dlat)
        for entry in reversed(cache[1:-1]):
            de = _block_backward(params, grads, entry, de)
        xin = embed_entry[1]
        grads["embed.w"] += flatten(xin).T @ flatten(de)
        grads["embed.b"] += de.sum(axis=(0, 1))

        _adam_update(params, grads, state, config.lr, step + 1)

        batch_codes = np.unique(indices)
        used_since_reset.update(int(c) for c in batch_codes)
        log.usage += np.bincount(indices.reshape(-1), minlength=config.m)
        log.total[step] = total
        log.rec[step] = rec_loss
        log.commit[step] = commit_loss
        log.align[step] = align_loss
        log.batch_utilization[step] = batch_codes.size / config.m

        if (step + 1) % config.reset_interval == 0:
            dead = np.array(sorted(set(range(config.m)) - used_since_reset), dtype=np.int64)
            assert not (set(dead.tolist()) & used_since_reset), "reset touched a live code"
            if dead.size:
                flat = latents.reshape(-1, config.d)
                take = rng.choice(flat.shape[0], size=dead.size, replace=flat.shape[0] < dead.size)
                params["codebook"][dead] = flat[take]
                m_state, v_state = state["codebook"]
                m_state[dead] = 0.0
                v_state[dead] = 0.0
            log.resets.append(
                {"step": step, "reset": int(dead.size), "used_in_window": len(used_since_reset)}
            )
            used_since_reset.clear()

    model.params = {name: p.astype(np.float64) for name, p in params.items()}
    return model, log


def evaluate(model: TokenizerModel, faces, chunk: int = 512) -> dict:
    """Round-trip decode(quantize(encode(f))) metrics in pixel units."""
    faces = list(faces)
    canvas = model.canvas
    for f in faces:
        if tuple(f.canvas) != tuple(canvas):
            raise UnitError(f"canvas {f.canvas} does not match model normalization {canvas}")
    pts = np.stack([f.points for f in faces])
    seen: set[int] = set()
    errs = np.empty(len(faces))
    w, h = canvas
    for lo in range(0, len(faces), chunk):
        block = pts[lo : lo + chunk]
        latents = _encoder_forward(model.params, model.config, _normalize(block, canvas))
        indices = _train_quantize(latents, model.codebook)
        recon = _decoder_forward(model.params, model.config, model.codebook[indices])
        out = _denormalize(recon, canvas)
        out[..., 0] = np.clip(out[..., 0], 0.0, w - 1.0)
        out[..., 1] = np.clip(out[..., 1], 0.0, h - 1.0)
        errs[lo : lo + block.shape[0]] = np.abs(out - block).mean(axis=(1, 2))
        seen.update(int(i) for i in np.unique(indices))
    return {
        "mean_l1_px": float(errs.mean()),
        "max_l1_px": float(errs.max()),
        "utilization": len(seen) / model.config.m,
        "codes_used": len(seen),
    }


@dataclass(frozen=True)
class CodebookStats:
    mean_abs_cos: float
    std_cos: float
    max_abs_cos: float
    utilization_histogram: np.ndarray | None
    zero_norm_rows: np.ndarray


def codebook_stats(
    codebook: np.ndarray,
    usage: np.ndarray | None = None,
    exact_limit: int = 4096,
    sample_pairs: int = 1_000_000,
    seed: int = 0,
) -> CodebookStats:
    """Aggregate pairwise cosine-similarity statistics over codebook rows.

    Exact over all m(m-1)/2 pairs for m <= exact_limit, uniformly subsampled
    with a fixed seed above it. Zero-norm rows are excluded from the cosine
    statistics and reported.
    """
    cb = np.asarray(codebook, dtype=np.float64)
    if cb.ndim != 2 or cb.shape[0] < 2:
        raise ConfigError("codebook_stats needs an (m, d) matrix with m >= 2")
    norms = np.linalg.norm(cb, axis=1)
    zero_rows = np.flatnonzero(norms == 0.0)
    live = np.flatnonzero(norms > 0.0)
    if live.size < 2:
        raise ConfigError("fewer than two nonzero codebook rows")
    unit = cb[live] / norms[live, None]
    n = unit.shape[0]
    if n <= exact_limit:
        sims = (unit @ unit.T)[np.triu_indices(n, k=1)]
    else:
        rng = np.random.default_rng(seed)
        i = rng.integers(0, n, size=sample_pairs)
        j = rng.integers(0, n - 1, size=sample_pairs)
        j = np.where(j >= i, j + 1, j)  # j != i, uniform over off-diagonal pairs
        sims = np.einsum("ij,ij->i", unit[i], unit[j])
    hist = None
    if usage is not None:
        usage = np.asarray(usage)
        if usage.shape != (cb.shape[0],):
            raise ShapeError(f"usage must have shape ({cb.shape[0]},), got {usage.shape}")
        hist = np.histogram(usage, bins=10)[0]
    return CodebookStats(
        mean_abs_cos=float(np.abs(sims).mean()),
        std_cos=float(sims.std()),
        max_abs_cos=float(np.abs(sims).max()),
        utilization_histogram=hist,
        zero_norm_rows=zero_rows,
    )


def save_model(model: TokenizerModel, path: str) -> None:
    """Single binary container: magic, JSON header, little-endian float64
    tensors, trailing CRC32 of everything before it."""
    names = model.param_names()
    table = []
    offset = 0
    blobs = []
    for name in names:
        arr = np.ascontiguousarray(model.params[name], dtype="<f8")
        table.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blob = arr.tobytes()
        blobs.append(blob)
        offset += len(blob)
    header = {
        "schema_version": model.schema_version,
        "kind": "tokenizer",
        "config": asdict(model.config),
        "canvas": list(model.canvas),
        "asset_hashes": model.asset_hashes,
        "tensors": table,
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    body = _MAGIC + len(hbytes).to_bytes(4, "little") + hbytes + b"".join(blobs)
    crc = zlib.crc32(body) & 0xFFFFFFFF
    with open(path, "wb") as fh:
        fh.write(body + crc.to_bytes(4, "little"))


def load_model(path: str) -> TokenizerModel:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < len(_MAGIC) + 8 or raw[: len(_MAGIC)] != _MAGIC:
        raise SchemaError("not a tokenizer model file (bad magic)")
    crc_stored = int.from_bytes(raw[-4:], "little")
    if zlib.crc32(raw[:-4]) & 0xFFFFFFFF != crc_stored:
        raise SchemaError("model file checksum mismatch")
    hlen = int.from_bytes(raw[len(_MAGIC) : len(_MAGIC) + 4], "little")
    hstart = len(_MAGIC) + 4
    header = json.loads(raw[hstart : hstart + hlen].decode("utf-8"))
    if header.get("kind") != "tokenizer":
        raise SchemaError(f"unexpected model kind {header.get('kind')!r}")
    config = TokenizerConfig(**header["config"])
    tensors = raw[hstart + hlen : -4]
    params = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) * 8
        start = entry["offset"]
        params[entry["name"]] = (
            np.frombuffer(tensors[start : start + size], dtype="<f8").reshape(shape).copy()
        )
    return TokenizerModel(
        config=config,
        canvas=tuple(header["canvas"]),
        params=params,
        asset_hashes=header["asset_hashes"],
        schema_version=header["schema_version"],
    )
