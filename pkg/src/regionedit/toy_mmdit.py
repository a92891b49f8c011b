"""A tiny joint-attention transformer used to exercise region masks.

Nothing here is trained. Text tokens are hash-seeded vectors, image tokens
are a fixed projection of a feature grid, and latent tokens start as seeded
Gaussian noise. A rectified-flow style Euler loop integrates the random
velocity field from t=1 (noise) to t=0.
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field

import numpy as np

from .attention_mask import AttentionMask
from .errors import MaskError, ShapeError
from .plan_format import EditPlan
from .region_grid import ImageGeometry, TokenLayout


@dataclass(frozen=True)
class ToyModelConfig:
    embed_dim: int = 64
    layers: int = 4
    heads: int = 4
    mlp_ratio: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.embed_dim % self.heads:
            raise ValueError(f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")
        if min(self.embed_dim, self.layers, self.heads, self.mlp_ratio) < 1:
            raise ValueError("config sizes must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class LayerWeights:
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    w1: np.ndarray
    w2: np.ndarray
    heads: int


@dataclass
class SequenceState:
    tokens: np.ndarray
    layout: TokenLayout
    t: float = 1.0

    def __post_init__(self):
        if self.tokens.shape[0] != self.layout.total:
            raise ShapeError(f"{self.tokens.shape[0]} tokens for a layout of {self.layout.total}")
        if not np.all(np.isfinite(self.tokens)):
            raise ValueError("sequence state contains non-finite entries")

    @property
    def latent(self) -> np.ndarray:
        off = self.layout.offsets["latent"]
        return self.tokens[off:]


@dataclass
class ToyModel:
    config: ToyModelConfig
    layers: list[LayerWeights] = field(default_factory=list)
    head_out: np.ndarray | None = None

    @classmethod
    def init(cls, config: ToyModelConfig) -> "ToyModel":
        rng = np.random.default_rng(config.seed)
        d, hid = config.embed_dim, config.embed_dim * config.mlp_ratio

        def lin(fan_in, fan_out):
            return rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in)

        layers = [
            LayerWeights(lin(d, d), lin(d, d), lin(d, d), lin(d, d), lin(d, hid), lin(hid, d), config.heads)
            for _ in range(config.layers)
        ]
        return cls(config, layers, lin(d, d))


def _seed_from(*parts) -> int:
    h = hashlib.blake2b(digest_size=8)
    for p in parts:
        h.update(repr(p).encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "little")


def text_token(text: str, position: int, dim: int) -> np.ndarray:
    """Deterministic stand-in for a text encoder output at one position."""
    return np.random.default_rng(_seed_from("text", text, position)).standard_normal(dim)


def synthetic_image(geom: ImageGeometry, channels: int = 3, seed: int = 0) -> np.ndarray:
    """Smooth random feature grid of shape (rows, cols, channels)."""
    rng = np.random.default_rng(seed)
    rows, cols = geom.grid
    yy, xx = np.meshgrid(np.linspace(0, 1, rows), np.linspace(0, 1, cols), indexing="ij")
    freq = rng.uniform(0.5, 3.0, size=(channels, 2))
    phase = rng.uniform(0, 2 * np.pi, size=channels)
    grid = np.stack(
        [np.sin(2 * np.pi * (freq[c, 0] * yy + freq[c, 1] * xx) + phase[c]) for c in range(channels)], axis=-1
    )
    return grid


def timestep_embedding(t: float, dim: int) -> np.ndarray:
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half, 1))
    emb = np.concatenate([np.sin(t * 1000.0 * freqs), np.cos(t * 1000.0 * freqs)])
    return np.pad(emb, (0, dim - emb.size))


def embed_inputs(
    plan: EditPlan,
    layout: TokenLayout,
    image: np.ndarray,
    noise_seed: int = 0,
    embed_dim: int = 64,
) -> SequenceState:
    rows, cols = layout.geometry.grid
    if image.ndim != 3 or image.shape[:2] != (rows, cols):
        raise ShapeError(f"image features {image.shape} do not match the {rows}x{cols} patch grid")
    hints = plan.hints
    if len(hints) != len(layout.text_group_sizes):
        raise ShapeError(f"plan has {len(hints)} hints, layout has {len(layout.text_group_sizes)} text groups")

    text = [text_token(h, pos, embed_dim) for h, size in zip(hints, layout.text_group_sizes) for pos in range(size)]
    channels = image.shape[2]
    proj = np.random.default_rng(_seed_from("image-proj", channels, embed_dim)).standard_normal(
        (channels, embed_dim)
    ) / np.sqrt(channels)
    img = image.reshape(rows * cols, channels) @ proj
    lat = np.random.default_rng(noise_seed).standard_normal((rows * cols, embed_dim))
    tokens = np.concatenate([np.asarray(text).reshape(-1, embed_dim), img, lat], axis=0)
    return SequenceState(tokens, layout, 1.0)


def _layer_norm(x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps)


def _row_groups(dense: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Group query rows by identical mask rows -> [(queries, allowed keys)]."""
    patterns, inverse = np.unique(dense, axis=0, return_inverse=True)
    inverse = np.asarray(inverse).reshape(-1)
    return [(np.flatnonzero(inverse == g), np.flatnonzero(patterns[g])) for g in range(len(patterns))]


def attention_weights(x: np.ndarray, mask: AttentionMask, w: LayerWeights) -> np.ndarray:
    """Per-head attention probabilities, shape (heads, |X|, |X|); forbidden entries are exactly 0."""
    n, d = x.shape
    dh = d // w.heads
    h = _layer_norm(x)
    q = (h @ w.wq).reshape(n, w.heads, dh).transpose(1, 0, 2)
    k = (h @ w.wk).reshape(n, w.heads, dh).transpose(1, 0, 2)
    out = np.zeros((w.heads, n, n))
    for queries, keys in _row_groups(mask.dense()):
        s = q[:, queries] @ k[:, keys].transpose(0, 2, 1) / np.sqrt(dh)
        s = np.exp(s - s.max(axis=-1, keepdims=True))
        out[:, queries[:, None], keys[None, :]] = s / s.sum(axis=-1, keepdims=True)
    return out


def masked_attention(state: SequenceState, mask: AttentionMask, w: LayerWeights) -> SequenceState:
    """Multi-head self-attention restricted to allowed keys, plus residual.

    Forbidden keys never enter the softmax or the value sum.
    """
    x = state.tokens
    n, d = x.shape
    if mask.size != n:
        raise MaskError(f"mask size {mask.size} != sequence length {n}")
    dense = mask.dense()
    if not dense.any(axis=1).all():
        raise MaskError(f"query rows {np.flatnonzero(~dense.any(axis=1)).tolist()} have no allowed key")
    dh = d // w.heads
    h = _layer_norm(x)
    q = (h @ w.wq).reshape(n, w.heads, dh).transpose(1, 0, 2)
    k = (h @ w.wk).reshape(n, w.heads, dh).transpose(1, 0, 2)
    v = (h @ w.wv).reshape(n, w.heads, dh).transpose(1, 0, 2)
    attn = np.zeros((w.heads, n, dh))
    for queries, keys in _row_groups(dense):
        s = q[:, queries] @ k[:, keys].transpose(0, 2, 1) / np.sqrt(dh)
        p = np.exp(s - s.max(axis=-1, keepdims=True))
        p /= p.sum(axis=-1, keepdims=True)
        attn[:, queries] = p @ v[:, keys]
    merged = attn.transpose(1, 0, 2).reshape(n, d)
    return SequenceState(x + merged @ w.wo, state.layout, state.t)


def transformer_block(state: SequenceState, mask: AttentionMask, w: LayerWeights) -> SequenceState:
    state = masked_attention(state, mask, w)
    x = state.tokens
    hidden = np.maximum(_layer_norm(x) @ w.w1, 0.0)
    return SequenceState(x + hidden @ w.w2, state.layout, state.t)


def velocity(model: ToyModel, state: SequenceState, mask: AttentionMask) -> np.ndarray:
    """Velocity prediction for the latent segment."""
    x = state.tokens + timestep_embedding(state.t, state.tokens.shape[1])
    s = SequenceState(x, state.layout, state.t)
    for w in model.layers:
        s = transformer_block(s, mask, w)
    return _layer_norm(s.latent) @ model.head_out


@dataclass
class DenoiseResult:
    latent: np.ndarray  # (rows, cols, embed_dim)
    norms: list[float]
    checksum: str

    def to_dict(self) -> dict:
        return {"norms": self.norms, "checksum": self.checksum, "latent_shape": list(self.latent.shape)}


def latent_checksum(latent: np.ndarray) -> str:
    """64-bit hex digest of the latent rounded to 1e-9, little-endian float64."""
    q = np.round(np.asarray(latent, dtype=np.float64), 9) + 0.0  # +0.0 folds -0.0
    return hashlib.blake2b(q.astype("<f8").tobytes(), digest_size=8).hexdigest()


def denoise(
    plan: EditPlan,
    layout: TokenLayout,
    mask: AttentionMask,
    config: ToyModelConfig | None = None,
    steps: int = 8,
    image: np.ndarray | None = None,
    noise_seed: int = 0,
) -> DenoiseResult:
    """Euler-integrate the toy velocity field from t=1 to t=0 with a fixed mask."""
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    config = config or ToyModelConfig()
    model = ToyModel.init(config)
    if image is None:
        image = synthetic_image(layout.geometry, seed=config.seed)
    state = embed_inputs(plan, layout, image, noise_seed, config.embed_dim)
    off = layout.offsets["latent"]
    ts = np.linspace(1.0, 0.0, steps + 1)
    norms = []
    for t, t_next in zip(ts[:-1], ts[1:]):
        state.t = float(t)
        vel = velocity(model, state, mask)
        tokens = state.tokens.copy()
        tokens[off:] = tokens[off:] + (t_next - t) * vel
        state = SequenceState(tokens, layout, float(t_next))
        norms.append(float(np.linalg.norm(state.latent)))
    rows, cols = layout.geometry.grid
    latent = state.latent.reshape(rows, cols, config.embed_dim)
    return DenoiseResult(latent, norms, latent_checksum(latent))
