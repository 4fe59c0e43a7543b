"""Span masking and the multi-layer transformer context encoder.

The transformer is a standard pre-norm encoder that returns every layer's
output: the student branch reads the last layer as its prediction, while the
teacher branch feeds all layers into top-M target averaging.  Positions are
fixed sinusoids (switchable off, which makes the stack permutation
equivariant).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError, ShapeError
from .rng import SeededRng
from .tensor import Tensor, concat_cols, layer_norm, softmax_rows

# eps for teacher-target frame normalization; tiny so affine-invariance of the
# averaged target holds to 1e-9
_TARGET_EPS = 1e-12


@dataclass(frozen=True)
class MaskSpec:
    """Boolean per-step mask plus the spans that produced it."""

    masked: np.ndarray
    spans: tuple[tuple[int, int], ...]

    def __post_init__(self):
        object.__setattr__(self, "masked", np.asarray(self.masked, dtype=bool))

    @property
    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.masked)

    @property
    def count(self) -> int:
        return int(self.masked.sum())


@dataclass(frozen=True)
class TransformerConfig:
    layers: int = 12
    dim: int = 768
    heads: int = 12
    ffn_dim: int = 3072
    top_m: int = 8
    positional: str = "sinusoidal"  # or "none"

    def __post_init__(self):
        if self.layers < 1:
            raise ConfigError("transformer needs at least one layer")
        if not 1 <= self.top_m <= self.layers:
            raise ConfigError(f"top_m must be in [1, {self.layers}], got {self.top_m}")
        if self.dim % self.heads != 0:
            raise ConfigError(f"dim {self.dim} not divisible by heads {self.heads}")
        if self.positional not in ("sinusoidal", "none"):
            raise ConfigError(f"unknown positional mode {self.positional!r}")


def sample_mask(T: int, p: float, span: int, rng: SeededRng) -> MaskSpec:
    """Each step independently starts a span with probability p; spans clip at
    T and overlapping spans merge in the boolean view."""
    if T < 1:
        raise DomainError("mask needs at least one time step")
    if not 0.0 <= p <= 1.0:
        raise DomainError(f"start probability must be in [0, 1], got {p}")
    if span < 1:
        raise DomainError("span length must be >= 1")
    masked = np.zeros(T, dtype=bool)
    spans = []
    if p > 0.0:
        starts = np.flatnonzero(rng.uniforms(T) < p)
        for start in starts:
            length = min(span, T - start)
            masked[start:start + length] = True
            spans.append((int(start), int(length)))
    return MaskSpec(masked, tuple(spans))


def apply_mask(f: Tensor, mask: MaskSpec, mask_embedding: Tensor) -> Tensor:
    """Replace masked rows with the learned embedding; unmasked rows pass
    through bit-identically."""
    T, D = f.shape
    if mask.masked.shape[0] != T:
        raise ShapeError(f"mask length {mask.masked.shape[0]} != sequence length {T}")
    if mask_embedding.shape != (D,):
        raise ShapeError(f"mask embedding shape {mask_embedding.shape} != ({D},)")
    column = mask.masked.astype(float).reshape(T, 1)
    keep = Tensor(1.0 - column)
    select = Tensor(column)
    return f * keep + select @ mask_embedding.reshape(1, D)


def sinusoidal_positions(T: int, dim: int) -> np.ndarray:
    """Fixed sin/cos positional table, (T, dim)."""
    positions = np.arange(T)[:, None].astype(np.float64)
    half = np.arange(0, dim, 2).astype(np.float64)
    rates = 1.0 / np.power(10000.0, half / dim)
    table = np.zeros((T, dim))
    table[:, 0::2] = np.sin(positions * rates)
    table[:, 1::2] = np.cos(positions * rates[: dim // 2])
    return table


def init_transformer_params(cfg: TransformerConfig, in_dim: int, rng: SeededRng) -> dict[str, Tensor]:
    """Projection from encoder channels, mask embedding, and per-layer blocks."""

    def uniform(stream: SeededRng, rows: int, cols: int) -> Tensor:
        bound = rows ** -0.5
        return Tensor(stream.uniforms(rows * cols, -bound, bound).reshape(rows, cols))

    params: dict[str, Tensor] = {}
    params["proj.weight"] = uniform(rng.child("proj"), in_dim, cfg.dim)
    params["proj.bias"] = Tensor(np.zeros(cfg.dim))
    params["mask_embedding"] = Tensor(rng.child("mask-emb").uniforms(cfg.dim, -0.1, 0.1))
    for layer in range(cfg.layers):
        prefix = f"layer{layer}"
        stream = rng.child(prefix)
        for name in ("wq", "wk", "wv", "wo"):
            params[f"{prefix}.attn.{name}"] = uniform(stream.child(name), cfg.dim, cfg.dim)
            params[f"{prefix}.attn.{name}_bias"] = Tensor(np.zeros(cfg.dim))
        params[f"{prefix}.attn_norm.scale"] = Tensor(np.ones(cfg.dim))
        params[f"{prefix}.attn_norm.shift"] = Tensor(np.zeros(cfg.dim))
        params[f"{prefix}.ffn.w1"] = uniform(stream.child("ffn1"), cfg.dim, cfg.ffn_dim)
        params[f"{prefix}.ffn.b1"] = Tensor(np.zeros(cfg.ffn_dim))
        params[f"{prefix}.ffn.w2"] = uniform(stream.child("ffn2"), cfg.ffn_dim, cfg.dim)
        params[f"{prefix}.ffn.b2"] = Tensor(np.zeros(cfg.dim))
        params[f"{prefix}.ffn_norm.scale"] = Tensor(np.ones(cfg.dim))
        params[f"{prefix}.ffn_norm.shift"] = Tensor(np.zeros(cfg.dim))
    return params


def project(params: dict[str, Tensor], f: Tensor) -> Tensor:
    """Map encoder channels into model dimension."""
    return f @ params["proj.weight"] + params["proj.bias"]


def _attention(cfg: TransformerConfig, params: dict[str, Tensor], prefix: str,
               x: Tensor) -> Tensor:
    q = x @ params[f"{prefix}.attn.wq"] + params[f"{prefix}.attn.wq_bias"]
    k = x @ params[f"{prefix}.attn.wk"] + params[f"{prefix}.attn.wk_bias"]
    v = x @ params[f"{prefix}.attn.wv"] + params[f"{prefix}.attn.wv_bias"]
    head_dim = cfg.dim // cfg.heads
    scale = head_dim ** -0.5
    heads = []
    for h in range(cfg.heads):
        lo, hi = h * head_dim, (h + 1) * head_dim
        qh, kh, vh = q.slice_cols(lo, hi), k.slice_cols(lo, hi), v.slice_cols(lo, hi)
        weights = softmax_rows((qh @ kh.T) * scale)
        heads.append(weights @ vh)
    merged = concat_cols(heads) if len(heads) > 1 else heads[0]
    return merged @ params[f"{prefix}.attn.wo"] + params[f"{prefix}.attn.wo_bias"]


def forward(cfg: TransformerConfig, params: dict[str, Tensor], f: Tensor) -> list[Tensor]:
    """Pre-norm transformer encoder; returns all layer outputs, layer L last."""
    T, D = f.shape
    if D != cfg.dim:
        raise ShapeError(f"input dim {D} != model dim {cfg.dim}")
    x = (f + Tensor(sinusoidal_positions(T, cfg.dim))) if cfg.positional == "sinusoidal" else f
    outputs = []
    for layer in range(cfg.layers):
        prefix = f"layer{layer}"
        normed = layer_norm(x, params[f"{prefix}.attn_norm.scale"], params[f"{prefix}.attn_norm.shift"])
        x = x + _attention(cfg, params, prefix, normed)
        normed = layer_norm(x, params[f"{prefix}.ffn_norm.scale"], params[f"{prefix}.ffn_norm.shift"])
        hidden = (normed @ params[f"{prefix}.ffn.w1"] + params[f"{prefix}.ffn.b1"]).gelu()
        x = x + hidden @ params[f"{prefix}.ffn.w2"] + params[f"{prefix}.ffn.b2"]
        outputs.append(x)
    return outputs


def frame_normalize(f: Tensor, eps: float = _TARGET_EPS) -> Tensor:
    """Zero mean / unit variance per frame, no learned affine."""
    mu = f.mean(axis=1, keepdims=True)
    centered = f - mu
    var = (centered * centered).mean(axis=1, keepdims=True)
    return centered * ((var + eps) ** -0.5)


def average_top_m(layer_outputs: list[Tensor], m: int) -> Tensor:
    """Frame-normalize each of the last m layers, then average them."""
    L = len(layer_outputs)
    if not 1 <= m <= L:
        raise DomainError(f"top-m must be in [1, {L}], got {m}")
    total = None
    for layer in layer_outputs[L - m:]:
        normalized = frame_normalize(layer)
        total = normalized if total is None else total + normalized
    return total * (1.0 / m)
