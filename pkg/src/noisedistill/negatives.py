"""Contrastive negative pools.

Three mechanisms feed the contrastive denominator:
  * standard negatives: teacher target frames at other time steps,
  * non-semantic negatives: frames from a patch-shuffled copy of the target
    sequence, where the T x D grid is cut into w x h tiles and tiles are
    permuted within classes of identical shape (ragged edge tiles only trade
    places with edge tiles of the same shape, so the entry multiset is
    preserved exactly),
  * hardest-k filtering: keep only the k pool frames most cosine-similar to
    the prediction, dropping the easily-separated rest.

Everything here is value-level numpy: pools are built from the teacher
branch, which never carries gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .rng import SeededRng

STANDARD = "standard"
NON_SEMANTIC = "non_semantic"

POOL_MODES = (
    "regression_only",
    "joint_standard",
    "joint_nonsemantic",
    "joint_nonsemantic_removal",
)


@dataclass(frozen=True)
class PatchSpec:
    """Tile size for the shuffle: w along time, h along feature dims."""

    w: int
    h: int

    def __post_init__(self):
        if self.w < 1 or self.h < 1:
            raise DomainError(f"patch sides must be >= 1, got ({self.w}, {self.h})")


def draw_patch_spec(rng: SeededRng, lo: int, hi: int) -> PatchSpec:
    """Per-utterance patch size, both sides uniform over [lo, hi]."""
    if not 1 <= lo <= hi:
        raise DomainError(f"bad patch range [{lo}, {hi}]")
    return PatchSpec(w=rng.integer(lo, hi + 1), h=rng.integer(lo, hi + 1))


@dataclass(frozen=True)
class NegativePool:
    """Candidate frames with provenance tags and source time indices."""

    frames: np.ndarray  # (n, D)
    provenance: tuple[str, ...]
    source_indices: np.ndarray  # (n,)

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        indices = np.asarray(self.source_indices, dtype=np.intp)
        if frames.ndim != 2:
            raise DomainError("pool frames must be a (n, D) array")
        if len(self.provenance) != frames.shape[0] or indices.shape[0] != frames.shape[0]:
            raise DomainError("pool fields must have matching lengths")
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "source_indices", indices)

    def __len__(self) -> int:
        return self.frames.shape[0]

    def count(self, tag: str) -> int:
        return sum(1 for p in self.provenance if p == tag)


def _tile_grid(T: int, D: int, spec: PatchSpec) -> list[tuple[int, int, int, int]]:
    """Raster-order (row0, col0, height, width) covering the T x D grid."""
    rows = list(range(0, T, spec.w))
    cols = list(range(0, D, spec.h))
    tiles = []
    for r in rows:
        th = min(spec.w, T - r)
        for c in cols:
            tw = min(spec.h, D - c)
            tiles.append((r, c, th, tw))
    return tiles


def patch_shuffle(features: np.ndarray, spec: PatchSpec, rng: SeededRng) -> np.ndarray:
    """Permute tiles uniformly within each equivalence class of tile shapes.

    Output shape equals input shape and the multiset of entries is preserved
    exactly.  A single tile covering the whole grid returns the input.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.size == 0:
        raise DomainError("patch_shuffle expects a nonempty (T, D) array")
    T, D = features.shape
    tiles = _tile_grid(T, D, spec)
    out = np.empty_like(features)
    classes: dict[tuple[int, int], list[tuple[int, int]]] = {}
    for r, c, th, tw in tiles:
        classes.setdefault((th, tw), []).append((r, c))
    for (th, tw) in sorted(classes):
        positions = classes[(th, tw)]
        perm = rng.child(f"tiles-{th}x{tw}").permutation(len(positions))
        for dest_idx, src_idx in enumerate(perm):
            dr, dc = positions[dest_idx]
            sr, sc = positions[src_idx]
            out[dr:dr + th, dc:dc + tw] = features[sr:sr + th, sc:sc + tw]
    return out


def sample_standard_negatives(targets: np.ndarray, n: int, positive_t: int,
                              rng: SeededRng) -> tuple[np.ndarray, np.ndarray]:
    """n target frames at time steps other than positive_t; sampling is
    without replacement when enough distinct steps exist."""
    targets = np.asarray(targets, dtype=np.float64)
    T = targets.shape[0]
    if T < 2:
        raise DomainError("need at least two frames to draw standard negatives")
    if n < 1:
        raise DomainError("need n >= 1 negatives")
    replace = n > T - 1
    idx = rng.choice(T, n, exclude={positive_t}, replace=replace)
    return targets[idx], idx


def sample_nonsemantic_negatives(shuffled: np.ndarray, n: int,
                                 rng: SeededRng) -> tuple[np.ndarray, np.ndarray]:
    """n frames of the patch-shuffled sequence; every time index is eligible."""
    shuffled = np.asarray(shuffled, dtype=np.float64)
    T = shuffled.shape[0]
    if n < 1:
        raise DomainError("need n >= 1 negatives")
    replace = n > T
    idx = rng.choice(T, n, replace=replace)
    return shuffled[idx], idx


def cosine_to_frames(frames: np.ndarray, query: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    """Cosine similarity of each row of `frames` against `query`, vectorized."""
    frames = np.asarray(frames, dtype=np.float64)
    query = np.asarray(query, dtype=np.float64)
    frame_norms = np.maximum(np.linalg.norm(frames, axis=1), eps)
    query_norm = max(np.linalg.norm(query), eps)
    return (frames @ query) / (frame_norms * query_norm)


def filter_top_k(prediction_frame: np.ndarray, pool: NegativePool, k: int) -> NegativePool:
    """Keep the k pool frames most cosine-similar to the prediction.

    Ties break toward the lower source index, then standard before
    non-semantic provenance.
    """
    if not 1 <= k <= len(pool):
        raise DomainError(f"k must be in [1, {len(pool)}], got {k}")
    sims = cosine_to_frames(pool.frames, prediction_frame)
    tag_rank = [0 if p == STANDARD else 1 for p in pool.provenance]
    order = sorted(
        range(len(pool)),
        key=lambda i: (-sims[i], pool.source_indices[i], tag_rank[i]),
    )
    keep = order[:k]
    return NegativePool(
        frames=pool.frames[keep],
        provenance=tuple(pool.provenance[i] for i in keep),
        source_indices=pool.source_indices[keep],
    )


def build_pool(c_tar: np.ndarray, shuffled: np.ndarray | None, positive_t: int,
               n_standard: int, n_nonsemantic: int, rng: SeededRng) -> NegativePool:
    """Assemble one masked step's pool: standard frames from the targets plus
    non-semantic frames from the shuffled copy."""
    frames_parts, tags, indices_parts = [], [], []
    if n_standard > 0:
        frames, idx = sample_standard_negatives(c_tar, n_standard, positive_t, rng.child("standard"))
        frames_parts.append(frames)
        tags.extend([STANDARD] * n_standard)
        indices_parts.append(idx)
    if n_nonsemantic > 0:
        if shuffled is None:
            raise DomainError("non-semantic negatives requested without a shuffled sequence")
        frames, idx = sample_nonsemantic_negatives(shuffled, n_nonsemantic, rng.child("nonsemantic"))
        frames_parts.append(frames)
        tags.extend([NON_SEMANTIC] * n_nonsemantic)
        indices_parts.append(idx)
    if not frames_parts:
        raise DomainError("pool must contain at least one negative")
    return NegativePool(
        frames=np.concatenate(frames_parts, axis=0),
        provenance=tuple(tags),
        source_indices=np.concatenate(indices_parts),
    )


def pools_for_step(mode: str, c_tar: np.ndarray, shuffled: np.ndarray | None,
                   c_pre: np.ndarray, masked_indices: np.ndarray,
                   n_standard: int, n_nonsemantic: int, k: int,
                   rng: SeededRng) -> dict[int, NegativePool]:
    """Per-masked-step pools for one utterance under an ablation mode.

    regression_only: no pools.  joint_standard: all negatives drawn as
    standard (pool size n_standard + n_nonsemantic).  joint_nonsemantic:
    split pools.  joint_nonsemantic_removal: split pools pruned to the k
    hardest against the prediction at that step.
    """
    if mode not in POOL_MODES:
        raise DomainError(f"unknown pool mode {mode!r}")
    if mode == "regression_only":
        return {}
    pools: dict[int, NegativePool] = {}
    total = n_standard + n_nonsemantic
    for t in masked_indices:
        t = int(t)
        stream = rng.child(f"t{t}")
        if mode == "joint_standard":
            pool = build_pool(c_tar, None, t, total, 0, stream)
        else:
            pool = build_pool(c_tar, shuffled, t, n_standard, n_nonsemantic, stream)
            if mode == "joint_nonsemantic_removal":
                pool = filter_top_k(np.asarray(c_pre, dtype=np.float64)[t], pool, k)
        pools[t] = pool
    return pools
