"""Training objectives: masked smooth-L1 regression, contrastive loss over a
negative pool, and their weighted sum.

The regression term is quadratic for residuals within beta and linear beyond,
with value and slope matched at the transition.  The contrastive term is a
softmax cross-entropy over cosine similarities at temperature kappa, where
the candidate set is the positive target frame plus the step's negative pool;
it is evaluated through log-sum-exp so large logits cannot overflow.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .context import MaskSpec
from .errors import ConfigError, DomainError, ShapeError
from .negatives import NegativePool, POOL_MODES, cosine_to_frames
from .tensor import Tensor, as_tensor, concat, cosine_similarity, norm_floored


@dataclass(frozen=True)
class LossConfig:
    beta: float = 1.0
    kappa: float = 0.1
    lam: float = 1.0
    mode: str = "joint_nonsemantic_removal"

    def __post_init__(self):
        if self.beta <= 0:
            raise ConfigError(f"beta must be positive, got {self.beta}")
        if self.kappa <= 0:
            raise ConfigError(f"kappa must be positive, got {self.kappa}")
        if self.lam < 0:
            raise ConfigError(f"lambda must be >= 0, got {self.lam}")
        if self.mode not in POOL_MODES:
            raise ConfigError(f"unknown loss mode {self.mode!r}, expected one of {POOL_MODES}")


@dataclass
class StepLossReport:
    regression: float
    contrastive: float
    total: float
    masked_count: int
    positive_similarities: list[float] = field(default_factory=list)
    negative_similarities: list[float] = field(default_factory=list)


def regression_loss(c_pre: Tensor, c_tar, mask: MaskSpec, beta: float = 1.0) -> Tensor:
    """Smooth-L1 between prediction and target, averaged over masked frames
    and feature dims."""
    if beta <= 0:
        raise DomainError(f"beta must be positive, got {beta}")
    c_pre = as_tensor(c_pre)
    target = np.asarray(c_tar.value if isinstance(c_tar, Tensor) else c_tar, dtype=np.float64)
    if c_pre.shape != target.shape:
        raise ShapeError(f"prediction {c_pre.shape} vs target {target.shape}")
    if mask.masked.shape[0] != c_pre.shape[0]:
        raise ShapeError("mask length does not match sequence length")
    idx = mask.indices
    if idx.size == 0:
        raise DomainError("regression loss needs at least one masked step")

    diff = c_pre.take_rows(idx) - Tensor(target[idx])
    quadratic = (np.abs(diff.value) <= beta).astype(np.float64)  # branch chosen by value
    quad_term = diff * diff * (0.5 / beta)
    linear_term = diff.abs() - 0.5 * beta
    per_element = Tensor(quadratic) * quad_term + Tensor(1.0 - quadratic) * linear_term
    return per_element.mean()


def contrastive_loss(c_pre_t: Tensor, c_tar_t, pool: NegativePool | None,
                     kappa: float = 0.1) -> Tensor:
    """-log softmax probability of the positive among {positive} + pool,
    with cosine-similarity logits at temperature kappa."""
    if kappa <= 0:
        raise DomainError(f"kappa must be positive, got {kappa}")
    c_pre_t = as_tensor(c_pre_t)
    positive = np.asarray(c_tar_t.value if isinstance(c_tar_t, Tensor) else c_tar_t,
                          dtype=np.float64)
    pos_score = cosine_similarity(c_pre_t, Tensor(positive)) * (1.0 / kappa)
    if pool is None or len(pool) == 0:
        scores = pos_score.reshape(1)
    else:
        frames = Tensor(pool.frames)
        frame_norms = np.maximum(np.linalg.norm(pool.frames, axis=1), 1e-8)
        inv_scale = (norm_floored(c_pre_t) * Tensor(frame_norms)) ** -1.0
        neg_scores = (frames @ c_pre_t) * inv_scale * (1.0 / kappa)
        scores = concat([pos_score.reshape(1), neg_scores])
    return scores.logsumexp() - pos_score


def total_loss(reg, con, lam: float = 1.0):
    """Weighted sum of the two objectives."""
    return reg + lam * con


def step_objective(c_pre: Tensor, c_tar, mask: MaskSpec,
                   pools: dict[int, NegativePool], cfg: LossConfig) -> tuple[Tensor, StepLossReport]:
    """Assemble the per-step objective over masked time steps.

    Regression averages over masked frames and dims; the contrastive term
    averages per-masked-step losses.  Returns the differentiable total plus a
    value-level report carrying the similarity samples the diagnostics use.
    """
    target = np.asarray(c_tar.value if isinstance(c_tar, Tensor) else c_tar, dtype=np.float64)
    reg = regression_loss(c_pre, target, mask, cfg.beta)

    idx = mask.indices
    pos_sims: list[float] = []
    neg_sims: list[float] = []
    if cfg.mode == "regression_only":
        contrastive = Tensor(0.0)
    else:
        terms = []
        for t in idx:
            t = int(t)
            if t not in pools:
                raise DomainError(f"no negative pool supplied for masked step {t}")
            pool = pools[t]
            prediction_row = c_pre.row(t)
            terms.append(contrastive_loss(prediction_row, target[t], pool, cfg.kappa))
            pos_sims.append(float(cosine_to_frames(target[t][None, :], prediction_row.value)[0]))
            neg_sims.extend(cosine_to_frames(pool.frames, prediction_row.value).tolist())
        contrastive = concat([term.reshape(1) for term in terms]).mean()

    total = total_loss(reg, contrastive, cfg.lam)
    report = StepLossReport(
        regression=reg.item(),
        contrastive=contrastive.item(),
        total=total.item(),
        masked_count=int(idx.size),
        positive_similarities=pos_sims,
        negative_similarities=neg_sims,
    )
    return total, report
