"""Model diagnostics: similarity distributions, collapse metric, gradchecks.

The probe corpus is a seeded synthetic set under the "probe" stream label,
disjoint from every training stream.  Histograms bin predicted-positive and
predicted-negative cosine similarities over [-1, 1]; the collapse metric is
the mean per-dimension standard deviation of teacher target frames (near
zero when targets have collapsed to a point).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .audio import mix_at_snr, synth_noise, synth_utterance
from .config import TrainConfig
from .context import MaskSpec, sample_mask
from .encoder import output_length
from .errors import DomainError
from .losses import LossConfig, contrastive_loss, regression_loss, step_objective
from .model import ParameterSet, student_forward, teacher_targets
from .negatives import (
    NegativePool,
    STANDARD,
    cosine_to_frames,
    draw_patch_spec,
    patch_shuffle,
    pools_for_step,
)
from .rng import SeededRng
from .tensor import Tensor, cosine_similarity, finite_difference_gradient, no_grad


@dataclass
class CollapseReport:
    collapse_metric: float
    mean_positive_similarity: float
    mean_negative_similarity: float
    positive_pairs: int
    negative_pairs: int
    bin_edges: list[float] = field(default_factory=list)
    positive_counts: list[int] = field(default_factory=list)
    negative_counts: list[int] = field(default_factory=list)


def collapse_metric_from_frames(frames: np.ndarray) -> float:
    """Mean over dimensions of the per-dimension std across frames."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[0] < 2:
        raise DomainError("collapse metric needs at least two frames")
    return float(frames.std(axis=0).mean())


def histogram_counts(similarities: np.ndarray, bins: int) -> tuple[np.ndarray, np.ndarray]:
    """Counts over `bins` equal-width bins spanning [-1, 1]."""
    if bins < 1:
        raise DomainError("need at least one bin")
    clipped = np.clip(np.asarray(similarities, dtype=np.float64), -1.0, 1.0)
    counts, edges = np.histogram(clipped, bins=bins, range=(-1.0, 1.0))
    return counts, edges


def probe_similarities(cfg: TrainConfig, student: ParameterSet, teacher: ParameterSet,
                       utterances: int, probe_seed: int | None = None
                       ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(positive sims, negative sims, stacked target frames) over the probe set.

    Negatives are always sampled as the split standard + non-semantic pool
    (no removal), so distributions from differently-trained checkpoints are
    measured the same way.
    """
    if utterances < 1:
        raise DomainError("probe corpus must contain at least one utterance")
    seed = cfg.seed if probe_seed is None else probe_seed
    root = SeededRng(seed, "probe")
    lo, hi = cfg.utterance_seconds
    snr_lo, snr_hi = cfg.snr_range
    pos_sims: list[float] = []
    neg_sims: list[np.ndarray] = []
    target_frames: list[np.ndarray] = []

    for i in range(utterances):
        stream = root.child(f"utt{i}")
        duration = stream.uniform(lo, hi) if hi > lo else lo
        clean = synth_utterance(stream.integer(0, 2 ** 31), duration, cfg.sample_rate)
        noise = synth_noise(stream.integer(0, 2 ** 31), 1.5 * duration,
                            cfg.noise_kind, cfg.sample_rate)
        snr = stream.uniform(snr_lo, snr_hi) if snr_hi > snr_lo else snr_lo
        noisy = mix_at_snr(clean, noise, snr, stream.child("mix"))

        T = output_length(cfg.conv, len(noisy))
        mask = sample_mask(T, cfg.masking.start_probability, cfg.masking.span,
                           stream.child("mask"))
        c_tar = teacher_targets(cfg, teacher, clean)
        target_frames.append(c_tar)
        if mask.count == 0:
            continue
        with no_grad():
            c_pre, _ = student_forward(cfg, student, noisy, mask)
        patch = draw_patch_spec(stream.child("patch"),
                                cfg.negatives.patch_min, cfg.negatives.patch_max)
        shuffled = patch_shuffle(c_tar, patch, stream.child("shuffle"))
        pools = pools_for_step("joint_nonsemantic", c_tar, shuffled, c_pre.value,
                               mask.indices, cfg.negatives.n_standard,
                               cfg.negatives.n_nonsemantic,
                               cfg.negatives.n_standard + cfg.negatives.n_nonsemantic,
                               stream.child("pools"))
        for t in mask.indices:
            prediction = c_pre.value[int(t)]
            pos_sims.append(float(cosine_to_frames(c_tar[int(t)][None, :], prediction)[0]))
            neg_sims.append(cosine_to_frames(pools[int(t)].frames, prediction))

    negatives = np.concatenate(neg_sims) if neg_sims else np.empty(0)
    return np.asarray(pos_sims), negatives, np.concatenate(target_frames, axis=0)


def analyze(cfg: TrainConfig, student: ParameterSet, teacher: ParameterSet,
            utterances: int, bins: int = 50, probe_seed: int | None = None) -> CollapseReport:
    """Full diagnostic pass over the probe corpus."""
    pos, neg, frames = probe_similarities(cfg, student, teacher, utterances, probe_seed)
    pos_counts, edges = histogram_counts(pos, bins) if pos.size else (np.zeros(bins, dtype=int),
                                                                      np.linspace(-1, 1, bins + 1))
    neg_counts, _ = histogram_counts(neg, bins) if neg.size else (np.zeros(bins, dtype=int), None)
    return CollapseReport(
        collapse_metric=collapse_metric_from_frames(frames),
        mean_positive_similarity=float(pos.mean()) if pos.size else float("nan"),
        mean_negative_similarity=float(neg.mean()) if neg.size else float("nan"),
        positive_pairs=int(pos.size),
        negative_pairs=int(neg.size),
        bin_edges=[float(e) for e in edges],
        positive_counts=[int(c) for c in pos_counts],
        negative_counts=[int(c) for c in neg_counts],
    )


def histogram_csv_lines(report: CollapseReport) -> list[str]:
    lines = ["bin_lo,bin_hi,positive_count,negative_count"]
    edges = report.bin_edges
    for i in range(len(edges) - 1):
        lines.append(f"{edges[i]:.6f},{edges[i + 1]:.6f},"
                     f"{report.positive_counts[i]},{report.negative_counts[i]}")
    return lines


# ---------------------------------------------------------------------------
# gradient-check suite


# Relative-error denominator floor: when the true gradient vanishes (a
# stationary instance), central differences bottom out at cancellation noise
# around 1e-11, so the comparison needs an absolute scale to stay meaningful.
_GRAD_NORM_FLOOR = 1e-5


def _relative_gradient_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric), _GRAD_NORM_FLOOR)
    return float(np.linalg.norm(analytic - numeric) / denom)


def _check_family(build, make_instance, cases, seed, h=1e-5):
    """Max relative gradient error over `cases` random instances."""
    rng = SeededRng(seed, "gradcheck")
    worst = 0.0
    for i in range(cases):
        stream = rng.child(str(i))
        x0, closure = make_instance(stream)
        x = Tensor(x0)
        build(x, closure).backward()
        fd = finite_difference_gradient(lambda a: build(Tensor(a), closure).item(),
                                        x0.copy(), h=h)
        worst = max(worst, _relative_gradient_error(x.grad, fd))
    return worst


def run_gradient_checks(cases: int = 100, seed: int = 20240601) -> dict[str, float]:
    """Finite-difference verification of every analytic gradient family.

    Returns the max relative error per family; all values should sit well
    below 1e-4 at 64-bit precision.
    """
    from .audio import Waveform
    from .context import TransformerConfig, forward as tf_forward, init_transformer_params
    from .encoder import ConvSpec, encode, init_conv_params

    results: dict[str, float] = {}

    # cosine similarity wrt first argument
    def cos_instance(stream):
        D = stream.integer(2, 8)
        return stream.uniforms(D, -2, 2), stream.uniforms(D, -2, 2)

    results["cosine_similarity"] = _check_family(
        lambda x, b: cosine_similarity(x, b), cos_instance, cases, seed + 1)

    # smooth-L1 regression over masked rows
    def reg_instance(stream):
        T, D = stream.integer(2, 6), stream.integer(2, 5)
        pre = stream.uniforms(T * D, -3, 3).reshape(T, D)
        tar = stream.uniforms(T * D, -3, 3).reshape(T, D)
        masked = np.zeros(T, dtype=bool)
        masked[stream.choice(T, stream.integer(1, T + 1))] = True
        mask = MaskSpec(masked, ())
        beta = stream.uniform(0.3, 2.0)
        return pre, (tar, mask, beta)

    results["regression_loss"] = _check_family(
        lambda x, c: regression_loss(x, c[0], c[1], c[2]), reg_instance, cases, seed + 2)

    # contrastive loss wrt the prediction
    def con_instance(stream):
        D = stream.integer(2, 7)
        pred = stream.uniforms(D, -1, 1)
        pos = stream.uniforms(D, -1, 1)
        n = stream.integer(1, 8)
        pool = NegativePool(stream.uniforms(n * D, -1, 1).reshape(n, D),
                            (STANDARD,) * n, np.arange(n))
        return pred, (pos, pool, stream.uniform(0.05, 1.0))

    results["contrastive_loss"] = _check_family(
        lambda x, c: contrastive_loss(x, c[0], c[1], c[2]), con_instance, cases, seed + 3)

    # composed step objective wrt the prediction sequence
    def step_instance(stream):
        T, D = stream.integer(3, 6), stream.integer(2, 4)
        pre = stream.uniforms(T * D, -1, 1).reshape(T, D)
        tar = stream.uniforms(T * D, -1, 1).reshape(T, D)
        masked = np.zeros(T, dtype=bool)
        masked[stream.choice(T, stream.integer(1, T + 1))] = True
        mask = MaskSpec(masked, ())
        shuffled = patch_shuffle(tar, draw_patch_spec(stream.child("p"), 1, 3),
                                 stream.child("s"))
        pools = pools_for_step("joint_nonsemantic", tar, shuffled, pre, mask.indices,
                               2, 2, 4, stream.child("pools"))
        cfg = LossConfig(beta=1.0, kappa=0.2, lam=1.0, mode="joint_nonsemantic")
        return pre, (tar, mask, pools, cfg)

    results["step_objective"] = _check_family(
        lambda x, c: step_objective(x, c[0], c[1], c[2], c[3])[0], step_instance, cases, seed + 4)

    # conv encoder readout wrt first-layer weights (few cases: each is pricey)
    conv_spec = ConvSpec(kernels=(4, 3), strides=(2, 2), channels=3)
    conv_rng = SeededRng(seed + 5, "conv-check")
    conv_worst = 0.0
    for i in range(min(cases, 5)):
        stream = conv_rng.child(str(i))
        params = init_conv_params(conv_spec, stream.child("init"))
        wave = Waveform(stream.uniforms(30, -0.5, 0.5))
        w0 = params["conv0.weight"].value.copy()

        target = Tensor(w0)
        trial = dict(params)
        trial["conv0.weight"] = target
        encode(conv_spec, trial, wave).mean().backward()

        def f(x):
            t2 = dict(params)
            t2["conv0.weight"] = Tensor(x)
            return encode(conv_spec, t2, wave).mean().item()

        fd = finite_difference_gradient(f, w0.copy())
        conv_worst = max(conv_worst, _relative_gradient_error(target.grad, fd))
    results["conv_encoder"] = conv_worst

    # transformer readout wrt attention weights
    tcfg = TransformerConfig(layers=2, dim=8, heads=2, ffn_dim=16, top_m=2, positional="none")
    tf_rng = SeededRng(seed + 6, "tf-check")
    tf_worst = 0.0
    for i in range(min(cases, 5)):
        stream = tf_rng.child(str(i))
        params = init_transformer_params(tcfg, 8, stream.child("init"))
        feats = stream.uniforms(4 * 8, -0.5, 0.5).reshape(4, 8)
        w0 = params["layer0.attn.wq"].value.copy()

        target = Tensor(w0)
        trial = dict(params)
        trial["layer0.attn.wq"] = target
        tf_forward(tcfg, trial, Tensor(feats))[-1].mean().backward()

        def f(x):
            t2 = dict(params)
            t2["layer0.attn.wq"] = Tensor(x)
            return tf_forward(tcfg, t2, Tensor(feats))[-1].mean().item()

        fd = finite_difference_gradient(f, w0.copy())
        tf_worst = max(tf_worst, _relative_gradient_error(target.grad, fd))
    results["transformer"] = tf_worst

    return results
