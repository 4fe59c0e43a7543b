"""The pre-training loop.

Each step synthesizes a batch of (clean, noisy) pairs, runs the teacher on
the clean waveform to produce averaged targets, runs the masked student on
the noisy waveform, builds per-masked-step negative pools according to the
ablation mode, optimizes the joint objective with Adam, and refreshes the
EMA teacher.  All randomness is drawn from streams keyed by (seed, absolute
step), so a resumed run continues the exact trace of an uninterrupted one.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import Waveform, mix_at_snr, synth_noise, synth_utterance
from .checkpoint import load_blobs, save_blobs
from .config import OptimizerConfig, TrainConfig, canonical_json, config_digest
from .context import sample_mask
from .ema import ema_update, init_teacher, tau_at
from .encoder import output_length
from .errors import NumericError, TrainingError
from .losses import StepLossReport, step_objective
from .model import (
    ParameterSet,
    init_student_params,
    param_shapes,
    student_forward,
    teacher_targets,
)
from .negatives import draw_patch_spec, patch_shuffle, pools_for_step
from .rng import SeededRng
from .tensor import Tensor, no_grad


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0


@dataclass
class TrainState:
    student: ParameterSet
    teacher: ParameterSet
    adam: AdamState
    step: int = 0  # completed steps


def init_state(cfg: TrainConfig) -> TrainState:
    student = init_student_params(cfg, SeededRng(cfg.seed, "init"))
    teacher = init_teacher(student)
    adam = AdamState(
        m={name: np.zeros_like(p.value) for name, p in student.items()},
        v={name: np.zeros_like(p.value) for name, p in student.items()},
    )
    return TrainState(student=student, teacher=teacher, adam=adam)


def learning_rate_at(opt: OptimizerConfig, step: int, total_steps: int) -> float:
    """Linear warmup to the peak rate, constant afterward."""
    warmup = max(1, int(round(opt.warmup_frac * total_steps)))
    if step < warmup:
        return opt.learning_rate * (step + 1) / warmup
    return opt.learning_rate


def hardest_k_at(cfg: TrainConfig, step: int) -> int:
    """Fixed k by default; optional linear anneal from the full pool down to k."""
    neg = cfg.negatives
    if not neg.anneal_k:
        return neg.k
    start = neg.n_standard + neg.n_nonsemantic
    frac = min(step / max(cfg.steps - 1, 1), 1.0)
    return max(1, int(round(start + (neg.k - start) * frac)))


def make_batch(cfg: TrainConfig, step: int) -> list[tuple[Waveform, Waveform]]:
    """Synthesize the step's (clean, noisy) pairs deterministically."""
    root = SeededRng(cfg.seed).child(f"train/step{step}")
    lo, hi = cfg.utterance_seconds
    snr_lo, snr_hi = cfg.snr_range
    batch = []
    for u in range(cfg.batch_size):
        stream = root.child(f"utt{u}/data")
        duration = stream.uniform(lo, hi) if hi > lo else lo
        clean = synth_utterance(stream.integer(0, 2 ** 31), duration, cfg.sample_rate)
        noise = synth_noise(stream.integer(0, 2 ** 31), 1.5 * duration,
                            cfg.noise_kind, cfg.sample_rate)
        snr = stream.uniform(snr_lo, snr_hi) if snr_hi > snr_lo else snr_lo
        noisy = mix_at_snr(clean, noise, snr, stream.child("mix"))
        batch.append((clean, noisy))
    return batch


def _adam_step(state: TrainState, lr: float, opt: OptimizerConfig) -> None:
    adam = state.adam
    adam.t += 1
    bias1 = 1.0 - opt.beta1 ** adam.t
    bias2 = 1.0 - opt.beta2 ** adam.t
    for name in sorted(state.student):
        p = state.student[name]
        grad = p.grad if p.grad is not None else np.zeros_like(p.value)
        adam.m[name] = opt.beta1 * adam.m[name] + (1.0 - opt.beta1) * grad
        adam.v[name] = opt.beta2 * adam.v[name] + (1.0 - opt.beta2) * grad * grad
        m_hat = adam.m[name] / bias1
        v_hat = adam.v[name] / bias2
        state.student[name] = Tensor(p.value - lr * m_hat / (np.sqrt(v_hat) + opt.eps))


def refresh_teacher(teacher: ParameterSet, student: ParameterSet, tau: float,
                    scope: str) -> ParameterSet:
    """EMA over all parameters, or transformer-only with the conv encoder
    copied straight from the student."""
    if scope == "all":
        return ema_update(teacher, student, tau)
    with no_grad():
        updated = {}
        for name in teacher:
            if name.startswith("conv"):
                updated[name] = Tensor(student[name].value.copy())
            else:
                updated[name] = Tensor(tau * teacher[name].value
                                       + (1.0 - tau) * student[name].value)
    return updated


def train_step(state: TrainState, batch: list[tuple[Waveform, Waveform]],
               cfg: TrainConfig) -> StepLossReport:
    """One optimization step; mutates `state` and returns the loss report.

    Utterances whose mask draw comes up empty contribute zero loss: the
    objective is only defined at masked steps.
    """
    step = state.step
    root = SeededRng(cfg.seed).child(f"train/step{step}")
    k_now = hardest_k_at(cfg, step)
    needs_nonsemantic = cfg.loss.mode in ("joint_nonsemantic", "joint_nonsemantic_removal")

    totals = []
    regressions, contrastives = [], []
    masked_total = 0
    pos_sims: list[float] = []
    neg_sims: list[float] = []
    try:
        for u, (clean, noisy) in enumerate(batch):
            stream = root.child(f"utt{u}")
            T = output_length(cfg.conv, len(noisy))
            mask = sample_mask(T, cfg.masking.start_probability, cfg.masking.span,
                               stream.child("mask"))
            if mask.count == 0:
                totals.append(Tensor(0.0))
                regressions.append(0.0)
                contrastives.append(0.0)
                continue

            c_tar = teacher_targets(cfg, state.teacher, clean)
            c_pre, _ = student_forward(cfg, state.student, noisy, mask)

            shuffled = None
            if needs_nonsemantic:
                patch = draw_patch_spec(stream.child("patch"),
                                        cfg.negatives.patch_min, cfg.negatives.patch_max)
                shuffled = patch_shuffle(c_tar, patch, stream.child("shuffle"))
            pools = pools_for_step(cfg.loss.mode, c_tar, shuffled, c_pre.value,
                                   mask.indices, cfg.negatives.n_standard,
                                   cfg.negatives.n_nonsemantic, k_now,
                                   stream.child("pools"))

            total_u, report_u = step_objective(c_pre, c_tar, mask, pools, cfg.loss)
            totals.append(total_u)
            regressions.append(report_u.regression)
            contrastives.append(report_u.contrastive)
            masked_total += report_u.masked_count
            pos_sims.extend(report_u.positive_similarities)
            neg_sims.extend(report_u.negative_similarities)

        batch_total = totals[0] if len(totals) == 1 else sum(totals[1:], start=totals[0])
        batch_total = batch_total * (1.0 / len(totals))
        if not math.isfinite(batch_total.item()):
            raise TrainingError(f"non-finite loss at step {step}")
        batch_total.backward()
        _adam_step(state, learning_rate_at(cfg.optimizer, step, cfg.steps), cfg.optimizer)
    except NumericError as exc:
        raise TrainingError(f"numeric failure at step {step}: {exc}") from exc

    state.step += 1
    tau = tau_at(cfg.ema, state.step)
    state.teacher = refresh_teacher(state.teacher, state.student, tau, cfg.ema_scope)

    return StepLossReport(
        regression=float(np.mean(regressions)),
        contrastive=float(np.mean(contrastives)),
        total=batch_total.item(),
        masked_count=masked_total,
        positive_similarities=pos_sims,
        negative_similarities=neg_sims,
    )


def checkpoint_path(out_dir, step: int) -> Path:
    return Path(out_dir) / f"checkpoint-{step:06d}.rd2v"


def save_state(path, state: TrainState, cfg: TrainConfig) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    blobs: dict[str, np.ndarray] = {}
    for name, p in state.student.items():
        blobs[f"student/{name}"] = p.value
    for name, p in state.teacher.items():
        blobs[f"teacher/{name}"] = p.value
    for name, arr in state.adam.m.items():
        blobs[f"adam.m/{name}"] = arr
    for name, arr in state.adam.v.items():
        blobs[f"adam.v/{name}"] = arr
    blobs["meta/step"] = np.array([[float(state.step)]])
    blobs["meta/adam_t"] = np.array([[float(state.adam.t)]])
    blobs["meta/seed"] = np.array([[float(cfg.seed)]])
    save_blobs(path, blobs, config_digest(cfg))


def load_state(path, cfg: TrainConfig) -> TrainState:
    blobs, _ = load_blobs(path, expected_digest=config_digest(cfg))
    shapes = param_shapes(cfg)

    def params_from(prefix: str) -> ParameterSet:
        out = {}
        with no_grad():
            for name, shape in shapes.items():
                key = f"{prefix}/{name}"
                if key not in blobs:
                    raise TrainingError(f"checkpoint missing parameter {key}")
                out[name] = Tensor(blobs[key].reshape(shape))
        return out

    student = params_from("student")
    teacher = params_from("teacher")
    adam = AdamState(
        m={name: blobs[f"adam.m/{name}"].reshape(shape) for name, shape in shapes.items()},
        v={name: blobs[f"adam.v/{name}"].reshape(shape) for name, shape in shapes.items()},
        t=int(blobs["meta/adam_t"][0, 0]),
    )
    return TrainState(student=student, teacher=teacher, adam=adam,
                      step=int(blobs["meta/step"][0, 0]))


def log_line(step: int, report: StepLossReport, tau: float, lr: float) -> str:
    """One JSON object per completed step; field order is fixed."""
    record = {
        "step": step,
        "regression": report.regression,
        "contrastive": report.contrastive,
        "total": report.total,
        "tau": tau,
        "learning_rate": lr,
        "masked_count": report.masked_count,
    }
    return json.dumps(record, sort_keys=True)


def run_training(cfg: TrainConfig, resume_from=None, log_name: str = "train_log.jsonl",
                 on_step=None) -> tuple[TrainState, list[StepLossReport]]:
    """Drive the loop from `state.step` to cfg.steps, writing the JSONL log,
    the resolved config, and checkpoints into cfg.out_dir.

    `on_step(step, report)` is invoked after every completed step.
    """
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(canonical_json(cfg) + "\n", encoding="utf-8")

    if resume_from is not None:
        state = load_state(resume_from, cfg)
    else:
        state = init_state(cfg)
        save_state(checkpoint_path(out_dir, 0), state, cfg)

    reports = []
    with open(out_dir / log_name, "w", encoding="utf-8") as log:
        while state.step < cfg.steps:
            step = state.step
            lr = learning_rate_at(cfg.optimizer, step, cfg.steps)
            batch = make_batch(cfg, step)
            report = train_step(state, batch, cfg)
            reports.append(report)
            log.write(log_line(step, report, tau_at(cfg.ema, state.step), lr) + "\n")
            if on_step is not None:
                on_step(step, report)
            if cfg.checkpoint_every and state.step % cfg.checkpoint_every == 0 \
                    and state.step < cfg.steps:
                save_state(checkpoint_path(out_dir, state.step), state, cfg)
    save_state(checkpoint_path(out_dir, state.step), state, cfg)
    return state, reports
