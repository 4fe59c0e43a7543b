"""Acceptance suite.

Each test implements one numbered criterion at its stated tolerance and
prints a live pass/fail line (bypassing pytest capture, so the lines show up
in plain `pytest` runs too).  The trend/collapse criteria share one seeded
300-step experiment whose full trajectory is written next to the run
directories as collapse_experiment.json.
"""

import json
import math
import time
from dataclasses import replace
import numpy as np
import pytest

from noisedistill.audio import mix_at_snr, power, synth_noise, synth_utterance
from noisedistill.cli import main as cli_main
from noisedistill.config import toy_profile
from noisedistill.diagnostics import analyze, run_gradient_checks
from noisedistill.ema import EmaSchedule, tau_at
from noisedistill.encoder import ConvSpec, encode, init_conv_params, output_length
from noisedistill.losses import contrastive_loss
from noisedistill.negatives import (
    NON_SEMANTIC,
    STANDARD,
    NegativePool,
    PatchSpec,
    cosine_to_frames,
    filter_top_k,
    patch_shuffle,
    pools_for_step,
)
from noisedistill.rng import SeededRng
from noisedistill.tensor import Tensor
from noisedistill.training import (
    checkpoint_path,
    init_state,
    load_state,
    make_batch,
    run_training,
    train_step,
)

PINNED_SEEDS = (1, 2, 3)
TREND_STEPS = 300
CHECKPOINT_STRIDE = 100

_capsys = None


@pytest.fixture(autouse=True)
def _live_reporting(capsys):
    """Let report() bypass output capture so the pass/fail lines always show."""
    global _capsys
    _capsys = capsys
    yield
    _capsys = None


def note(line):
    if _capsys is not None:
        with _capsys.disabled():
            print(line, flush=True)
    else:
        print(line, flush=True)


def report(number, name, ok, detail=""):
    suffix = f" ({detail})" if detail else ""
    line = f"[ACCEPTANCE] criterion {number:>2} {name}: {'PASS' if ok else 'FAIL'}{suffix}"
    note(line)
    assert ok, line


# -- criterion 1 -------------------------------------------------------------

def test_criterion_01_gradient_oracle():
    started = time.time()
    results = run_gradient_checks(cases=100, seed=777)
    elapsed = time.time() - started
    worst = max(results[f] for f in ("regression_loss", "contrastive_loss", "step_objective"))
    ok = worst < 1e-4 and elapsed < 120.0
    report(1, "gradient oracle", ok,
           f"max rel err {worst:.2e} over 100 instances/family in {elapsed:.1f}s")


# -- criterion 2 -------------------------------------------------------------

def test_criterion_02_contrastive_oracle():
    rng = SeededRng(31415, "acceptance-contrastive")
    worst = 0.0
    for i in range(1000):
        stream = rng.child(str(i))
        D = stream.integer(2, 9)
        n = stream.integer(0, 13)
        pred = stream.uniforms(D, -1, 1)
        pos = stream.uniforms(D, -1, 1)
        pool = None
        if n:
            pool = NegativePool(stream.uniforms(n * D, -1, 1).reshape(n, D),
                                (STANDARD,) * n, np.arange(n))
        kappa = stream.uniform(0.05, 2.0)
        loss = contrastive_loss(Tensor(pred), pos, pool, kappa).item()

        def cos(a, b):
            return float(a @ b / (max(np.linalg.norm(a), 1e-8) * max(np.linalg.norm(b), 1e-8)))

        logits = np.array([cos(pred, pos)] + ([cos(pred, f) for f in pool.frames] if pool else []))
        logits /= kappa
        spread = np.exp(logits - logits.max())
        oracle = -math.log(spread[0] / spread.sum())
        worst = max(worst, abs(loss - oracle))
    ok = worst < 1e-10
    report(2, "contrastive oracle", ok, f"max |diff| {worst:.2e} over 1000 instances")


# -- criterion 3 -------------------------------------------------------------

def test_criterion_03_ema_schedule_exactness():
    schedule = EmaSchedule(tau0=0.999, tau_e=0.9999, tau_n=30000)
    checks = [
        (0, 0.999),
        (30000, 0.9999),
        (60000, 0.9999),
        (15000, 0.99945),
    ]
    worst = max(abs(tau_at(schedule, step) - expected) for step, expected in checks)
    ok = worst < 1e-12
    report(3, "EMA schedule exactness", ok, f"max |diff| {worst:.2e}")


# -- criterion 4 -------------------------------------------------------------

def test_criterion_04_conv_framing():
    paper_layout = ConvSpec()  # (10,3,3,3,3,2,2) / (5,2,2,2,2,2,2)
    ok = output_length(paper_layout, 16000) == 49 and output_length(paper_layout, 400) == 1

    # formula-execution equivalence; channel width does not affect framing
    narrow = ConvSpec(channels=8)
    params = init_conv_params(narrow, SeededRng(4, "acceptance-conv"))
    rng = SeededRng(5, "acceptance-framing")
    for i in range(100):
        n = rng.child(str(i)).integer(400, 48001)
        wave = synth_utterance(9000 + i, n / 16000.0)
        frames = encode(narrow, params, wave)
        if frames.shape[0] != output_length(narrow, len(wave)):
            ok = False
            break
    report(4, "conv framing", ok, "16000->49, 400->1, 100 random lengths agree")


# -- criterion 5 -------------------------------------------------------------

def test_criterion_05_snr_exactness():
    rng = SeededRng(6, "acceptance-snr")
    worst = 0.0
    for i in range(100):
        stream = rng.child(str(i))
        clean = synth_utterance(stream.integer(0, 2 ** 31), 0.5)
        noise = synth_noise(stream.integer(0, 2 ** 31), 1.0)
        snr = stream.uniform(0.0, 25.0)
        mixed = mix_at_snr(clean, noise, snr, stream.child("mix"))
        segment = mixed.samples - clean.samples
        measured = 10 * np.log10(power(clean) / np.mean(segment ** 2))
        worst = max(worst, abs(measured - snr))
    ok = worst < 1e-6
    report(5, "SNR exactness", ok, f"max |dB err| {worst:.2e} over 100 mixes in [0, 25] dB")


# -- criterion 6 -------------------------------------------------------------

def test_criterion_06_patch_shuffle_invariants():
    rng = SeededRng(7, "acceptance-patch")
    ok = True
    for i in range(1000):
        stream = rng.child(str(i))
        if i % 10 < 7:  # desk-scale shapes
            T, D = stream.integer(1, 13), stream.integer(1, 13)
            w, h = stream.integer(1, 15), stream.integer(1, 15)
        else:  # paper-scale patches in [30, 50]
            T, D = stream.integer(60, 141), stream.integer(40, 101)
            w, h = stream.integer(30, 51), stream.integer(30, 51)
        f = stream.uniforms(T * D, -5, 5).reshape(T, D)
        shuffled = patch_shuffle(f, PatchSpec(w, h), stream.child("shuffle"))
        if shuffled.shape != f.shape or \
                not np.array_equal(np.sort(shuffled.ravel()), np.sort(f.ravel())):
            ok = False
            break
        # identity permutation: a single tile covering the grid is a fixpoint
        identity = patch_shuffle(f, PatchSpec(T, D), stream.child("identity"))
        if not np.array_equal(identity, f):
            ok = False
            break
    report(6, "patch-shuffle invariants", ok,
           "multiset + identity fixity over 1000 cases incl. w,h in [30,50]")


# -- criterion 7 -------------------------------------------------------------

def test_criterion_07_top_k_filter():
    rng = SeededRng(8, "acceptance-topk")
    ok = True
    for i in range(1000):
        stream = rng.child(str(i))
        n = stream.integer(1, 13)
        D = stream.integer(2, 6)
        frames = stream.uniforms(n * D, -1, 1).reshape(n, D)
        tags = tuple(STANDARD if stream.uniform(0, 1) < 0.5 else NON_SEMANTIC for _ in range(n))
        pool = NegativePool(frames, tags, np.arange(n))
        query = stream.uniforms(D, -1, 1)
        sims = cosine_to_frames(frames, query)
        for k in range(1, n + 1):
            kept = filter_top_k(query, pool, k)
            kept_sims = np.sort(cosine_to_frames(kept.frames, query))[::-1]
            brute = np.sort(sims)[::-1][:k]
            if not np.allclose(kept_sims, brute, atol=1e-12):
                ok = False
            removed = sorted(set(range(n)) - set(int(j) for j in kept.source_indices))
            if removed and kept_sims.min() < sims[removed].max() - 1e-12:
                ok = False
        if not ok:
            break
    report(7, "top-k filter", ok, "matches full sort for all k on 1000 pools <= 12")


# -- criterion 8 -------------------------------------------------------------

def test_criterion_08_determinism(tmp_path, capsys):
    logs = []
    for name in ("a", "b"):
        out = tmp_path / name
        code = cli_main(["pretrain", "--profile", "toy", "--steps", "50", "--seed", "7",
                         "--out", str(out), "--checkpoint-every", "25"])
        capsys.readouterr()
        assert code == 0
        logs.append((out / "train_log.jsonl").read_bytes())
    identical = logs[0] == logs[1]

    resumed_dir = tmp_path / "resumed"
    code = cli_main(["pretrain", "--profile", "toy", "--steps", "50", "--seed", "7",
                     "--out", str(resumed_dir), "--checkpoint-every", "25",
                     "--resume", str(tmp_path / "a" / "checkpoint-000025.rd2v")])
    capsys.readouterr()
    assert code == 0
    tail = (resumed_dir / "train_log.jsonl").read_bytes()
    full_tail = b"".join(logs[0].splitlines(keepends=True)[25:])
    resumes = tail == full_tail

    ok = identical and resumes
    report(8, "determinism", ok,
           f"byte-identical logs: {identical}, resume matches: {resumes}")


# -- criteria 9 and 10 share one tracked experiment --------------------------

@pytest.fixture(scope="session")
def trend_experiment(tmp_path_factory):
    base = tmp_path_factory.mktemp("trend-experiment")
    metrics = {}
    for mode in ("joint_nonsemantic_removal", "regression_only"):
        for seed in PINNED_SEEDS:
            cfg = toy_profile(seed=seed, steps=TREND_STEPS,
                              checkpoint_every=CHECKPOINT_STRIDE,
                              out_dir=str(base / f"{mode}-seed{seed}"))
            cfg = replace(cfg, loss=replace(cfg.loss, mode=mode))
            run_training(cfg)
            trajectory = {}
            for step in range(0, TREND_STEPS + 1, CHECKPOINT_STRIDE):
                state = load_state(checkpoint_path(cfg.out_dir, step), cfg)
                rep = analyze(cfg, state.student, state.teacher, utterances=25, bins=20)
                trajectory[step] = {
                    "mean_positive_similarity": rep.mean_positive_similarity,
                    "mean_negative_similarity": rep.mean_negative_similarity,
                    "collapse_metric": rep.collapse_metric,
                }
            metrics[f"{mode}/seed{seed}"] = trajectory

    artifact = base / "collapse_experiment.json"
    artifact.write_text(json.dumps({
        "steps": TREND_STEPS,
        "seeds": list(PINNED_SEEDS),
        "checkpoint_stride": CHECKPOINT_STRIDE,
        "trajectories": metrics,
    }, indent=1, sort_keys=True), encoding="utf-8")
    note(f"[ACCEPTANCE] tracked experiment written: {artifact}")
    return metrics


def test_criterion_09_discriminability_trend(trend_experiment):
    initial, final = [], []
    for seed in PINNED_SEEDS:
        traj = trend_experiment[f"joint_nonsemantic_removal/seed{seed}"]
        initial.append(traj[0]["mean_positive_similarity"])
        final.append(traj[TREND_STEPS]["mean_positive_similarity"])
    gain = float(np.median(final) - np.median(initial))
    ok = gain >= 0.1
    report(9, "discriminability trend", ok,
           f"median positive similarity {np.median(initial):.3f} -> {np.median(final):.3f}, "
           f"gain {gain:.3f} >= 0.1")


def test_criterion_10_collapse_comparison(trend_experiment):
    joint = [trend_experiment[f"joint_nonsemantic_removal/seed{s}"][TREND_STEPS]["collapse_metric"]
             for s in PINNED_SEEDS]
    reg_only = [trend_experiment[f"regression_only/seed{s}"][TREND_STEPS]["collapse_metric"]
                for s in PINNED_SEEDS]
    med_joint, med_reg = float(np.median(joint)), float(np.median(reg_only))
    ok = med_joint >= med_reg
    report(10, "collapse comparison", ok,
           f"median collapse joint {med_joint:.3f} >= regression-only {med_reg:.3f}")


# -- criterion 11 ------------------------------------------------------------

def test_criterion_11_ablation_switch_equivalence(tmp_path):
    cfg = toy_profile(seed=13, steps=2, out_dir=str(tmp_path / "ablation"))
    assert (cfg.negatives.n_standard, cfg.negatives.n_nonsemantic, cfg.negatives.k) == (50, 50, 50)

    rng = SeededRng(14, "acceptance-ablation")
    T, D = 30, 8
    c_tar = rng.uniforms(T * D, -1, 1).reshape(T, D)
    c_pre = rng.uniforms(T * D, -1, 1).reshape(T, D)
    shuffled = patch_shuffle(c_tar, PatchSpec(3, 3), rng.child("shuffle"))
    masked = np.array([2, 9, 17])
    ok = True

    pools = pools_for_step("regression_only", c_tar, shuffled, c_pre, masked, 50, 50, 50,
                           rng.child("p0"))
    ok &= pools == {}

    pools = pools_for_step("joint_standard", c_tar, shuffled, c_pre, masked, 50, 50, 50,
                           rng.child("p1"))
    ok &= all(len(p) == 100 and p.count(STANDARD) == 100 for p in pools.values())

    pools = pools_for_step("joint_nonsemantic", c_tar, shuffled, c_pre, masked, 50, 50, 50,
                           rng.child("p2"))
    ok &= all(p.count(STANDARD) == 50 and p.count(NON_SEMANTIC) == 50 for p in pools.values())

    pools = pools_for_step("joint_nonsemantic_removal", c_tar, shuffled, c_pre, masked,
                           50, 50, 50, rng.child("p3"))
    ok &= all(len(p) == 50 for p in pools.values())

    # and the trained loss structures agree with the pool shapes
    for mode, per_step in (("regression_only", 0), ("joint_standard", 100),
                           ("joint_nonsemantic", 100), ("joint_nonsemantic_removal", 50)):
        run_cfg = replace(cfg, loss=replace(cfg.loss, mode=mode))
        state = init_state(run_cfg)
        rep = train_step(state, make_batch(run_cfg, 0), run_cfg)
        ok &= len(rep.negative_similarities) == per_step * rep.masked_count

    report(11, "ablation-switch equivalence", ok,
           "pool sizes 0 / 100 / 50+50 / k=50 per masked step")
