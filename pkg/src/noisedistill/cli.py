"""Command-line interface.

Thin argument-parsing layer over the core package; the FastAPI service wraps
the same functions.  Exit codes: 0 success, 2 usage/config errors, 3
numeric or training failures.  All error text goes to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, replace
from pathlib import Path

from .audio import load_wav, measure_snr_db, mix_at_snr, save_wav, synth_corpus
from .config import TrainConfig, config_from_dict, load_config
from .diagnostics import analyze, histogram_csv_lines, run_gradient_checks
from .errors import (
    ConfigError,
    DomainError,
    FormatError,
    NumericError,
    ShapeError,
    TrainingError,
)
from .rng import SeededRng
from .training import load_state, run_training

USAGE_ERROR = 2
NUMERIC_ERROR = 3
GRADCHECK_THRESHOLD = 1e-4


def load_config_any(path) -> TrainConfig:
    """Accept either a TOML config or the canonical JSON a run directory holds."""
    path = Path(path)
    if path.suffix == ".json":
        try:
            return config_from_dict(json.loads(path.read_text(encoding="utf-8")))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"cannot parse JSON config {path}: {exc}") from exc
    return load_config(path)


def _resolve_train_config(args) -> TrainConfig:
    if args.config:
        if args.profile:
            raise ConfigError("--profile conflicts with --config; put the profile in the file")
        cfg = load_config_any(args.config)
    else:
        cfg = config_from_dict({"profile": args.profile or "desk"})
    overrides = {}
    if args.steps is not None:
        overrides["steps"] = args.steps
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out_dir"] = args.out
    if args.checkpoint_every is not None:
        overrides["checkpoint_every"] = args.checkpoint_every
    return replace(cfg, **overrides) if overrides else cfg


def cmd_pretrain(args) -> int:
    cfg = _resolve_train_config(args)
    state, reports = run_training(cfg, resume_from=args.resume)
    summary = {
        "out_dir": cfg.out_dir,
        "steps_completed": state.step,
        "final_total": reports[-1].total if reports else None,
        "log": str(Path(cfg.out_dir) / "train_log.jsonl"),
        "checkpoint": str(Path(cfg.out_dir) / f"checkpoint-{state.step:06d}.rd2v"),
    }
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_mix(args) -> int:
    clean = load_wav(args.clean)
    noise = load_wav(args.noise)
    mixed = mix_at_snr(clean, noise, args.snr, SeededRng(args.seed, "cli-mix"))
    save_wav(args.out, mixed)
    print(json.dumps({
        "out": str(args.out),
        "snr_db": args.snr,
        "measured_snr_db": measure_snr_db(clean, mixed),
    }, sort_keys=True))
    return 0


def cmd_diagnose(args) -> int:
    if args.measure_snr:
        clean_path, mixed_path = args.measure_snr
        value = measure_snr_db(load_wav(clean_path), load_wav(mixed_path))
        print(json.dumps({"measured_snr_db": value}, sort_keys=True))
        return 0
    if not args.checkpoint:
        raise ConfigError("diagnose needs --checkpoint (or --measure-snr CLEAN MIXED)")
    config_path = args.config or Path(args.checkpoint).parent / "config.json"
    cfg = load_config_any(config_path)
    state = load_state(args.checkpoint, cfg)
    report = analyze(cfg, state.student, state.teacher, utterances=args.utterances,
                     bins=args.bins, probe_seed=args.probe_seed)
    out_dir = Path(args.out) if args.out else Path(args.checkpoint).parent
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = Path(args.checkpoint).stem
    report_path = out_dir / f"{stem}-diagnostics.json"
    report_path.write_text(json.dumps(asdict(report), sort_keys=True) + "\n", encoding="utf-8")
    csv_path = out_dir / f"{stem}-histogram.csv"
    csv_path.write_text("\n".join(histogram_csv_lines(report)) + "\n", encoding="utf-8")
    print(json.dumps({
        "collapse_metric": report.collapse_metric,
        "mean_positive_similarity": report.mean_positive_similarity,
        "mean_negative_similarity": report.mean_negative_similarity,
        "positive_pairs": report.positive_pairs,
        "negative_pairs": report.negative_pairs,
        "report": str(report_path),
        "histogram": str(csv_path),
    }, sort_keys=True))
    return 0


def cmd_gradcheck(args) -> int:
    results = run_gradient_checks(cases=args.cases, seed=args.seed)
    worst = max(results.values())
    print(json.dumps({
        "families": results,
        "max_relative_error": worst,
        "threshold": GRADCHECK_THRESHOLD,
        "passed": worst < GRADCHECK_THRESHOLD,
    }, sort_keys=True))
    return 0 if worst < GRADCHECK_THRESHOLD else NUMERIC_ERROR


def cmd_synth_corpus(args) -> int:
    names = synth_corpus(args.out, args.count, args.seed,
                         duration_range=(args.duration_min, args.duration_max),
                         sample_rate=args.sample_rate, kind=args.kind)
    print(json.dumps({
        "out_dir": str(args.out),
        "manifest": str(Path(args.out) / "manifest.txt"),
        "count": len(names),
    }, sort_keys=True))
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service.app import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="noisedistill",
        description="Noise-robust teacher-student pretraining at desk scale.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", help="run the pre-training loop")
    p.add_argument("--config", help="TOML (or canonical JSON) config file")
    p.add_argument("--profile", choices=("paper", "desk", "toy"),
                   help="profile to start from when no config file is given")
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory override")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.add_argument("--checkpoint-every", type=int, dest="checkpoint_every")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("mix", help="mix clean speech with noise at an exact SNR")
    p.add_argument("--clean", required=True)
    p.add_argument("--noise", required=True)
    p.add_argument("--snr", type=float, required=True, help="target SNR in dB")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_mix)

    p = sub.add_parser("diagnose", help="similarity histograms and collapse metric")
    p.add_argument("--checkpoint")
    p.add_argument("--config", help="config path; defaults to config.json beside the checkpoint")
    p.add_argument("--out", help="directory for the JSON report and CSV histogram")
    p.add_argument("--utterances", type=int, default=40)
    p.add_argument("--bins", type=int, default=50)
    p.add_argument("--probe-seed", type=int, dest="probe_seed")
    p.add_argument("--measure-snr", nargs=2, metavar=("CLEAN", "MIXED"),
                   help="report the SNR implied by a clean/mixed WAV pair")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("gradcheck", help="finite-difference check of all gradients")
    p.add_argument("--cases", type=int, default=100)
    p.add_argument("--seed", type=int, default=20240601)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("synth-corpus", help="materialize a seeded synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--duration-min", type=float, default=1.0, dest="duration_min")
    p.add_argument("--duration-max", type=float, default=3.0, dest="duration_max")
    p.add_argument("--sample-rate", type=int, default=16000, dest="sample_rate")
    p.add_argument("--kind", choices=("speech", "white", "band"), default="speech")
    p.set_defaults(func=cmd_synth_corpus)

    p = sub.add_parser("serve", help="start the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FormatError, DomainError, ShapeError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except (TrainingError, NumericError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return NUMERIC_ERROR


if __name__ == "__main__":
    sys.exit(main())
