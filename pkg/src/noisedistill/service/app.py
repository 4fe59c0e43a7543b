"""FastAPI service wrapping the core package.

Stateless operations (mixing, losses, top-k filtering, gradchecks,
diagnostics) run synchronously; pretraining can run inline for short jobs or
as a background job polled via /train/jobs/{id}.  File paths in requests are
resolved on the server's filesystem: this is a desk-scale, single-host tool.
"""

from __future__ import annotations

import threading
import uuid
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException

from .. import __version__
from ..audio import load_wav, measure_snr_db, mix_at_snr, save_wav, synth_corpus
from ..cli import GRADCHECK_THRESHOLD, load_config_any
from ..config import config_from_dict
from ..context import MaskSpec
from ..diagnostics import analyze, run_gradient_checks
from ..ema import EmaSchedule, tau_at
from ..errors import (
    ConfigError,
    DomainError,
    FormatError,
    NumericError,
    ShapeError,
    TrainingError,
)
from ..losses import contrastive_loss, regression_loss
from ..negatives import STANDARD, NegativePool, cosine_to_frames, filter_top_k
from ..rng import SeededRng
from ..tensor import Tensor
from ..training import load_state, run_training
from .schemas import (
    ContrastiveLossRequest,
    DiagnoseRequest,
    DiagnoseResponse,
    GradcheckRequest,
    GradcheckResponse,
    HealthResponse,
    HistogramBin,
    JobStatus,
    JobSubmitted,
    LossResponse,
    MixRequest,
    MixResponse,
    PretrainRequest,
    PretrainResponse,
    RegressionLossRequest,
    SynthCorpusRequest,
    SynthCorpusResponse,
    TauResponse,
    TopKRequest,
    TopKResponse,
)

_USER_ERRORS = (ConfigError, DomainError, FormatError, ShapeError, ValueError)
_RUNTIME_ERRORS = (TrainingError, NumericError)


class _Jobs:
    """In-process registry of background training runs."""

    def __init__(self):
        self._lock = threading.Lock()
        self._records: dict[str, JobStatus] = {}

    def submit(self, cfg) -> str:
        job_id = uuid.uuid4().hex[:12]
        with self._lock:
            self._records[job_id] = JobStatus(job_id=job_id, state="queued",
                                              total_steps=cfg.steps)

        def progress(step, report):
            with self._lock:
                self._records[job_id].step = step + 1

        def target():
            with self._lock:
                self._records[job_id].state = "running"
            try:
                state, reports = run_training(cfg, on_step=progress)
                result = _pretrain_response(cfg, state, reports)
                with self._lock:
                    record = self._records[job_id]
                    record.state = "done"
                    record.step = state.step
                    record.result = result
            except Exception as exc:  # report any failure through the job record
                with self._lock:
                    record = self._records[job_id]
                    record.state = "failed"
                    record.error = str(exc)

        threading.Thread(target=target, daemon=True).start()
        return job_id

    def status(self, job_id: str) -> JobStatus:
        with self._lock:
            if job_id not in self._records:
                raise KeyError(job_id)
            return self._records[job_id].model_copy(deep=True)


def _pretrain_response(cfg, state, reports) -> PretrainResponse:
    return PretrainResponse(
        out_dir=cfg.out_dir,
        steps_completed=state.step,
        final_total=reports[-1].total if reports else None,
        log_path=str(Path(cfg.out_dir) / "train_log.jsonl"),
        checkpoint_path=str(Path(cfg.out_dir) / f"checkpoint-{state.step:06d}.rd2v"),
    )


def create_app() -> FastAPI:
    app = FastAPI(title="noisedistill", version=__version__)
    jobs = _Jobs()

    def guard(fn):
        """Translate core exceptions into HTTP errors."""
        try:
            return fn()
        except _RUNTIME_ERRORS as exc:
            raise HTTPException(status_code=500, detail=str(exc)) from exc
        except _USER_ERRORS as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        except FileNotFoundError as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc

    @app.get("/health", response_model=HealthResponse)
    def health():
        return HealthResponse(status="ok", version=__version__)

    @app.get("/ema/tau", response_model=TauResponse)
    def ema_tau(step: int, tau0: float = 0.999, tau_e: float = 0.9999, tau_n: int = 30000):
        def work():
            schedule = EmaSchedule(tau0=tau0, tau_e=tau_e, tau_n=tau_n)
            return TauResponse(step=step, tau=tau_at(schedule, step))

        return guard(work)

    @app.post("/signal/mix", response_model=MixResponse)
    def signal_mix(req: MixRequest):
        def work():
            clean = load_wav(req.clean_path)
            noise = load_wav(req.noise_path)
            mixed = mix_at_snr(clean, noise, req.snr_db, SeededRng(req.seed, "service-mix"))
            save_wav(req.out_path, mixed)
            return MixResponse(out_path=req.out_path, snr_db=req.snr_db,
                               measured_snr_db=measure_snr_db(clean, mixed),
                               samples=len(mixed))

        return guard(work)

    @app.post("/signal/synth-corpus", response_model=SynthCorpusResponse)
    def signal_synth_corpus(req: SynthCorpusRequest):
        def work():
            names = synth_corpus(req.out_dir, req.count, req.seed,
                                 duration_range=(req.duration_min, req.duration_max),
                                 sample_rate=req.sample_rate, kind=req.kind)
            return SynthCorpusResponse(out_dir=req.out_dir,
                                       manifest=str(Path(req.out_dir) / "manifest.txt"),
                                       files=names)

        return guard(work)

    @app.post("/loss/regression", response_model=LossResponse)
    def loss_regression(req: RegressionLossRequest):
        def work():
            masked = np.asarray(req.masked, dtype=bool)
            mask = MaskSpec(masked, ())
            loss = regression_loss(Tensor(req.prediction), np.asarray(req.target),
                                   mask, req.beta)
            return LossResponse(loss=loss.item())

        return guard(work)

    @app.post("/loss/contrastive", response_model=LossResponse)
    def loss_contrastive(req: ContrastiveLossRequest):
        def work():
            pool = None
            if req.negatives:
                frames = np.asarray(req.negatives, dtype=np.float64)
                pool = NegativePool(frames, (STANDARD,) * frames.shape[0],
                                    np.arange(frames.shape[0]))
            loss = contrastive_loss(Tensor(req.prediction), np.asarray(req.positive),
                                    pool, req.temperature)
            return LossResponse(loss=loss.item())

        return guard(work)

    @app.post("/negatives/filter-top-k", response_model=TopKResponse)
    def negatives_filter_top_k(req: TopKRequest):
        def work():
            frames = np.asarray(req.frames, dtype=np.float64)
            n = frames.shape[0] if frames.ndim == 2 else 0
            if n == 0:
                raise DomainError("frames must be a nonempty list of vectors")
            indices = np.asarray(req.source_indices if req.source_indices is not None
                                 else range(n))
            provenance = tuple(req.provenance) if req.provenance else (STANDARD,) * n
            pool = NegativePool(frames, provenance, indices)
            prediction = np.asarray(req.prediction, dtype=np.float64)
            kept = filter_top_k(prediction, pool, req.k)
            return TopKResponse(
                kept_indices=[int(i) for i in kept.source_indices],
                kept_similarities=[float(s) for s in cosine_to_frames(kept.frames, prediction)],
                provenance=list(kept.provenance),
            )

        return guard(work)

    @app.post("/gradcheck", response_model=GradcheckResponse)
    def gradcheck(req: GradcheckRequest):
        def work():
            results = run_gradient_checks(cases=req.cases, seed=req.seed)
            worst = max(results.values())
            return GradcheckResponse(families=results, max_relative_error=worst,
                                     threshold=GRADCHECK_THRESHOLD,
                                     passed=worst < GRADCHECK_THRESHOLD)

        return guard(work)

    @app.post("/train/pretrain", response_model=PretrainResponse)
    def train_pretrain(req: PretrainRequest):
        def work():
            cfg = config_from_dict(req.config)
            state, reports = run_training(cfg)
            return _pretrain_response(cfg, state, reports)

        return guard(work)

    @app.post("/train/jobs", response_model=JobSubmitted)
    def train_submit(req: PretrainRequest):
        def work():
            cfg = config_from_dict(req.config)
            return JobSubmitted(job_id=jobs.submit(cfg))

        return guard(work)

    @app.get("/train/jobs/{job_id}", response_model=JobStatus)
    def train_job_status(job_id: str):
        try:
            return jobs.status(job_id)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"no such job {job_id}")

    @app.post("/diagnose", response_model=DiagnoseResponse)
    def diagnose(req: DiagnoseRequest):
        def work():
            config_path = req.config_path or str(Path(req.checkpoint_path).parent / "config.json")
            cfg = load_config_any(config_path)
            state = load_state(req.checkpoint_path, cfg)
            report = analyze(cfg, state.student, state.teacher, utterances=req.utterances,
                             bins=req.bins, probe_seed=req.probe_seed)
            histogram = [
                HistogramBin(bin_lo=report.bin_edges[i], bin_hi=report.bin_edges[i + 1],
                             positive_count=report.positive_counts[i],
                             negative_count=report.negative_counts[i])
                for i in range(len(report.bin_edges) - 1)
            ]
            return DiagnoseResponse(
                collapse_metric=report.collapse_metric,
                mean_positive_similarity=report.mean_positive_similarity,
                mean_negative_similarity=report.mean_negative_similarity,
                positive_pairs=report.positive_pairs,
                negative_pairs=report.negative_pairs,
                histogram=histogram,
            )

        return guard(work)

    return app
