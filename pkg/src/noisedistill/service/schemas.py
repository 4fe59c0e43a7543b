"""Pydantic request/response models for the HTTP service."""

from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str
    version: str


class TauResponse(BaseModel):
    step: int
    tau: float


class MixRequest(BaseModel):
    clean_path: str
    noise_path: str
    out_path: str
    snr_db: float
    seed: int = 0


class MixResponse(BaseModel):
    out_path: str
    snr_db: float
    measured_snr_db: float
    samples: int


class SynthCorpusRequest(BaseModel):
    out_dir: str
    count: int = Field(ge=1)
    seed: int = 0
    duration_min: float = 1.0
    duration_max: float = 3.0
    sample_rate: int = 16000
    kind: str = "speech"


class SynthCorpusResponse(BaseModel):
    out_dir: str
    manifest: str
    files: list[str]


class RegressionLossRequest(BaseModel):
    prediction: list[list[float]]
    target: list[list[float]]
    masked: list[bool]
    beta: float = 1.0


class ContrastiveLossRequest(BaseModel):
    prediction: list[float]
    positive: list[float]
    negatives: list[list[float]] = Field(default_factory=list)
    temperature: float = 0.1


class LossResponse(BaseModel):
    loss: float


class TopKRequest(BaseModel):
    prediction: list[float]
    frames: list[list[float]]
    k: int = Field(ge=1)
    source_indices: Optional[list[int]] = None
    provenance: Optional[list[str]] = None


class TopKResponse(BaseModel):
    kept_indices: list[int]
    kept_similarities: list[float]
    provenance: list[str]


class GradcheckRequest(BaseModel):
    cases: int = Field(default=20, ge=1, le=500)
    seed: int = 20240601


class GradcheckResponse(BaseModel):
    families: dict[str, float]
    max_relative_error: float
    threshold: float
    passed: bool


class PretrainRequest(BaseModel):
    config: dict = Field(default_factory=dict,
                         description="same mapping a TOML config file would hold")
    background: bool = False


class PretrainResponse(BaseModel):
    out_dir: str
    steps_completed: int
    final_total: Optional[float]
    log_path: str
    checkpoint_path: str


class JobSubmitted(BaseModel):
    job_id: str


class JobStatus(BaseModel):
    job_id: str
    state: str  # queued | running | done | failed
    step: int = 0
    total_steps: int = 0
    error: Optional[str] = None
    result: Optional[PretrainResponse] = None


class DiagnoseRequest(BaseModel):
    checkpoint_path: str
    config_path: Optional[str] = None
    utterances: int = Field(default=20, ge=1)
    bins: int = Field(default=50, ge=1)
    probe_seed: Optional[int] = None


class HistogramBin(BaseModel):
    bin_lo: float
    bin_hi: float
    positive_count: int
    negative_count: int


class DiagnoseResponse(BaseModel):
    collapse_metric: float
    mean_positive_similarity: float
    mean_negative_similarity: float
    positive_pairs: int
    negative_pairs: int
    histogram: list[HistogramBin]
