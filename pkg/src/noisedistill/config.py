"""Run configuration: profiles, TOML loading, and config digests.

Three presets: "paper" is the full-size model layout, "desk" shrinks widths
so a run fits in minutes on a laptop, and "toy" is the smallest profile used
by the test suite's end-to-end runs.  A TOML file (plus CLI overrides)
patches individual fields on top of a profile.
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .context import TransformerConfig
from .ema import EmaSchedule
from .encoder import ConvSpec
from .errors import ConfigError
from .losses import LossConfig

PROFILES = ("paper", "desk", "toy")
EMA_SCOPES = ("all", "transformer")


@dataclass(frozen=True)
class NegativeConfig:
    n_standard: int = 50
    n_nonsemantic: int = 50
    k: int = 50
    patch_min: int = 3
    patch_max: int = 5
    anneal_k: bool = False

    def __post_init__(self):
        if self.n_standard < 0 or self.n_nonsemantic < 0:
            raise ConfigError("negative counts must be >= 0")
        if self.n_standard + self.n_nonsemantic < 1:
            raise ConfigError("need at least one negative in total")
        if not 1 <= self.k <= self.n_standard + self.n_nonsemantic:
            raise ConfigError(
                f"k must be in [1, {self.n_standard + self.n_nonsemantic}], got {self.k}")
        if not 1 <= self.patch_min <= self.patch_max:
            raise ConfigError(f"bad patch range [{self.patch_min}, {self.patch_max}]")


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 1e-4  # peak rate after warmup
    warmup_frac: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning rate must be positive")
        if not 0.0 <= self.warmup_frac <= 1.0:
            raise ConfigError("warmup fraction must be in [0, 1]")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError("Adam betas must be in [0, 1)")


@dataclass(frozen=True)
class MaskingConfig:
    start_probability: float = 0.065
    span: int = 10

    def __post_init__(self):
        if not 0.0 <= self.start_probability <= 1.0:
            raise ConfigError("mask start probability must be in [0, 1]")
        if self.span < 1:
            raise ConfigError("mask span must be >= 1")


@dataclass(frozen=True)
class TrainConfig:
    profile: str = "desk"
    seed: int = 0
    steps: int = 100
    batch_size: int = 4
    sample_rate: int = 16000
    utterance_seconds: tuple[float, float] = (1.0, 3.0)
    snr_range: tuple[float, float] = (0.0, 25.0)
    noise_kind: str = "white"
    ema_scope: str = "all"
    out_dir: str = "runs/default"
    checkpoint_every: int = 0  # 0: checkpoint only at start and end
    conv: ConvSpec = field(default_factory=ConvSpec)
    transformer: TransformerConfig = field(default_factory=TransformerConfig)
    ema: EmaSchedule = field(default_factory=EmaSchedule)
    loss: LossConfig = field(default_factory=LossConfig)
    negatives: NegativeConfig = field(default_factory=NegativeConfig)
    masking: MaskingConfig = field(default_factory=MaskingConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)

    def __post_init__(self):
        if self.profile not in PROFILES:
            raise ConfigError(f"unknown profile {self.profile!r}, expected one of {PROFILES}")
        if self.steps < 1 or self.batch_size < 1:
            raise ConfigError("steps and batch_size must be >= 1")
        lo, hi = self.utterance_seconds
        if not 0 < lo <= hi:
            raise ConfigError(f"bad utterance duration range [{lo}, {hi}]")
        slo, shi = self.snr_range
        if slo > shi:
            raise ConfigError(f"bad SNR range [{slo}, {shi}]")
        if self.noise_kind not in ("white", "band"):
            raise ConfigError(f"unknown noise kind {self.noise_kind!r}")
        if self.ema_scope not in EMA_SCOPES:
            raise ConfigError(f"ema scope must be one of {EMA_SCOPES}")
        if self.checkpoint_every < 0:
            raise ConfigError("checkpoint_every must be >= 0")


def paper_profile(**overrides) -> TrainConfig:
    """Full-size layout: 512-channel encoder, 12x768 transformer, top-8
    averaging, 50+50 negatives pruned to 50, patches in [30, 50]."""
    base = TrainConfig(
        profile="paper",
        conv=ConvSpec(channels=512),
        transformer=TransformerConfig(layers=12, dim=768, heads=12, ffn_dim=3072, top_m=8),
        negatives=NegativeConfig(patch_min=30, patch_max=50),
        optimizer=OptimizerConfig(learning_rate=1e-4),
    )
    return replace(base, **overrides)


def desk_profile(**overrides) -> TrainConfig:
    base = TrainConfig(
        profile="desk",
        conv=ConvSpec(channels=64),
        transformer=TransformerConfig(layers=4, dim=64, heads=4, ffn_dim=256, top_m=3),
        negatives=NegativeConfig(patch_min=3, patch_max=5),
        optimizer=OptimizerConfig(learning_rate=1e-4),
    )
    return replace(base, **overrides)


def toy_profile(**overrides) -> TrainConfig:
    """Smallest end-to-end profile; the acceptance runs use this."""
    base = TrainConfig(
        profile="toy",
        steps=50,
        batch_size=2,
        utterance_seconds=(0.4, 0.7),
        conv=ConvSpec(channels=32),
        transformer=TransformerConfig(layers=2, dim=32, heads=4, ffn_dim=64, top_m=2),
        negatives=NegativeConfig(patch_min=3, patch_max=5),
        optimizer=OptimizerConfig(learning_rate=2e-3),
    )
    return replace(base, **overrides)


_PROFILE_FACTORIES = {"paper": paper_profile, "desk": desk_profile, "toy": toy_profile}

_SECTION_TYPES = {
    "conv": ConvSpec,
    "transformer": TransformerConfig,
    "ema": EmaSchedule,
    "loss": LossConfig,
    "negatives": NegativeConfig,
    "masking": MaskingConfig,
    "optimizer": OptimizerConfig,
}

_TUPLE_FIELDS = {"utterance_seconds", "snr_range", "kernels", "strides"}


def _coerce_value(key, value):
    if key in _TUPLE_FIELDS:
        return tuple(value)
    return value


def config_from_dict(data: dict) -> TrainConfig:
    """Build a TrainConfig from a plain mapping, starting at the named profile."""
    data = dict(data)
    profile = data.pop("profile", "desk")
    factory = _PROFILE_FACTORIES.get(profile)
    if factory is None:
        raise ConfigError(f"unknown profile {profile!r}, expected one of {PROFILES}")
    base = factory()

    top_level = {}
    for key, value in data.items():
        if key in _SECTION_TYPES:
            if not isinstance(value, dict):
                raise ConfigError(f"section [{key}] must be a table")
            section_cls = _SECTION_TYPES[key]
            current = getattr(base, key)
            known = set(current.__dataclass_fields__)
            unknown = set(value) - known
            if unknown:
                raise ConfigError(f"unknown keys in [{key}]: {sorted(unknown)}")
            patched = {k: _coerce_value(k, v) for k, v in value.items()}
            top_level[key] = replace(current, **patched)
        elif key in TrainConfig.__dataclass_fields__:
            top_level[key] = _coerce_value(key, value)
        else:
            raise ConfigError(f"unknown config key {key!r}")
    return replace(base, profile=profile, **top_level)


def load_config(path) -> TrainConfig:
    raw = Path(path).read_bytes()
    try:
        data = tomllib.loads(raw.decode("utf-8"))
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot parse TOML config {path}: {exc}") from exc
    return config_from_dict(data)


def canonical_json(cfg: TrainConfig) -> str:
    """Stable JSON rendering used for run manifests."""
    return json.dumps(asdict(cfg), sort_keys=True, separators=(",", ":"))


def config_digest(cfg: TrainConfig) -> str:
    """Digest over the fields that determine the training trace.

    Artifact locations (out_dir, checkpoint cadence) are excluded so a
    checkpoint can be resumed into a different directory.
    """
    data = asdict(cfg)
    data.pop("out_dir", None)
    data.pop("checkpoint_every", None)
    payload = json.dumps(data, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()
