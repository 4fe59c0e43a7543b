"""noisedistill: desk-scale noise-robust teacher-student speech pretraining.

Core pieces: a numpy-backed reverse-mode autodiff tensor, deterministic
seeded RNG streams, synthetic audio + SNR mixing, a strided conv waveform
encoder, a small transformer with span masking, an EMA teacher, contrastive
negative pools (standard, patch-shuffled, top-k filtered), the joint
smooth-L1 + contrastive objective, a reproducible training loop, and
similarity/collapse diagnostics.  A FastAPI service and a thin CLI wrap the
same core functions.
"""

from .audio import Waveform, load_wav, measure_snr_db, mix_at_snr, power, save_wav, \
    synth_corpus, synth_noise, synth_utterance
from .config import TrainConfig, desk_profile, load_config, paper_profile, toy_profile
from .context import MaskSpec, TransformerConfig, apply_mask, average_top_m, sample_mask
from .ema import EmaSchedule, ema_update, init_teacher, tau_at
from .encoder import ConvSpec, encode, output_length
from .losses import LossConfig, StepLossReport, contrastive_loss, regression_loss, \
    step_objective, total_loss
from .negatives import NegativePool, PatchSpec, filter_top_k, patch_shuffle
from .rng import SeededRng
from .tensor import Tensor, cosine_similarity, finite_difference_gradient, log_sum_exp, \
    no_grad, set_precision
from .training import TrainState, init_state, run_training, train_step

__version__ = "0.1.0"

__all__ = [
    "ConvSpec", "EmaSchedule", "LossConfig", "MaskSpec", "NegativePool", "PatchSpec",
    "SeededRng", "StepLossReport", "Tensor", "TrainConfig", "TrainState",
    "TransformerConfig", "Waveform", "apply_mask", "average_top_m", "contrastive_loss",
    "cosine_similarity", "desk_profile", "ema_update", "encode",
    "finite_difference_gradient", "filter_top_k", "init_state", "init_teacher",
    "load_config", "load_wav", "log_sum_exp", "measure_snr_db", "mix_at_snr", "no_grad",
    "output_length", "paper_profile", "patch_shuffle", "power", "regression_loss",
    "run_training", "sample_mask", "save_wav", "set_precision", "step_objective",
    "synth_corpus", "synth_noise", "synth_utterance", "tau_at", "total_loss",
    "toy_profile", "train_step",
]
