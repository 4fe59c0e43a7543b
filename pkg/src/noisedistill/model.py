"""Wiring of the two branches: conv encoder -> projection -> (mask) ->
transformer, for both the student (on the tape) and the teacher (off it)."""

from __future__ import annotations

import numpy as np

from .audio import Waveform
from .config import TrainConfig
from .context import (
    MaskSpec,
    apply_mask,
    average_top_m,
    forward,
    init_transformer_params,
    project,
)
from .encoder import encode, init_conv_params
from .rng import SeededRng
from .tensor import Tensor, no_grad

ParameterSet = dict[str, Tensor]


def init_student_params(cfg: TrainConfig, rng: SeededRng) -> ParameterSet:
    """One flat name->tensor map covering encoder, projection, mask embedding,
    all transformer blocks, and the student-side prediction head."""
    params = init_conv_params(cfg.conv, rng.child("encoder"))
    params.update(init_transformer_params(cfg.transformer, cfg.conv.channels,
                                          rng.child("transformer")))
    dim = cfg.transformer.dim
    bound = dim ** -0.5
    head = rng.child("pred-head")
    params["pred.weight"] = Tensor(head.uniforms(dim * dim, -bound, bound).reshape(dim, dim))
    params["pred.bias"] = Tensor(np.zeros(dim))
    return params


def param_shapes(cfg: TrainConfig) -> dict[str, tuple[int, ...]]:
    """Shapes of every trainable parameter (used to decode checkpoints)."""
    probe = init_student_params(cfg, SeededRng(0, "shape-probe"))
    return {name: tuple(p.value.shape) for name, p in probe.items()}


def student_forward(cfg: TrainConfig, params: ParameterSet, noisy: Waveform,
                    mask: MaskSpec) -> tuple[Tensor, list[Tensor]]:
    """Masked student pass; returns (c_pre, all layer outputs).

    The prediction head decouples the prediction space from the raw residual
    stream; without it, shared positional structure leaves prediction and
    target strongly correlated even at random init.
    """
    features = encode(cfg.conv, params, noisy)
    projected = project(params, features)
    masked = apply_mask(projected, mask, params["mask_embedding"])
    outputs = forward(cfg.transformer, params, masked)
    c_pre = outputs[-1] @ params["pred.weight"] + params["pred.bias"]
    return c_pre, outputs


def teacher_targets(cfg: TrainConfig, params: ParameterSet, clean: Waveform) -> np.ndarray:
    """Unmasked teacher pass; returns the averaged top-M target values.

    Runs entirely outside the tape, so teacher parameters can never receive
    gradients from any loss built on the result.
    """
    with no_grad():
        features = encode(cfg.conv, params, clean)
        projected = project(params, features)
        outputs = forward(cfg.transformer, params, projected)
        target = average_top_m(outputs, cfg.transformer.top_m)
    return target.value
