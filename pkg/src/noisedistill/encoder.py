"""Strided 1-D convolutional waveform encoder.

Seven valid (no padding) conv layers turn raw samples into a frame sequence;
each layer is followed by per-frame channel normalization with learned affine
parameters and a GELU.  The full-size profile uses 512 channels; the desk
profile shrinks to 64 so the whole stack runs comfortably in tests.
"""

from __future__ import annotations

from dataclasses import dataclass

from .audio import Waveform
from .errors import ConfigError, ShapeError
from .rng import SeededRng
from .tensor import Tensor, conv1d, layer_norm

FULL_KERNELS = (10, 3, 3, 3, 3, 2, 2)
FULL_STRIDES = (5, 2, 2, 2, 2, 2, 2)


@dataclass(frozen=True)
class ConvSpec:
    kernels: tuple[int, ...] = FULL_KERNELS
    strides: tuple[int, ...] = FULL_STRIDES
    channels: int = 512

    def __post_init__(self):
        if len(self.kernels) != len(self.strides):
            raise ConfigError("kernels and strides must have equal length")
        if not self.kernels:
            raise ConfigError("conv spec needs at least one layer")
        if any(k < 1 for k in self.kernels) or any(s < 1 for s in self.strides):
            raise ConfigError("kernels and strides must be >= 1")
        if self.channels < 1:
            raise ConfigError("channels must be >= 1")

    @property
    def layers(self) -> int:
        return len(self.kernels)


def receptive_field(spec: ConvSpec) -> tuple[int, int]:
    """(input samples seen by one output frame, input samples per frame step)."""
    size = 1
    jump = 1
    for k, s in zip(spec.kernels, spec.strides):
        size += (k - 1) * jump
        jump *= s
    return size, jump


def output_length(spec: ConvSpec, input_samples: int) -> int:
    """Frame count after the whole stack: L -> floor((L - k) / s) + 1 per layer."""
    min_samples, _ = receptive_field(spec)
    if input_samples < min_samples:
        raise ShapeError(
            f"input of {input_samples} samples is shorter than the encoder's "
            f"receptive field; minimum is {min_samples} samples"
        )
    length = input_samples
    for k, s in zip(spec.kernels, spec.strides):
        length = (length - k) // s + 1
    return length


def init_conv_params(spec: ConvSpec, rng: SeededRng) -> dict[str, Tensor]:
    """Centered-uniform weights at 1/sqrt(fan_in) scale; identity norms."""
    params: dict[str, Tensor] = {}
    in_channels = 1
    for i, k in enumerate(spec.kernels):
        fan_in = in_channels * k
        bound = fan_in ** -0.5
        stream = rng.child(f"conv{i}")
        weight = stream.uniforms(spec.channels * in_channels * k, -bound, bound)
        params[f"conv{i}.weight"] = Tensor(weight.reshape(spec.channels, in_channels, k))
        params[f"conv{i}.bias"] = Tensor([0.0] * spec.channels)
        params[f"conv{i}.norm_scale"] = Tensor([1.0] * spec.channels)
        params[f"conv{i}.norm_shift"] = Tensor([0.0] * spec.channels)
        in_channels = spec.channels
    return params


def encode(spec: ConvSpec, params: dict[str, Tensor], w: Waveform) -> Tensor:
    """Waveform -> (T, channels) feature sequence; differentiable end to end."""
    output_length(spec, len(w))  # validates the minimum-length precondition
    x = Tensor(w.samples.reshape(-1, 1))
    for i, stride in enumerate(spec.strides):
        x = conv1d(x, params[f"conv{i}.weight"], params[f"conv{i}.bias"], stride)
        x = layer_norm(x, params[f"conv{i}.norm_scale"], params[f"conv{i}.norm_shift"])
        x = x.gelu()
    return x


def encode_linear(spec: ConvSpec, params: dict[str, Tensor], w: Waveform) -> Tensor:
    """The bias-free conv stack alone, skipping normalization and activation.

    Composition of convolutions is linear in the input, which the property
    suite exploits.
    """
    output_length(spec, len(w))
    x = Tensor(w.samples.reshape(-1, 1))
    for i, stride in enumerate(spec.strides):
        weight = params[f"conv{i}.weight"]
        zero_bias = Tensor([0.0] * weight.value.shape[0])
        x = conv1d(x, weight, zero_bias, stride)
    return x
