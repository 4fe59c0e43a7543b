"""Synthetic desk-scale audio, SNR mixing, and 16-bit PCM WAV I/O.

Utterances are sums of a few enveloped sinusoids and noise is white or
band-limited Gaussian, both fully determined by an integer seed, so every
corpus used in training or diagnostics can be regenerated from configuration
alone.  Real WAV files are accepted through the same Waveform type.
"""

from __future__ import annotations

import struct
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DomainError, FormatError
from .rng import SeededRng

NOISE_KINDS = ("white", "band")


@dataclass(frozen=True)
class Waveform:
    """Mono audio samples in [-1, 1] at a fixed sample rate."""

    samples: np.ndarray
    sample_rate: int = 16000

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise DomainError("waveform must be a nonempty 1-D sample array")
        if not np.all(np.isfinite(samples)):
            raise DomainError("waveform samples must be finite")
        if self.sample_rate <= 0:
            raise DomainError(f"sample rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class MixSpec:
    """How one clean utterance gets its noise: level, source and seed."""

    snr_db: float
    noise_source: str = "white"
    seed: int = 0
    snr_range: tuple[float, float] = (0.0, 25.0)

    def __post_init__(self):
        lo, hi = self.snr_range
        if not lo <= self.snr_db <= hi:
            raise ConfigError(f"snr_db {self.snr_db} outside configured range [{lo}, {hi}]")


def power(w: Waveform) -> float:
    """Mean squared amplitude."""
    return float(np.mean(w.samples ** 2))


def mix_at_snr(clean: Waveform, noise: Waveform, snr_db: float, rng: SeededRng) -> Waveform:
    """Add a random aligned noise segment scaled so the clean/noise power
    ratio hits snr_db exactly.

    The gain is g = sqrt(P_clean / (P_segment * 10^(snr_db/10))), so
    10*log10(P_clean / P_{g*segment}) = snr_db by construction.
    """
    if clean.sample_rate != noise.sample_rate:
        raise DomainError(
            f"sample-rate mismatch: clean {clean.sample_rate} Hz vs noise {noise.sample_rate} Hz")
    if len(noise) < len(clean):
        raise DomainError(f"noise ({len(noise)} samples) shorter than clean ({len(clean)})")
    p_clean = power(clean)
    if p_clean == 0.0:
        raise DomainError("clean waveform has zero power")
    offset = rng.integer(0, len(noise) - len(clean) + 1) if len(noise) > len(clean) else 0
    segment = noise.samples[offset:offset + len(clean)]
    p_segment = float(np.mean(segment ** 2))
    if p_segment == 0.0:
        raise DomainError("selected noise segment has zero power")
    gain = np.sqrt(p_clean / (p_segment * 10.0 ** (snr_db / 10.0)))
    return Waveform(clean.samples + gain * segment, clean.sample_rate)


def measure_snr_db(clean: Waveform, mixed: Waveform) -> float:
    """SNR implied by a (clean, mixed) pair, treating mixed - clean as noise."""
    if len(clean) != len(mixed):
        raise DomainError("clean and mixed waveforms must have equal length")
    if clean.sample_rate != mixed.sample_rate:
        raise DomainError("clean and mixed waveforms must share a sample rate")
    noise = mixed.samples - clean.samples
    p_noise = float(np.mean(noise ** 2))
    if p_noise == 0.0:
        raise DomainError("mixed waveform contains no noise component")
    return 10.0 * np.log10(power(clean) / p_noise)


def synth_utterance(seed: int, duration_s: float, sample_rate: int = 16000) -> Waveform:
    """Deterministic pseudo-speech: 3-8 sinusoids under a smooth envelope,
    peak-normalized to 0.9."""
    if duration_s <= 0:
        raise DomainError("duration must be positive")
    rng = SeededRng(seed, "synth-utterance")
    n = max(1, int(round(duration_s * sample_rate)))
    t = np.arange(n) / sample_rate
    n_components = rng.integer(3, 9)
    signal = np.zeros(n)
    for i in range(n_components):
        comp = rng.child(f"component{i}")
        freq = comp.uniform(80.0, 2000.0)
        phase = comp.uniform(0.0, 2.0 * np.pi)
        amp = comp.uniform(0.3, 1.0)
        # slow AM wobble makes the "speech" non-stationary
        wobble = 1.0 + 0.5 * np.sin(2.0 * np.pi * comp.uniform(0.5, 4.0) * t + comp.uniform(0.0, 2.0 * np.pi))
        signal += amp * wobble * np.sin(2.0 * np.pi * freq * t + phase)
    envelope = np.sin(np.pi * np.arange(n) / n) ** 2 + 0.05
    signal *= envelope
    peak = np.max(np.abs(signal))
    if peak > 0:
        signal *= 0.9 / peak
    return Waveform(signal, sample_rate)


def synth_noise(seed: int, duration_s: float, kind: str = "white",
                sample_rate: int = 16000) -> Waveform:
    """Deterministic noise, RMS-normalized to 0.1.

    "white": i.i.d. Gaussian.  "band": Gaussian band-passed to 300-3400 Hz.
    """
    if duration_s <= 0:
        raise DomainError("duration must be positive")
    if kind not in NOISE_KINDS:
        raise ConfigError(f"unknown noise kind {kind!r}, expected one of {NOISE_KINDS}")
    rng = SeededRng(seed, f"synth-noise-{kind}")
    n = max(1, int(round(duration_s * sample_rate)))
    signal = rng.normals(n)
    if kind == "band":
        spectrum = np.fft.rfft(signal)
        freqs = np.fft.rfftfreq(n, d=1.0 / sample_rate)
        spectrum[(freqs < 300.0) | (freqs > 3400.0)] = 0.0
        signal = np.fft.irfft(spectrum, n=n)
    rms = np.sqrt(np.mean(signal ** 2))
    if rms > 0:
        signal *= 0.1 / rms
    return Waveform(signal, sample_rate)


def save_wav(path, w: Waveform) -> None:
    """Write 16-bit signed PCM mono, little-endian RIFF."""
    quantized = np.clip(np.round(w.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(w.sample_rate)
        fh.writeframes(quantized.tobytes())


def load_wav(path) -> Waveform:
    """Read 16-bit PCM mono; anything else is a format error."""
    try:
        with wave.open(str(path), "rb") as fh:
            channels = fh.getnchannels()
            width = fh.getsampwidth()
            rate = fh.getframerate()
            frames = fh.readframes(fh.getnframes())
    except (wave.Error, EOFError, struct.error) as exc:
        raise FormatError(f"not a readable WAV file: {path} ({exc})") from exc
    if channels != 1:
        raise FormatError(f"expected mono WAV, got {channels} channels: {path}")
    if width != 2:
        raise FormatError(f"expected 16-bit PCM, got {8 * width}-bit: {path}")
    if not frames:
        raise FormatError(f"WAV file contains no samples: {path}")
    samples = np.frombuffer(frames, dtype="<i2").astype(np.float64) / 32768.0
    return Waveform(samples, rate)


def write_manifest(path, relative_paths: list[str]) -> None:
    """Corpus manifest: one relative path per line, UTF-8."""
    Path(path).write_text("".join(f"{p}\n" for p in relative_paths), encoding="utf-8")


def read_manifest(path) -> list[str]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [line.strip() for line in lines if line.strip()]


def synth_corpus(out_dir, count: int, seed: int, duration_range: tuple[float, float] = (1.0, 3.0),
                 sample_rate: int = 16000, kind: str = "speech") -> list[str]:
    """Materialize a seeded corpus of WAV files plus a manifest; returns the
    relative paths written."""
    if count < 1:
        raise DomainError("corpus needs at least one utterance")
    lo, hi = duration_range
    if not 0 < lo <= hi:
        raise DomainError(f"bad duration range [{lo}, {hi}]")
    if kind not in ("speech",) + NOISE_KINDS:
        raise ConfigError(f"unknown corpus kind {kind!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = SeededRng(seed, f"corpus-{kind}")
    names = []
    for i in range(count):
        stream = rng.child(f"clip{i}")
        duration = stream.uniform(lo, hi) if hi > lo else lo
        clip_seed = stream.integer(0, 2 ** 31)
        if kind == "speech":
            w = synth_utterance(clip_seed, duration, sample_rate)
        else:
            w = synth_noise(clip_seed, duration, kind, sample_rate)
        name = f"{kind}_{i:05d}.wav"
        save_wav(out / name, w)
        names.append(name)
    write_manifest(out / "manifest.txt", names)
    return names
