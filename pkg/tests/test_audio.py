"""Signal pipeline: synthesis determinism, exact-SNR mixing, WAV round trips."""

import wave

import numpy as np
import pytest

from noisedistill.audio import (
    MixSpec,
    Waveform,
    load_wav,
    measure_snr_db,
    mix_at_snr,
    power,
    read_manifest,
    save_wav,
    synth_corpus,
    synth_noise,
    synth_utterance,
)
from noisedistill.errors import ConfigError, DomainError, FormatError
from noisedistill.rng import SeededRng


class TestPower:
    def test_zero_signal(self):
        assert power(Waveform(np.zeros(100))) == 0.0

    def test_constant_half(self):
        assert power(Waveform(np.full(64, 0.5))) == pytest.approx(0.25, abs=1e-15)

    def test_unit_sine_whole_periods(self):
        t = np.arange(16000) / 16000.0
        w = Waveform(np.sin(2 * np.pi * 100 * t))  # 100 full periods
        assert power(w) == pytest.approx(0.5, abs=1e-9)


class TestMixAtSnr:
    def _pair(self, seed, n_clean=8000, n_noise=16000):
        clean = synth_utterance(seed, n_clean / 16000.0)
        noise = synth_noise(seed + 1, n_noise / 16000.0)
        return clean, noise

    def test_equal_power_at_zero_db(self):
        clean = Waveform(np.tile([0.5, -0.5], 500))
        noise = Waveform(np.tile([0.5, -0.5], 500))
        mixed = mix_at_snr(clean, noise, 0.0, SeededRng(1))
        gain_applied = (mixed.samples - clean.samples) / noise.samples
        np.testing.assert_allclose(gain_applied, 1.0, atol=1e-12)

    def test_twenty_db_gain_tenth(self):
        clean = Waveform(np.tile([0.5, -0.5], 500))
        noise = Waveform(np.tile([0.5, -0.5], 500))
        mixed = mix_at_snr(clean, noise, 20.0, SeededRng(1))
        gain_applied = (mixed.samples - clean.samples) / noise.samples
        np.testing.assert_allclose(gain_applied, 0.1, atol=1e-12)

    def test_requested_snr_achieved_exactly(self):
        rng = SeededRng(99, "snr-sweep")
        for i in range(100):
            stream = rng.child(str(i))
            clean, noise = self._pair(1000 + i)
            snr = stream.uniform(0.0, 25.0)
            mixed = mix_at_snr(clean, noise, snr, stream.child("mix"))
            segment = mixed.samples - clean.samples
            measured = 10 * np.log10(power(clean) / np.mean(segment ** 2))
            assert abs(measured - snr) < 1e-6

    def test_measure_snr_db_roundtrip(self):
        clean, noise = self._pair(7)
        mixed = mix_at_snr(clean, noise, 12.5, SeededRng(4))
        assert measure_snr_db(clean, mixed) == pytest.approx(12.5, abs=1e-6)

    def test_deterministic_under_seed(self):
        clean, noise = self._pair(21)
        a = mix_at_snr(clean, noise, 10.0, SeededRng(5, "mix"))
        b = mix_at_snr(clean, noise, 10.0, SeededRng(5, "mix"))
        np.testing.assert_array_equal(a.samples, b.samples)

    def test_output_length_is_clean_length(self):
        clean, noise = self._pair(3, n_clean=4000, n_noise=9000)
        mixed = mix_at_snr(clean, noise, 5.0, SeededRng(2))
        assert len(mixed) == len(clean)

    def test_zero_power_clean_rejected(self):
        with pytest.raises(DomainError):
            mix_at_snr(Waveform(np.zeros(100)), Waveform(np.ones(100)), 10.0, SeededRng(1))

    def test_zero_power_segment_rejected(self):
        with pytest.raises(DomainError):
            mix_at_snr(Waveform(np.ones(100)), Waveform(np.zeros(100)), 10.0, SeededRng(1))

    def test_short_noise_rejected(self):
        with pytest.raises(DomainError):
            mix_at_snr(Waveform(np.ones(100)), Waveform(np.ones(50)), 10.0, SeededRng(1))

    def test_sample_rate_mismatch_rejected(self):
        clean = Waveform(np.ones(100), sample_rate=16000)
        noise = Waveform(np.ones(200), sample_rate=8000)
        with pytest.raises(DomainError):
            mix_at_snr(clean, noise, 10.0, SeededRng(1))


class TestSynthUtterance:
    def test_deterministic(self):
        a = synth_utterance(123, 0.5)
        b = synth_utterance(123, 0.5)
        np.testing.assert_array_equal(a.samples, b.samples)

    def test_different_seeds_differ(self):
        assert not np.array_equal(synth_utterance(1, 0.5).samples, synth_utterance(2, 0.5).samples)

    def test_peak_normalized(self):
        w = synth_utterance(7, 1.2)
        assert np.max(np.abs(w.samples)) == pytest.approx(0.9, abs=1e-9)

    def test_sample_count(self):
        assert len(synth_utterance(1, 1.0, 16000)) == 16000

    def test_bad_duration(self):
        with pytest.raises(DomainError):
            synth_utterance(1, 0.0)


class TestSynthNoise:
    def test_deterministic(self):
        np.testing.assert_array_equal(synth_noise(5, 0.5).samples, synth_noise(5, 0.5).samples)

    def test_rms_normalized(self):
        for kind in ("white", "band"):
            w = synth_noise(5, 1.0, kind)
            assert np.sqrt(np.mean(w.samples ** 2)) == pytest.approx(0.1, abs=1e-6)

    def test_white_is_uncorrelated(self):
        w = synth_noise(11, 10.0)  # 160000 samples
        x = w.samples
        lag1 = np.corrcoef(x[:-1], x[1:])[0, 1]
        assert abs(lag1) < 0.02

    def test_band_kind_concentrates_in_band(self):
        w = synth_noise(13, 2.0, "band")
        spectrum = np.abs(np.fft.rfft(w.samples)) ** 2
        freqs = np.fft.rfftfreq(len(w), d=1 / 16000)
        in_band = spectrum[(freqs >= 300) & (freqs <= 3400)].sum()
        assert in_band / spectrum.sum() > 0.99

    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            synth_noise(1, 1.0, kind="pink")


class TestWavIo:
    def test_round_trip_quantization_bound(self, tmp_path):
        ramp = Waveform(np.linspace(-1.0, 1.0, 100))
        path = tmp_path / "ramp.wav"
        save_wav(path, ramp)
        loaded = load_wav(path)
        assert loaded.sample_rate == 16000
        assert np.max(np.abs(loaded.samples - ramp.samples)) <= 1.0 / 32768.0

    def test_stereo_rejected(self, tmp_path):
        path = tmp_path / "stereo.wav"
        with wave.open(str(path), "wb") as fh:
            fh.setnchannels(2)
            fh.setsampwidth(2)
            fh.setframerate(8000)
            fh.writeframes(b"\x00\x00" * 64)
        with pytest.raises(FormatError):
            load_wav(path)

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "empty.wav"
        path.write_bytes(b"")
        with pytest.raises(FormatError):
            load_wav(path)

    def test_zero_frames_rejected(self, tmp_path):
        path = tmp_path / "noframes.wav"
        with wave.open(str(path), "wb") as fh:
            fh.setnchannels(1)
            fh.setsampwidth(2)
            fh.setframerate(8000)
        with pytest.raises(FormatError):
            load_wav(path)

    def test_eight_bit_rejected(self, tmp_path):
        path = tmp_path / "eight.wav"
        with wave.open(str(path), "wb") as fh:
            fh.setnchannels(1)
            fh.setsampwidth(1)
            fh.setframerate(8000)
            fh.writeframes(b"\x00" * 64)
        with pytest.raises(FormatError):
            load_wav(path)


class TestCorpus:
    def test_synth_corpus_writes_manifest(self, tmp_path):
        names = synth_corpus(tmp_path, 5, seed=42, duration_range=(0.2, 0.4))
        assert len(names) == 5
        listed = read_manifest(tmp_path / "manifest.txt")
        assert listed == names
        for name in names:
            w = load_wav(tmp_path / name)
            assert 0.2 <= w.duration_s <= 0.4 + 1e-6

    def test_corpus_deterministic(self, tmp_path):
        synth_corpus(tmp_path / "a", 3, seed=9, duration_range=(0.2, 0.3))
        synth_corpus(tmp_path / "b", 3, seed=9, duration_range=(0.2, 0.3))
        for name in read_manifest(tmp_path / "a" / "manifest.txt"):
            wa = load_wav(tmp_path / "a" / name)
            wb = load_wav(tmp_path / "b" / name)
            np.testing.assert_array_equal(wa.samples, wb.samples)

    def test_noise_corpus_kind(self, tmp_path):
        names = synth_corpus(tmp_path, 2, seed=1, duration_range=(0.2, 0.2), kind="white")
        assert all(n.startswith("white_") for n in names)

    def test_bad_count(self, tmp_path):
        with pytest.raises(DomainError):
            synth_corpus(tmp_path, 0, seed=1)


class TestWaveformAndMixSpec:
    def test_waveform_validation(self):
        with pytest.raises(DomainError):
            Waveform(np.array([]))
        with pytest.raises(DomainError):
            Waveform(np.array([0.1, np.nan]))
        with pytest.raises(DomainError):
            Waveform(np.ones(4), sample_rate=0)

    def test_mixspec_range(self):
        MixSpec(snr_db=12.0)
        with pytest.raises(ConfigError):
            MixSpec(snr_db=30.0)
        MixSpec(snr_db=30.0, snr_range=(0.0, 40.0))
