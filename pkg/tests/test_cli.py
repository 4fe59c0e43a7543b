"""CLI contract: subcommands, exit codes, determinism of artifacts."""

import json
from pathlib import Path

import pytest

from noisedistill.audio import load_wav, save_wav, synth_noise, synth_utterance
from noisedistill.cli import main


def _write_toy_config(path, out_dir, steps=3, seed=7, extra=""):
    path.write_text(f"""
profile = "toy"
seed = {seed}
steps = {steps}
out_dir = "{out_dir}"
utterance_seconds = [0.3, 0.4]
{extra}
""", encoding="utf-8")


class TestPretrainCommand:
    def test_runs_and_reports(self, tmp_path, capsys):
        config = tmp_path / "c.toml"
        _write_toy_config(config, tmp_path / "run")
        assert main(["pretrain", "--config", str(config)]) == 0
        summary = json.loads(capsys.readouterr().out)
        assert summary["steps_completed"] == 3
        assert Path(summary["log"]).exists()
        assert Path(summary["checkpoint"]).exists()

    def test_byte_identical_logs(self, tmp_path, capsys):
        logs = []
        for name in ("a", "b"):
            config = tmp_path / f"{name}.toml"
            _write_toy_config(config, tmp_path / name, steps=3, seed=7)
            assert main(["pretrain", "--config", str(config)]) == 0
            capsys.readouterr()
            logs.append((tmp_path / name / "train_log.jsonl").read_bytes())
        assert logs[0] == logs[1]

    def test_flag_overrides(self, tmp_path, capsys):
        config = tmp_path / "c.toml"
        _write_toy_config(config, tmp_path / "run", steps=9)
        assert main(["pretrain", "--config", str(config), "--steps", "2"]) == 0
        summary = json.loads(capsys.readouterr().out)
        assert summary["steps_completed"] == 2

    def test_resume_continues_trace(self, tmp_path, capsys):
        # full run with a mid-run checkpoint
        full_cfg = tmp_path / "full.toml"
        _write_toy_config(full_cfg, tmp_path / "full", steps=4, extra="checkpoint_every = 2\n")
        assert main(["pretrain", "--config", str(full_cfg)]) == 0
        capsys.readouterr()
        full_log = (tmp_path / "full" / "train_log.jsonl").read_text().splitlines()

        # resume the step-2 checkpoint into a fresh directory, same semantics
        resumed = tmp_path / "resumed"
        assert main(["pretrain", "--config", str(full_cfg), "--out", str(resumed),
                     "--resume", str(tmp_path / "full" / "checkpoint-000002.rd2v")]) == 0
        capsys.readouterr()
        second = (resumed / "train_log.jsonl").read_text().splitlines()

        assert full_log[2:] == second

    def test_bad_config_is_usage_error(self, tmp_path, capsys):
        config = tmp_path / "c.toml"
        config.write_text("profile = 'galaxy'\n", encoding="utf-8")
        assert main(["pretrain", "--config", str(config)]) == 2
        assert "error:" in capsys.readouterr().err

    def test_missing_config_file(self, tmp_path, capsys):
        assert main(["pretrain", "--config", str(tmp_path / "nope.toml")]) == 2


class TestMixCommand:
    def test_mix_hits_requested_snr(self, tmp_path, capsys):
        clean_path = tmp_path / "clean.wav"
        noise_path = tmp_path / "noise.wav"
        out_path = tmp_path / "mixed.wav"
        save_wav(clean_path, synth_utterance(3, 0.5))
        save_wav(noise_path, synth_noise(4, 1.0))

        assert main(["mix", "--clean", str(clean_path), "--noise", str(noise_path),
                     "--snr", "10", "--out", str(out_path)]) == 0
        result = json.loads(capsys.readouterr().out)
        assert abs(result["measured_snr_db"] - 10.0) < 1e-3
        assert out_path.exists()

        # and diagnose --measure-snr agrees
        assert main(["diagnose", "--measure-snr", str(clean_path), str(out_path)]) == 0
        measured = json.loads(capsys.readouterr().out)["measured_snr_db"]
        assert abs(measured - 10.0) < 1e-3

    def test_rejects_stereo_input(self, tmp_path, capsys):
        import wave
        stereo = tmp_path / "stereo.wav"
        with wave.open(str(stereo), "wb") as fh:
            fh.setnchannels(2)
            fh.setsampwidth(2)
            fh.setframerate(16000)
            fh.writeframes(b"\x00\x00" * 200)
        noise = tmp_path / "noise.wav"
        save_wav(noise, synth_noise(1, 0.5))
        code = main(["mix", "--clean", str(stereo), "--noise", str(noise),
                     "--snr", "5", "--out", str(tmp_path / "o.wav")])
        assert code == 2


class TestDiagnoseCommand:
    def test_model_diagnostics_artifacts(self, tmp_path, capsys):
        config = tmp_path / "c.toml"
        _write_toy_config(config, tmp_path / "run", steps=2)
        assert main(["pretrain", "--config", str(config)]) == 0
        capsys.readouterr()

        checkpoint = tmp_path / "run" / "checkpoint-000002.rd2v"
        assert main(["diagnose", "--checkpoint", str(checkpoint),
                     "--utterances", "4", "--bins", "10"]) == 0
        summary = json.loads(capsys.readouterr().out)
        assert summary["collapse_metric"] > 0
        report = json.loads(Path(summary["report"]).read_text())
        assert report["positive_pairs"] == summary["positive_pairs"]
        csv_lines = Path(summary["histogram"]).read_text().splitlines()
        assert csv_lines[0] == "bin_lo,bin_hi,positive_count,negative_count"
        assert len(csv_lines) == 11
        counts = [sum(int(v) for v in line.split(",")[2:3]) for line in csv_lines[1:]]
        assert sum(counts) == summary["positive_pairs"]

    def test_needs_checkpoint_or_snr(self, capsys):
        assert main(["diagnose"]) == 2

    def test_missing_checkpoint_file(self, tmp_path, capsys):
        assert main(["diagnose", "--checkpoint", str(tmp_path / "none.rd2v")]) == 2


class TestGradcheckCommand:
    def test_passes_on_fresh_checkout(self, capsys):
        assert main(["gradcheck", "--cases", "5"]) == 0
        result = json.loads(capsys.readouterr().out)
        assert result["passed"] is True
        assert result["max_relative_error"] < 1e-4


class TestSynthCorpusCommand:
    def test_materializes_corpus(self, tmp_path, capsys):
        out = tmp_path / "corpus"
        assert main(["synth-corpus", "--out", str(out), "--count", "3", "--seed", "2",
                     "--duration-min", "0.2", "--duration-max", "0.3"]) == 0
        result = json.loads(capsys.readouterr().out)
        assert result["count"] == 3
        manifest = Path(result["manifest"]).read_text().splitlines()
        assert len(manifest) == 3
        for name in manifest:
            w = load_wav(out / name)
            assert 0.2 <= w.duration_s <= 0.3 + 1e-6

    def test_bad_count(self, tmp_path, capsys):
        assert main(["synth-corpus", "--out", str(tmp_path), "--count", "0"]) == 2


class TestParser:
    def test_unknown_command_exits_two(self):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2

    def test_missing_required_flag_exits_two(self):
        with pytest.raises(SystemExit) as exc:
            main(["mix", "--clean", "a.wav"])
        assert exc.value.code == 2
