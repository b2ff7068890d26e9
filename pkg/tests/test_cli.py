import json
import wave
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from awekit.cli import main
from awekit.config import RunConfig


TINY_CONFIG = {
    "corpus": {
        "num_words_lang_a": 2,
        "num_words_lang_b": 2,
        "num_speakers": 4,
        "instances_per_word_per_speaker": 2,
        "feature_dim": 8,
        "word_len_frames": (8, 14),
        "num_search_utterances": 4,
        "words_per_utterance": (2, 3),
        "silence_len_frames": (4, 8),
        "seed": 3,
    },
    "model": {
        "input_dim": 8,
        "stage_channels": [2, 3, 4, 6],
        "softmax_mode": "block",
        "epochs": 8,
        "batch_size": 8,
        "seed": 3,
    },
    "window": {"window_seconds": 0.2, "stride_frames": 3, "sma_len": 2},
    "templates_per_keyword": 2,
}


def run(args, config_path=None):
    full = []
    if config_path is not None:
        full += ["--config", str(config_path)]
    full += args
    return CliRunner().invoke(main, full, catch_exceptions=False)


@pytest.fixture()
def config_file(tmp_path):
    cfg = dict(TINY_CONFIG, workdir=str(tmp_path / "run"))
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path


def pipeline_artifacts(config_path):
    cfg = RunConfig.load(config_path)
    return cfg


class TestPipeline:
    def test_end_to_end_awe(self, config_file):
        for cmd in (["synth"], ["train"], ["embed"], ["search"], ["eval"]):
            result = run(cmd, config_file)
            assert result.exit_code == 0, result.output + str(result.stderr_bytes)
        cfg = pipeline_artifacts(config_file)
        assert cfg.model_path.exists()
        assert (cfg.embeddings_dir / "templates.awef").exists()
        report = json.loads(cfg.report_path.read_text())
        assert 0.0 <= report["map"] <= 1.0
        assert "config_hash" in report["provenance"]
        table = (cfg.report_path.parent / "metrics.txt").read_text()
        assert "all" in table

    def test_end_to_end_sdtw(self, config_file):
        run(["synth"], config_file)
        for args in (
            ["--system", "sdtw", "--fusion", "none", "search"],
            ["--system", "sdtw", "eval"],
        ):
            result = run(args, config_file)
            assert result.exit_code == 0, result.output + str(result.stderr_bytes)
        cfg = pipeline_artifacts(config_file)
        first = json.loads(cfg.results_path.read_text().splitlines()[0])
        assert first["system"] == "sdtw"

    def test_rerun_is_byte_identical(self, config_file):
        run(["synth"], config_file)
        run(["--system", "sdtw", "--fusion", "none", "search"], config_file)
        cfg = pipeline_artifacts(config_file)
        corpus_bytes = {
            p.name: p.read_bytes() for p in sorted(cfg.corpus_dir.iterdir())
        }
        results_bytes = cfg.results_path.read_bytes()
        run(["synth"], config_file)
        run(["--system", "sdtw", "--fusion", "none", "search"], config_file)
        assert {
            p.name: p.read_bytes() for p in sorted(cfg.corpus_dir.iterdir())
        } == corpus_bytes
        assert cfg.results_path.read_bytes() == results_bytes

    def test_dump_traces(self, config_file):
        run(["synth"], config_file)
        run(["train"], config_file)
        result = run(["search", "--dump-traces"], config_file)
        assert result.exit_code == 0
        cfg = pipeline_artifacts(config_file)
        assert list(cfg.traces_dir.glob("kw*_utt*.awef"))


class TestErrorHandling:
    def test_eval_before_search(self, config_file):
        run(["synth"], config_file)
        result = run(["eval"], config_file)
        assert result.exit_code == 2
        record = json.loads(result.stderr.strip().splitlines()[-1])
        assert record["error"] == "MissingArtifactError"
        assert "awekit search" in record["message"]

    def test_train_before_synth(self, tmp_path):
        result = run(["--workdir", str(tmp_path / "empty"), "train"])
        assert result.exit_code == 2
        record = json.loads(result.stderr.strip().splitlines()[-1])
        assert "awekit synth" in record["message"]

    def test_awe_with_wrong_fusion(self, config_file):
        run(["synth"], config_file)
        result = run(["--fusion", "none", "search"], config_file)
        assert result.exit_code == 2
        record = json.loads(result.stderr.strip().splitlines()[-1])
        assert record["error"] == "ValidationError"

    def test_invalid_config_json(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{nope")
        result = run(["synth"], bad)
        assert result.exit_code == 2

    def test_unknown_config_key(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"workdirr": "x"}))
        result = run(["synth"], bad)
        assert result.exit_code == 2
        record = json.loads(result.stderr.strip().splitlines()[-1])
        assert "workdirr" in record["message"]


class TestFeaturize:
    def write_wav(self, path, seconds=0.5, freq=440.0):
        sr = 16000
        t = np.arange(int(sr * seconds)) / sr
        data = (0.4 * np.sin(2 * np.pi * freq * t) * 32767).astype("<i2")
        with wave.open(str(path), "wb") as w:
            w.setnchannels(1)
            w.setsampwidth(2)
            w.setframerate(sr)
            w.writeframes(data.tobytes())

    def test_featurize_directory(self, tmp_path):
        wav_dir = tmp_path / "wavs"
        wav_dir.mkdir()
        self.write_wav(wav_dir / "a.wav")
        self.write_wav(wav_dir / "b.wav", freq=880.0)
        result = run(["--workdir", str(tmp_path / "run"), "featurize", str(wav_dir)])
        assert result.exit_code == 0, result.output
        manifest = json.loads(
            (tmp_path / "run" / "features" / "features_manifest.json").read_text()
        )
        assert [r["source"] for r in manifest["files"]] == ["a.wav", "b.wav"]
        assert all(r["cols"] == 64 for r in manifest["files"])
        assert (tmp_path / "run" / "features" / "a.awef").exists()

    def test_featurize_empty_dir(self, tmp_path):
        empty = tmp_path / "none"
        empty.mkdir()
        result = run(["--workdir", str(tmp_path / "run"), "featurize", str(empty)])
        assert result.exit_code == 2


class TestFlagOverrides:
    def test_seed_override_changes_corpus(self, tmp_path):
        cfg = dict(TINY_CONFIG, workdir=str(tmp_path / "a"))
        path = tmp_path / "c.json"
        path.write_text(json.dumps(cfg))
        run(["synth"], path)
        run(["--workdir", str(tmp_path / "b"), "--seed", "99", "synth"], path)
        a = sorted((tmp_path / "a" / "corpus").glob("*.awef"))[0]
        b = (tmp_path / "b" / "corpus") / a.name
        assert a.read_bytes() != b.read_bytes()

    def test_config_hash_stable_and_flag_sensitive(self, config_file):
        base = RunConfig.load(config_file)
        assert base.config_hash() == RunConfig.load(config_file).config_hash()
        import dataclasses

        changed = RunConfig.load(config_file)
        changed.model = dataclasses.replace(changed.model, alpha=0.0)
        assert changed.config_hash() != base.config_hash()
