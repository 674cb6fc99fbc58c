"""Command-line surface: wiring, exit codes, file outputs."""

import struct
import subprocess
import sys

import numpy as np
import pytest

from mmsa.data import load_feature_file, load_labels
from mmsa.optim import load_checkpoint


def run_cli(*args, cwd=None):
    return subprocess.run(
        [sys.executable, "-m", "mmsa", *map(str, args)],
        capture_output=True, text=True, cwd=cwd,
    )


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    """A small synthetic corpus written through the CLI itself."""
    out = tmp_path_factory.mktemp("corpus")
    result = run_cli("tools", "synth", "--seed", 3, "--n", 4, "--out", out)
    assert result.returncode == 0, result.stderr
    return out


def write_config(path, corpus, **overrides):
    cfg = {
        "d": 16, "heads": 4, "seq_len": 8,
        "epochs": 1, "batch": 8, "lr": 1e-3, "seed": 3,
        "features_v": corpus / "train_v.feat",
        "features_a": corpus / "train_a.feat",
        "features_t": corpus / "train_t.feat",
        "labels": corpus / "train.labels",
        "checkpoint": path.parent / "model.ckpt",
        "history": path.parent / "history.csv",
    }
    cfg.update(overrides)
    path.write_text("".join(f"{k}={v}\n" for k, v in cfg.items()))
    return cfg


class TestSynth:
    def test_writes_all_files(self, corpus):
        names = sorted(p.name for p in corpus.iterdir())
        assert names == ["test.labels", "test_a.feat", "test_t.feat", "test_v.feat",
                         "train.labels", "train_a.feat", "train_t.feat", "train_v.feat"]
        modality, dim, seqs = load_feature_file(corpus / "train_a.feat")
        assert modality == "A" and dim == 12
        labels = load_labels(corpus / "train.labels")
        assert set(labels) == set(seqs)


class TestTrain:
    def test_one_epoch_run(self, corpus, tmp_path):
        cfg = write_config(tmp_path / "run.cfg", corpus)
        result = run_cli("train", "--config", tmp_path / "run.cfg")
        assert result.returncode == 0, result.stderr
        lines = (tmp_path / "history.csv").read_text().splitlines()
        assert lines[0] == "epoch,loss,acc"
        assert len(lines) == 2
        assert load_checkpoint(cfg["checkpoint"])

    def test_set_overrides_epochs(self, corpus, tmp_path):
        write_config(tmp_path / "run.cfg", corpus)
        result = run_cli("train", "--config", tmp_path / "run.cfg", "--set", "epochs=2")
        assert result.returncode == 0, result.stderr
        assert len((tmp_path / "history.csv").read_text().splitlines()) == 3

    def test_bimodal_integrated_configuration(self, corpus, tmp_path):
        write_config(tmp_path / "run.cfg", corpus)
        result = run_cli("train", "--config", tmp_path / "run.cfg",
                         "--set", "modalities=VA", "--set", "fusion=integrated")
        assert result.returncode == 0, result.stderr

    def test_missing_label_file_exit_3(self, corpus, tmp_path):
        write_config(tmp_path / "run.cfg", corpus, labels=tmp_path / "nope.labels")
        result = run_cli("train", "--config", tmp_path / "run.cfg")
        assert result.returncode == 3
        assert "nope.labels" in result.stderr

    def test_unknown_key_exit_2(self, corpus, tmp_path):
        write_config(tmp_path / "run.cfg", corpus)
        result = run_cli("train", "--config", tmp_path / "run.cfg", "--set", "nope=1")
        assert result.returncode == 2
        assert "nope" in result.stderr

    def test_bad_value_exit_2(self, corpus, tmp_path):
        write_config(tmp_path / "run.cfg", corpus)
        result = run_cli("train", "--config", tmp_path / "run.cfg", "--set", "epochs=soon")
        assert result.returncode == 2

    def test_feature_dim_mismatch_exit_3_names_modality(self, corpus, tmp_path):
        write_config(tmp_path / "run.cfg", corpus, dim_v=10)
        result = run_cli("train", "--config", tmp_path / "run.cfg")
        assert result.returncode == 3
        assert "modality V" in result.stderr


@pytest.fixture(scope="module")
def trained(corpus, tmp_path_factory):
    work = tmp_path_factory.mktemp("trained")
    write_config(work / "run.cfg", corpus)
    result = run_cli("train", "--config", work / "run.cfg")
    assert result.returncode == 0, result.stderr
    return work


class TestEval:
    def test_eval_is_deterministic(self, corpus, trained):
        runs = [run_cli("eval", "--config", trained / "run.cfg") for _ in range(2)]
        assert runs[0].returncode == 0, runs[0].stderr
        assert runs[0].stdout == runs[1].stdout

    def test_classifier_report_fields(self, trained):
        result = run_cli("eval", "--config", trained / "run.cfg")
        assert "acc3:" in result.stdout and "f1:" in result.stdout
        assert "mae" not in result.stdout and "corr" not in result.stdout

    def test_metrics_csv_written(self, trained, tmp_path):
        out = tmp_path / "metrics.csv"
        result = run_cli("eval", "--config", trained / "run.cfg", "--out", out)
        assert result.returncode == 0
        header, row = out.read_text().splitlines()
        assert header == "acc2,acc3,acc5,acc7,f1,mae,corr"
        assert row.count(",") == header.count(",")

    def test_regress_report_fields(self, corpus, tmp_path):
        write_config(tmp_path / "run.cfg", corpus, head="regress")
        result = run_cli("train", "--config", tmp_path / "run.cfg")
        assert result.returncode == 0, result.stderr
        result = run_cli("eval", "--config", tmp_path / "run.cfg")
        assert result.returncode == 0, result.stderr
        for field in ("acc2:", "acc3:", "acc5:", "acc7:", "mae:", "corr:"):
            assert field in result.stdout
        assert "f1" not in result.stdout

    def test_missing_checkpoint_exit_3(self, corpus, tmp_path):
        write_config(tmp_path / "run.cfg", corpus, checkpoint=tmp_path / "none.ckpt")
        result = run_cli("eval", "--config", tmp_path / "run.cfg")
        assert result.returncode == 3
        assert "none.ckpt" in result.stderr


class TestMfccTool:
    def test_silence_gives_constant_rows(self, tmp_path):
        payload = struct.pack("<1600h", *([0] * 1600))
        fmt = struct.pack("<HHIIHH", 1, 1, 16000, 32000, 2, 16)
        body = b"fmt " + struct.pack("<I", 16) + fmt
        body += b"data" + struct.pack("<I", len(payload)) + payload
        wav = b"RIFF" + struct.pack("<I", 4 + len(body)) + b"WAVE" + body
        (tmp_path / "silence.wav").write_bytes(wav)

        result = run_cli("tools", "mfcc", tmp_path / "silence.wav", tmp_path / "out.feat")
        assert result.returncode == 0, result.stderr
        modality, dim, seqs = load_feature_file(tmp_path / "out.feat")
        assert modality == "A" and dim == 13
        values = seqs["silence"].values
        assert values.shape == (8, 13)
        assert np.max(np.abs(values - values[0])) == 0.0

    def test_unreadable_wav_exit_3(self, tmp_path):
        (tmp_path / "junk.wav").write_bytes(b"not audio")
        result = run_cli("tools", "mfcc", tmp_path / "junk.wav", tmp_path / "out.feat")
        assert result.returncode == 3
