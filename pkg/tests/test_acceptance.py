"""Acceptance criteria. Run with ``pytest tests/test_acceptance.py -s``
to see one [PASS]/[FAIL] line per criterion.

The training criterion replays the synthetic experiment end to end, so this
module takes a few minutes; everything else is property checks against
independent oracles.
"""

import struct
import subprocess
import sys
import time

import numpy as np
import pytest

import mmsa
from mmsa.data import prepare_samples, synth_dataset
from mmsa.gradcheck import check_pair_input
from mmsa.layers import FeedForward, MultiHeadAttention
from mmsa.model import ModelConfig, SentimentModel
from mmsa.ops import Rng, rand_normal
from mmsa.optim import Adam, TrainConfig, evaluate, load_checkpoint, save_checkpoint, train


class criterion:
    def __init__(self, number, summary):
        self.line = f"criterion {number}: {summary}"

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        status = "PASS" if exc_type is None else "FAIL"
        print(f"[{status}] {self.line}")
        return False


def run_cli(*args, cwd=None):
    return subprocess.run(
        [sys.executable, "-m", "mmsa", *map(str, args)],
        capture_output=True, text=True, cwd=cwd,
    )


def _rand(shape, seed):
    return rand_normal(Rng(seed), shape)


# --------------------------------------------------------------------------
# 1. gradient checks


def test_criterion_1_gradient_checks():
    with criterion(1, "all layers, fusion blocks, and the full trimodal model "
                      "pass central-difference checks under 60 s"):
        start = time.perf_counter()
        result = run_cli("tools", "gradcheck")
        elapsed = time.perf_counter() - start
        assert result.returncode == 0, result.stdout + result.stderr
        rows = [line for line in result.stdout.splitlines() if "tol" in line]
        assert len(rows) == 17
        assert all("ok" in row for row in rows)
        assert "model_trimodal_full" in result.stdout
        assert elapsed < 60.0, f"gradient-check suite took {elapsed:.1f} s"


# --------------------------------------------------------------------------
# 2. attention invariants


def test_criterion_2_attention_invariants():
    with criterion(2, "attention rows are stochastic; cross==self on tied inputs; "
                      "attention+FFN is permutation-equivariant without positions"):
        matrices = 0
        rng = Rng(202)
        for i in range(125):
            mha = MultiHeadAttention(8, 4, rng)
            scale = 1e3 if i % 25 == 0 else 1.0
            h = _rand((6, 8), 1000 + i) * scale
            src = _rand((6, 8), 2000 + i) * scale
            mha.forward(h, src)
            sums = mha.last_attention.sum(axis=-1)
            assert np.max(np.abs(sums - 1.0)) <= 1e-12
            matrices += mha.last_attention.shape[0]

            mha.forward(h, h)
            tied = mha.last_attention.copy()
            out_self = mha.forward(h, h.copy())
            assert np.array_equal(tied, mha.last_attention)
            assert np.max(np.abs(out_self - mha.forward(h, h))) <= 1e-15
            sums = mha.last_attention.sum(axis=-1)
            assert np.max(np.abs(sums - 1.0)) <= 1e-12
            matrices += mha.last_attention.shape[0]
        assert matrices >= 1000

        perm_rng = np.random.default_rng(7)
        for i in range(20):
            rng_i = Rng(3000 + i)
            mha = MultiHeadAttention(8, 2, rng_i)
            ffn = FeedForward(8, rng_i)
            h = _rand((7, 8), 4000 + i)
            perm = perm_rng.permutation(7)
            direct = ffn.forward(mha.forward(h, h))[perm]
            permuted = ffn.forward(mha.forward(h[perm], h[perm]))
            assert np.max(np.abs(direct - permuted)) <= 1e-9


# --------------------------------------------------------------------------
# 3. fusion mirror symmetry


def test_criterion_3_mirror_symmetry():
    with criterion(3, "swapping inputs, branch parameters, and kernel halves "
                      "reproduces the fused output on 100 random instances"):
        d = 8
        for i in range(100):
            block = mmsa.SymmetricFusionBlock(d, 2, Rng(500 + i))
            mirror = mmsa.SymmetricFusionBlock(d, 2, Rng(10_500 + i))
            for (_, p), (_, q) in zip(mirror.left.params(), block.right.params()):
                p.value[...] = q.value
            for (_, p), (_, q) in zip(mirror.right.params(), block.left.params()):
                p.value[...] = q.value
            mirror.fuse.weight.value[:d] = block.fuse.weight.value[d:]
            mirror.fuse.weight.value[d:] = block.fuse.weight.value[:d]
            mirror.fuse.bias.value[...] = block.fuse.bias.value
            a, b = _rand((5, d), 600 + i), _rand((5, d), 700 + i)
            direct = block.forward(a, b).fused
            swapped = mirror.forward(b, a).fused
            assert np.max(np.abs(direct - swapped)) <= 1e-12


# --------------------------------------------------------------------------
# 4. MFCC oracles


def test_criterion_4_mfcc_oracles():
    with criterion(4, "FFT matches the direct DFT; Parseval holds; a 1 kHz tone "
                      "lands in its mel filter; the pipeline matches a reference"):
        gen = np.random.default_rng(11)
        for _ in range(100):
            x = gen.standard_normal(512)
            got = mmsa.radix2_fft(x)
            k = np.arange(512)
            want = x @ np.exp(-2j * np.pi * np.outer(k, k) / 512.0).T
            assert np.max(np.abs(got - want)) / np.max(np.abs(want)) <= 1e-8
            time_e = float(np.sum(x * x))
            freq_e = float(np.sum(np.abs(got) ** 2) / 512.0)
            assert abs(time_e - freq_e) / time_e <= 1e-8

        cfg = mmsa.MfccConfig()
        fb = mmsa.mel_filterbank(cfg)
        t = np.arange(16000) / 16000.0
        tone = mmsa.PcmAudio(0.6 * np.sin(2.0 * np.pi * 1000.0 * t))
        frames = mmsa.frame_and_window(tone, cfg)
        energies = (mmsa.fft_magnitude(frames, cfg.fft_size) @ fb.T).mean(axis=0)
        khz_bin = round(1000.0 * cfg.fft_size / 16000.0)
        expected_filter = int(np.argmax(fb[:, khz_bin]))
        assert int(np.argmax(energies)) == expected_filter

        got = mmsa.mfcc(tone, cfg)
        window = 0.54 - 0.46 * np.cos(2 * np.pi * np.arange(400) / 399.0)
        ref_frames = np.array(
            [tone.samples[s : s + 400] for s in range(0, 16000 - 400 + 1, 160)]
        ) * window
        power = np.abs(np.fft.rfft(ref_frames, 512)) ** 2 / 512.0
        mels = np.linspace(0.0, 2595.0 * np.log10(1.0 + 8000.0 / 700.0), 28)
        bins = np.floor(513.0 * (700.0 * (10.0 ** (mels / 2595.0) - 1.0)) / 16000.0).astype(int)
        ref_fb = np.zeros((26, 257))
        for j in range(26):
            for i in range(bins[j], bins[j + 1]):
                ref_fb[j, i] = (i - bins[j]) / (bins[j + 1] - bins[j])
            for i in range(bins[j + 1], bins[j + 2]):
                ref_fb[j, i] = (bins[j + 2] - i) / (bins[j + 2] - bins[j + 1])
        loge = np.log(np.maximum(power @ ref_fb.T, 1e-10))
        kk = np.arange(13)[:, None]
        nn = np.arange(26)[None, :]
        ref_dct = np.sqrt(2.0 / 26.0) * np.cos(np.pi * kk * (2 * nn + 1) / 52.0)
        ref_dct[0] = np.sqrt(1.0 / 26.0)
        want = loge @ ref_dct.T
        assert np.max(np.abs(got - want)) / np.max(np.abs(want)) <= 1e-8


# --------------------------------------------------------------------------
# 5. WAV parser fixtures


def _wav(samples, channels=1, rate=16000, pre_data=b""):
    payload = struct.pack(f"<{len(samples)}h", *samples)
    fmt = struct.pack("<HHIIHH", 1, channels, rate, rate * channels * 2, channels * 2, 16)
    body = b"fmt " + struct.pack("<I", 16) + fmt + pre_data
    body += b"data" + struct.pack("<I", len(payload)) + payload
    return b"RIFF" + struct.pack("<I", 4 + len(body)) + b"WAVE" + body


def test_criterion_5_wav_parser():
    with criterion(5, "hand-built WAV fixtures decode or fail exactly as specified"):
        audio = mmsa.parse_wav(_wav([0, 16384]))
        assert audio.samples[1] == 0.5 and audio.samples[0] == 0.0
        assert audio.rate == 16000

        extra = b"LIST" + struct.pack("<I", 6) + b"INFOxy"
        with_list = mmsa.parse_wav(_wav([9, -9], pre_data=extra))
        assert np.array_equal(with_list.samples, mmsa.parse_wav(_wav([9, -9])).samples)

        with pytest.raises(mmsa.DataError, match="channels"):
            mmsa.parse_wav(_wav([0, 0], channels=2))

        with pytest.raises(mmsa.DataError, match="truncated"):
            mmsa.parse_wav(_wav([1, 2, 3, 4])[:-5])

        with pytest.raises(mmsa.DataError, match="magic"):
            mmsa.parse_wav(b"RIFFxxxxWOOF")


# --------------------------------------------------------------------------
# 6. metrics oracles


def test_criterion_6_metric_oracles():
    with criterion(6, "binned accuracies, weighted F1, MAE, and correlation match "
                      "brute-force oracles on 1000 random instances"):
        gen = np.random.default_rng(21)

        def bin_oracle(x, k):
            out = []
            for v in x:
                if k == 3:
                    out.append(-1 if v <= -0.1 else (0 if v < 0.1 else 1))
                else:
                    lim = 2.0 if k == 5 else 3.0
                    v = min(max(v, -lim), lim)
                    out.append(int(np.sign(v) * np.floor(abs(v) + 0.5)))
            return out

        for _ in range(1000):
            n = int(gen.integers(2, 30))
            preds = gen.standard_normal(n) * 2.0
            labels = gen.standard_normal(n) * 2.0

            keep = labels != 0.0
            want2 = float(np.mean(np.sign(preds[keep]) == np.sign(labels[keep])))
            assert abs(mmsa.acc_k(preds, labels, 2) - want2) <= 1e-12
            for k in (3, 5, 7):
                want = float(np.mean(
                    np.array(bin_oracle(preds, k)) == np.array(bin_oracle(labels, k))
                ))
                assert abs(mmsa.acc_k(preds, labels, k) - want) <= 1e-12

            assert abs(mmsa.mae(preds, labels)
                       - sum(abs(a - b) for a, b in zip(preds, labels)) / n) <= 1e-12
            assert abs(mmsa.pearson_corr(preds, labels)
                       - np.corrcoef(preds, labels)[0, 1]) <= 1e-12

            pc = gen.integers(0, 3, n)
            lc = gen.integers(0, 3, n)
            total = 0.0
            for c in range(3):
                tp = int(np.sum((pc == c) & (lc == c)))
                fp = int(np.sum((pc == c) & (lc != c)))
                fn = int(np.sum((pc != c) & (lc == c)))
                denom = 2 * tp + fp + fn
                f1 = 2.0 * tp / denom if denom else 0.0
                total += f1 * (tp + fn) / n
            assert abs(mmsa.f1_weighted(pc, lc, 3) - total) <= 1e-12

        fixture = mmsa.f1_weighted([1, 1, 0, 1, 0, 0], [1, 1, 1, 0, 0, 0], 2)
        assert abs(fixture - 2.0 / 3.0) <= 1e-12


# --------------------------------------------------------------------------
# 7. synthetic training experiment


@pytest.fixture(scope="module")
def synthetic_corpus():
    return synth_dataset(7, 100)


def test_criterion_7_synthetic_experiment(synthetic_corpus):
    train_recs, test_recs = synthetic_corpus
    with criterion(7, "trimodal training on the synthetic corpus reaches 0.95 train / "
                      "0.90 test accuracy in under five minutes"):
        start = time.perf_counter()
        cfg = ModelConfig()  # defaults: d=128, heads=4, one block, T=32
        model = SentimentModel(cfg, seed=7)
        tr = prepare_samples(train_recs, cfg)
        te = prepare_samples(test_recs, cfg)
        train(model, tr, TrainConfig(epochs=12, batch=64, seed=7), optimizer=Adam(lr=1e-3))
        elapsed = time.perf_counter() - start
        train_acc = evaluate(model, tr).acc3
        test_acc = evaluate(model, te).acc3
        assert train_acc >= 0.95, f"train accuracy {train_acc}"
        assert test_acc >= 0.90, f"test accuracy {test_acc}"
        assert elapsed < 300.0, f"experiment took {elapsed:.0f} s"


def test_criterion_7b_bimodal_ordering(synthetic_corpus):
    train_recs, test_recs = synthetic_corpus
    with criterion(7, "integrated bimodal heads beat or match fused-only heads "
                      "on at least 2 of 3 modality pairs"):
        wins = 0
        for pair in ("VA", "VT", "AT"):
            accs = {}
            for mode in ("integrated", "fused"):
                cfg = ModelConfig(modalities=pair, fusion=mode)
                model = SentimentModel(cfg, seed=7)
                tr = prepare_samples(train_recs, cfg)
                te = prepare_samples(test_recs, cfg)
                train(model, tr, TrainConfig(epochs=8, batch=64, seed=7),
                      optimizer=Adam(lr=1e-3))
                accs[mode] = evaluate(model, te).acc3
            wins += accs["integrated"] >= accs["fused"]
        assert wins >= 2, f"integrated won only {wins} of 3 pairs"


# --------------------------------------------------------------------------
# 8. training determinism


def test_criterion_8_training_determinism(tmp_path):
    with criterion(8, "two identical train commands produce byte-identical "
                      "history CSVs and checkpoints"):
        corpus = tmp_path / "corpus"
        result = run_cli("tools", "synth", "--seed", 5, "--n", 4, "--out", corpus)
        assert result.returncode == 0, result.stderr
        outputs = []
        for name in ("one", "two"):
            work = tmp_path / name
            work.mkdir()
            config = work / "run.cfg"
            config.write_text(
                "d=16\nheads=4\nseq_len=8\nepochs=2\nbatch=8\nlr=0.001\nseed=5\n"
                f"features_v={corpus / 'train_v.feat'}\n"
                f"features_a={corpus / 'train_a.feat'}\n"
                f"features_t={corpus / 'train_t.feat'}\n"
                f"labels={corpus / 'train.labels'}\n"
                f"checkpoint={work / 'model.ckpt'}\n"
                f"history={work / 'history.csv'}\n"
            )
            result = run_cli("train", "--config", config)
            assert result.returncode == 0, result.stderr
            outputs.append((
                (work / "history.csv").read_bytes(),
                (work / "model.ckpt").read_bytes(),
            ))
        assert outputs[0][0] == outputs[1][0], "history files differ"
        assert outputs[0][1] == outputs[1][1], "checkpoints differ"


# --------------------------------------------------------------------------
# 9. round trips


def test_criterion_9_round_trips(tmp_path):
    with criterion(9, "feature, label, and checkpoint files round-trip exactly; "
                      "resampling is idempotent at the target length"):
        rng = Rng(90)
        seqs = {
            f"s{i}": mmsa.FeatureSequence("T", rand_normal(rng, (3 + 7 * i, 5)) * 10.0**i)
            for i in range(4)
        }
        mmsa.write_feature_file(tmp_path / "t.feat", seqs)
        _, _, loaded = mmsa.load_feature_file(tmp_path / "t.feat")
        for sid, seq in seqs.items():
            assert np.array_equal(loaded[sid].values, seq.values)

        labels = {"a": (0.123456789012345678, 0), "b": (-2.5e-7, 2), "c": (3.0, 1)}
        mmsa.write_labels(tmp_path / "t.labels", labels)
        assert mmsa.load_labels(tmp_path / "t.labels") == labels

        model = SentimentModel(
            ModelConfig(d=8, heads=2, seq_len=4, modalities="VA", dim_v=3, dim_a=2),
            seed=91,
        )
        save_checkpoint(tmp_path / "m.ckpt", model.params())
        arrays = load_checkpoint(tmp_path / "m.ckpt")
        for name, p in model.params():
            assert np.array_equal(arrays[name], p.value), name

        for length in (1, 5, 31, 32, 33, 64, 100):
            seq = mmsa.FeatureSequence("V", rand_normal(rng, (length, 4)))
            once = mmsa.resample_to_length(seq, 32)
            assert once.length == 32
            twice = mmsa.resample_to_length(once, 32)
            assert np.array_equal(once.values, twice.values)
