"""Command-line entry point.

Commands: ``train``, ``eval``, and ``tools mfcc|synth|gradcheck``. Runs are
configured by plain ``key=value`` lines in a file (``--config``) overridden
by repeatable ``--set key=value`` flags, last one wins. Exit codes are
stable for scripting: 0 success, 2 configuration error, 3 data error,
4 numeric failure.
"""

import argparse
import os
import sys
from pathlib import Path

from .errors import ConfigError, DataError, NumericError

_DEFAULTS = {
    # model
    "d": 128,
    "heads": 4,
    "blocks": 1,
    "seq_len": 32,
    "head": "classify3",
    "modalities": "VAT",
    "fusion": "integrated",
    "dim_v": 16,
    "dim_a": 12,
    "dim_t": 20,
    # training
    "epochs": 100,
    "batch": 64,
    "lr": 1e-5,
    "seed": 0,
    "shuffle": True,
    "grad_clip": 0.0,
    # files
    "features_v": "",
    "features_a": "",
    "features_t": "",
    "labels": "",
    "checkpoint": "model.ckpt",
    "history": "history.csv",
    "out": "",
    # mfcc
    "frame_len": 400,
    "hop": 160,
    "fft_size": 512,
    "n_filters": 26,
    "n_coeffs": 13,
    "log_floor": 1e-10,
}


def _coerce(key: str, raw: str):
    if key not in _DEFAULTS:
        raise ConfigError(f"unknown config key {key!r}")
    kind = type(_DEFAULTS[key])
    if kind is bool:
        lowered = raw.strip().lower()
        if lowered in ("true", "1", "yes", "on"):
            return True
        if lowered in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"config key {key!r} expects a boolean, got {raw!r}")
    try:
        return kind(raw.strip())
    except ValueError as exc:
        raise ConfigError(f"config key {key!r} expects {kind.__name__}, got {raw!r}") from exc


def _load_config(path, overrides, seed=None):
    cfg = dict(_DEFAULTS)
    if path:
        if not os.path.isfile(path):
            raise ConfigError(f"config file not found: {path}")
        with open(path) as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
                key, _, value = line.partition("=")
                cfg[key.strip()] = _coerce(key.strip(), value)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        cfg[key.strip()] = _coerce(key.strip(), value)
    if seed is not None:
        cfg["seed"] = seed
    return cfg


def _model_config(cfg):
    from .model import ModelConfig

    try:
        return ModelConfig(
            d=cfg["d"], heads=cfg["heads"], blocks=cfg["blocks"], seq_len=cfg["seq_len"],
            head=cfg["head"], modalities=cfg["modalities"], fusion=cfg["fusion"],
            dim_v=cfg["dim_v"], dim_a=cfg["dim_a"], dim_t=cfg["dim_t"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _require_path(cfg, key):
    path = cfg[key]
    if not path:
        raise ConfigError(f"config key {key!r} is required for this command")
    if not os.path.isfile(path):
        raise DataError(f"file not found: {path}")
    return path


def _load_dataset(cfg, model_cfg):
    from .data import SampleRecord, load_feature_file, load_labels

    labels = load_labels(_require_path(cfg, "labels"))
    features = {}
    for m in model_cfg.modalities:
        path = _require_path(cfg, f"features_{m.lower()}")
        modality, dim, seqs = load_feature_file(path)
        if modality != m:
            raise DataError(f"{path}: holds modality {modality}, expected {m}")
        if dim != model_cfg.input_dim(m):
            raise DataError(
                f"modality {m}: feature dim {dim} does not match configured "
                f"{model_cfg.input_dim(m)}"
            )
        features[m] = (path, seqs)
    records = []
    for sid in sorted(labels):
        score, label = labels[sid]
        per_mod = {}
        for m in model_cfg.modalities:
            path, seqs = features[m]
            if sid not in seqs:
                raise DataError(f"sample {sid} is missing from {path} (modality {m})")
            per_mod[m] = seqs[sid]
        records.append(SampleRecord(sid, per_mod, score, label))
    return records


def cmd_train(args) -> int:
    from .data import prepare_samples
    from .model import SentimentModel
    from .optim import Adam, TrainConfig, evaluate, save_checkpoint, train

    cfg = _load_config(args.config, args.set, args.seed)
    if args.out:
        cfg["checkpoint"] = args.out
    model_cfg = _model_config(cfg)
    records = _load_dataset(cfg, model_cfg)
    samples = prepare_samples(records, model_cfg)
    model = SentimentModel(model_cfg, seed=cfg["seed"])
    tc = TrainConfig(epochs=cfg["epochs"], batch=cfg["batch"], seed=cfg["seed"],
                     shuffle=cfg["shuffle"], grad_clip=cfg["grad_clip"])
    history = train(
        model, samples, tc, optimizer=Adam(lr=cfg["lr"]),
        on_epoch=lambda e, loss, acc: print(f"epoch {e}: loss {loss:.6f} acc {acc:.4f}"),
    )
    with open(cfg["history"], "w") as fh:
        fh.write("epoch,loss,acc\n")
        for epoch, loss, acc in history:
            fh.write(f"{epoch},{loss:.17g},{acc:.17g}\n")
    save_checkpoint(cfg["checkpoint"], model.params())
    print(f"checkpoint written to {cfg['checkpoint']}, history to {cfg['history']}")
    print(evaluate(model, samples).as_text())
    return 0


def cmd_eval(args) -> int:
    from .data import prepare_samples
    from .metrics import MetricReport
    from .model import SentimentModel
    from .optim import evaluate, load_checkpoint

    cfg = _load_config(args.config, args.set, args.seed)
    if args.out:
        cfg["out"] = args.out
    model_cfg = _model_config(cfg)
    model = SentimentModel(model_cfg, seed=cfg["seed"])
    model.load_state(load_checkpoint(_require_path(cfg, "checkpoint")))
    records = _load_dataset(cfg, model_cfg)
    report = evaluate(model, prepare_samples(records, model_cfg))
    print(report.as_text())
    if cfg["out"]:
        with open(cfg["out"], "w") as fh:
            fh.write(MetricReport.csv_header() + "\n" + report.as_csv_row() + "\n")
        print(f"metrics written to {cfg['out']}")
    return 0


def cmd_tools_mfcc(args) -> int:
    from .audio import MfccConfig, load_wav, mfcc
    from .data import FeatureSequence, write_feature_file

    cfg = _load_config(args.config, args.set)
    try:
        mfcc_cfg = MfccConfig(
            frame_len=cfg["frame_len"], hop=cfg["hop"], fft_size=cfg["fft_size"],
            n_filters=cfg["n_filters"], n_coeffs=cfg["n_coeffs"], log_floor=cfg["log_floor"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    audio = load_wav(args.input)
    features = mfcc(audio, mfcc_cfg)
    write_feature_file(args.output, {Path(args.input).stem: FeatureSequence("A", features)})
    print(f"{features.shape[0]} frames x {features.shape[1]} coefficients -> {args.output}")
    return 0


def cmd_tools_synth(args) -> int:
    from .data import synth_dataset, write_feature_file, write_labels

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_recs, test_recs = synth_dataset(args.seed, args.n)
    for split, records in (("train", train_recs), ("test", test_recs)):
        for m in "VAT":
            write_feature_file(
                out_dir / f"{split}_{m.lower()}.feat",
                {r.id: r.features[m] for r in records},
            )
        write_labels(out_dir / f"{split}.labels", {r.id: (r.score, r.label) for r in records})
    print(f"wrote {len(train_recs)} train / {len(test_recs)} test samples to {out_dir}")
    return 0


def cmd_tools_gradcheck(args) -> int:
    from .gradcheck import standard_checks

    results = standard_checks()
    for result in results:
        print(result)
    failed = [r for r in results if not r.passed]
    if failed:
        raise NumericError(f"{len(failed)} gradient check(s) exceeded tolerance")
    print(f"all {len(results)} checks passed")
    return 0


def _add_common(parser):
    parser.add_argument("--config", help="key=value configuration file")
    parser.add_argument("--set", action="append", metavar="K=V",
                        help="override one config key (repeatable, last wins)")
    parser.add_argument("--seed", type=int, help="override the seed config key")
    parser.add_argument("--out", help="override the output path")


def _parse_args(argv):
    parser = argparse.ArgumentParser(prog="mmsa", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model, writing checkpoint + history CSV")
    _add_common(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint, printing a metric report")
    _add_common(p)
    p.set_defaults(fn=cmd_eval)

    tools = sub.add_parser("tools", help="feature extraction and verification utilities")
    tsub = tools.add_subparsers(dest="tool", required=True)

    p = tsub.add_parser("mfcc", help="extract MFCC features from a WAV file")
    p.add_argument("input", help="input .wav (PCM mono 16-bit 16 kHz)")
    p.add_argument("output", help="output feature file (modality A)")
    p.add_argument("--config", help="key=value configuration file")
    p.add_argument("--set", action="append", metavar="K=V")
    p.set_defaults(fn=cmd_tools_mfcc)

    p = tsub.add_parser("synth", help="generate a synthetic train/test corpus")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=100, help="samples per class")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(fn=cmd_tools_synth)

    p = tsub.add_parser("gradcheck", help="run the gradient-check suite")
    p.set_defaults(fn=cmd_tools_gradcheck)

    return parser.parse_args(argv)


def main(argv=None) -> int:
    args = _parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 4


def entry():
    sys.exit(main())
