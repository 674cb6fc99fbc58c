"""Adam optimizer, mini-batch training loop, and checkpoint files.

The checkpoint format is plain text: a magic first line ``MMSA-CKPT v1``,
then two lines per parameter — ``<name> <rank> <dim...>`` followed by the
values, space-separated with 17 significant digits so doubles round-trip
bit for bit.
"""

from dataclasses import dataclass

import numpy as np

from . import metrics
from .errors import DataError, NumericError
from .model import compute_loss, predict
from .ops import Rng

CHECKPOINT_MAGIC = "MMSA-CKPT v1"


class Adam:
    """Adam with bias correction; default step size follows the training recipe."""

    def __init__(self, lr: float = 1e-5, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, named_params):
        """One update over (name, Param) pairs using their accumulated grads."""
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in named_params:
            g = p.grad
            if not np.isfinite(g).all():
                raise NumericError(f"non-finite gradient in {name}")
            if name not in self.m:
                self.m[name] = np.zeros_like(p.value)
                self.v[name] = np.zeros_like(p.value)
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.value -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


@dataclass
class TrainConfig:
    epochs: int = 100
    batch: int = 64
    seed: int = 0
    shuffle: bool = True
    grad_clip: float = 0.0  # 0 disables clipping

    def __post_init__(self):
        if self.epochs < 1 or self.batch < 1:
            raise ValueError("epochs and batch size must be at least 1")


def _clip_grads(named_params, max_norm: float):
    total = 0.0
    for _, p in named_params:
        total += float((p.grad * p.grad).sum())
    total = np.sqrt(total)
    if total > max_norm:
        scale = max_norm / total
        for _, p in named_params:
            p.grad *= scale


def _accuracy(head_mode, preds, labels):
    if head_mode == "classify3":
        return float(np.mean(np.asarray(preds) == np.asarray(labels)))
    # regress: seven-level accuracy, defined for any label values
    return metrics.acc_k(np.asarray(preds), np.asarray(labels), 7)


def train(model, samples, tc: TrainConfig, optimizer: Adam | None = None, on_epoch=None):
    """Train on (inputs, label) pairs; returns [(epoch, mean loss, accuracy)].

    Each epoch shuffles with its own deterministic stream, walks batches of
    at most ``tc.batch`` samples (the last batch may be short), averages the
    accumulated per-sample gradients, and takes one Adam step per batch.
    Loss and accuracy are recorded from the forward passes as the epoch
    runs, i.e. against the parameters the samples were actually seen with.
    """
    if not samples:
        raise DataError("empty dataset")
    opt = optimizer if optimizer is not None else Adam()
    named = model.params()
    order = list(range(len(samples)))
    rng = Rng(tc.seed)
    head_mode = model.config.head
    history = []
    for epoch in range(1, tc.epochs + 1):
        if tc.shuffle:
            rng.shuffle(order)
        losses = []
        preds = []
        labels = []
        for start in range(0, len(order), tc.batch):
            batch = order[start : start + tc.batch]
            model.zero_grad()
            for idx in batch:
                inputs, label = samples[idx]
                _, pred = model.forward(inputs)
                loss, d_head = compute_loss(pred, label)
                if not np.isfinite(loss):
                    raise NumericError(f"non-finite loss at epoch {epoch}")
                model.backward(d_head)
                losses.append(loss)
                preds.append(predict(pred))
                labels.append(label)
            inv = 1.0 / len(batch)
            for _, p in named:
                p.grad *= inv
            if tc.grad_clip > 0.0:
                _clip_grads(named, tc.grad_clip)
            opt.step(named)
        row = (epoch, float(np.mean(losses)), _accuracy(head_mode, preds, labels))
        history.append(row)
        if on_epoch is not None:
            on_epoch(*row)
    return history


def evaluate(model, samples) -> metrics.MetricReport:
    """Metrics over (inputs, label) pairs without touching any parameter.

    classify3 labels are class indices: the report carries the three-level
    accuracy and weighted F1. regress labels are continuous scores: the
    report carries MAE, Pearson correlation, and the binned accuracies.
    """
    preds = []
    labels = []
    for inputs, label in samples:
        _, pred = model.forward(inputs)
        preds.append(predict(pred))
        labels.append(label)
    preds = np.asarray(preds, dtype=float)
    labels = np.asarray(labels, dtype=float)
    if model.config.head == "classify3":
        return metrics.MetricReport(
            acc3=float(np.mean(preds == labels)),
            f1=metrics.f1_weighted(preds.astype(int), labels.astype(int), 3),
        )
    return metrics.MetricReport(
        acc2=metrics.acc_k(preds, labels, 2),
        acc3=metrics.acc_k(preds, labels, 3),
        acc5=metrics.acc_k(preds, labels, 5),
        acc7=metrics.acc_k(preds, labels, 7),
        mae=metrics.mae(preds, labels),
        corr=metrics.pearson_corr(preds, labels),
    )


def save_checkpoint(path, named_params):
    """Write (name, Param) pairs; exact round-trip via 17 significant digits."""
    lines = [CHECKPOINT_MAGIC]
    for name, p in named_params:
        value = p.value
        dims = " ".join(str(n) for n in value.shape)
        lines.append(f"{name} {value.ndim} {dims}")
        lines.append(" ".join(f"{x:.17g}" for x in value.reshape(-1)))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(path) -> dict:
    """Read a checkpoint into an ordered name -> array mapping."""
    try:
        with open(path) as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    if not lines or lines[0] != CHECKPOINT_MAGIC:
        raise DataError(f"bad magic in {path}: expected {CHECKPOINT_MAGIC!r}")
    arrays = {}
    i = 1
    while i < len(lines):
        if not lines[i].strip():
            i += 1
            continue
        header = lines[i].split()
        if len(header) < 2:
            raise DataError(f"{path}:{i + 1}: malformed parameter header")
        name = header[0]
        try:
            rank = int(header[1])
            dims = [int(x) for x in header[2:]]
        except ValueError as exc:
            raise DataError(f"{path}:{i + 1}: malformed parameter header") from exc
        if len(dims) != rank or rank < 1:
            raise DataError(f"{path}:{i + 1}: rank {rank} does not match dims {dims}")
        if i + 1 >= len(lines):
            raise DataError(f"{path}: truncated file, missing values for {name}")
        try:
            values = np.array([float(x) for x in lines[i + 1].split()])
        except ValueError as exc:
            raise DataError(f"{path}:{i + 2}: malformed value for {name}") from exc
        want = int(np.prod(dims))
        if values.size != want:
            raise DataError(
                f"{path}:{i + 2}: parameter {name} expects {want} values, got {values.size}"
            )
        if name in arrays:
            raise DataError(f"{path}: duplicate parameter {name}")
        arrays[name] = values.reshape(dims)
        i += 2
    return arrays
