"""Unimodal, bimodal, and trimodal sentiment models.

Each configured modality gets an intra-modal branch (input projection,
bidirectional LSTM, attention pooling) producing one pooled feature, and
every modality pair gets a fusion stack whose output is mean-pooled over
time. The prediction head consumes a concatenation of those features:

* one modality: the pooled branch feature (width d)
* two modalities: either the fused feature alone (width d) or the fused
  feature together with both branch features (width 3d)
* three modalities: all three branch features and all three fused pair
  features (width 6d)

The head is either a 3-way softmax classifier or a single regression
output. Forward passes are pure functions of the inputs given frozen
parameters; backward mutates gradient accumulators and needs exclusive
access per parameter set.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .fusion import FusionStack
from .layers import AttentionPool, BiLstm, Linear, MeanPool, add_positional, positional_table
from .ops import Rng, softmax_rows

MODALITIES = ("V", "A", "T")
PAIR_ORDER = (("V", "A"), ("V", "T"), ("A", "T"))


@dataclass
class ModelConfig:
    d: int = 128
    heads: int = 4
    blocks: int = 1
    seq_len: int = 32
    head: str = "classify3"      # "classify3" or "regress"
    modalities: str = "VAT"      # nonempty subset of V, A, T
    fusion: str = "integrated"   # bimodal head: "integrated" or "fused"
    dim_v: int = 16
    dim_a: int = 12
    dim_t: int = 20

    def __post_init__(self):
        mods = "".join(m for m in MODALITIES if m in set(self.modalities.upper()))
        if not mods or len(set(self.modalities.upper()) - set(MODALITIES)) > 0:
            raise ValueError(f"modalities must be a nonempty subset of VAT, got {self.modalities!r}")
        self.modalities = mods
        if self.d % self.heads != 0:
            raise ValueError(f"width {self.d} not divisible by {self.heads} heads")
        if self.d % 2 != 0:
            raise ValueError("width must be even for the bidirectional encoder")
        if self.seq_len < 1:
            raise ValueError("seq_len must be positive")
        if self.head not in ("classify3", "regress"):
            raise ValueError(f"unknown head mode {self.head!r}")
        if self.fusion not in ("integrated", "fused"):
            raise ValueError(f"unknown fusion mode {self.fusion!r}")

    def input_dim(self, modality: str) -> int:
        return {"V": self.dim_v, "A": self.dim_a, "T": self.dim_t}[modality]

    @property
    def pairs(self):
        mods = set(self.modalities)
        return [p for p in PAIR_ORDER if p[0] in mods and p[1] in mods]

    @property
    def head_width(self) -> int:
        n = len(self.modalities)
        if n == 1:
            return self.d
        if n == 2:
            return 3 * self.d if self.fusion == "integrated" else self.d
        return 6 * self.d


@dataclass
class BranchOutputs:
    f_v: np.ndarray | None = None
    f_a: np.ndarray | None = None
    f_t: np.ndarray | None = None
    f_va: np.ndarray | None = None
    f_vt: np.ndarray | None = None
    f_at: np.ndarray | None = None


@dataclass
class Prediction:
    mode: str
    probs: np.ndarray | None = None  # classify3: 3 probabilities, sum 1
    score: float | None = None       # regress: one continuous value


class SentimentModel:
    """The full trainable network for a given configuration and seed."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        rng = Rng(seed)
        d = config.d
        self.proj = {}
        self.encoder = {}
        self.pool = {}
        for m in config.modalities:
            self.proj[m] = Linear(config.input_dim(m), d, rng)
            self.encoder[m] = BiLstm(d, d, rng)
            self.pool[m] = AttentionPool(d, rng)
        self.pair_fusion = {}
        self.pair_pool = {}
        for x, y in config.pairs:
            self.pair_fusion[(x, y)] = FusionStack(d, config.heads, config.blocks, rng)
            self.pair_pool[(x, y)] = MeanPool()
        out_dim = 3 if config.head == "classify3" else 1
        self.head = Linear(config.head_width, out_dim, rng)
        self.pe = positional_table(config.seq_len, d)
        # head input layout: branch features first, then fused pair features
        self._head_parts = []
        n = len(config.modalities)
        if n == 1:
            self._head_parts = [("mod", config.modalities[0])]
        elif n == 2:
            pair = config.pairs[0]
            if config.fusion == "integrated":
                self._head_parts = [("mod", pair[0]), ("mod", pair[1]), ("pair", pair)]
            else:
                self._head_parts = [("pair", pair)]
        else:
            self._head_parts = [("mod", m) for m in config.modalities]
            self._head_parts += [("pair", p) for p in config.pairs]

    def _check_input(self, inputs, modality):
        try:
            x = inputs[modality]
        except KeyError:
            raise DataError(f"missing modality {modality}") from None
        want_dim = self.config.input_dim(modality)
        if x.ndim != 2 or x.shape[1] != want_dim:
            raise DataError(
                f"modality {modality}: expected [{self.config.seq_len}, {want_dim}] features, "
                f"got shape {tuple(x.shape)}"
            )
        if x.shape[0] != self.config.seq_len:
            raise DataError(
                f"modality {modality}: expected {self.config.seq_len} time steps, got {x.shape[0]}"
            )
        return x

    def forward(self, inputs: dict):
        cfg = self.config
        pooled = {}
        encoded_in = {}
        for m in cfg.modalities:
            x = self._check_input(inputs, m)
            p = self.proj[m].forward(x)
            pooled[m] = self.pool[m].forward(self.encoder[m].forward(p))
            encoded_in[m] = add_positional(p, self.pe)
        fused = {}
        for pair in cfg.pairs:
            out = self.pair_fusion[pair].forward(encoded_in[pair[0]], encoded_in[pair[1]])
            fused[pair] = self.pair_pool[pair].forward(out.fused)
        feats = np.concatenate(
            [pooled[k] if kind == "mod" else fused[k] for kind, k in self._head_parts]
        )
        z = self.head.forward(feats[None, :])
        if cfg.head == "classify3":
            pred = Prediction("classify3", probs=softmax_rows(z)[0])
        else:
            pred = Prediction("regress", score=float(z[0, 0]))
        outs = BranchOutputs()
        for m in cfg.modalities:
            setattr(outs, f"f_{m.lower()}", pooled[m])
        for (x, y), f in fused.items():
            setattr(outs, f"f_{x.lower()}{y.lower()}", f)
        return outs, pred

    def backward(self, d_head: np.ndarray) -> dict:
        """Propagate a gradient on the head output (logits or score) to all
        parameters; returns the gradient with respect to each input."""
        cfg = self.config
        d = cfg.d
        dfeats = self.head.backward(np.asarray(d_head, dtype=float)[None, :])[0]
        d_proj_out = {m: None for m in cfg.modalities}
        offset = 0
        d_pooled = {}
        d_fused = {}
        for kind, key in self._head_parts:
            part = dfeats[offset : offset + d]
            offset += d
            if kind == "mod":
                d_pooled[key] = part
            else:
                d_fused[key] = part
        for pair in reversed(cfg.pairs):
            if pair not in d_fused:
                continue
            dseq = self.pair_pool[pair].backward(d_fused[pair])
            da, db = self.pair_fusion[pair].backward(dseq)
            for m, dm in ((pair[0], da), (pair[1], db)):
                d_proj_out[m] = dm if d_proj_out[m] is None else d_proj_out[m] + dm
        dx = {}
        for m in cfg.modalities:
            denc = None
            if m in d_pooled:
                denc = self.encoder[m].backward(self.pool[m].backward(d_pooled[m]))
            total = d_proj_out[m]
            if denc is not None:
                total = denc if total is None else total + denc
            dx[m] = self.proj[m].backward(total)
        return dx

    def params(self):
        out = []
        for m in self.config.modalities:
            out += [(f"proj_{m.lower()}.{n}", p) for n, p in self.proj[m].params()]
            out += [(f"encoder_{m.lower()}.{n}", p) for n, p in self.encoder[m].params()]
            out += [(f"pool_{m.lower()}.{n}", p) for n, p in self.pool[m].params()]
        for (x, y) in self.config.pairs:
            prefix = f"pair_{x.lower()}{y.lower()}"
            out += [(f"{prefix}.{n}", p) for n, p in self.pair_fusion[(x, y)].params()]
        out += [(f"head.{n}", p) for n, p in self.head.params()]
        return out

    def zero_grad(self):
        for _, p in self.params():
            p.grad[...] = 0.0

    def load_state(self, arrays: dict):
        """Install parameter values from a checkpoint mapping, validating shapes."""
        own = dict(self.params())
        for name in arrays:
            if name not in own:
                raise DataError(f"checkpoint has unknown parameter {name}")
        for name, p in own.items():
            if name not in arrays:
                raise DataError(f"checkpoint is missing parameter {name}")
            value = arrays[name]
            if tuple(value.shape) != tuple(p.value.shape):
                raise DataError(
                    f"shape mismatch for parameter {name}: checkpoint has {tuple(value.shape)}, "
                    f"model expects {tuple(p.value.shape)}"
                )
            p.value[...] = value


def compute_loss(pred: Prediction, label):
    """Loss and its gradient with respect to the head output.

    classify3 pairs cross-entropy with the softmax head, so the returned
    gradient is with respect to the logits (probs - onehot). regress uses
    the L1 loss with subgradient sign(error), zero at an exact tie.
    """
    if pred.mode == "classify3":
        label = int(label)
        if not 0 <= label <= 2:
            raise ValueError(f"class label out of range: {label}")
        p = max(pred.probs[label], 1e-12)
        d_logits = pred.probs.copy()
        d_logits[label] -= 1.0
        return -float(np.log(p)), d_logits
    err = pred.score - float(label)
    return abs(err), np.array([float(np.sign(err))])


def predict(pred: Prediction):
    """classify3: argmax class (lowest index wins ties); regress: the score."""
    if pred.mode == "classify3":
        return int(np.argmax(pred.probs))
    return pred.score
