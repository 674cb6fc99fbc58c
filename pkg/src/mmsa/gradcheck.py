"""Central-difference verification of the analytic backward passes.

``grad_check`` compares every scalar of every leaf (parameters and inputs
alike) against a numerical derivative and reports the worst relative error.
``standard_checks`` builds one instance of each layer, the fusion block,
and the full models at small shapes and runs them all; it backs both the
test suite and the command-line verification tool.
"""

import numpy as np

from .fusion import FusionBranch, SymmetricFusionBlock
from .layers import (AttentionPool, BiLstm, FeedForward, LayerNorm, Linear,
                     MeanPool, MultiHeadAttention, Param, PointwiseConv1d,
                     add_positional)
from .model import ModelConfig, Prediction, SentimentModel, compute_loss
from .ops import Rng, rand_normal, softmax_rows


def grad_check(scalar_fn, grad_fn, leaves, step: float = 1e-5, on_leaf=None,
               per_leaf=None) -> float:
    """Worst relative error between analytic and numerical derivatives.

    ``scalar_fn(leaf_name)`` evaluates the scalar under test from the
    current leaf values (the name lets callers recompute only what that
    leaf can influence); ``grad_fn`` runs one forward/backward and must
    leave the analytic gradients in each leaf's ``grad``. Each coordinate
    is probed with a central difference of half-width 1e-5 * max(1, |value|),
    and the error for a coordinate is |a - n| / (max(|a|, |n|) + 1e-12).
    """
    for _, p in leaves:
        p.grad[...] = 0.0
    grad_fn()
    worst = 0.0
    for name, p in leaves:
        if on_leaf is not None:
            on_leaf(name)
        flat = p.value.reshape(-1)
        gflat = p.grad.reshape(-1)
        leaf_worst = 0.0
        for i in range(flat.size):
            orig = flat[i]
            h = step * max(1.0, abs(orig))
            flat[i] = orig + h
            f_plus = scalar_fn(name)
            flat[i] = orig - h
            f_minus = scalar_fn(name)
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            analytic = gflat[i]
            err = abs(analytic - numeric) / (max(abs(analytic), abs(numeric)) + 1e-12)
            if err > leaf_worst:
                leaf_worst = err
        if per_leaf is not None:
            per_leaf[name] = leaf_worst
        if leaf_worst > worst:
            worst = leaf_worst
    return worst


def nudge_ffn_preactivations(ffns, run_forward, margin: float = 1.5e-3):
    """Shift each FFN's first bias so no pre-activation sits near a ReLU kink.

    A central difference straddles the kink whenever a perturbation can move
    a pre-activation across zero, producing false check failures; bumping
    the bias moves the evaluation point away without changing what is being
    tested. ``run_forward`` must re-run the computation feeding the FFNs so
    their cached pre-activations are fresh.
    """
    for _ in range(10):
        run_forward()
        clean = True
        for ffn in ffns:
            too_close = np.abs(ffn._u) < margin
            if too_close.any():
                clean = False
                cols = np.where(too_close.any(axis=0))[0]
                ffn.b1.value[cols] += 2.5 * margin
        if clean:
            return


def check_single_input(layer, x: np.ndarray, seed: int = 0) -> float:
    """Gradient check for a layer with signature forward(x) / backward(up) -> dx."""
    rng = Rng(seed)
    x_leaf = Param(x)

    probe = None

    def scalar(_name):
        return float(np.sum(layer.forward(x_leaf.value) * probe))

    def grads():
        layer.forward(x_leaf.value)
        x_leaf.grad += layer.backward(probe)

    out = layer.forward(x_leaf.value)
    probe = rand_normal(rng, out.shape)
    leaves = [("x", x_leaf)] + list(layer.params())
    return grad_check(scalar, grads, leaves)


def check_pair_input(layer, x_tgt: np.ndarray, x_src: np.ndarray, seed: int = 0,
                     tie_inputs: bool = False) -> float:
    """Gradient check for forward(target, source) returning a pair gradient.

    With ``tie_inputs`` the same leaf feeds both arguments, exercising the
    self-attention path where the two input gradients must be summed.
    """
    rng = Rng(seed)
    t_leaf = Param(x_tgt)
    s_leaf = t_leaf if tie_inputs else Param(x_src)

    probe = None

    def scalar(_name):
        return float(np.sum(layer.forward(t_leaf.value, s_leaf.value) * probe))

    def grads():
        layer.forward(t_leaf.value, s_leaf.value)
        dt, ds = layer.backward(probe)
        t_leaf.grad += dt
        s_leaf.grad += ds

    out = layer.forward(t_leaf.value, s_leaf.value)
    probe = rand_normal(rng, out.shape)
    leaves = [("target", t_leaf)]
    if not tie_inputs:
        leaves.append(("source", s_leaf))
    leaves += list(layer.params())
    return grad_check(scalar, grads, leaves)


def check_fusion_block(block: SymmetricFusionBlock, x_a, x_b, seed: int = 0) -> float:
    rng = Rng(seed)
    a_leaf, b_leaf = Param(x_a), Param(x_b)
    nudge_ffn_preactivations(
        [block.left.ffn, block.right.ffn],
        lambda: block.forward(a_leaf.value, b_leaf.value),
    )

    probe = None

    def scalar(_name):
        return float(np.sum(block.forward(a_leaf.value, b_leaf.value).fused * probe))

    def grads():
        block.forward(a_leaf.value, b_leaf.value)
        da, db = block.backward(probe)
        a_leaf.grad += da
        b_leaf.grad += db

    out = block.forward(a_leaf.value, b_leaf.value)
    probe = rand_normal(rng, out.fused.shape)
    leaves = [("x_a", a_leaf), ("x_b", b_leaf)] + list(block.params())
    return grad_check(scalar, grads, leaves)


class _StagedLoss:
    """The model's training loss, recomputable stage by stage.

    The numeric side of a model check evaluates the loss twice per scalar;
    most of that work is untouched by any single perturbation. This helper
    caches per-stage results (projection, encoder+pooling, pair fusion) and
    recomputes only the stages a given leaf can influence, using the
    model's own layer objects so the value matches the plain forward pass
    bit for bit (asserted at setup with ``probe_dtype=None``).

    With ``probe_dtype`` set, each recomputed stage runs in that float type.
    Extended precision matters here: at step 1e-5 the smallest-gradient
    coordinates of a deep model fall below what a double-precision central
    difference can resolve (the quotient noise floor is about 1e-11), so
    the numeric oracle evaluates in long doubles while the analytic side
    stays plain float64.
    """

    def __init__(self, model: SentimentModel, input_leaves: dict, label, probe_dtype=None):
        self.model = model
        self.inputs = input_leaves
        self.label = label
        self.probe_dtype = probe_dtype
        self.pairs_of = {
            m: [p for p in model.config.pairs if m in p] for m in model.config.modalities
        }
        self.refresh()

    def _cast(self, x):
        if self.probe_dtype is None or x.dtype == self.probe_dtype:
            return x
        return x.astype(self.probe_dtype)

    def _stage_proj(self, m):
        p = self.model.proj[m].forward(self._cast(self.inputs[m].value))
        self.p[m] = p
        self.pe[m] = add_positional(p, self.model.pe)

    def _stage_encode(self, m):
        self.enc[m] = self.model.encoder[m].forward(self._cast(self.p[m]))

    def _stage_pool(self, m):
        self.pooled[m] = self.model.pool[m].forward(self._cast(self.enc[m]))

    def _single_block(self, pair):
        blocks = self.model.pair_fusion[pair].blocks
        return blocks[0] if len(blocks) == 1 else None

    def _stage_branch(self, pair, side):
        block = self._single_block(pair)
        pe_a, pe_b = self._cast(self.pe[pair[0]]), self._cast(self.pe[pair[1]])
        if side == "left":
            self.branch[(pair, "left")] = block.left.forward(pe_a, pe_b)
        else:
            self.branch[(pair, "right")] = block.right.forward(pe_b, pe_a)

    def _stage_fuse(self, pair):
        block = self._single_block(pair)
        cat = np.concatenate(
            [self._cast(self.branch[(pair, "left")]), self._cast(self.branch[(pair, "right")])],
            axis=1,
        )
        self.fused[pair] = self.model.pair_pool[pair].forward(block.fuse.forward(cat))

    def _stage_pair(self, pair):
        if self._single_block(pair) is not None:
            self._stage_branch(pair, "left")
            self._stage_branch(pair, "right")
            self._stage_fuse(pair)
            return
        out = self.model.pair_fusion[pair].forward(
            self._cast(self.pe[pair[0]]), self._cast(self.pe[pair[1]])
        )
        self.fused[pair] = self.model.pair_pool[pair].forward(out.fused)

    def refresh(self):
        """Recompute every stage cache in plain float64 (between leaves)."""
        probe, self.probe_dtype = self.probe_dtype, None
        self.p, self.pe, self.enc, self.pooled = {}, {}, {}, {}
        self.branch, self.fused = {}, {}
        for m in self.model.config.modalities:
            self._stage_proj(m)
            self._stage_encode(m)
            self._stage_pool(m)
        for pair in self.model.config.pairs:
            self._stage_pair(pair)
        self.probe_dtype = probe

    def loss(self, leaf_name: str):
        model = self.model
        group, _, rest = leaf_name.partition(".")
        if group.startswith("input_") or group.startswith("proj_"):
            m = group[-1].upper()
            self._stage_proj(m)
            self._stage_encode(m)
            self._stage_pool(m)
            for pair in self.pairs_of[m]:
                self._stage_pair(pair)
        elif group.startswith("encoder_"):
            m = group[-1].upper()
            self._stage_encode(m)
            self._stage_pool(m)
        elif group.startswith("pool_"):
            self._stage_pool(group[-1].upper())
        elif group.startswith("pair_"):
            pair = (group[-2].upper(), group[-1].upper())
            sub = rest.partition(".")[0]
            if sub in ("left", "right") and self._single_block(pair) is not None:
                self._stage_branch(pair, sub)
                self._stage_fuse(pair)
            elif sub == "fuse" and self._single_block(pair) is not None:
                self._stage_fuse(pair)
            else:
                self._stage_pair(pair)
        elif group != "head":
            raise ValueError(f"unknown leaf group for {leaf_name!r}")
        feats = self._cast(np.concatenate(
            [self.pooled[k] if kind == "mod" else self.fused[k]
             for kind, k in model._head_parts]
        ))
        z = model.head.forward(feats[None, :])
        if model.config.head == "classify3":
            probs = softmax_rows(z)[0]
            return -np.log(np.maximum(probs[int(self.label)], 1e-12))
        return np.abs(z[0, 0] - self.label)


def check_model(model: SentimentModel, inputs: dict, label,
                include_inputs: bool = True, per_leaf=None) -> float:
    """Gradient check of the training loss through a whole model."""
    leaves_in = {m: Param(x) for m, x in inputs.items()}
    current = lambda: {m: p.value for m, p in leaves_in.items()}
    nudge_ffn_preactivations(
        [getattr(block, side).ffn
         for stack in model.pair_fusion.values()
         for block in stack.blocks
         for side in ("left", "right")],
        lambda: model.forward(current()),
    )
    staged = _StagedLoss(model, leaves_in, label)

    _, pred = model.forward(current())
    full_loss = compute_loss(pred, label)[0]
    assert float(staged.loss("head.weight")) == full_loss, "staged loss diverged from forward"
    staged.probe_dtype = np.longdouble

    def grads():
        _, pred = model.forward(current())
        _, d_head = compute_loss(pred, label)
        dx = model.backward(d_head)
        for m, g in dx.items():
            leaves_in[m].grad += g

    leaves = list(model.params())
    if include_inputs:
        leaves += [(f"input_{m.lower()}", p) for m, p in leaves_in.items()]
    return grad_check(staged.loss, grads, leaves,
                      on_leaf=lambda _name: staged.refresh(), per_leaf=per_leaf)


class CheckResult:
    def __init__(self, name: str, error: float, tolerance: float):
        self.name = name
        self.error = error
        self.tolerance = tolerance

    @property
    def passed(self) -> bool:
        return self.error <= self.tolerance

    def __repr__(self):
        status = "ok" if self.passed else "FAIL"
        return f"{self.name:28s} {self.error:11.3e}  tol {self.tolerance:.0e}  {status}"


def standard_checks(full_model: bool = True) -> list:
    """Run the whole verification battery and return one result per check.

    ``full_model=False`` skips the largest model check (kept for quick
    smoke runs; the command-line tool always runs everything).
    """
    results = []
    rng = Rng(20240811)

    def add(name, tol, error):
        results.append(CheckResult(name, error, tol))

    x = rand_normal(rng, (5, 7))
    add("linear", 1e-6, check_single_input(Linear(7, 4, rng), x, seed=1))

    x = rand_normal(rng, (6, 10))
    add("pointwise_conv", 1e-6, check_single_input(PointwiseConv1d(10, 5, rng), x, seed=2))

    add("mean_pool", 1e-8, check_single_input(MeanPool(), rand_normal(rng, (7, 5)), seed=3))

    add("layer_norm", 1e-4, check_single_input(LayerNorm(), rand_normal(rng, (4, 9)), seed=4))
    add("layer_norm_affine", 1e-4,
        check_single_input(LayerNorm(affine=True, d=9), rand_normal(rng, (4, 9)), seed=5))

    ffn = FeedForward(6, rng)
    x = rand_normal(rng, (5, 6))
    nudge_ffn_preactivations([ffn], lambda: ffn.forward(x))
    add("feed_forward", 1e-4, check_single_input(ffn, x, seed=6))

    mha = MultiHeadAttention(8, 2, rng)
    add("self_attention", 1e-4,
        check_pair_input(mha, rand_normal(rng, (5, 8)), None, seed=7, tie_inputs=True))

    mha = MultiHeadAttention(8, 2, rng)
    add("cross_attention", 1e-4,
        check_pair_input(mha, rand_normal(rng, (5, 8)), rand_normal(rng, (5, 8)), seed=8))

    add("bilstm", 1e-4,
        check_single_input(BiLstm(3, 6, rng), rand_normal(rng, (4, 3)), seed=9))

    add("attention_pool", 1e-4,
        check_single_input(AttentionPool(6, rng), rand_normal(rng, (5, 6)), seed=10))

    branch = FusionBranch(8, 2, rng)
    xt, xs = rand_normal(rng, (6, 8)), rand_normal(rng, (6, 8))
    nudge_ffn_preactivations([branch.ffn], lambda: branch.forward(xt, xs))
    add("fusion_branch", 1e-4, check_pair_input(branch, xt, xs, seed=11))

    block = SymmetricFusionBlock(8, 2, rng)
    add("fusion_block", 1e-4,
        check_fusion_block(block, rand_normal(rng, (6, 8)), rand_normal(rng, (6, 8)), seed=12))

    def model_inputs(cfg, seed):
        r = Rng(seed)
        return {m: rand_normal(r, (cfg.seq_len, cfg.input_dim(m))) for m in cfg.modalities}

    cfg = ModelConfig(d=8, heads=2, seq_len=4, modalities="V", dim_v=3)
    add("model_unimodal", 1e-4,
        check_model(SentimentModel(cfg, seed=13), model_inputs(cfg, 14), label=1))

    cfg = ModelConfig(d=8, heads=2, seq_len=4, modalities="VA", fusion="fused",
                      dim_v=3, dim_a=2)
    add("model_bimodal_fused", 1e-4,
        check_model(SentimentModel(cfg, seed=15), model_inputs(cfg, 16), label=0))

    cfg = ModelConfig(d=8, heads=2, seq_len=4, modalities="VA", fusion="integrated",
                      dim_v=3, dim_a=2)
    add("model_bimodal_integrated", 1e-4,
        check_model(SentimentModel(cfg, seed=17), model_inputs(cfg, 18), label=2))

    cfg = ModelConfig(d=8, heads=2, seq_len=4, modalities="VA", fusion="fused",
                      dim_v=3, dim_a=2, head="regress")
    add("model_regress_head", 1e-4,
        check_model(SentimentModel(cfg, seed=19), model_inputs(cfg, 20), label=0.4))

    if full_model:
        cfg = ModelConfig(d=16, heads=4, seq_len=8, modalities="VAT",
                          dim_v=6, dim_a=5, dim_t=7)
        add("model_trimodal_full", 1e-4,
            check_model(SentimentModel(cfg, seed=21), model_inputs(cfg, 22), label=1))

    return results
