"""Neural layers, each with a forward pass and an exact analytic backward pass.

Protocol shared by every layer here: ``forward`` caches what the backward
pass needs, ``backward`` takes an upstream gradient shaped like the output,
accumulates parameter gradients in place (``Param.grad``) and returns the
gradient with respect to the input(s). One instance therefore serves one
call site, and ``backward`` is only valid right after the matching
``forward``. Parameters are shared read-only across concurrent forwards;
backward needs exclusive access to the gradient buffers.
"""

import numpy as np

from .ops import Rng, rand_uniform


class Param:
    """A trainable array paired with a gradient accumulator of the same shape."""

    __slots__ = ("value", "grad")

    def __init__(self, value):
        self.value = np.ascontiguousarray(value, dtype=float)
        self.grad = np.zeros_like(self.value)


def glorot(rng: Rng, shape) -> np.ndarray:
    """Uniform init in +-sqrt(6 / (fan_in + fan_out)) for the trailing matrix dims."""
    if len(shape) == 1:
        fan_in, fan_out = shape[0], 1
    else:
        fan_in, fan_out = shape[-2], shape[-1]
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rand_uniform(rng, shape, -limit, limit)


class Linear:
    """y = x @ W + b over a [T, d_in] input."""

    def __init__(self, d_in: int, d_out: int, rng: Rng):
        self.weight = Param(glorot(rng, (d_in, d_out)))
        self.bias = Param(np.zeros(d_out))

    def forward(self, x):
        self._x = x
        return x @ self.weight.value + self.bias.value

    def backward(self, up):
        self.weight.grad += self._x.T @ up
        self.bias.grad += up.sum(axis=0)
        return up @ self.weight.value.T

    def params(self):
        return [("weight", self.weight), ("bias", self.bias)]


class PointwiseConv1d(Linear):
    """Kernel-size-1 convolution over time.

    Each time step's channel vector is mapped through the same [C_in, C_out]
    kernel plus bias, so the sequence length is preserved and the math is a
    per-step channel mix.
    """


class LayerNorm:
    """Per-row standardization y = (x - mean) / sqrt(var + eps).

    No learnable scale or shift by default; pass ``affine=True`` (with the
    feature width) to add them.
    """

    def __init__(self, eps: float = 1e-5, affine: bool = False, d: int | None = None):
        self.eps = eps
        self.affine = affine
        if affine:
            if d is None:
                raise ValueError("affine layer norm needs the feature width d")
            self.gamma = Param(np.ones(d))
            self.beta = Param(np.zeros(d))

    def forward(self, x):
        inv_d = 1.0 / x.shape[1]
        mu = x.sum(axis=1, keepdims=True) * inv_d
        xc = x - mu
        var = (xc * xc).sum(axis=1, keepdims=True) * inv_d
        self._inv_d = inv_d
        self._inv = 1.0 / np.sqrt(var + self.eps)
        self._y = xc * self._inv
        if self.affine:
            return self._y * self.gamma.value + self.beta.value
        return self._y

    def backward(self, up):
        y = self._y
        if self.affine:
            self.gamma.grad += (up * y).sum(axis=0)
            self.beta.grad += up.sum(axis=0)
            up = up * self.gamma.value
        # d/dx of (x - mu) * inv with inv depending on x through the variance
        return self._inv * (
            up
            - up.sum(axis=1, keepdims=True) * self._inv_d
            - y * (up * y).sum(axis=1, keepdims=True) * self._inv_d
        )

    def params(self):
        if self.affine:
            return [("gamma", self.gamma), ("beta", self.beta)]
        return []


def positional_table(t_max: int, d: int) -> np.ndarray:
    """Sinusoidal position table: sin on even columns, cos on odd, base 10000."""
    pos = np.arange(t_max, dtype=float)[:, None]
    pe = np.zeros((t_max, d))
    even = np.arange(0, d, 2)
    div = np.power(10000.0, even / d)
    pe[:, even] = np.sin(pos / div)
    odd = even + 1
    odd = odd[odd < d]
    pe[:, odd] = np.cos(pos / div[: odd.size])
    return pe


def add_positional(x: np.ndarray, pe: np.ndarray) -> np.ndarray:
    """x + pe[0..T]; gradient passes through unchanged."""
    t = x.shape[0]
    if t > pe.shape[0]:
        raise ValueError(f"sequence too long: {t} > table size {pe.shape[0]}")
    return x + pe[:t]


class MultiHeadAttention:
    """Scaled dot-product attention over h heads with an output projection.

    Queries come from ``target``, keys and values from ``source``; passing
    the same array for both is plain self-attention, so the cross and self
    flavours share one code path. ``last_attention`` keeps the per-head
    weight matrices of the most recent forward for inspection.
    """

    def __init__(self, d: int, heads: int, rng: Rng):
        if d % heads != 0:
            raise ValueError(f"width {d} not divisible by {heads} heads")
        self.d = d
        self.h = heads
        self.dk = d // heads
        self.scale = 1.0 / np.sqrt(self.dk)
        self.w_q = Param(glorot(rng, (d, d)))
        self.w_k = Param(glorot(rng, (d, d)))
        self.w_v = Param(glorot(rng, (d, d)))
        self.w_o = Param(glorot(rng, (d, d)))
        self.last_attention = None

    def forward(self, target, source, mask=None):
        t = target.shape[0]
        if target.shape[1] != self.d or source.shape[1] != self.d:
            raise ValueError(
                f"attention width mismatch: inputs {target.shape} / {source.shape}, d={self.d}"
            )
        if source.shape[0] != t:
            raise ValueError(
                f"length mismatch: target has {t} steps, source {source.shape[0]}"
            )
        h, dk = self.h, self.dk
        q = target @ self.w_q.value
        k = source @ self.w_k.value
        v = source @ self.w_v.value
        qh = q.reshape(t, h, dk).transpose(1, 0, 2)
        kh = k.reshape(t, h, dk).transpose(1, 0, 2)
        vh = v.reshape(t, h, dk).transpose(1, 0, 2)
        scores = (qh @ kh.transpose(0, 2, 1)) * self.scale
        if mask is not None:
            scores = np.where(mask[None, None, :], scores, -1e30)
        shifted = scores - scores.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        attn = e / e.sum(axis=-1, keepdims=True)
        ctx = (attn @ vh).transpose(1, 0, 2).reshape(t, self.d)
        self._cache = (target, source, qh, kh, vh, attn, ctx)
        self.last_attention = attn
        return ctx @ self.w_o.value

    def backward(self, up):
        target, source, qh, kh, vh, attn, ctx = self._cache
        t = target.shape[0]
        h, dk = self.h, self.dk
        self.w_o.grad += ctx.T @ up
        dctx = (up @ self.w_o.value.T).reshape(t, h, dk).transpose(1, 0, 2)
        dattn = dctx @ vh.transpose(0, 2, 1)
        dvh = attn.transpose(0, 2, 1) @ dctx
        # softmax backward folded with the 1/sqrt(dk) scale on the scores
        dscores = attn * (dattn - (dattn * attn).sum(axis=-1, keepdims=True)) * self.scale
        dqh = dscores @ kh
        dkh = dscores.transpose(0, 2, 1) @ qh
        dq = dqh.transpose(1, 0, 2).reshape(t, self.d)
        dk_ = dkh.transpose(1, 0, 2).reshape(t, self.d)
        dv = dvh.transpose(1, 0, 2).reshape(t, self.d)
        self.w_q.grad += target.T @ dq
        self.w_k.grad += source.T @ dk_
        self.w_v.grad += source.T @ dv
        dtarget = dq @ self.w_q.value.T
        dsource = dk_ @ self.w_k.value.T + dv @ self.w_v.value.T
        return dtarget, dsource

    def params(self):
        return [("w_q", self.w_q), ("w_k", self.w_k), ("w_v", self.w_v), ("w_o", self.w_o)]


class FeedForward:
    """Position-wise two-layer net relu(x @ W1 + b1) @ W2 + b2, hidden width 4d."""

    def __init__(self, d: int, rng: Rng, hidden: int | None = None):
        hidden = 4 * d if hidden is None else hidden
        self.w1 = Param(glorot(rng, (d, hidden)))
        self.b1 = Param(np.zeros(hidden))
        self.w2 = Param(glorot(rng, (hidden, d)))
        self.b2 = Param(np.zeros(d))

    def forward(self, x):
        u = x @ self.w1.value + self.b1.value
        r = np.maximum(u, 0.0)
        self._x = x
        self._u = u
        self._r = r
        self._alive = u > 0.0
        return r @ self.w2.value + self.b2.value

    def backward(self, up):
        self.w2.grad += self._r.T @ up
        self.b2.grad += up.sum(axis=0)
        du = (up @ self.w2.value.T) * self._alive
        self.w1.grad += self._x.T @ du
        self.b1.grad += du.sum(axis=0)
        return du @ self.w1.value.T

    def params(self):
        return [("w1", self.w1), ("b1", self.b1), ("w2", self.w2), ("b2", self.b2)]


class MeanPool:
    """Average over the time axis; backward spreads the upstream evenly."""

    def forward(self, x):
        if x.shape[0] < 1:
            raise ValueError("cannot pool an empty sequence")
        self._t = x.shape[0]
        return x.mean(axis=0)

    def backward(self, up):
        return np.broadcast_to(up / self._t, (self._t, up.shape[0])).copy()

    def params(self):
        return []


class BiLstm:
    """Bidirectional LSTM; each direction carries hidden width d_out / 2.

    Standard gate equations with sigmoid input/forget/output gates and a tanh
    candidate. Parameters hold both directions stacked on a leading axis of
    size 2 (0 = forward in time, 1 = reversed), so each step advances both
    directions with one batched matmul. Gate layout on the last parameter
    axis is [input, forget, output, candidate]: the three sigmoid gates sit
    in one contiguous slice.
    """

    def __init__(self, d_in: int, d_out: int, rng: Rng):
        if d_out % 2 != 0:
            raise ValueError(f"bidirectional output width must be even, got {d_out}")
        self.d_in = d_in
        self.d_out = d_out
        self.hd = d_out // 2
        g = 4 * self.hd
        self.w_x = Param(glorot(rng, (2, d_in, g)))
        self.w_h = Param(glorot(rng, (2, self.hd, g)))
        self.bias = Param(np.zeros((2, g)))

    def forward(self, x):
        if x.shape[1] != self.d_in:
            raise ValueError(f"expected input width {self.d_in}, got {x.shape[1]}")
        t_len = x.shape[0]
        hd = self.hd
        xs = np.stack([x, x[::-1]])                       # (2, T, d_in)
        zx = xs @ self.w_x.value + self.bias.value[:, None, :]
        dt = zx.dtype  # follows the input, so probes in wider floats stay wide
        sig = np.empty((t_len, 2, 3 * hd), dtype=dt)
        cand = np.empty((t_len, 2, hd), dtype=dt)
        cells = np.empty((t_len, 2, hd), dtype=dt)
        tcell = np.empty((t_len, 2, hd), dtype=dt)
        hidden = np.empty((t_len, 2, hd), dtype=dt)
        hprev = np.zeros((2, 1, hd), dtype=dt)
        cprev = np.zeros((2, hd), dtype=dt)
        for t in range(t_len):
            z = zx[:, t] + (hprev @ self.w_h.value)[:, 0]
            s = 1.0 / (1.0 + np.exp(-z[:, : 3 * hd]))
            g = np.tanh(z[:, 3 * hd :])
            c = s[:, hd : 2 * hd] * cprev + s[:, :hd] * g
            tc = np.tanh(c)
            hnew = s[:, 2 * hd :] * tc
            sig[t] = s
            cand[t] = g
            cells[t] = c
            tcell[t] = tc
            hidden[t] = hnew
            hprev = hnew[:, None, :]
            cprev = c
        out = np.empty((t_len, self.d_out), dtype=dt)
        out[:, :hd] = hidden[:, 0]
        out[:, hd:] = hidden[::-1, 1]
        self._cache = (xs, sig, cand, cells, tcell, hidden)
        return out

    def backward(self, up):
        xs, sig, cand, cells, tcell, hidden = self._cache
        t_len = xs.shape[1]
        hd = self.hd
        d_h = np.empty((t_len, 2, hd))
        d_h[:, 0] = up[:, :hd]
        d_h[:, 1] = up[::-1, hd:]
        dz_all = np.empty((t_len, 2, 4 * hd))
        dhnext = np.zeros((2, hd))
        dcnext = np.zeros((2, hd))
        w_h = self.w_h.value
        w_h_t = w_h.transpose(0, 2, 1)
        for t in range(t_len - 1, -1, -1):
            s = sig[t]
            i, f, o = s[:, :hd], s[:, hd : 2 * hd], s[:, 2 * hd :]
            g = cand[t]
            tc = tcell[t]
            dh = d_h[t] + dhnext
            do = dh * tc
            dc = dcnext + dh * o * (1.0 - tc * tc)
            cprev = cells[t - 1] if t > 0 else 0.0
            dz = dz_all[t]
            dz[:, :hd] = (dc * g) * i * (1.0 - i)
            dz[:, hd : 2 * hd] = (dc * cprev) * f * (1.0 - f)
            dz[:, 2 * hd : 3 * hd] = do * o * (1.0 - o)
            dz[:, 3 * hd :] = (dc * i) * (1.0 - g * g)
            dcnext = dc * f
            dhnext = (dz[:, None, :] @ w_h_t)[:, 0]
            hprev = hidden[t - 1] if t > 0 else np.zeros((2, hd))
            self.w_h.grad += hprev[:, :, None] @ dz[:, None, :]
        self.w_x.grad += xs.transpose(0, 2, 1) @ dz_all.transpose(1, 0, 2)
        self.bias.grad += dz_all.sum(axis=0)
        dxs = dz_all.transpose(1, 0, 2) @ self.w_x.value.transpose(0, 2, 1)
        return dxs[0] + dxs[1][::-1]

    def params(self):
        return [("w_x", self.w_x), ("w_h", self.w_h), ("bias", self.bias)]


class AttentionPool:
    """Learned softmax weighting over time, then the weighted sum of rows.

    Scores are u_t = v . tanh(h_t @ W + b); a zero scoring vector collapses
    to plain mean pooling.
    """

    def __init__(self, d: int, rng: Rng):
        self.weight = Param(glorot(rng, (d, d)))
        self.bias = Param(np.zeros(d))
        self.v = Param(glorot(rng, (d,)))

    def forward(self, h):
        a = np.tanh(h @ self.weight.value + self.bias.value)
        u = a @ self.v.value
        e = np.exp(u - u.max())
        alpha = e / e.sum()
        self._h = h
        self._a = a
        self._alpha = alpha
        return alpha @ h

    def backward(self, up):
        h, a, alpha = self._h, self._a, self._alpha
        dalpha = h @ up
        dh = np.outer(alpha, up)
        du = alpha * (dalpha - alpha @ dalpha)
        self.v.grad += a.T @ du
        dpre = np.outer(du, self.v.value) * (1.0 - a * a)
        self.weight.grad += h.T @ dpre
        self.bias.grad += dpre.sum(axis=0)
        dh += dpre @ self.weight.value.T
        return dh

    def params(self):
        return [("weight", self.weight), ("bias", self.bias), ("v", self.v)]
