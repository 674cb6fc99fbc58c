"""Pairwise fusion of two feature sequences through mirrored attention branches.

A fusion block runs two structurally identical branches: the left branch
cross-attends from the first input into the second, the right branch does
the mirror image, and a pointwise convolution mixes the feature-axis
concatenation of the two branch outputs back to width d. Gradient flows
from the fused output into both inputs through both branches.
"""

from dataclasses import dataclass

import numpy as np

from .layers import FeedForward, LayerNorm, MultiHeadAttention, PointwiseConv1d
from .ops import Rng


class FusionBranch:
    """cross-attention -> self-attention -> feed-forward, each step wrapped
    as normalize(sublayer(x) + x)."""

    def __init__(self, d: int, heads: int, rng: Rng):
        self.cross_attn = MultiHeadAttention(d, heads, rng)
        self.norm1 = LayerNorm()
        self.self_attn = MultiHeadAttention(d, heads, rng)
        self.norm2 = LayerNorm()
        self.ffn = FeedForward(d, rng)
        self.norm3 = LayerNorm()

    def forward(self, x_tgt, x_src, mask=None):
        z1 = self.norm1.forward(self.cross_attn.forward(x_tgt, x_src, mask=mask) + x_tgt)
        z2 = self.norm2.forward(self.self_attn.forward(z1, z1) + z1)
        return self.norm3.forward(self.ffn.forward(z2) + z2)

    def backward(self, up):
        d3 = self.norm3.backward(up)
        dz2 = self.ffn.backward(d3) + d3
        d2 = self.norm2.backward(dz2)
        dt, ds = self.self_attn.backward(d2)
        dz1 = dt + ds + d2
        d1 = self.norm1.backward(dz1)
        dtgt, dsrc = self.cross_attn.backward(d1)
        return dtgt + d1, dsrc

    def params(self):
        out = []
        for prefix, layer in (("cross_attn", self.cross_attn),
                              ("self_attn", self.self_attn),
                              ("ffn", self.ffn)):
            out.extend((f"{prefix}.{n}", p) for n, p in layer.params())
        return out


@dataclass
class FusionOutput:
    fused: np.ndarray  # [T, d]
    left: np.ndarray   # [T, d], kept for inspection
    right: np.ndarray  # [T, d]


class SymmetricFusionBlock:
    """Two mirrored branches plus the pointwise fuse convolution.

    The map is mirror-symmetric by construction: swapping the inputs, the
    branch parameter sets, and the two kernel halves reproduces the fused
    output exactly.
    """

    def __init__(self, d: int, heads: int, rng: Rng):
        self.d = d
        self.left = FusionBranch(d, heads, rng)
        self.right = FusionBranch(d, heads, rng)
        self.fuse = PointwiseConv1d(2 * d, d, rng)

    def forward(self, x_a, x_b, mask=None) -> FusionOutput:
        left = self.left.forward(x_a, x_b, mask=mask)
        right = self.right.forward(x_b, x_a, mask=mask)
        fused = self.fuse.forward(np.concatenate([left, right], axis=1))
        return FusionOutput(fused, left, right)

    def backward(self, d_fused):
        dcat = self.fuse.backward(d_fused)
        da_left, db_left = self.left.backward(dcat[:, : self.d])
        db_right, da_right = self.right.backward(dcat[:, self.d :])
        return da_left + da_right, db_left + db_right

    def params(self):
        out = [(f"left.{n}", p) for n, p in self.left.params()]
        out += [(f"right.{n}", p) for n, p in self.right.params()]
        out += [(f"fuse.{n}", p) for n, p in self.fuse.params()]
        return out


class FusionStack:
    """n_blocks fusion blocks in sequence.

    Block k+1 receives the fused output of block k as both of its inputs,
    so shapes are closed under composition; a single block is the default.
    """

    def __init__(self, d: int, heads: int, n_blocks: int, rng: Rng):
        if n_blocks < 1:
            raise ValueError("need at least one fusion block")
        self.blocks = [SymmetricFusionBlock(d, heads, rng) for _ in range(n_blocks)]

    def forward(self, x_a, x_b, mask=None) -> FusionOutput:
        out = self.blocks[0].forward(x_a, x_b, mask=mask)
        for block in self.blocks[1:]:
            out = block.forward(out.fused, out.fused, mask=mask)
        return out

    def backward(self, d_fused):
        for block in reversed(self.blocks[1:]):
            da, db = block.backward(d_fused)
            d_fused = da + db
        return self.blocks[0].backward(d_fused)

    def params(self):
        if len(self.blocks) == 1:
            return self.blocks[0].params()
        out = []
        for i, block in enumerate(self.blocks):
            out.extend((f"block{i}.{n}", p) for n, p in block.params())
        return out
