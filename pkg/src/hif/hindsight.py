"""Motion-history encoder: 3-D blocking, a small ViT, and the condition vector.

The normalized displacement tensor (h, GH, GW, 2) is partitioned into
non-overlapping 2x2x2 spatiotemporal blocks by a strided 3-D convolution,
giving one token per block in (time, row, col) order. A learned CLS token
is prepended, the stack runs through pre-norm transformer layers with
learned absolute position embeddings, and the final CLS row is projected
to the expert-width condition vector.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .config import RunConfig
from .nn import Linear, ParamStore, TransformerBlock, init_weight
from .tensor import Tensor


def pad_to_even_history(mv: np.ndarray) -> np.ndarray:
    """Prepend one all-zero field when the window length is odd."""
    if mv.shape[-4] % 2 == 0:
        return mv
    pad_shape = mv.shape[:-4] + (1,) + mv.shape[-3:]
    return np.concatenate([np.zeros(pad_shape, dtype=mv.dtype), mv], axis=-4)


class HindsightEncoder:
    """Maps batched MV tensors to history tokens and the condition vector."""

    def __init__(self, store: ParamStore, rng: np.random.Generator, cfg: RunConfig):
        self.cfg = cfg
        d = cfg.d
        gh, gw = cfg.grid
        if gh % 2 or gw % 2:
            raise ValueError(f"grid {gh}x{gw} must have even extents for 2x2x2 blocking")
        n_blocks = (cfg.h_padded // 2) * (gh // 2) * (gw // 2)
        self.n_blocks = n_blocks
        self.kernel = store.add("hindsight.patch.kernel", init_weight(rng, 8 * 2, (2, 2, 2, 2, d)))
        self.kernel_bias = store.add("hindsight.patch.bias", np.zeros(d))
        self.cls = store.add("hindsight.cls", rng.normal(0.0, 1.0 / np.sqrt(d), size=(1, d)))
        self.pos = store.add("hindsight.pos", rng.normal(0.0, 1.0 / np.sqrt(d), size=(1 + n_blocks, d)))
        self.layers = [
            TransformerBlock(store, rng, f"hindsight.layer{i}", d, cfg.heads, cfg.ffn_mult)
            for i in range(cfg.hindsight_layers)
        ]
        self.cond = Linear(store, rng, "hindsight.cond", d, cfg.d_expert)

    def patchify(self, mv: Tensor) -> Tensor:
        """(B, h_even, GH, GW, 2) -> (B, n_blocks, d) block tokens."""
        if mv.dims[-4] % 2:
            raise ValueError("history length must be even here; pad upstream")
        out = T.conv3d(mv, self.kernel, stride=2, bias=self.kernel_bias)
        b = out.dims[0]
        return T.reshape(out, (b, self.n_blocks, self.cfg.d))

    def encode(self, mv: Tensor) -> Tensor:
        """(B, h_even, GH, GW, 2) -> (B, 1 + n_blocks, d); CLS token first."""
        tokens = self.patchify(mv)
        b = tokens.dims[0]
        cls = T.reshape(self.cls, (1, 1, self.cfg.d))
        cls = T.concat([cls] * b, axis=0) if b > 1 else cls
        seq = T.concat([cls, tokens], axis=1)
        seq = T.add(seq, self.pos)
        for layer in self.layers:
            seq = layer(seq)
        return seq

    def condition(self, tokens: Tensor) -> Tensor:
        """CLS row -> (B, d_expert) condition vector."""
        cls = T.slice_axis(tokens, 0, 1, axis=1)
        b = cls.dims[0]
        return T.reshape(self.cond(cls), (b, self.cfg.d_expert))

    def forward(self, mv_batch: np.ndarray) -> tuple:
        """numpy (B, h, GH, GW, 2) -> (tokens, condition vector)."""
        mv = pad_to_even_history(np.asarray(mv_batch))
        tokens = self.encode(Tensor(mv.astype(self.kernel.data.dtype)))
        return tokens, self.condition(tokens)
