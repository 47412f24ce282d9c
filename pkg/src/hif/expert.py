"""History-modulated joint expert over foresight and action token streams.

The two streams are concatenated (motion first) and refined by blocks of:
adaptive layer norm -> joint self-attention -> residual -> adaptive layer
norm -> per-stream feed-forward -> residual. The condition vector scales
and shifts the normalized tokens (gamma * norm(z) + beta); its projections
start at zero weight with gamma offset 1 and beta offset 0, so an
untrained expert under zero conditioning is exactly a plain pre-norm
transformer. Rotary position encoding on q/k indexes the concatenated
sequence. The motion and action feed-forward stacks share no parameters,
and each head is an independent leaf projection: decoding motion is
optional and cannot perturb the decoded actions.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .config import RunConfig
from .nn import FeedForward, Linear, MultiHeadAttention, ParamStore
from .tensor import Tensor


class AdaLN:
    """gamma(c) * normalize(z) + beta(c), broadcast over tokens."""

    def __init__(self, store: ParamStore, rng, name: str, d_cond: int, d: int):
        self.w_gamma = store.add(f"{name}.w_gamma", np.zeros((d_cond, d)))
        self.b_gamma = store.add(f"{name}.b_gamma", np.ones(d))
        self.w_beta = store.add(f"{name}.w_beta", np.zeros((d_cond, d)))
        self.b_beta = store.add(f"{name}.b_beta", np.zeros(d))
        self.d = d

    def __call__(self, z: Tensor, cond: Tensor) -> Tensor:
        """z: (B, K, d), cond: (B, d_cond)."""
        b = cond.dims[0]
        gamma = T.reshape(T.add(T.matmul(cond, self.w_gamma), self.b_gamma), (b, 1, self.d))
        beta = T.reshape(T.add(T.matmul(cond, self.w_beta), self.b_beta), (b, 1, self.d))
        return T.add(T.mul(T.layernorm(z), gamma), beta)


class ExpertBlock:
    def __init__(self, store: ParamStore, rng, name: str, cfg: RunConfig):
        d = cfg.d
        self.adaln_attn = AdaLN(store, rng, f"{name}.adaln_attn", cfg.d_expert, d)
        self.attn = MultiHeadAttention(store, rng, f"{name}.attn", d, cfg.heads)
        self.adaln_ffn = AdaLN(store, rng, f"{name}.adaln_ffn", cfg.d_expert, d)
        self.ffn_motion = FeedForward(store, rng, f"{name}.ffn_motion", d, cfg.ffn_mult)
        self.ffn_action = FeedForward(store, rng, f"{name}.ffn_action", d, cfg.ffn_mult)
        self.k_f = cfg.k_foresight
        self.k_a = cfg.k_action

    def __call__(self, seq: Tensor, cond: Tensor, positions, use_rope: bool = True) -> Tensor:
        """seq: (B, K_f + K_a, d) concatenated streams, motion first."""
        rp = positions if use_rope else None
        seq = T.add(seq, self.attn(self.adaln_attn(seq, cond), rope_positions=rp))
        normed = self.adaln_ffn(seq, cond)
        m_part = T.slice_axis(normed, 0, self.k_f, axis=1)
        a_part = T.slice_axis(normed, self.k_f, self.k_f + self.k_a, axis=1)
        ff = T.concat([self.ffn_motion(m_part), self.ffn_action(a_part)], axis=1)
        return T.add(seq, ff)


class JointExpert:
    def __init__(self, store: ParamStore, rng: np.random.Generator, cfg: RunConfig):
        self.cfg = cfg
        self.blocks = [
            ExpertBlock(store, rng, f"expert.block{i}", cfg) for i in range(cfg.expert_layers)
        ]
        self.positions = np.arange(cfg.k_foresight + cfg.k_action)
        gh, gw = cfg.grid
        self.head_action = Linear(store, rng, "heads.action", cfg.d, cfg.action_dim)
        self.head_motion = Linear(store, rng, "heads.motion", cfg.d, gh * gw * 2)

    def forward(self, m_f: Tensor, a_f: Tensor, cond: Tensor, use_rope: bool = True) -> tuple:
        """(B, K_f, d), (B, K_a, d), (B, d_expert) -> refined streams."""
        if m_f.dims[1] != self.cfg.k_foresight or a_f.dims[1] != self.cfg.k_action:
            raise T.ShapeError(
                f"stream extents {m_f.dims[1]}/{a_f.dims[1]} != configured "
                f"{self.cfg.k_foresight}/{self.cfg.k_action}")
        seq = T.concat([m_f, a_f], axis=1)
        for block in self.blocks:
            seq = block(seq, cond, self.positions, use_rope)
        m_out = T.slice_axis(seq, 0, self.cfg.k_foresight, axis=1)
        a_out = T.slice_axis(seq, self.cfg.k_foresight, seq.dims[1], axis=1)
        return m_out, a_out

    def decode_actions(self, a_tilde: Tensor) -> Tensor:
        """(B, K_a, d) -> (B, n, action_dim); one token per step."""
        if a_tilde.dims[1] != self.cfg.n:
            raise T.ShapeError(f"K_a {a_tilde.dims[1]} != chunk length {self.cfg.n}")
        return self.head_action(a_tilde)

    def decode_motion(self, m_tilde: Tensor) -> Tensor:
        """(B, K_f, d) -> (B, n, GH, GW, 2) normalized displacements."""
        if m_tilde.dims[1] != self.cfg.n:
            raise T.ShapeError(f"K_f {m_tilde.dims[1]} != chunk length {self.cfg.n}")
        gh, gw = self.cfg.grid
        out = self.head_motion(m_tilde)
        return T.reshape(out, (out.dims[0], self.cfg.n, gh, gw, 2))
