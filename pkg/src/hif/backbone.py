"""Toy vision-language backbone with parallel foresight and action queries.

The instruction is a task-id lookup into a learned table (the synthetic
benchmark has a finite task vocabulary). The observation enters as linear
16x16 patch embeddings with learned positions. Learnable foresight and
action query tokens are appended and the whole sequence runs through
pre-norm transformer layers under an all-visible (non-causal) mask;
outputs are read back at the query positions, giving parallel prediction
of future-motion latents and action latents in one pass.

Two alternative input layouts exist for comparison runs: history tokens
may be concatenated into the sequence (``vlm_injected``), or raw past
frames may be stacked as extra patch tokens (``frame_stack_baseline``);
both grow the sequence with the history length, unlike the default path
whose token count is history-independent.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .config import RunConfig
from .motion import Frame
from .nn import Linear, ParamStore, TransformerBlock, init_weight
from .tensor import Tensor


def frame_to_patches(frame: Frame) -> np.ndarray:
    """(H, W[, C]) uint8 -> (P, 256 * C) float32 rows in raster order.

    Pixels map to [0, 1]; an all-black frame is the zero input.
    """
    p = frame.pixels
    if p.ndim == 2:
        p = p[:, :, None]
    h, w, c = p.shape
    gh, gw = h // 16, w // 16
    tiles = p.reshape(gh, 16, gw, 16, c).transpose(0, 2, 1, 3, 4)
    flat = tiles.reshape(gh * gw, 16 * 16 * c)
    return flat.astype(np.float32) / 255.0


class Backbone:
    def __init__(self, store: ParamStore, rng: np.random.Generator, cfg: RunConfig):
        self.cfg = cfg
        d = cfg.d
        patch_dim = 16 * 16 * cfg.channels
        self.instr_table = store.add(
            "backbone.instr.table", rng.normal(0.0, 1.0 / np.sqrt(d), size=(cfg.vocab_size, d)))
        self.patch_proj = Linear(store, rng, "backbone.patch", patch_dim, d)
        self.patch_pos = store.add(
            "backbone.patch.pos", rng.normal(0.0, 1.0 / np.sqrt(d), size=(cfg.n_patches, d)))
        self.foresight_queries = store.add(
            "backbone.queries.foresight", rng.normal(0.0, 1.0 / np.sqrt(d), size=(cfg.k_foresight, d)))
        self.action_queries = store.add(
            "backbone.queries.action", rng.normal(0.0, 1.0 / np.sqrt(d), size=(cfg.k_action, d)))
        # Projection for history tokens entering the sequence (ablation path).
        self.hist_proj = Linear(store, rng, "backbone.hist_proj", d, d)
        # Frame-slot embeddings distinguish stacked past frames (slot 0 =
        # current frame, slot k = k steps back).
        self.frame_slot = store.add(
            "backbone.frame_slot", rng.normal(0.0, 1.0 / np.sqrt(d), size=(cfg.h + 1, d)))
        self.layers = [
            TransformerBlock(store, rng, f"backbone.layer{i}", d, cfg.heads, cfg.ffn_mult)
            for i in range(cfg.backbone_layers)
        ]

    # -- pieces ----------------------------------------------------------

    def embed_instruction(self, task_ids) -> Tensor:
        """(B,) int ids -> (B, 1, d)."""
        ids = np.asarray(task_ids, dtype=np.int64).reshape(-1)
        if ids.min() < 0 or ids.max() >= self.cfg.vocab_size:
            raise IndexError(f"task id out of range [0, {self.cfg.vocab_size})")
        emb = T.take_rows(self.instr_table, ids)
        return T.reshape(emb, (len(ids), 1, self.cfg.d))

    def embed_observation(self, patches: Tensor) -> Tensor:
        """(B, P, patch_dim) -> (B, P, d) with positions added."""
        return T.add(self.patch_proj(patches), self.patch_pos)

    def _queries(self, b: int) -> Tensor:
        k_f, k_a = self.cfg.k_foresight, self.cfg.k_action
        q = T.concat([self.foresight_queries, self.action_queries], axis=0)
        q = T.reshape(q, (1, k_f + k_a, self.cfg.d))
        return T.concat([q] * b, axis=0) if b > 1 else q

    # -- forward ----------------------------------------------------------

    def forward(self, patches: Tensor, task_ids, hist_tokens: Tensor | None = None,
                stack_patches: Tensor | None = None) -> tuple:
        """Run the backbone; returns (foresight latents, action latents).

        patches: (B, P, patch_dim) current observation.
        hist_tokens: (B, K_h, d) history tokens to inject into the sequence.
        stack_patches: (B, h * P, patch_dim) patches of stacked past frames,
        oldest first.
        """
        cfg = self.cfg
        b = patches.dims[0]
        obs = self.embed_observation(patches)
        if stack_patches is not None:
            obs = T.add(obs, T.reshape(self._slot(0), (cfg.d,)))
        parts = [self.embed_instruction(task_ids), obs]
        if stack_patches is not None:
            h = stack_patches.dims[1] // cfg.n_patches
            stacked = self.patch_proj(stack_patches)
            pos_rows = T.concat([self.patch_pos] * h, axis=0) if h > 1 else self.patch_pos
            stacked = T.add(stacked, pos_rows)
            stacked = T.add(stacked, self._slot_rows(h))
            parts.append(stacked)
        if hist_tokens is not None:
            parts.append(self.hist_proj(hist_tokens))
        parts.append(self._queries(b))
        seq = T.concat(parts, axis=1)
        for layer in self.layers:
            seq = layer(seq)  # mask=None: every token sees every token
        k_q = cfg.k_foresight + cfg.k_action
        n_tok = seq.dims[1]
        m_f = T.slice_axis(seq, n_tok - k_q, n_tok - cfg.k_action, axis=1)
        a_f = T.slice_axis(seq, n_tok - cfg.k_action, n_tok, axis=1)
        return m_f, a_f

    def _slot(self, k: int) -> Tensor:
        return T.slice_axis(self.frame_slot, k, k + 1, axis=0)

    def _slot_rows(self, h: int) -> Tensor:
        """(h * P, d) slot embeddings for stacked history, oldest first."""
        cfg = self.cfg
        rows = []
        for k in range(h):
            slot = self._slot(h - k)
            rows.extend([slot] * cfg.n_patches)
        return T.concat(rows, axis=0)
