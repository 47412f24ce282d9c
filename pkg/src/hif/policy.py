"""Full policy: observation + instruction + motion history -> action chunk.

Four wirings of the same parts, selected by ``cfg.mode``:

  expert_conditioned  history -> condition vector modulating the expert
  vlm_injected        history tokens concatenated into the backbone input
  none                history discarded entirely
  frame_stack_baseline raw past frames stacked as extra backbone patches

The backbone input length is history-independent in expert_conditioned
and none modes; the other two grow with the history length.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import hift
from . import tensor as T
from .backbone import Backbone, frame_to_patches
from .config import RunConfig
from .expert import JointExpert
from .hindsight import HindsightEncoder, pad_to_even_history
from .nn import ParamStore
from .tensor import Tensor


@dataclass
class PolicyInput:
    """One batched forward-pass worth of preprocessed features."""

    patches: np.ndarray            # (B, P, patch_dim) float32
    task_ids: np.ndarray           # (B,) int
    mv: np.ndarray | None = None   # (B, h, GH, GW, 2) float32, oldest first
    stack_patches: np.ndarray | None = None  # (B, h * P, patch_dim) float32


class Policy:
    def __init__(self, cfg: RunConfig, seed: int | None = None, dtype=np.float32):
        cfg.validate()
        self.cfg = cfg
        self.store = ParamStore(dtype=dtype)
        rng = np.random.default_rng(cfg.seed if seed is None else seed)
        self.uses_history = cfg.mode in ("expert_conditioned", "vlm_injected") and cfg.h > 0
        self.hindsight = HindsightEncoder(self.store, rng, cfg) if self.uses_history else None
        self.backbone = Backbone(self.store, rng, cfg)
        self.expert = JointExpert(self.store, rng, cfg)

    # -- forward -----------------------------------------------------------

    def _zero_cond(self, b: int) -> Tensor:
        return Tensor(np.zeros((b, self.cfg.d_expert), dtype=self.store.dtype))

    def forward(self, inp: PolicyInput, use_rope: bool = True) -> tuple:
        """Returns (motion latents, action latents, condition vector)."""
        cfg = self.cfg
        dt = self.store.dtype
        patches = Tensor(np.asarray(inp.patches, dtype=dt))
        b = patches.dims[0]
        hist_tokens = None
        cond = self._zero_cond(b)
        stack = None
        if cfg.mode in ("expert_conditioned", "vlm_injected") and self.uses_history:
            if inp.mv is None:
                raise ValueError(f"mode {cfg.mode} needs a motion-history tensor")
            mv = pad_to_even_history(np.asarray(inp.mv, dtype=dt))
            tokens = self.hindsight.encode(Tensor(mv))
            if cfg.mode == "expert_conditioned":
                cond = self.hindsight.condition(tokens)
            else:
                hist_tokens = tokens
        elif cfg.mode == "frame_stack_baseline":
            if inp.stack_patches is None:
                raise ValueError("frame_stack_baseline needs stacked past-frame patches")
            stack = Tensor(np.asarray(inp.stack_patches, dtype=dt))
        m_f, a_f = self.backbone.forward(patches, inp.task_ids, hist_tokens, stack)
        m_tilde, a_tilde = self.expert.forward(m_f, a_f, cond, use_rope)
        return m_tilde, a_tilde, cond

    def predict(self, inp: PolicyInput, decode_motion: bool = False):
        """Inference: (B, n, action_dim) actions, optionally motion chunks.

        The action head reads only the refined action stream, so invoking
        the motion head cannot change the returned actions.
        """
        with T.no_grad():
            m_tilde, a_tilde, _ = self.forward(inp)
            actions = self.expert.decode_actions(a_tilde).numpy().copy()
            if decode_motion:
                motions = self.expert.decode_motion(m_tilde).numpy().copy()
                return actions, motions
            return actions, None

    # -- persistence ---------------------------------------------------------

    def save(self, path, step: int):
        echo = self.cfg.to_json_dict()
        echo.pop("out_dir", None)  # run bookkeeping, not model identity
        hift.save_checkpoint(path, self.store.export(), echo, step)

    @classmethod
    def load(cls, path) -> tuple:
        tensors, config, step = hift.load_checkpoint(path)
        cfg = RunConfig.from_json_dict(config)
        policy = cls(cfg)
        policy.store.load(tensors)
        return policy, step


def observation_features(cfg: RunConfig, frame, task_id: int) -> PolicyInput:
    """Single-observation convenience wrapper (no history)."""
    patches = frame_to_patches(frame)[None]
    return PolicyInput(patches=patches, task_ids=np.array([task_id]))
