"""Run configuration: one flat, schema-checked record.

Configs travel as JSON ("lambda" maps to the ``lambda_`` attribute).
Unknown keys are rejected so typos fail loudly at startup rather than
silently training the wrong model.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
import json

TASKS = ("direction_memory", "press_order", "cover_stack_analog")
MODES = ("expert_conditioned", "vlm_injected", "none", "frame_stack_baseline")
OBJECTIVES = ("joint", "action_only", "motion_only")
EXECUTIONS = ("chunk", "single_step")


class ConfigError(ValueError):
    """Invalid or unknown configuration content."""


@dataclass
class RunConfig:
    # task / data
    task: str = "direction_memory"
    frame_size: int = 64
    channels: int = 1
    episodes: int = 64
    seed: int = 0

    # temporal structure
    h: int = 8                  # hindsight length (0 disables history)
    n: int = 8                  # action/motion chunk length
    search_range: int = 8

    # model dims
    d: int = 64
    d_expert: int = 64
    heads: int = 4
    hindsight_layers: int = 4
    backbone_layers: int = 4
    expert_layers: int = 6
    ffn_mult: int = 4
    action_dim: int = 4

    # training
    mode: str = "expert_conditioned"
    objective: str = "joint"
    lambda_: float = 0.01
    lr: float = 3e-4
    batch_size: int = 8
    steps: int = 2000
    execution: str = "chunk"    # closed-loop: full chunk or single step
    deterministic: bool = True

    # bookkeeping
    out_dir: str = "runs"

    # -- derived -------------------------------------------------------

    @property
    def patch(self) -> int:
        return 16

    @property
    def grid(self) -> tuple:
        g = self.frame_size // 16
        return (g, g)

    @property
    def n_patches(self) -> int:
        g = self.frame_size // 16
        return g * g

    @property
    def h_padded(self) -> int:
        """Hindsight length after padding odd windows up to even."""
        return self.h + (self.h % 2)

    @property
    def k_hindsight(self) -> int:
        """CLS plus one token per 2x2x2 spatiotemporal block."""
        gh, gw = self.grid
        return 1 + (self.h_padded // 2) * (gh // 2) * (gw // 2)

    @property
    def k_foresight(self) -> int:
        return self.n

    @property
    def k_action(self) -> int:
        return self.n

    @property
    def vocab_size(self) -> int:
        return len(TASKS)

    def backbone_tokens(self, mode: str | None = None) -> int:
        """Input sequence length of the backbone for a given mode."""
        mode = mode or self.mode
        base = 1 + self.n_patches + self.k_foresight + self.k_action
        if mode == "vlm_injected" and self.h > 0:
            return base + self.k_hindsight
        if mode == "frame_stack_baseline":
            return base + self.h * self.n_patches
        return base

    # -- validation ------------------------------------------------------

    def validate(self) -> "RunConfig":
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}; expected one of {TASKS}")
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"unknown objective {self.objective!r}")
        if self.execution not in EXECUTIONS:
            raise ConfigError(f"unknown execution {self.execution!r}")
        if self.lambda_ < 0:
            raise ConfigError("lambda must be >= 0")
        if self.h < 0:
            raise ConfigError("h must be >= 0")
        if self.n < 1:
            raise ConfigError("n must be >= 1")
        if self.frame_size % 16:
            raise ConfigError("frame_size must be divisible by the 16-pixel macroblock")
        if self.channels not in (1, 3):
            raise ConfigError("channels must be 1 or 3")
        gh, gw = self.grid
        if self.h > 0 and (gh % 2 or gw % 2):
            raise ConfigError(f"motion grid {gh}x{gw} must have even extents for 2x2x2 blocking")
        if self.d % self.heads:
            raise ConfigError("d must be divisible by heads")
        if (self.d // self.heads) % 2:
            raise ConfigError("per-head width must be even for rotary pairs")
        if self.search_range < 1:
            raise ConfigError("search_range must be >= 1")
        for name in ("hindsight_layers", "backbone_layers", "expert_layers",
                     "batch_size", "steps", "episodes", "action_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        return self

    # -- (de)serialization ----------------------------------------------

    def to_json_dict(self) -> dict:
        out = asdict(self)
        out["lambda"] = out.pop("lambda_")
        return out

    @classmethod
    def from_json_dict(cls, raw: dict) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        raw = dict(raw)
        if "lambda" in raw:
            raw["lambda_"] = raw.pop("lambda")
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**raw)
        # JSON has no int/float distinction worth trusting: re-coerce.
        for f in fields(cls):
            v = getattr(cfg, f.name)
            if f.type == "int":
                setattr(cfg, f.name, int(v))
            elif f.type == "float":
                setattr(cfg, f.name, float(v))
        return cfg.validate()

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            raw = json.loads(p.read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"{p}: invalid JSON: {e}") from e
        return cls.from_json_dict(raw)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=2, sort_keys=True) + "\n")
