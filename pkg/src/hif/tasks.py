"""Synthetic history-dependent manipulation tasks.

Three 64x64 single-view tasks, each built so that some decision points
are ambiguous from the current frame alone and disambiguated by recent
motion:

  direction_memory   the agent sweeps left or right and returns to a
                     pixel-identical center pose; the correct action
                     continues the original sweep direction.
  press_order        three buttons must be touched in a fixed order;
                     touching leaves no visual trace, and every leg of the
                     tour passes through the same center pose.
  cover_stack_analog two blocks are carried to one target in sequence;
                     whether a block under the agent is held is invisible.

Actions are (dx, dy, gripper, aux) with displacements normalized by
ACTION_SCALE pixels per step; the scripted experts move in 4-pixel steps
(action value 0.5). Rendering is deterministic: same (task, seed) gives
bit-identical episodes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import TASKS
from .motion import Frame
from .synthetic import smooth_texture

ARENA = 64
AGENT = 16
ACTION_SCALE = 8.0  # pixels per unit action; matches the default search range
GRIP_THRESHOLD = 0.5
TOUCH_RADIUS = 6.0

DIRECTION_MEMORY_WARMUP = 8  # scripted steps before the ambiguous decision


class TaskError(ValueError):
    """Unknown task or invalid episode request."""


def task_index(task: str) -> int:
    try:
        return TASKS.index(task)
    except ValueError:
        raise TaskError(f"unknown task {task!r}; expected one of {TASKS}") from None


@dataclass
class Episode:
    task_id: int
    frames: list            # T+1 Frames
    actions: np.ndarray     # (T, 4) float32, normalized
    meta: dict = field(default_factory=dict)

    @property
    def length(self) -> int:
        return len(self.actions)


def _blit(canvas: np.ndarray, texture: np.ndarray, x: int, y: int):
    s = texture.shape[0]
    x0, y0 = max(x, 0), max(y, 0)
    x1, y1 = min(x + s, ARENA), min(y + s, ARENA)
    if x0 >= x1 or y0 >= y1:
        return
    canvas[y0:y1, x0:x1] = texture[y0 - y : y1 - y, x0 - x : x1 - x]


class _Env:
    """Shared mechanics: float agent position, clipping, rendering."""

    def __init__(self, seed: int):
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.agent_pos = np.array([24.0, 24.0])
        self.t = 0

    def clip_pos(self, pos):
        return np.clip(pos, 0.0, ARENA - AGENT)

    def apply_action(self, action):
        action = np.asarray(action, dtype=np.float64).reshape(-1)
        move = np.clip(action[:2], -1.0, 1.0) * ACTION_SCALE
        self.agent_pos = self.clip_pos(self.agent_pos + move)
        grip = bool(action[2] > GRIP_THRESHOLD) if action.size > 2 else False
        return grip

    def agent_center(self):
        return self.agent_pos + AGENT / 2.0


class DirectionMemoryEnv(_Env):
    """Sweep out, return to center, continue the remembered direction.

    Episodes come in pairs: textures depend on seed // 2 and the sweep
    direction on seed parity, so a pair shares every pixel of the decision
    frame while requiring opposite actions.
    """

    def __init__(self, seed: int):
        super().__init__(seed)
        tex_rng = np.random.default_rng(1_000_003 + (seed // 2))
        self.background = smooth_texture(tex_rng, ARENA, ARENA, cell=16, lo=25, hi=110)
        self.agent_tex = smooth_texture(tex_rng, AGENT, AGENT, cell=4, lo=160, hi=250)
        self.direction = 1 if seed % 2 == 0 else -1
        self.start = np.array([24.0, 24.0])
        self.agent_pos = self.start.copy()

    def render(self) -> Frame:
        canvas = self.background.copy()
        x, y = int(round(self.agent_pos[0])), int(round(self.agent_pos[1]))
        _blit(canvas, self.agent_tex, x, y)
        return Frame(canvas)

    def step(self, action) -> Frame:
        self.apply_action(action)
        self.t += 1
        return self.render()

    def scripted_actions(self) -> np.ndarray:
        # Sweep out (4), return to center (4), then continue the original
        # direction for a full chunk length so the decision-step target is
        # not padded; the arena wall absorbs the last couple of steps.
        d = 0.5 * self.direction
        out = [(d, 0.0, 0.0, 0.0)] * 4 + [(-d, 0.0, 0.0, 0.0)] * 4 + [(d, 0.0, 0.0, 0.0)] * 8
        return np.array(out, dtype=np.float32)

    @property
    def warmup_steps(self) -> int:
        return DIRECTION_MEMORY_WARMUP

    def success(self) -> bool:
        # Committing to the remembered side is what counts; magnitude is
        # free so that an uninformed policy resolves to a fair coin.
        offset = self.agent_pos[0] - self.start[0]
        return bool(self.direction * offset > 0.0)


class PressOrderEnv(_Env):
    """Touch left, right, then top button; touches leave no visual trace."""

    BUTTONS = ((0, 24), (48, 24), (24, 0))  # left, right, top

    def __init__(self, seed: int):
        super().__init__(seed)
        tex_rng = np.random.default_rng(2_000_003 + seed)
        self.background = smooth_texture(tex_rng, ARENA, ARENA, cell=16, lo=25, hi=100)
        self.agent_tex = smooth_texture(tex_rng, AGENT, AGENT, cell=4, lo=170, hi=250)
        self.button_tex = [smooth_texture(tex_rng, AGENT, AGENT, cell=8, lo=110, hi=155)
                           for _ in self.BUTTONS]
        self.presses: list = []

    def render(self) -> Frame:
        canvas = self.background.copy()
        for tex, (bx, by) in zip(self.button_tex, self.BUTTONS):
            _blit(canvas, tex, bx, by)
        x, y = int(round(self.agent_pos[0])), int(round(self.agent_pos[1]))
        _blit(canvas, self.agent_tex, x, y)
        return Frame(canvas)

    def step(self, action) -> Frame:
        grip = self.apply_action(action)
        if grip:
            cx, cy = self.agent_center()
            for idx, (bx, by) in enumerate(self.BUTTONS):
                if abs(cx - (bx + 8)) <= TOUCH_RADIUS and abs(cy - (by + 8)) <= TOUCH_RADIUS:
                    if not self.presses or self.presses[-1] != idx:
                        self.presses.append(idx)
        self.t += 1
        return self.render()

    def scripted_actions(self) -> np.ndarray:
        # center -> left -> center -> right -> center -> top, pressing on arrival
        legs = [
            ([-0.5, 0.0], 6), ("press", 1), ([0.5, 0.0], 6),
            ([0.5, 0.0], 6), ("press", 1), ([-0.5, 0.0], 6),
            ([0.0, -0.5], 6), ("press", 1),
        ]
        out = []
        for move, count in legs:
            if move == "press":
                out.append((0.0, 0.0, 1.0, 0.0))
            else:
                out.extend([(move[0], move[1], 0.0, 0.0)] * count)
        return np.array(out, dtype=np.float32)

    @property
    def warmup_steps(self) -> int:
        return 0

    def success(self) -> bool:
        return self.presses == [0, 1, 2]


class CoverStackEnv(_Env):
    """Carry block A onto the target, then stack block B on top."""

    A_START = (40, 40)
    B_START = (8, 8)
    TARGET = (40, 8)

    def __init__(self, seed: int):
        super().__init__(seed)
        tex_rng = np.random.default_rng(3_000_003 + seed)
        self.background = smooth_texture(tex_rng, ARENA, ARENA, cell=16, lo=25, hi=95)
        self.agent_tex = smooth_texture(tex_rng, AGENT, AGENT, cell=4, lo=175, hi=250)
        self.block_tex = [smooth_texture(tex_rng, 12, 12, cell=4, lo=120, hi=170)
                          for _ in range(2)]
        self.target_tex = smooth_texture(tex_rng, 12, 12, cell=6, lo=95, hi=120)
        self.blocks = [np.array(self.A_START, dtype=float), np.array(self.B_START, dtype=float)]
        self.carrying: int | None = None
        self.placed_order: list = []

    def render(self) -> Frame:
        canvas = self.background.copy()
        _blit(canvas, self.target_tex, *self.TARGET)
        for tex, pos in zip(self.block_tex, self.blocks):
            _blit(canvas, tex, int(round(pos[0])), int(round(pos[1])))
        x, y = int(round(self.agent_pos[0])), int(round(self.agent_pos[1]))
        _blit(canvas, self.agent_tex, x, y)
        return Frame(canvas)

    def step(self, action) -> Frame:
        was_carrying = self.carrying
        grip = self.apply_action(action)
        cx, cy = self.agent_center()
        if grip and self.carrying is None:
            for idx, pos in enumerate(self.blocks):
                bx, by = pos + 6.0
                if abs(cx - bx) <= TOUCH_RADIUS and abs(cy - by) <= TOUCH_RADIUS:
                    self.carrying = idx
                    break
        if not grip and was_carrying is not None:
            idx = was_carrying
            self.carrying = None
            tx, ty = self.TARGET[0] + 6.0, self.TARGET[1] + 6.0
            bx, by = self.blocks[idx] + 6.0
            if abs(bx - tx) <= TOUCH_RADIUS and abs(by - ty) <= TOUCH_RADIUS:
                if idx not in self.placed_order:
                    self.placed_order.append(idx)
        if self.carrying is not None:
            self.blocks[self.carrying] = self.agent_center() - 6.0
        self.t += 1
        return self.render()

    def scripted_actions(self) -> np.ndarray:
        # to A, grab, carry to target, drop; to B, grab, carry, drop
        out = []
        out.extend([(0.5, 0.5, 0.0, 0.0)] * 4)          # (24,24) -> (40,40)
        out.append((0.0, 0.0, 1.0, 0.0))                # grab A
        out.extend([(0.0, -0.5, 1.0, 0.0)] * 8)         # carry to (40,8)
        out.append((0.0, 0.0, 0.0, 0.0))                # drop A
        out.extend([(-0.5, 0.0, 0.0, 0.0)] * 8)         # to B at (8,8)
        out.append((0.0, 0.0, 1.0, 0.0))                # grab B
        out.extend([(0.5, 0.0, 1.0, 0.0)] * 8)          # carry to target
        out.append((0.0, 0.0, 0.0, 0.0))                # drop B
        return np.array(out, dtype=np.float32)

    @property
    def warmup_steps(self) -> int:
        return 0

    def success(self) -> bool:
        return self.placed_order == [0, 1]


_ENVS = {
    "direction_memory": DirectionMemoryEnv,
    "press_order": PressOrderEnv,
    "cover_stack_analog": CoverStackEnv,
}


def make_env(task: str, seed: int) -> _Env:
    task_index(task)
    return _ENVS[task](seed)


def generate_episode(task: str, seed: int) -> Episode:
    """Roll the scripted expert through the environment."""
    env = make_env(task, seed)
    actions = env.scripted_actions()
    frames = [env.render()]
    for a in actions:
        frames.append(env.step(a))
    meta = {"seed": seed, "warmup_steps": env.warmup_steps}
    if isinstance(env, DirectionMemoryEnv):
        meta["direction"] = env.direction
    return Episode(task_id=task_index(task), frames=frames, actions=actions, meta=meta)
