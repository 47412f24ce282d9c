"""Behavior-cloning training, closed-loop evaluation, and sweeps.

Training minimizes L_all = L_A + lambda * L_MV (composed in exactly that
expression order), where both terms are element-mean L1 losses over the
predicted action chunk and the predicted future motion chunk. Ground
truth future motion is whatever the block matcher reports on the rendered
episode frames, so the motion pathway is self-consistent with the
extraction stage by construction.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .backbone import frame_to_patches
from .config import RunConfig, TASKS
from .motion import MatchParams, estimate_motion_field
from .policy import Policy, PolicyInput
from .tasks import generate_episode, make_env, task_index
from .tensor import Tensor

TRAIN_SEED_BASE = 10_000_000
EVAL_SEED_BASE = 77_000_000


class TrainDivergence(RuntimeError):
    """Loss became non-finite; carries the offending step index."""

    def __init__(self, step: int):
        super().__init__(f"non-finite loss at step {step}")
        self.step = step


# ------------------------------------------------------------------ data


@dataclass
class EpisodeData:
    """Precomputed per-episode arrays; all later sampling is slicing."""

    task_id: int
    patches: np.ndarray   # (T+1, P, patch_dim)
    fields: np.ndarray    # (T, GH, GW, 2) normalized displacements
    actions: np.ndarray   # (T, 4)
    meta: dict

    @property
    def length(self) -> int:
        return len(self.actions)


def episode_data(episode, cfg: RunConfig) -> EpisodeData:
    params = MatchParams(search_range=cfg.search_range, method="exhaustive")
    patches = np.stack([frame_to_patches(f) for f in episode.frames])
    fields = np.stack([
        estimate_motion_field(a, b, params).vectors
        for a, b in zip(episode.frames[:-1], episode.frames[1:])
    ]).astype(np.float32) / cfg.search_range
    return EpisodeData(episode.task_id, patches, fields, episode.actions, episode.meta)


def history_window(fields: np.ndarray, t: int, h: int) -> np.ndarray:
    """Last h motion fields before step t, zero-padded at episode start."""
    _, gh, gw, _ = fields.shape
    out = np.zeros((h, gh, gw, 2), np.float32)
    got = fields[max(0, t - h) : t]
    if len(got):
        out[h - len(got) :] = got
    return out


def future_window(fields: np.ndarray, t: int, n: int) -> np.ndarray:
    """Motion over steps t..t+n-1, zero-padded past the episode end."""
    _, gh, gw, _ = fields.shape
    out = np.zeros((n, gh, gw, 2), np.float32)
    got = fields[t : t + n]
    if len(got):
        out[: len(got)] = got
    return out


def action_chunk(actions: np.ndarray, t: int, n: int) -> np.ndarray:
    out = np.zeros((n, actions.shape[1]), np.float32)
    got = actions[t : t + n]
    if len(got):
        out[: len(got)] = got
    return out


def stack_window(patches: np.ndarray, t: int, h: int) -> np.ndarray:
    """Patches of the h frames before t, oldest first; start repeats frame 0."""
    idx = [max(0, k) for k in range(t - h, t)]
    return np.concatenate([patches[i] for i in idx], axis=0)


class Dataset:
    def __init__(self, cfg: RunConfig, base_seed: int, n_episodes: int):
        self.cfg = cfg
        self.episodes = [
            episode_data(generate_episode(cfg.task, base_seed + i), cfg)
            for i in range(n_episodes)
        ]
        self.samples = [
            (e, t) for e, ep in enumerate(self.episodes) for t in range(ep.length)
        ]

    def batch(self, indices) -> tuple:
        """Assemble (PolicyInput, action targets, motion targets)."""
        cfg = self.cfg
        pats, ids, mvs, stacks, acts, futs = [], [], [], [], [], []
        needs_mv = cfg.mode in ("expert_conditioned", "vlm_injected") and cfg.h > 0
        for i in indices:
            e, t = self.samples[i]
            ep = self.episodes[e]
            pats.append(ep.patches[t])
            ids.append(ep.task_id)
            acts.append(action_chunk(ep.actions, t, cfg.n))
            futs.append(future_window(ep.fields, t, cfg.n))
            if needs_mv:
                mvs.append(history_window(ep.fields, t, cfg.h))
            if cfg.mode == "frame_stack_baseline":
                stacks.append(stack_window(ep.patches, t, cfg.h))
        inp = PolicyInput(
            patches=np.stack(pats),
            task_ids=np.asarray(ids),
            mv=np.stack(mvs) if mvs else None,
            stack_patches=np.stack(stacks) if stacks else None,
        )
        return inp, np.stack(acts), np.stack(futs)


# ------------------------------------------------------------------ loss


def combine_losses(l_a: Tensor, l_mv: Tensor, lambda_: float, objective: str = "joint") -> Tensor:
    """L_all = L_A + lambda * L_MV, in exactly this expression order.

    The action-only and motion-only objectives keep both terms observable
    but train only one of them.
    """
    if objective == "joint":
        return T.add(l_a, T.scale(l_mv, lambda_))
    if objective == "action_only":
        return l_a
    if objective == "motion_only":
        return l_mv
    raise ValueError(f"unknown objective {objective!r}")


def compute_loss(policy: Policy, inp: PolicyInput, target_actions, target_mv):
    """Returns (L_all, L_A, L_MV) tensors for one batch."""
    cfg = policy.cfg
    dt = policy.store.dtype
    m_tilde, a_tilde, _ = policy.forward(inp)
    pred_actions = policy.expert.decode_actions(a_tilde)
    pred_motion = policy.expert.decode_motion(m_tilde)
    l_a = T.l1_loss(pred_actions, Tensor(np.asarray(target_actions, dtype=dt)))
    l_mv = T.l1_loss(pred_motion, Tensor(np.asarray(target_mv, dtype=dt)))
    return combine_losses(l_a, l_mv, cfg.lambda_, cfg.objective), l_a, l_mv


class Adam:
    """Adaptive-moment optimizer, beta = (0.9, 0.999), eps = 1e-8."""

    def __init__(self, params, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        correct1 = 1.0 - self.b1**self.t
        correct2 = 1.0 - self.b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p.data -= self.lr * (m / correct1) / (np.sqrt(v / correct2) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None


# ------------------------------------------------------------------ train


@dataclass
class TrainResult:
    checkpoint: Path
    history: list = field(default_factory=list)  # per-step dict records


def train(cfg: RunConfig, out_dir=None, quiet: bool = True) -> TrainResult:
    """Behavior-clone the scripted expert; returns the checkpoint path.

    Deterministic for a fixed config and seed: episode generation, batch
    sampling, and initialization all derive from cfg.seed.
    """
    cfg.validate()
    out = Path(out_dir if out_dir is not None else cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    policy = Policy(cfg)
    data = Dataset(cfg, TRAIN_SEED_BASE + cfg.seed * 1000, cfg.episodes)
    adam = Adam(policy.store.tensors(), lr=cfg.lr)
    sampler = np.random.default_rng(cfg.seed + 424242)
    log_path = out / "train_log.txt"
    history = []
    with open(log_path, "w") as log:
        for step in range(1, cfg.steps + 1):
            t0 = time.perf_counter()
            idx = sampler.integers(0, len(data.samples), size=cfg.batch_size)
            inp, tgt_a, tgt_mv = data.batch(idx)
            l_all, l_a, l_mv = compute_loss(policy, inp, tgt_a, tgt_mv)
            if not np.isfinite(l_all.item()):
                raise TrainDivergence(step)
            adam.zero_grad()
            l_all.backward()
            adam.step()
            wall_ms = (time.perf_counter() - t0) * 1000.0
            rec = {"step": step, "L_all": l_all.item(), "L_A": l_a.item(),
                   "L_MV": l_mv.item(), "wall_ms": wall_ms}
            history.append(rec)
            log.write("step=%d L_all=%.6f L_A=%.6f L_MV=%.6f wall_ms=%.2f\n" % (
                step, rec["L_all"], rec["L_A"], rec["L_MV"], wall_ms))
            if not quiet and (step % 100 == 0 or step == 1):
                print(f"step {step}: L_all={rec['L_all']:.4f} L_A={rec['L_A']:.4f} L_MV={rec['L_MV']:.4f}")
    ckpt = out / "checkpoint.hift"
    policy.save(ckpt, step=cfg.steps)
    return TrainResult(checkpoint=ckpt, history=history)


# ------------------------------------------------------------- rollouts


class RolloutFeatures:
    """Incremental feature state for closed-loop control.

    Keeps the frame/patch history and extends the motion-field list by one
    block-matching call per new frame, so inference cost per step does not
    grow with the hindsight length.
    """

    def __init__(self, cfg: RunConfig, first_frame):
        self.cfg = cfg
        self.params = MatchParams(search_range=cfg.search_range, method="exhaustive")
        self.needs_mv = cfg.mode in ("expert_conditioned", "vlm_injected") and cfg.h > 0
        self.frames = [first_frame]
        self.patches = [frame_to_patches(first_frame)]
        gh, gw = cfg.grid
        self.fields: list = []
        self.timings = {"motion_ms": [], "feature_ms": [], "forward_ms": []}

    def push(self, frame):
        if self.needs_mv:
            t0 = time.perf_counter()
            fld = estimate_motion_field(self.frames[-1], frame, self.params)
            self.fields.append(fld.vectors.astype(np.float32) / self.cfg.search_range)
            self.timings["motion_ms"].append((time.perf_counter() - t0) * 1000.0)
        self.frames.append(frame)
        self.patches.append(frame_to_patches(frame))

    def policy_input(self, task_id: int) -> PolicyInput:
        cfg = self.cfg
        t0 = time.perf_counter()
        t = len(self.frames) - 1
        mv = None
        stack = None
        if self.needs_mv:
            gh, gw = cfg.grid
            fields = (np.stack(self.fields) if self.fields
                      else np.zeros((0, gh, gw, 2), np.float32))
            mv = history_window(fields, t, cfg.h)[None]
        if cfg.mode == "frame_stack_baseline":
            idx = [max(0, k) for k in range(t - cfg.h, t)]
            stack = np.concatenate([self.patches[i] for i in idx], axis=0)[None]
        inp = PolicyInput(patches=self.patches[-1][None],
                          task_ids=np.array([task_id]), mv=mv, stack_patches=stack)
        self.timings["feature_ms"].append((time.perf_counter() - t0) * 1000.0)
        return inp


def control_budget(cfg: RunConfig, env) -> int:
    if cfg.task == "direction_memory":
        return cfg.n
    return len(env.scripted_actions()) + cfg.n


def rollout(policy: Policy, cfg: RunConfig, seed: int) -> tuple:
    """One closed-loop episode; returns (success, timing dict)."""
    env = make_env(cfg.task, seed)
    feats = RolloutFeatures(cfg, env.render())
    script = env.scripted_actions()
    for k in range(env.warmup_steps):
        feats.push(env.step(script[k]))
    tid = task_index(cfg.task)
    steps_left = control_budget(cfg, env)
    while steps_left > 0:
        inp = feats.policy_input(tid)
        t0 = time.perf_counter()
        actions, _ = policy.predict(inp)
        feats.timings["forward_ms"].append((time.perf_counter() - t0) * 1000.0)
        n_exec = actions.shape[1] if cfg.execution == "chunk" else 1
        for j in range(min(n_exec, steps_left)):
            feats.push(env.step(actions[0, j]))
            steps_left -= 1
            if steps_left == 0:
                break
    return env.success(), feats.timings


def expert_rollout_success(cfg: RunConfig, seed: int) -> bool:
    """Replay the scripted expert end to end (oracle policy)."""
    env = make_env(cfg.task, seed)
    for a in env.scripted_actions():
        env.step(a)
    return env.success()


# ------------------------------------------------------------- evaluate


def evaluate(policy: Policy, cfg: RunConfig, trials: int, base_seed: int | None = None,
             with_losses: bool = True) -> dict:
    """Closed-loop success rate plus latency and token-count accounting."""
    base = EVAL_SEED_BASE if base_seed is None else base_seed
    successes = 0
    agg = {"motion_ms": [], "feature_ms": [], "forward_ms": []}
    for k in range(trials):
        ok, timings = rollout(policy, cfg, base + k)
        successes += bool(ok)
        for key in agg:
            agg[key].extend(timings[key])
    report = {
        "task": cfg.task,
        "mode": cfg.mode,
        "h": cfg.h,
        "trials": trials,
        "success_rate": successes / trials,
        "latency_ms": {k: (float(np.median(v)) if v else 0.0) for k, v in agg.items()},
        "backbone_tokens": cfg.backbone_tokens(),
    }
    if with_losses:
        report["mean_losses"] = eval_losses(policy, cfg)
    return report


def eval_losses(policy: Policy, cfg: RunConfig, episodes: int = 4) -> dict:
    data = Dataset(cfg, EVAL_SEED_BASE + 500_000, episodes)
    idx = list(range(min(len(data.samples), 64)))
    inp, tgt_a, tgt_mv = data.batch(idx)
    with T.no_grad():
        l_all, l_a, l_mv = compute_loss(policy, inp, tgt_a, tgt_mv)
    return {"L_all": l_all.item(), "L_A": l_a.item(), "L_MV": l_mv.item()}


def measure_chunk_latency(policy: Policy, cfg: RunConfig, reps: int = 30,
                          seed: int = 12345) -> dict:
    """Median wall time to produce one action chunk in steady state.

    Includes incremental feature work (one block-matching call for the
    newest frame pair in history-conditioned modes, patch extraction) and
    the network forward; excludes the environment step itself.
    """
    env = make_env(cfg.task, seed)
    feats = RolloutFeatures(cfg, env.render())
    script = env.scripted_actions()
    for k in range(min(len(script), max(cfg.h, 1))):
        feats.push(env.step(script[k % len(script)]))
    tid = task_index(cfg.task)
    totals = []
    for _ in range(3):  # warmup
        inp = feats.policy_input(tid)
        policy.predict(inp)
    for _ in range(reps):
        t0 = time.perf_counter()
        inp = feats.policy_input(tid)
        actions, _ = policy.predict(inp)
        totals.append((time.perf_counter() - t0) * 1000.0)
        feats.push(env.step(actions[0, 0]))
    # feats.push above also pays the per-frame motion cost; include its
    # median in the per-chunk figure since one new field is ingested per
    # decision in steady state.
    motion = float(np.median(feats.timings["motion_ms"])) if feats.timings["motion_ms"] else 0.0
    return {
        "total_ms": float(np.median(totals)) + motion,
        "forward_ms": float(np.median(totals)),
        "motion_ms": motion,
    }


# --------------------------------------------------------------- sweeps


def sweep_hindsight(cfg: RunConfig, h_values, trials: int = 50,
                    train_steps: int | None = None, out_dir=None) -> list:
    """Per-h success, latency, and token counts (training budget per row)."""
    rows = []
    for h in h_values:
        row_cfg = RunConfig.from_json_dict({**cfg.to_json_dict(), "h": int(h)})
        if train_steps is not None:
            row_cfg.steps = train_steps
        res = train(row_cfg, out_dir=Path(out_dir or row_cfg.out_dir) / f"h{h}")
        policy, _ = Policy.load(res.checkpoint)
        rep = evaluate(policy, row_cfg, trials, with_losses=False)
        lat = measure_chunk_latency(policy, row_cfg)
        rows.append({
            "h": int(h),
            "success_rate": rep["success_rate"],
            "latency_ms": lat["total_ms"],
            "forward_ms": lat["forward_ms"],
            "motion_ms": lat["motion_ms"],
            "backbone_tokens": row_cfg.backbone_tokens(),
        })
    return rows


def sweep_modes(cfg: RunConfig, modes, trials: int = 50,
                train_steps: int | None = None, out_dir=None) -> list:
    """Identical-budget training runs across history-embedding modes."""
    rows = []
    for mode in modes:
        row_cfg = RunConfig.from_json_dict({**cfg.to_json_dict(), "mode": mode})
        if train_steps is not None:
            row_cfg.steps = train_steps
        res = train(row_cfg, out_dir=Path(out_dir or row_cfg.out_dir) / f"mode_{mode}")
        policy, _ = Policy.load(res.checkpoint)
        rep = evaluate(policy, row_cfg, trials, with_losses=False)
        rows.append({
            "mode": mode,
            "success_rate": rep["success_rate"],
            "backbone_tokens": row_cfg.backbone_tokens(),
            "steps": row_cfg.steps,
        })
    return rows


def joint_training_comparison(cfg: RunConfig, out_dir=None) -> dict:
    """Motion-loss curves with and without the action branch."""
    curves = {}
    for objective in ("joint", "motion_only"):
        row_cfg = RunConfig.from_json_dict({**cfg.to_json_dict(), "objective": objective})
        res = train(row_cfg, out_dir=Path(out_dir or row_cfg.out_dir) / f"obj_{objective}")
        curves[objective] = [(r["step"], r["L_MV"]) for r in res.history]
    return curves


def sweep_lambda(cfg: RunConfig, values, trials: int = 50,
                 train_steps: int | None = None, out_dir=None) -> list:
    rows = []
    for lam in values:
        row_cfg = RunConfig.from_json_dict({**cfg.to_json_dict(), "lambda": float(lam)})
        if train_steps is not None:
            row_cfg.steps = train_steps
        res = train(row_cfg, out_dir=Path(out_dir or row_cfg.out_dir) / f"lambda_{lam}")
        policy, _ = Policy.load(res.checkpoint)
        rep = evaluate(policy, row_cfg, trials, with_losses=False)
        rows.append({"lambda": float(lam), "success_rate": rep["success_rate"]})
    return rows
