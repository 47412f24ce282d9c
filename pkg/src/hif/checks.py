"""Named finite-difference suites for the gradcheck command.

Each suite pairs an operation with randomized float64 inputs and runs the
central-difference comparison at the quoted tolerance. The end-to-end
suite drives the composed pipeline (displacement tensor -> history
encoder -> backbone -> joint expert -> combined loss) and checks every
parameter gradient plus the gradient w.r.t. the displacement values.
"""

from __future__ import annotations

import time

import numpy as np

from . import tensor as T
from .config import RunConfig
from .gradcheck import grad_check
from .policy import Policy, PolicyInput
from .tensor import Tensor
from .training import compute_loss


def toy_config() -> RunConfig:
    return RunConfig(frame_size=32, h=2, n=2, d=8, d_expert=8, heads=2,
                     hindsight_layers=1, backbone_layers=1, expert_layers=1,
                     ffn_mult=2, action_dim=2).validate()


def _t(rng, *dims):
    return Tensor(rng.standard_normal(dims), requires_grad=True)


def op_cases(rng: np.random.Generator) -> list:
    """(name, fn, inputs) triples on small random shapes."""
    cases = []
    d = int(rng.integers(2, 7))
    k = int(rng.integers(2, 6))

    a, b = _t(rng, k, d), _t(rng, k, d)
    cases.append(("add", lambda ins: T.mean(T.gelu(T.add(ins[0], ins[1]))), [a, b]))
    a, b = _t(rng, k, d), _t(rng, d)
    cases.append(("add_bias", lambda ins: T.mean(T.gelu(T.add(ins[0], ins[1]))), [a, b]))
    a, b = _t(rng, k, d), _t(rng, k, d)
    cases.append(("mul", lambda ins: T.mean(T.gelu(T.mul(ins[0], ins[1]))), [a, b]))
    m, kk, n = (int(rng.integers(2, 6)) for _ in range(3))
    a, b = _t(rng, m, kk), _t(rng, kk, n)
    cases.append(("matmul", lambda ins: T.mean(T.gelu(T.matmul(ins[0], ins[1]))), [a, b]))
    w = rng.standard_normal((k, d))
    x = _t(rng, k, d)
    cases.append(("gelu", lambda ins: T.mean(T.mul(T.gelu(ins[0]), Tensor(w))), [x]))
    x = _t(rng, k, d)
    cases.append(("softmax", lambda ins: T.mean(T.mul(T.softmax(ins[0]), Tensor(w))), [x]))
    x = _t(rng, k, d)
    cases.append(("layernorm", lambda ins: T.mean(T.mul(T.layernorm(ins[0]), Tensor(w))), [x]))

    def stats_fn(ins):
        mu, sigma = T.layer_norm_stats(ins[0])
        return T.mean(T.add(T.mul(mu, mu), sigma))

    cases.append(("layer_norm_stats", stats_fn, [_t(rng, k, d)]))
    de = 2 * int(rng.integers(1, 4))
    wr = rng.standard_normal((k, de))
    cases.append(("rope", lambda ins: T.mean(T.mul(T.rope(ins[0]), Tensor(wr))), [_t(rng, k, de)]))
    q, kv, v = _t(rng, k, d), _t(rng, k, d), _t(rng, k, d)
    mask = rng.random((k, k)) < 0.8
    mask[np.arange(k), np.arange(k)] = True
    cases.append(("softmax_attention",
                  lambda ins: T.mean(T.softmax_attention(ins[0], ins[1], ins[2], mask)),
                  [q, kv, v]))
    c_in, c_out = int(rng.integers(1, 3)), int(rng.integers(1, 3))
    x = _t(rng, 2, 4, 4, c_in)
    kn = _t(rng, 2, 2, 2, c_in, c_out)
    bias = _t(rng, c_out)
    cases.append(("conv3d",
                  lambda ins: T.mean(T.gelu(T.conv3d(ins[0], ins[1], stride=2, bias=ins[2]))),
                  [x, kn, bias]))
    p = _t(rng, k, d)
    tgt = Tensor(rng.standard_normal((k, d)) + 4.0)
    cases.append(("l1_loss", lambda ins: T.l1_loss(ins[0], tgt), [p]))
    table = _t(rng, 5, d)
    idx = rng.integers(0, 5, size=4)
    cases.append(("take_rows", lambda ins: T.mean(T.gelu(T.take_rows(ins[0], idx))), [table]))
    return cases


def run_op_suites(tol: float = 1e-5, trials: int = 3, seed: int = 0, log=print) -> bool:
    ok = True
    rng = np.random.default_rng(seed)
    results: dict[str, float] = {}
    for trial in range(trials):
        for name, fn, inputs in op_cases(rng):
            rep = grad_check(fn, inputs, tol=tol)
            results[name] = max(results.get(name, 0.0), rep.max_rel_error)
            if not rep.passed:
                ok = False
                log(f"FAIL {name} (trial {trial}):\n{rep.summary()}")
    for name in sorted(results):
        log(f"ok   {name}: max_rel_error={results[name]:.3e}")
    return ok


def end_to_end_case(seed: int = 0):
    """Composed pipeline in float64 on the toy config.

    Returns (fn, inputs, names): the displacement tensor first, then every
    model parameter.
    """
    cfg = toy_config()
    policy = Policy(cfg, seed=seed, dtype=np.float64)
    rng = np.random.default_rng(seed + 1)
    gh, gw = cfg.grid
    mv = Tensor(rng.uniform(-1, 1, size=(1, cfg.h, gh, gw, 2)), requires_grad=True)
    patches = rng.uniform(0, 1, size=(1, cfg.n_patches, 16 * 16 * cfg.channels))
    tgt_actions = rng.uniform(-1, 1, size=(1, cfg.n, cfg.action_dim))
    tgt_mv = rng.uniform(-1, 1, size=(1, cfg.n, gh, gw, 2))
    # Move conditioning off its zero init so its gradients are exercised.
    for name, t in policy.store.items():
        if "w_gamma" in name or "w_beta" in name:
            t.data[:] = rng.standard_normal(t.data.shape) * 0.2

    def fn(_):
        tokens = policy.hindsight.encode(mv)
        cond = policy.hindsight.condition(tokens)
        m_f, a_f = policy.backbone.forward(Tensor(patches), [0])
        m_t, a_t = policy.expert.forward(m_f, a_f, cond)
        l_a = T.l1_loss(policy.expert.decode_actions(a_t), Tensor(tgt_actions))
        l_mv = T.l1_loss(policy.expert.decode_motion(m_t), Tensor(tgt_mv))
        return T.add(l_a, T.scale(l_mv, cfg.lambda_))

    inputs = [mv] + policy.store.tensors()
    names = ["mv_values"] + policy.store.names()
    return fn, inputs, names


def run_end_to_end(tol: float = 1e-5, seed: int = 0, log=print) -> bool:
    fn, inputs, names = end_to_end_case(seed)
    n_elems = sum(t.size for t in inputs)
    t0 = time.perf_counter()
    rep = grad_check(fn, inputs, tol=tol, names=names)
    dt = time.perf_counter() - t0
    worst = max(rep.inputs, key=lambda r: r.max_rel_error)
    status = "ok  " if rep.passed else "FAIL"
    log(f"{status} end_to_end: {n_elems} gradient elements, worst {worst.max_rel_error:.3e} "
        f"({worst.name}), {dt:.1f}s")
    if not rep.passed:
        log(rep.summary())
    return rep.passed


def run_all(scope: str = "all", tol: float = 1e-5, log=print) -> bool:
    ok = True
    if scope in ("all", "ops"):
        ok = run_op_suites(tol=tol, log=log) and ok
    if scope in ("all", "end_to_end"):
        ok = run_end_to_end(tol=tol, log=log) and ok
    return ok
