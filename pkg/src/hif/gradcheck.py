"""Finite-difference verification of analytic gradients.

``grad_check`` compares the engine's reverse-mode gradients against
central differences. It is the one gradient oracle in the repo: it never
calls ``backward`` to produce its reference values, only repeated forward
evaluations of the function under test.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


@dataclass
class InputReport:
    """Comparison result for one input tensor."""

    name: str
    max_rel_error: float
    worst_index: tuple
    passed: bool
    message: str = ""


@dataclass
class GradCheckReport:
    inputs: list = field(default_factory=list)
    tol: float = 0.0

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.inputs)

    @property
    def max_rel_error(self) -> float:
        return max((r.max_rel_error for r in self.inputs), default=0.0)

    def summary(self) -> str:
        lines = []
        for r in self.inputs:
            status = "ok" if r.passed else "FAIL"
            extra = f" ({r.message})" if r.message else ""
            lines.append(f"{status:4s} {r.name}: max_rel_error={r.max_rel_error:.3e} at {r.worst_index}{extra}")
        return "\n".join(lines)


def _rel_error(a: np.ndarray, n: np.ndarray) -> np.ndarray:
    # Relative above magnitude 1, absolute below: keeps near-zero gradients
    # from inflating the metric while still catching scale errors.
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1.0)
    return np.abs(a - n) / denom


def grad_check(
    fn: Callable[[Sequence[Tensor]], Tensor],
    inputs: Sequence[Tensor],
    tol: float = 1e-5,
    step: float = 1e-5,
    names: Sequence[str] | None = None,
) -> GradCheckReport:
    """Check d fn / d input against central differences for every element.

    ``fn`` must be deterministic and scalar-valued, and must read the
    current ``.data`` of each input on every call (the inputs are perturbed
    in place). Inputs should be float64 for the quoted tolerances to be
    meaningful. NaN or Inf in either gradient fails immediately, naming
    the offending element.
    """
    if names is None:
        names = [f"input{i}" for i in range(len(inputs))]
    for t in inputs:
        t.requires_grad = True
        t.grad = None

    out = fn(inputs)
    if out.size != 1:
        raise ValueError(f"grad_check: fn must be scalar-valued, got dims {out.dims}")
    out.backward()

    report = GradCheckReport(tol=tol)
    for t, name in zip(inputs, names):
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        bad = ~np.isfinite(analytic)
        if bad.any():
            idx = tuple(int(i) for i in np.argwhere(bad)[0])
            report.inputs.append(InputReport(name, float("inf"), idx, False,
                                             f"non-finite analytic gradient at {idx}"))
            continue

        numeric = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        nflat = numeric.reshape(-1)
        failed = None
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            f_plus = fn(inputs).item()
            flat[i] = orig - step
            f_minus = fn(inputs).item()
            flat[i] = orig
            val = (f_plus - f_minus) / (2.0 * step)
            if not np.isfinite(val):
                failed = tuple(int(j) for j in np.unravel_index(i, t.data.shape))
                break
            nflat[i] = val
        if failed is not None:
            report.inputs.append(InputReport(name, float("inf"), failed, False,
                                             f"non-finite numeric gradient at {failed}"))
            continue

        err = _rel_error(analytic, numeric)
        worst = tuple(int(j) for j in np.unravel_index(int(err.argmax()), err.shape))
        report.inputs.append(InputReport(name, float(err.max()), worst, bool(err.max() <= tol)))
    return report
