"""Dense-tensor engine with reverse-mode automatic differentiation.

Tensors wrap a row-major numpy buffer in float32 or float64. Every
operation that participates in training records its inputs and a
vector-Jacobian product, so calling ``backward()`` on a scalar loss fills
``.grad`` on every reachable leaf with ``requires_grad=True``.

Scope is deliberately small: dense tensors only, two dtypes, and the
single broadcasting rule the model architecture needs (a trailing-axes
operand against a larger tensor, as in per-token bias addition and
per-channel scaling). Any other shape mismatch raises ``ShapeError``.
Scalars are rank-1 tensors of extent 1.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

DTYPES = (np.float32, np.float64)

# Denominator guard used by normalization layers so constant tokens do not
# divide by zero: sigma is replaced by sqrt(var + NORM_EPS).
NORM_EPS = 1e-5


class ShapeError(ValueError):
    """Operand dimensions violate an operation's contract."""


class GraphError(RuntimeError):
    """Misuse of the computation graph (non-scalar root, double backward)."""


_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


class no_grad:
    """Context manager that disables graph recording (thread-local)."""

    def __enter__(self):
        self._prev = _grad_enabled()
        _state.grad_enabled = False
        return self

    def __exit__(self, *exc):
        _state.grad_enabled = self._prev
        return False


class Tensor:
    """A dense array plus the bookkeeping needed for reverse-mode autodiff.

    Leaf tensors (parameters, inputs) are created directly; interior nodes
    are created by the operations in this module and carry a closure that
    maps the output gradient to gradients for each parent.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp", "_backward_done")

    def __init__(self, data, dtype=None, requires_grad: bool = False):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in DTYPES:
            arr = arr.astype(np.float32 if dtype is None else dtype)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if arr.size == 0:
            raise ShapeError("tensors must have at least one element")
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._vjp: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None
        self._backward_done = False

    # -- introspection -------------------------------------------------

    @property
    def dims(self) -> tuple:
        return self.data.shape

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise GraphError(f"item() on tensor of dims {self.dims}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def __repr__(self):
        return f"Tensor(dims={self.dims}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"

    # -- operator sugar ------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    # -- autodiff ------------------------------------------------------

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Populate ``.grad`` on every reachable ``requires_grad`` leaf.

        The root must be a scalar (size-1) tensor. Calling backward twice
        on the same root without rebuilding the graph raises, because the
        second pass would silently double-accumulate leaf gradients.
        """
        if self.data.size != 1:
            raise GraphError(f"backward() root must be scalar, got dims {self.dims}")
        if self._backward_done:
            raise GraphError("backward() already ran for this graph root; rebuild the graph or zero grads first")
        self._backward_done = True

        order = _toposort(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in order:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._vjp is None:
                if node.requires_grad:
                    node.grad = g if node.grad is None else node.grad + g
                continue
            parent_grads = node._vjp(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def _toposort(root: Tensor) -> list:
    """Reverse topological order of the graph above ``root`` (iterative)."""
    order: list = []
    seen: set = set()
    stack: list = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    order.reverse()
    return order


def _make(data: np.ndarray, parents: tuple, vjp) -> Tensor:
    requires = _grad_enabled() and any(p.requires_grad for p in parents)
    out = Tensor(data)
    if requires:
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp
    return out


def _check_same_dtype(a: Tensor, b: Tensor, op: str):
    if a.data.dtype != b.data.dtype:
        raise ShapeError(f"{op}: dtype mismatch {a.data.dtype.name} vs {b.data.dtype.name}")


def _check_broadcast(a: Tensor, b: Tensor, op: str):
    """Permit exactly two broadcast patterns beyond identical dims.

    1. trailing: b.dims == a.dims[-b.ndim:], e.g. a per-feature bias
       against a (tokens, features) matrix;
    2. singleton: equal rank with axes either matching or extent 1 on one
       side, e.g. a (B, 1, d) modulation against (B, K, d) tokens.

    Anything else is a shape error; keeping the rule small keeps gradient
    bookkeeping auditable.
    """
    if a.dims == b.dims:
        return
    if b.data.ndim < a.data.ndim and a.dims[a.data.ndim - b.data.ndim:] == b.dims:
        return
    if a.data.ndim == b.data.ndim and all(
        x == y or x == 1 or y == 1 for x, y in zip(a.dims, b.dims)
    ):
        return
    raise ShapeError(f"{op}: dims {a.dims} and {b.dims} are not identical, trailing-, or singleton-compatible")


def _reduce_to(grad: np.ndarray, dims: tuple) -> np.ndarray:
    """Undo broadcasting: sum grad down to the operand's dims."""
    extra = grad.ndim - len(dims)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    squeeze = tuple(i for i, d in enumerate(dims) if d == 1 and grad.shape[i] != 1)
    if squeeze:
        grad = grad.sum(axis=squeeze, keepdims=True)
    return grad


# -- elementwise ------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b, "add")
    _check_broadcast(a, b, "add")
    out = a.data + b.data

    def vjp(g):
        return _reduce_to(g, a.dims), _reduce_to(g, b.dims)

    return _make(out, (a, b), vjp)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b, "sub")
    _check_broadcast(a, b, "sub")
    out = a.data - b.data

    def vjp(g):
        return _reduce_to(g, a.dims), -_reduce_to(g, b.dims)

    return _make(out, (a, b), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b, "mul")
    _check_broadcast(a, b, "mul")
    out = a.data * b.data
    a_data, b_data = a.data, b.data

    def vjp(g):
        return _reduce_to(g * b_data, a.dims), _reduce_to(g * a_data, b.dims)

    return _make(out, (a, b), vjp)


def scale(a: Tensor, c: float) -> Tensor:
    c = a.data.dtype.type(c)
    out = a.data * c

    def vjp(g):
        return (g * c,)

    return _make(out, (a,), vjp)


def gelu(a: Tensor) -> Tensor:
    """Gaussian error linear unit (tanh approximation)."""
    x = a.data
    dt = x.dtype.type
    c = dt(np.sqrt(2.0 / np.pi))
    k = dt(0.044715)
    xx = x * x
    inner = (c * k) * (xx * x)
    inner += c * x
    t = np.tanh(inner)
    half_x = dt(0.5) * x
    out = half_x + half_x * t

    def vjp(g):
        sech2 = 1 - t * t
        d_inner = c + (3 * c * k) * xx
        return (g * (dt(0.5) * (1 + t) + half_x * sech2 * d_inner),)

    return _make(out, (a,), vjp)


# -- shape manipulation -----------------------------------------------


def reshape(a: Tensor, dims: Sequence[int]) -> Tensor:
    dims = tuple(int(d) for d in dims)
    out = a.data.reshape(dims)
    src = a.dims

    def vjp(g):
        return (g.reshape(src),)

    return _make(out, (a,), vjp)


def transpose(a: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    if axes is None:
        if a.data.ndim < 2:
            raise ShapeError("transpose needs rank >= 2")
        axes = list(range(a.data.ndim))
        axes[-1], axes[-2] = axes[-2], axes[-1]
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = np.transpose(a.data, axes)

    def vjp(g):
        return (np.transpose(g, inv),)

    return _make(out, (a,), vjp)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    if not tensors:
        raise ShapeError("concat of zero tensors")
    dt = tensors[0].data.dtype
    for t in tensors[1:]:
        if t.data.dtype != dt:
            raise ShapeError("concat: mixed dtypes")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.dims[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(out, tuple(tensors), vjp)


def slice_axis(a: Tensor, start: int, stop: int, axis: int = 0) -> Tensor:
    """Contiguous slice along one axis (gradient scatters back as zeros)."""
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    out = a.data[idx]
    src_dims = a.dims

    def vjp(g):
        full = np.zeros(src_dims, dtype=g.dtype)
        full[idx] = g
        return (full,)

    return _make(out, (a,), vjp)


def take_rows(table: Tensor, indices) -> Tensor:
    """Row gather from a 2-D table; gradients scatter-add into the table."""
    if table.data.ndim != 2:
        raise ShapeError(f"take_rows expects a 2-D table, got dims {table.dims}")
    idx = np.asarray(indices, dtype=np.int64)
    n_rows = table.dims[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n_rows):
        raise IndexError(f"take_rows: index out of range for table with {n_rows} rows")
    out = table.data[idx]

    def vjp(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        return (gt,)

    return _make(out, (table,), vjp)


# -- reductions and losses --------------------------------------------


def tsum(a: Tensor) -> Tensor:
    out = np.array([a.data.sum()], dtype=a.data.dtype)
    src = a.dims

    def vjp(g):
        return (np.broadcast_to(g.reshape(()), src).astype(a.data.dtype) * 1,)

    return _make(out, (a,), vjp)


def mean(a: Tensor) -> Tensor:
    n = a.data.size
    out = np.array([a.data.mean()], dtype=a.data.dtype)
    src = a.dims

    def vjp(g):
        val = (g.reshape(()) / n).astype(a.data.dtype)
        return (np.full(src, val, dtype=a.data.dtype),)

    return _make(out, (a,), vjp)


def l1_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean absolute deviation over all elements.

    The subgradient at exact ties is 0 (np.sign convention), which keeps
    updates quiet once a coordinate matches its target.
    """
    _check_same_dtype(pred, target, "l1_loss")
    if pred.dims != target.dims:
        raise ShapeError(f"l1_loss: dims {pred.dims} vs {target.dims}")
    diff = pred.data - target.data
    out = np.array([np.abs(diff).mean()], dtype=pred.data.dtype)
    n = pred.data.size

    def vjp(g):
        s = np.sign(diff) * (g.reshape(()) / n)
        return s.astype(pred.data.dtype), (-s).astype(pred.data.dtype)

    return _make(out, (pred, target), vjp)


# -- linear algebra ---------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product on the last two axes, with stacked leading axes.

    Either operand may carry extra leading axes (numpy matmul broadcast);
    gradients for the smaller operand are reduced back over those axes, so
    a shared (K, N) weight against a (B, M, K) batch works directly.
    """
    _check_same_dtype(a, b, "matmul")
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.dims} and {b.dims}")
    if a.dims[-1] != b.dims[-2]:
        raise ShapeError(f"matmul: inner extents differ for dims {a.dims} and {b.dims}")
    out = np.matmul(a.data, b.data)
    a_data, b_data = a.data, b.data

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(b_data, -1, -2))
        gb = np.matmul(np.swapaxes(a_data, -1, -2), g)
        return _reduce_to(ga, a.dims).reshape(a.dims), _reduce_to(gb, b.dims).reshape(b.dims)

    return _make(out, (a, b), vjp)


def softmax(a: Tensor) -> Tensor:
    """Row softmax over the last axis (max-subtracted for stability)."""
    x = a.data
    m = np.max(x, axis=-1, keepdims=True)
    # Rows that are entirely -inf have no admissible outcome.
    if np.any(np.isneginf(m)):
        raise ShapeError("softmax: a row is fully masked (all -inf)")
    e = np.exp(x - m)
    out = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - dot),)

    return _make(out, (a,), vjp)


def layer_norm_stats(z: Tensor) -> tuple:
    """Per-token mean and population standard deviation over the last axis.

    Returns raw statistics (no epsilon guard): a constant token yields
    sigma = 0, which downstream normalization handles via NORM_EPS.
    """
    d = z.dims[-1]
    if d < 2:
        raise ShapeError("layer_norm_stats: last axis must have extent >= 2")
    x = z.data
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered**2).mean(axis=-1, keepdims=True)
    sigma = np.sqrt(var)

    def vjp_mu(g):
        return (np.broadcast_to(g / d, x.shape).astype(x.dtype),)

    def vjp_sigma(g):
        # d sigma / d z = centered / (d * sigma); guard constant tokens.
        safe = np.where(sigma > 0, sigma, 1.0)
        grad = centered / (d * safe)
        grad = np.where(sigma > 0, grad, 0.0)
        return (g * grad,)

    return _make(mu, (z,), vjp_mu), _make(sigma, (z,), vjp_sigma)


def layernorm(z: Tensor, eps: float = NORM_EPS) -> Tensor:
    """(z - mu) / sqrt(var + eps) over the last axis, fully differentiable."""
    d = z.dims[-1]
    if d < 2:
        raise ShapeError("layernorm: last axis must have extent >= 2")
    x = z.data
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered**2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + x.dtype.type(eps))
    out = centered * inv

    def vjp(g):
        # Standard layer-norm backward in terms of the normalized output.
        g_mean = g.mean(axis=-1, keepdims=True)
        gy_mean = (g * out).mean(axis=-1, keepdims=True)
        return ((g - g_mean - out * gy_mean) * inv,)

    return _make(out, (z,), vjp)


def softmax_attention(q: Tensor, k: Tensor, v: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
    """Scaled dot-product attention over token matrices.

    q, k, v share dims (..., K, d_h). ``mask`` is a boolean (K, K) array
    where True marks a visible position; hidden positions get -inf logits
    before the softmax. A row with no visible position is an error.
    """
    if q.dims != k.dims or q.dims != v.dims:
        raise ShapeError(f"softmax_attention: q/k/v dims differ: {q.dims}, {k.dims}, {v.dims}")
    n_tok = q.dims[-2]
    d_h = q.dims[-1]
    logits = matmul(q, transpose(k))
    logits = scale(logits, 1.0 / np.sqrt(d_h))
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (n_tok, n_tok):
            raise ShapeError(f"softmax_attention: mask dims {mask.shape} != ({n_tok}, {n_tok})")
        rows_all_hidden = ~mask.any(axis=-1)
        if rows_all_hidden.any():
            row = int(np.nonzero(rows_all_hidden)[0][0])
            raise ShapeError(f"softmax_attention: row {row} of the mask hides every position")
        bias = np.where(mask, 0.0, -np.inf).astype(q.data.dtype)
        logits = add(logits, Tensor(bias))
    weights = softmax(logits)
    return matmul(weights, v)


# -- rotary position encoding -----------------------------------------


_rope_cache: dict = {}


def rope_angles(n_positions: int, d: int, base: float = 10000.0) -> tuple:
    """cos/sin tables for pairwise 2-plane rotations, dims (n_positions, d/2).

    Tables are cached; callers must not mutate them.
    """
    if d % 2 != 0:
        raise ShapeError("rope: feature extent must be even")
    key = (n_positions, d, base)
    hit = _rope_cache.get(key)
    if hit is not None:
        return hit
    half = d // 2
    freqs = base ** (-np.arange(half, dtype=np.float64) * 2.0 / d)
    theta = np.arange(n_positions, dtype=np.float64)[:, None] * freqs[None, :]
    tables = (np.cos(theta), np.sin(theta))
    if len(_rope_cache) < 64:
        _rope_cache[key] = tables
    return tables


def rope(x: Tensor, positions: Optional[np.ndarray] = None, base: float = 10000.0) -> Tensor:
    """Rotate adjacent feature pairs of each token by a position-dependent angle.

    A pure rotation, so vector norms are preserved and the backward pass is
    the transpose rotation (negated angles).
    """
    n_tok = x.dims[-2]
    d = x.dims[-1]
    if positions is None:
        positions = np.arange(n_tok)
    positions = np.asarray(positions, dtype=np.int64)
    if positions.shape != (n_tok,):
        raise ShapeError(f"rope: positions dims {positions.shape} != ({n_tok},)")
    cos, sin = rope_angles(int(positions.max()) + 1 if positions.size else 1, d, base)
    cos = cos[positions].astype(x.data.dtype)
    sin = sin[positions].astype(x.data.dtype)

    xe = x.data[..., 0::2]
    xo = x.data[..., 1::2]
    out = np.empty_like(x.data)
    out[..., 0::2] = xe * cos - xo * sin
    out[..., 1::2] = xe * sin + xo * cos

    def vjp(g):
        ge = g[..., 0::2]
        go = g[..., 1::2]
        gi = np.empty_like(g)
        gi[..., 0::2] = ge * cos + go * sin
        gi[..., 1::2] = -ge * sin + go * cos
        return (gi,)

    return _make(out, (x,), vjp)


# -- convolution -------------------------------------------------------


def _conv3d_check(in_dims, kt, kh, kw, stride):
    T, H, W = in_dims
    for name, extent, kk in (("time", T, kt), ("height", H, kh), ("width", W, kw)):
        if extent % stride != 0:
            raise ShapeError(f"conv3d: stride {stride} does not divide {name} extent {extent}")
        if (extent - kk) % stride != 0:
            raise ShapeError(f"conv3d: kernel {kk} with stride {stride} does not tile {name} extent {extent}")
        if kk > extent:
            raise ShapeError(f"conv3d: kernel {kk} exceeds {name} extent {extent}")


def conv3d(x: Tensor, kernel: Tensor, stride: int, bias: Optional[Tensor] = None) -> Tensor:
    """Strided 3-D cross-correlation over (time, height, width).

    x: (..., T, H, W, C_in), kernel: (kt, kh, kw, C_in, C_out). No padding;
    the stride must tile each extent exactly (kernel == stride gives pure
    non-overlapping blocks). Output: (..., T', H', W', C_out).
    """
    _check_same_dtype(x, kernel, "conv3d")
    if kernel.data.ndim != 5:
        raise ShapeError(f"conv3d: kernel must be rank 5, got dims {kernel.dims}")
    if x.data.ndim < 4:
        raise ShapeError(f"conv3d: input must be rank >= 4, got dims {x.dims}")
    kt, kh, kw, c_in, c_out = kernel.dims
    *lead, T, H, W, C = x.dims
    if C != c_in:
        raise ShapeError(f"conv3d: input channels {C} != kernel channels {c_in}")
    _conv3d_check((T, H, W), kt, kh, kw, stride)
    to = (T - kt) // stride + 1
    ho = (H - kh) // stride + 1
    wo = (W - kw) // stride + 1

    # im2col: gather every kernel window, then one matmul.
    view = np.lib.stride_tricks.sliding_window_view(x.data, (kt, kh, kw), axis=(-4, -3, -2))
    # view dims: (*lead, T-kt+1, H-kh+1, W-kw+1, C, kt, kh, kw)
    view = view[..., ::stride, ::stride, ::stride, :, :, :, :]
    cols = np.ascontiguousarray(np.moveaxis(view, -4, -1))  # (..., to, ho, wo, kt, kh, kw, C)
    lead_shape = tuple(lead)
    cols2 = cols.reshape(lead_shape + (to * ho * wo, kt * kh * kw * c_in))
    kmat = kernel.data.reshape(kt * kh * kw * c_in, c_out)
    out = np.matmul(cols2, kmat).reshape(lead_shape + (to, ho, wo, c_out))
    if bias is not None:
        if bias.dims != (c_out,):
            raise ShapeError(f"conv3d: bias dims {bias.dims} != ({c_out},)")
        out = out + bias.data

    x_dims = x.dims

    def vjp(g):
        g2 = g.reshape(lead_shape + (to * ho * wo, c_out))
        gk = np.matmul(np.swapaxes(cols2, -1, -2), g2)
        gk = _reduce_to(gk, (kt * kh * kw * c_in, c_out)).reshape(kernel.dims)
        gcols = np.matmul(g2, kmat.T).reshape(lead_shape + (to, ho, wo, kt, kh, kw, c_in))
        gx = np.zeros(x_dims, dtype=g.dtype)
        for it in range(kt):
            for ih in range(kh):
                for iw in range(kw):
                    gx[..., it : it + to * stride : stride,
                       ih : ih + ho * stride : stride,
                       iw : iw + wo * stride : stride, :] += gcols[..., it, ih, iw, :]
        grads = [gx, gk]
        if bias is not None:
            gb = g.reshape(-1, c_out).sum(axis=0)
            grads.append(gb)
        return tuple(grads)

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return _make(out, parents, vjp)
