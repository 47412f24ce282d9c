"""Shared model machinery: parameter store, linear maps, attention blocks.

All modules register their parameters in a ParamStore under dotted names
("backbone.layer0.qkv.w", ...), which is also the checkpoint namespace.
Weights use scaled random initialization (std 1/sqrt(fan_in)); biases
start at zero unless a module overrides that (AdaLN does).
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


class ParamStore:
    """Ordered name -> Tensor registry for trainable parameters."""

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.asarray(value, dtype=self.dtype), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def names(self) -> list:
        return list(self._params)

    def tensors(self) -> list:
        return list(self._params.values())

    def items(self):
        return self._params.items()

    def n_parameters(self) -> int:
        return sum(t.size for t in self._params.values())

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def export(self) -> dict:
        return {name: t.data.copy() for name, t in self._params.items()}

    def load(self, arrays: dict):
        missing = set(self._params) - set(arrays)
        extra = set(arrays) - set(self._params)
        if missing or extra:
            raise KeyError(f"checkpoint mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, t in self._params.items():
            arr = np.asarray(arrays[name], dtype=self.dtype)
            if arr.shape != t.data.shape:
                raise ValueError(f"{name}: checkpoint shape {arr.shape} != model shape {t.data.shape}")
            t.data = arr.copy()
            t.grad = None


def init_weight(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    return rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=shape)


class Linear:
    def __init__(self, store: ParamStore, rng, name: str, d_in: int, d_out: int,
                 zero_init: bool = False, bias_fill: float = 0.0):
        w = np.zeros((d_in, d_out)) if zero_init else init_weight(rng, d_in, (d_in, d_out))
        self.w = store.add(f"{name}.w", w)
        self.b = store.add(f"{name}.b", np.full(d_out, bias_fill))

    def __call__(self, x: Tensor) -> Tensor:
        return T.add(T.matmul(x, self.w), self.b)


class LayerNormAffine:
    """Pre-norm layer normalization with a learned elementwise gain/bias."""

    def __init__(self, store: ParamStore, name: str, d: int):
        self.g = store.add(f"{name}.g", np.ones(d))
        self.b = store.add(f"{name}.b", np.zeros(d))

    def __call__(self, x: Tensor) -> Tensor:
        return T.add(T.mul(T.layernorm(x), self.g), self.b)


def split_heads(x: Tensor, heads: int) -> Tensor:
    """(B, K, d) -> (B, heads, K, d/heads)."""
    b, k, d = x.dims
    x = T.reshape(x, (b, k, heads, d // heads))
    return T.transpose(x, (0, 2, 1, 3))


def merge_heads(x: Tensor) -> Tensor:
    """(B, heads, K, d_h) -> (B, K, heads * d_h)."""
    b, h, k, dh = x.dims
    x = T.transpose(x, (0, 2, 1, 3))
    return T.reshape(x, (b, k, h * dh))


class MultiHeadAttention:
    """Jointly projected Q/K/V self-attention over (B, K, d) sequences.

    ``rope_positions`` switches on rotary position encoding of q and k
    (applied per head); without it token order only enters through
    whatever positional information the caller adds to the inputs.
    """

    def __init__(self, store: ParamStore, rng, name: str, d: int, heads: int):
        self.heads = heads
        self.qkv = Linear(store, rng, f"{name}.qkv", d, 3 * d)
        self.out = Linear(store, rng, f"{name}.out", d, d)

    def __call__(self, x: Tensor, mask=None, rope_positions=None) -> Tensor:
        b, k, d = x.dims
        fused = self.qkv(x)
        q = split_heads(T.slice_axis(fused, 0, d, axis=2), self.heads)
        kk = split_heads(T.slice_axis(fused, d, 2 * d, axis=2), self.heads)
        v = split_heads(T.slice_axis(fused, 2 * d, 3 * d, axis=2), self.heads)
        if rope_positions is not None:
            q = T.rope(q, rope_positions)
            kk = T.rope(kk, rope_positions)
        ctx = T.softmax_attention(q, kk, v, mask)
        return self.out(merge_heads(ctx))


class FeedForward:
    def __init__(self, store: ParamStore, rng, name: str, d: int, mult: int):
        self.up = Linear(store, rng, f"{name}.up", d, mult * d)
        self.down = Linear(store, rng, f"{name}.down", mult * d, d)

    def __call__(self, x: Tensor) -> Tensor:
        return self.down(T.gelu(self.up(x)))


class TransformerBlock:
    """Pre-norm block: x += attn(ln(x)); x += ffn(ln(x)). Full attention."""

    def __init__(self, store: ParamStore, rng, name: str, d: int, heads: int, ffn_mult: int):
        self.ln1 = LayerNormAffine(store, f"{name}.ln1", d)
        self.attn = MultiHeadAttention(store, rng, f"{name}.attn", d, heads)
        self.ln2 = LayerNormAffine(store, f"{name}.ln2", d)
        self.ffn = FeedForward(store, rng, f"{name}.ffn", d, ffn_mult)

    def __call__(self, x: Tensor, mask=None) -> Tensor:
        x = T.add(x, self.attn(self.ln1(x), mask))
        return T.add(x, self.ffn(self.ln2(x)))
