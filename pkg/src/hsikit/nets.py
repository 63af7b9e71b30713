"""Minimal dense / transformer layers with hand-written backpropagation.

Everything runs in float64 numpy. Each layer caches what its backward pass
needs during forward; a step is one forward followed by at most one backward.
Gradients accumulate into ``Param.grad`` and are consumed by the optimizer.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import erf

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss or parameter."""


@dataclass
class LossCurve:
    train: list = field(default_factory=list)
    validation: list = field(default_factory=list)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_loss", "val_loss"])
            for i, (tr, va) in enumerate(zip(self.train, self.validation)):
                writer.writerow([i, repr(float(tr)), repr(float(va))])


class Param:
    __slots__ = ("name", "value", "grad")

    def __init__(self, name: str, value: np.ndarray, dtype=np.float64):
        self.name = name
        self.value = np.asarray(value, dtype=dtype)
        self.grad = np.zeros_like(self.value)


def glorot(rng: np.random.Generator, shape: tuple) -> np.ndarray:
    fan_in, fan_out = shape[0], shape[-1]
    std = np.sqrt(2.0 / (fan_in + fan_out))
    return rng.normal(0.0, std, size=shape)


class Linear:
    def __init__(self, rng, in_dim: int, out_dim: int, name: str, dtype=np.float64):
        self.W = Param(f"{name}.W", glorot(rng, (in_dim, out_dim)), dtype=dtype)
        self.b = Param(f"{name}.b", np.zeros(out_dim), dtype=dtype)
        self._x = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = x
        return x @ self.W.value + self.b.value

    def backward(self, dy: np.ndarray) -> np.ndarray:
        x = self._x
        self.W.grad += x.reshape(-1, x.shape[-1]).T @ dy.reshape(-1, dy.shape[-1])
        self.b.grad += dy.reshape(-1, dy.shape[-1]).sum(axis=0)
        return dy @ self.W.value.T

    def params(self) -> list[Param]:
        return [self.W, self.b]


class LayerNorm:
    def __init__(self, dim: int, name: str, eps: float = 1e-6, dtype=np.float64):
        self.gamma = Param(f"{name}.gamma", np.ones(dim), dtype=dtype)
        self.beta = Param(f"{name}.beta", np.zeros(dim), dtype=dtype)
        self.eps = eps

    def forward(self, x: np.ndarray) -> np.ndarray:
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=-1, keepdims=True)
        self._inv = 1.0 / np.sqrt(var + self.eps)
        self._xhat = xc * self._inv
        return self.gamma.value * self._xhat + self.beta.value

    def backward(self, dy: np.ndarray) -> np.ndarray:
        xhat, inv = self._xhat, self._inv
        flat_axes = tuple(range(dy.ndim - 1))
        self.gamma.grad += (dy * xhat).sum(axis=flat_axes)
        self.beta.grad += dy.sum(axis=flat_axes)
        dxhat = dy * self.gamma.value
        mean_dxhat = dxhat.mean(axis=-1, keepdims=True)
        mean_dxhat_xhat = (dxhat * xhat).mean(axis=-1, keepdims=True)
        return inv * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat)

    def params(self) -> list[Param]:
        return [self.gamma, self.beta]


class Gelu:
    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = x
        self._cdf = 0.5 * (1.0 + erf(x / _SQRT2))
        return x * self._cdf

    def backward(self, dy: np.ndarray) -> np.ndarray:
        x = self._x
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
        return dy * (self._cdf + x * pdf)

    def params(self) -> list[Param]:
        return []


class MultiHeadSelfAttention:
    def __init__(self, rng, dim: int, n_heads: int, name: str, dtype=np.float64):
        if dim % n_heads != 0:
            raise ValueError("dim must be divisible by n_heads")
        self.dim, self.n_heads, self.head_dim = dim, n_heads, dim // n_heads
        self.q = Linear(rng, dim, dim, f"{name}.q", dtype=dtype)
        self.k = Linear(rng, dim, dim, f"{name}.k", dtype=dtype)
        self.v = Linear(rng, dim, dim, f"{name}.v", dtype=dtype)
        self.o = Linear(rng, dim, dim, f"{name}.o", dtype=dtype)

    def _split(self, x):
        # (N, S, d) -> (N*h, S, dh); 3-D matmul keeps BLAS batching cheap
        n, s, _ = x.shape
        return np.ascontiguousarray(
            x.reshape(n, s, self.n_heads, self.head_dim).transpose(0, 2, 1, 3)
        ).reshape(n * self.n_heads, s, self.head_dim)

    def _merge(self, x, n, s):
        return np.ascontiguousarray(
            x.reshape(n, self.n_heads, s, self.head_dim).transpose(0, 2, 1, 3)
        ).reshape(n, s, self.dim)

    def forward(self, x: np.ndarray) -> np.ndarray:
        n, s, _ = x.shape
        qh = self._split(self.q.forward(x))
        kh = self._split(self.k.forward(x))
        vh = self._split(self.v.forward(x))
        scores = qh @ kh.transpose(0, 2, 1)
        scores *= 1.0 / np.sqrt(self.head_dim)
        scores -= scores.max(axis=-1, keepdims=True)
        np.exp(scores, out=scores)
        scores /= scores.sum(axis=-1, keepdims=True)
        self._qh, self._kh, self._vh, self._attn = qh, kh, vh, scores
        return self.o.forward(self._merge(scores @ vh, n, s))

    def backward(self, dy: np.ndarray) -> np.ndarray:
        n, s, _ = dy.shape
        qh, kh, vh, attn = self._qh, self._kh, self._vh, self._attn
        d_ctx = self._split(self.o.backward(dy))
        d_vh = attn.transpose(0, 2, 1) @ d_ctx
        d_scores = d_ctx @ vh.transpose(0, 2, 1)
        d_scores -= (d_scores * attn).sum(axis=-1, keepdims=True)
        d_scores *= attn
        d_scores *= 1.0 / np.sqrt(self.head_dim)
        d_qh = d_scores @ kh
        d_kh = d_scores.transpose(0, 2, 1) @ qh
        dx = self.q.backward(self._merge(d_qh, n, s))
        dx += self.k.backward(self._merge(d_kh, n, s))
        dx += self.v.backward(self._merge(d_vh, n, s))
        return dx

    def params(self) -> list[Param]:
        return self.q.params() + self.k.params() + self.v.params() + self.o.params()


class FeedForward:
    def __init__(self, rng, dim: int, hidden: int, name: str, dtype=np.float64):
        self.lin1 = Linear(rng, dim, hidden, f"{name}.lin1", dtype=dtype)
        self.act = Gelu()
        self.lin2 = Linear(rng, hidden, dim, f"{name}.lin2", dtype=dtype)

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.lin2.forward(self.act.forward(self.lin1.forward(x)))

    def backward(self, dy: np.ndarray) -> np.ndarray:
        return self.lin1.backward(self.act.backward(self.lin2.backward(dy)))

    def params(self) -> list[Param]:
        return self.lin1.params() + self.lin2.params()


class TransformerBlock:
    """Pre-norm block: x + attn(ln(x)), then x + ffn(ln(x))."""

    def __init__(self, rng, dim: int, n_heads: int, hidden: int, name: str,
                 dtype=np.float64):
        self.ln1 = LayerNorm(dim, f"{name}.ln1", dtype=dtype)
        self.attn = MultiHeadSelfAttention(rng, dim, n_heads, f"{name}.attn", dtype=dtype)
        self.ln2 = LayerNorm(dim, f"{name}.ln2", dtype=dtype)
        self.ffn = FeedForward(rng, dim, hidden, f"{name}.ffn", dtype=dtype)

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = x + self.attn.forward(self.ln1.forward(x))
        return x + self.ffn.forward(self.ln2.forward(x))

    def backward(self, dy: np.ndarray) -> np.ndarray:
        dx1 = dy + self.ln2.backward(self.ffn.backward(dy))
        return dx1 + self.ln1.backward(self.attn.backward(dx1))

    def params(self) -> list[Param]:
        return (
            self.ln1.params() + self.attn.params() + self.ln2.params() + self.ffn.params()
        )


class SGDMomentum:
    """SGD with classical momentum; weight decay added to the raw gradient."""

    def __init__(self, params: list[Param], lr: float, momentum: float = 0.9,
                 weight_decay: float = 0.0):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self._velocity = [np.zeros_like(p.value) for p in params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad[...] = 0.0

    def step(self) -> None:
        for p, v in zip(self.params, self._velocity):
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.value
            v *= self.momentum
            v += g
            p.value -= self.lr * v


def sinusoidal_positions(n_positions: int, dim: int) -> np.ndarray:
    """Standard sine/cosine positional encodings, shape (n_positions, dim)."""
    pos = np.arange(n_positions, dtype=np.float64)[:, None]
    i = np.arange(dim, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * np.floor(i / 2.0) / dim)
    enc = np.empty((n_positions, dim))
    enc[:, 0::2] = np.sin(angle[:, 0::2])
    enc[:, 1::2] = np.cos(angle[:, 1::2])
    return enc


def flatten_params(params: list[Param]) -> np.ndarray:
    return np.concatenate([p.value.ravel() for p in params])


def load_flat_params(params: list[Param], flat: np.ndarray) -> None:
    offset = 0
    for p in params:
        size = p.value.size
        p.value[...] = flat[offset : offset + size].reshape(p.value.shape)
        offset += size
    if offset != flat.size:
        raise ValueError(f"parameter vector has {flat.size} entries, expected {offset}")


def param_checksum(params: list[Param]) -> str:
    import hashlib

    h = hashlib.sha256()
    for p in params:
        h.update(np.ascontiguousarray(p.value, dtype="<f8").tobytes())
    return h.hexdigest()
