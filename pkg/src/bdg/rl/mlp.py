"""Fully connected ReLU network with hand-derived backpropagation.

All parameters live in one flat float64 vector; the per-layer weight and
bias arrays are views into it, and gradients come back in the same layout.
That keeps Adam a handful of vectorised operations and makes the on-disk
layer-major blob a plain ``tobytes()``.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..errors import DimensionMismatch


class Mlp:
    def __init__(self, sizes: Sequence[int], flat: np.ndarray | None = None):
        sizes = [int(s) for s in sizes]
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise ValueError(f"bad layer sizes {sizes}")
        self.sizes = sizes
        n = self.n_params(sizes)
        if flat is None:
            flat = np.zeros(n)
        elif flat.shape != (n,):
            raise DimensionMismatch(f"expected {n} parameters, got {flat.shape}")
        self.flat = np.ascontiguousarray(flat, dtype=np.float64)
        self.weights, self.biases = self._views(self.flat)

    @staticmethod
    def n_params(sizes: Sequence[int]) -> int:
        return sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))

    def _views(self, flat: np.ndarray) -> tuple[list[np.ndarray], list[np.ndarray]]:
        ws, bs = [], []
        pos = 0
        for a, b in zip(self.sizes[:-1], self.sizes[1:]):
            ws.append(flat[pos : pos + a * b].reshape(a, b))
            pos += a * b
            bs.append(flat[pos : pos + b])
            pos += b
        return ws, bs

    @classmethod
    def glorot(cls, sizes: Sequence[int], rng: np.random.Generator) -> "Mlp":
        """Uniform ``±sqrt(6/(fan_in+fan_out))`` weights, zero biases."""
        net = cls(sizes)
        for w in net.weights:
            limit = np.sqrt(6.0 / (w.shape[0] + w.shape[1]))
            w[...] = rng.uniform(-limit, limit, size=w.shape)
        return net

    def copy(self) -> "Mlp":
        return Mlp(self.sizes, self.flat.copy())

    def load(self, other: "Mlp") -> None:
        self.flat[...] = other.flat

    @property
    def d_in(self) -> int:
        return self.sizes[0]

    @property
    def d_out(self) -> int:
        return self.sizes[-1]

    def __call__(self, x: np.ndarray) -> np.ndarray:
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                h = np.maximum(h, 0.0)
        return h

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """Output plus the cache needed by :meth:`backward`.

        ``x`` is one sample ``(d_in,)`` or a batch ``(n, d_in)``.
        """
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1:] != (self.d_in,) or x.ndim > 2:
            raise DimensionMismatch(f"expected input (..., {self.d_in}), got {x.shape}")
        cache = [x]
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                h = np.maximum(h, 0.0)
                cache.append(h)
        return h, cache

    def backward(self, cache: list[np.ndarray], d_out: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
        """Gradient of the loss w.r.t. the flat parameter vector.

        ``cache`` holds the input followed by every hidden activation, as
        returned by :meth:`forward`.
        """
        d_out = np.asarray(d_out, dtype=np.float64)
        x = cache[0]
        if d_out.shape != x.shape[:-1] + (self.d_out,):
            raise DimensionMismatch(f"d_out shape {d_out.shape} does not match output of input {x.shape}")
        if len(cache) != len(self.weights):
            raise DimensionMismatch("cache does not belong to this network")
        grad = np.zeros_like(self.flat) if out is None else out
        gws, gbs = self._views(grad)
        batched = x.ndim == 2
        delta = d_out
        for i in range(len(self.weights) - 1, -1, -1):
            a = cache[i]
            if batched:
                np.matmul(a.T, delta, out=gws[i])
                gbs[i][...] = delta.sum(axis=0)
            else:
                gws[i][...] = np.outer(a, delta)
                gbs[i][...] = delta
            if i > 0:
                delta = (delta @ self.weights[i].T) * (a > 0)
        return grad


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
