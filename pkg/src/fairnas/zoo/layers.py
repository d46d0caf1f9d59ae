"""Layers with explicit forward and backward passes on numpy arrays.

Parameters are not owned by the layers: every call receives the flat
``params`` dict of a :class:`~fairnas.zoo.models.ModelState` and gradients are
accumulated into a dict with the same keys. A layer caches what its backward
pass needs on ``self``, so one network instance serves one thread at a time.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

BN_MOMENTUM = 0.1
NORM_EPS = 1e-5


@dataclass
class Context:
    train: bool = False
    rng: np.random.Generator | None = None
    buffers: dict = field(default_factory=dict)
    update_buffers: bool = False


class Layer:
    name = ""

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {}

    def buffer_shapes(self) -> dict[str, tuple[int, ...]]:
        return {}

    def init(self, rng: np.random.Generator, params: dict, buffers: dict) -> None:
        pass

    def forward(self, params: dict, x: np.ndarray, ctx: Context) -> np.ndarray:
        raise NotImplementedError

    def backward(self, params: dict, g: np.ndarray, grads: dict) -> np.ndarray:
        raise NotImplementedError

    def children(self) -> list["Layer"]:
        return []

    def walk(self):
        yield self
        for child in self.children():
            yield from child.walk()


def _accumulate(grads: dict, key: str, value: np.ndarray) -> None:
    if key in grads:
        grads[key] += value
    else:
        grads[key] = value


class Linear(Layer):
    """``x @ W + b`` over the last axis; W and b ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""

    def __init__(self, name: str, fan_in: int, fan_out: int):
        self.name, self.fan_in, self.fan_out = name, fan_in, fan_out
        self.w, self.b = f"{name}.weight", f"{name}.bias"

    def shapes(self):
        return {self.w: (self.fan_in, self.fan_out), self.b: (self.fan_out,)}

    def init(self, rng, params, buffers):
        bound = 1.0 / np.sqrt(self.fan_in)
        params[self.w] = rng.uniform(-bound, bound, (self.fan_in, self.fan_out))
        params[self.b] = rng.uniform(-bound, bound, self.fan_out)

    def forward(self, params, x, ctx):
        self._x = x
        return x @ params[self.w] + params[self.b]

    def backward(self, params, g, grads):
        x2 = self._x.reshape(-1, self.fan_in)
        g2 = g.reshape(-1, self.fan_out)
        _accumulate(grads, self.w, x2.T @ g2)
        _accumulate(grads, self.b, g2.sum(axis=0))
        return g @ params[self.w].T


class ReLU(Layer):
    def forward(self, params, x, ctx):
        self._mask = x > 0
        return x * self._mask

    def backward(self, params, g, grads):
        return g * self._mask


class Dropout(Layer):
    """Inverted dropout; identity outside training or when ``p == 0``."""

    def __init__(self, p: float):
        self.p = float(p)

    def forward(self, params, x, ctx):
        if not ctx.train or self.p <= 0.0:
            self._mask = None
            return x
        keep = ctx.rng.random(x.shape, dtype=x.dtype) >= self.p
        self._mask = keep * x.dtype.type(1.0 / (1.0 - self.p))
        return x * self._mask

    def backward(self, params, g, grads):
        return g if self._mask is None else g * self._mask


class BatchNorm(Layer):
    """Batch normalization over rows; running statistics with momentum 0.1."""

    def __init__(self, name: str, dim: int):
        self.name, self.dim = name, dim
        self.gamma, self.beta = f"{name}.weight", f"{name}.bias"
        self.rmean, self.rvar = f"{name}.running_mean", f"{name}.running_var"

    def shapes(self):
        return {self.gamma: (self.dim,), self.beta: (self.dim,)}

    def buffer_shapes(self):
        return {self.rmean: (self.dim,), self.rvar: (self.dim,)}

    def init(self, rng, params, buffers):
        params[self.gamma] = np.ones(self.dim)
        params[self.beta] = np.zeros(self.dim)
        buffers[self.rmean] = np.zeros(self.dim)
        buffers[self.rvar] = np.ones(self.dim)

    def forward(self, params, x, ctx):
        if ctx.train:
            mean = x.mean(axis=0)
            var = x.var(axis=0)
            if ctx.update_buffers:
                n = x.shape[0]
                unbiased = var * n / max(n - 1, 1)
                buf = ctx.buffers
                buf[self.rmean] = (1 - BN_MOMENTUM) * buf[self.rmean] + BN_MOMENTUM * mean
                buf[self.rvar] = (1 - BN_MOMENTUM) * buf[self.rvar] + BN_MOMENTUM * unbiased
                # keep buffers in the parameter dtype
                buf[self.rmean] = buf[self.rmean].astype(x.dtype, copy=False)
                buf[self.rvar] = buf[self.rvar].astype(x.dtype, copy=False)
        else:
            mean, var = ctx.buffers[self.rmean], ctx.buffers[self.rvar]
        self._inv = 1.0 / np.sqrt(var + NORM_EPS)
        self._xhat = (x - mean) * self._inv
        self._train = ctx.train
        return self._xhat * params[self.gamma] + params[self.beta]

    def backward(self, params, g, grads):
        _accumulate(grads, self.gamma, (g * self._xhat).sum(axis=0))
        _accumulate(grads, self.beta, g.sum(axis=0))
        dxhat = g * params[self.gamma]
        if not self._train:
            return dxhat * self._inv
        n = g.shape[0]
        return (self._inv / n) * (
            n * dxhat - dxhat.sum(axis=0) - self._xhat * (dxhat * self._xhat).sum(axis=0)
        )


class LayerNorm(Layer):
    """Normalization over the last axis with learned scale and shift."""

    def __init__(self, name: str, dim: int):
        self.name, self.dim = name, dim
        self.gamma, self.beta = f"{name}.weight", f"{name}.bias"

    def shapes(self):
        return {self.gamma: (self.dim,), self.beta: (self.dim,)}

    def init(self, rng, params, buffers):
        params[self.gamma] = np.ones(self.dim)
        params[self.beta] = np.zeros(self.dim)

    def forward(self, params, x, ctx):
        mean = x.mean(axis=-1, keepdims=True)
        var = x.var(axis=-1, keepdims=True)
        self._inv = 1.0 / np.sqrt(var + NORM_EPS)
        self._xhat = (x - mean) * self._inv
        return self._xhat * params[self.gamma] + params[self.beta]

    def backward(self, params, g, grads):
        axes = tuple(range(g.ndim - 1))
        _accumulate(grads, self.gamma, (g * self._xhat).sum(axis=axes))
        _accumulate(grads, self.beta, g.sum(axis=axes))
        dxhat = g * params[self.gamma]
        d = self.dim
        return (self._inv / d) * (
            d * dxhat
            - dxhat.sum(axis=-1, keepdims=True)
            - self._xhat * (dxhat * self._xhat).sum(axis=-1, keepdims=True)
        )


class Sequential(Layer):
    def __init__(self, layers: list[Layer]):
        self.layers = list(layers)

    def children(self):
        return self.layers

    def forward(self, params, x, ctx):
        for layer in self.layers:
            x = layer.forward(params, x, ctx)
        return x

    def backward(self, params, g, grads):
        for layer in reversed(self.layers):
            g = layer.backward(params, g, grads)
        return g


class Residual(Layer):
    """``x + branch(x)``."""

    def __init__(self, branch: Layer):
        self.branch = branch

    def children(self):
        return [self.branch]

    def forward(self, params, x, ctx):
        return x + self.branch.forward(params, x, ctx)

    def backward(self, params, g, grads):
        return g + self.branch.backward(params, g, grads)


class FeatureTokenizer(Layer):
    """One token per input feature plus a trailing [CLS] token.

    A feature occupying encoded columns ``start:stop`` becomes
    ``x[:, start:stop] @ W[start:stop] + b[f]``: a scaled vector for a numeric
    column and an embedding lookup for a one-hot block.
    """

    def __init__(self, name: str, blocks: list[tuple[int, int]], dim: int):
        self.name, self.blocks, self.dim = name, list(blocks), dim
        self.width = blocks[-1][1]
        self.w, self.b, self.cls = f"{name}.weight", f"{name}.bias", f"{name}.cls"

    def shapes(self):
        return {self.w: (self.width, self.dim), self.b: (len(self.blocks), self.dim), self.cls: (self.dim,)}

    def init(self, rng, params, buffers):
        bound = 1.0 / np.sqrt(self.dim)
        params[self.w] = rng.uniform(-bound, bound, (self.width, self.dim))
        params[self.b] = rng.uniform(-bound, bound, (len(self.blocks), self.dim))
        params[self.cls] = rng.uniform(-bound, bound, self.dim)

    def forward(self, params, x, ctx):
        self._x = x
        w, b = params[self.w], params[self.b]
        out = np.empty((x.shape[0], len(self.blocks) + 1, self.dim))
        for f, (s, e) in enumerate(self.blocks):
            out[:, f] = x[:, s:e] @ w[s:e] + b[f]
        out[:, -1] = params[self.cls]
        return out

    def backward(self, params, g, grads):
        x, w = self._x, params[self.w]
        dw = np.empty_like(w)
        dx = np.empty_like(x)
        for f, (s, e) in enumerate(self.blocks):
            dw[s:e] = x[:, s:e].T @ g[:, f]
            dx[:, s:e] = g[:, f] @ w[s:e].T
        _accumulate(grads, self.w, dw)
        _accumulate(grads, self.b, g[:, :-1].sum(axis=0))
        _accumulate(grads, self.cls, g[:, -1].sum(axis=0))
        return dx


class SelfAttention(Layer):
    """Multi-head scaled dot-product self-attention over tokens ``(B, T, d)``."""

    def __init__(self, name: str, dim: int, heads: int):
        if dim % heads:
            raise ValueError(f"token dim {dim} not divisible by {heads} heads")
        self.name, self.dim, self.heads = name, dim, heads
        self.head_dim = dim // heads
        self.keys = {p: (f"{name}.W_{p}", f"{name}.b_{p}") for p in "qkvo"}

    def shapes(self):
        out = {}
        for w, b in self.keys.values():
            out[w] = (self.dim, self.dim)
            out[b] = (self.dim,)
        return out

    def init(self, rng, params, buffers):
        bound = 1.0 / np.sqrt(self.dim)
        for w, b in self.keys.values():
            params[w] = rng.uniform(-bound, bound, (self.dim, self.dim))
            params[b] = np.zeros(self.dim)

    def _split(self, t):
        B, T, _ = t.shape
        return t.reshape(B, T, self.heads, self.head_dim).transpose(0, 2, 1, 3)

    def _merge(self, t):
        B, _, T, _ = t.shape
        return t.transpose(0, 2, 1, 3).reshape(B, T, self.dim)

    def forward(self, params, x, ctx):
        k = self.keys
        q = self._split(x @ params[k["q"][0]] + params[k["q"][1]])
        kk = self._split(x @ params[k["k"][0]] + params[k["k"][1]])
        v = self._split(x @ params[k["v"][0]] + params[k["v"][1]])
        scale = float(1.0 / np.sqrt(self.head_dim))
        scores = (q @ kk.transpose(0, 1, 3, 2)) * scale
        scores -= scores.max(axis=-1, keepdims=True)
        attn = np.exp(scores)
        attn /= attn.sum(axis=-1, keepdims=True)
        merged = self._merge(attn @ v)
        self._cache = (x, q, kk, v, attn, merged, scale)
        return merged @ params[k["o"][0]] + params[k["o"][1]]

    def backward(self, params, g, grads):
        x, q, kk, v, attn, merged, scale = self._cache
        k, d = self.keys, self.dim
        _accumulate(grads, k["o"][0], merged.reshape(-1, d).T @ g.reshape(-1, d))
        _accumulate(grads, k["o"][1], g.sum(axis=(0, 1)))
        d_out = self._split(g @ params[k["o"][0]].T)
        d_attn = d_out @ v.transpose(0, 1, 3, 2)
        dv = attn.transpose(0, 1, 3, 2) @ d_out
        d_scores = attn * (d_attn - (d_attn * attn).sum(axis=-1, keepdims=True)) * scale
        dq = d_scores @ kk
        dk = d_scores.transpose(0, 1, 3, 2) @ q
        x2 = x.reshape(-1, d)
        dx = np.zeros_like(x)
        for p, dt in (("q", dq), ("k", dk), ("v", dv)):
            dt = self._merge(dt)
            _accumulate(grads, k[p][0], x2.T @ dt.reshape(-1, d))
            _accumulate(grads, k[p][1], dt.sum(axis=(0, 1)))
            dx += dt @ params[k[p][0]].T
        return dx


class LastToken(Layer):
    """Select the trailing [CLS] token: ``(B, T, d) -> (B, d)``."""

    def forward(self, params, x, ctx):
        self._shape = x.shape
        return x[:, -1]

    def backward(self, params, g, grads):
        out = np.zeros(self._shape)
        out[:, -1] = g
        return out
