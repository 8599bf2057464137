"""Minimal numpy layer framework with explicit forward/backward passes.

Layers are stateless structure: parameters live in plain ``{name: array}``
dicts owned by the caller (see :class:`fedcontrast.parameters.ParameterSet`),
which keeps forward passes pure and reentrant — a requirement for running
client sessions concurrently against one broadcast parameter snapshot.

Each ``forward`` returns ``(y, cache, stat_updates)`` where ``stat_updates``
holds new batch-norm running statistics; the training loop decides whether
to apply them (online net) or drop them (target net, which is only ever
updated by EMA).  ``backward`` consumes the cache and returns the input
gradient plus per-parameter gradients.

Convolutions are stride-1 im2col + BLAS matmul; pooling is fixed 2x2/2.
That covers both architecture stacks used here, with images in NHWC layout.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError


def _fan_in_uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Layer:
    """Base layer; subclasses with parameters carry a unique ``name``."""

    name: str = ""

    def param_shapes(self) -> dict[str, tuple]:
        return {}

    def init_params(self, rng: np.random.Generator, dtype=np.float32) -> dict[str, np.ndarray]:
        return {}

    def forward(self, params, x, train=False, rng=None):
        raise NotImplementedError

    def backward(self, params, cache, dy):
        raise NotImplementedError


def _im2col(x: np.ndarray, kh: int, kw: int, pad: int):
    """Extract all kh x kw patches (stride 1) as a 2-D matrix."""
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    b, h, w, c = x.shape
    ho, wo = h - kh + 1, w - kw + 1
    sb, sh, sw, sc = x.strides
    view = np.lib.stride_tricks.as_strided(
        x, (b, ho, wo, kh, kw, c), (sb, sh, sw, sh, sw, sc), writeable=False
    )
    return np.ascontiguousarray(view).reshape(b * ho * wo, kh * kw * c), (b, ho, wo)


class Conv2d(Layer):
    """Stride-1 2-D convolution over NHWC input; weight layout (kh,kw,cin,cout)."""

    def __init__(self, name: str, c_in: int, c_out: int, ksize: int, pad: int = 0):
        self.name = name
        self.c_in, self.c_out, self.ksize, self.pad = c_in, c_out, ksize, pad

    def param_shapes(self):
        k = self.ksize
        return {f"{self.name}/weight": (k, k, self.c_in, self.c_out),
                f"{self.name}/bias": (self.c_out,)}

    def init_params(self, rng, dtype=np.float32):
        k = self.ksize
        fan_in = k * k * self.c_in
        return {f"{self.name}/weight": _fan_in_uniform(rng, (k, k, self.c_in, self.c_out), fan_in, dtype),
                f"{self.name}/bias": np.zeros(self.c_out, dtype=dtype)}

    def forward(self, params, x, train=False, rng=None):
        if x.ndim != 4 or x.shape[3] != self.c_in:
            raise DimensionError(
                f"{self.name}: expected NHWC input with {self.c_in} channels, got {x.shape}")
        w = params[f"{self.name}/weight"]
        b = params[f"{self.name}/bias"]
        cols, (bs, ho, wo) = _im2col(x, self.ksize, self.ksize, self.pad)
        y = cols @ w.reshape(-1, self.c_out) + b
        return y.reshape(bs, ho, wo, self.c_out), (cols, x.shape), {}

    def backward(self, params, cache, dy):
        cols, x_shape = cache
        w = params[f"{self.name}/weight"]
        k, pad = self.ksize, self.pad
        bs, ho, wo, _ = dy.shape
        dy2 = dy.reshape(-1, self.c_out)
        gw = (cols.T @ dy2).reshape(w.shape)
        gb = dy2.sum(axis=0)
        dcols = (dy2 @ w.reshape(-1, self.c_out).T).reshape(bs, ho, wo, k, k, self.c_in)
        hp, wp = x_shape[1] + 2 * pad, x_shape[2] + 2 * pad
        dxp = np.zeros((bs, hp, wp, self.c_in), dtype=dy.dtype)
        for i in range(k):
            for j in range(k):
                dxp[:, i:i + ho, j:j + wo, :] += dcols[:, :, :, i, j, :]
        dx = dxp[:, pad:hp - pad, pad:wp - pad, :] if pad else dxp
        return dx, {f"{self.name}/weight": gw, f"{self.name}/bias": gb}


class MaxPool2d(Layer):
    """2x2 max pooling with stride 2; ties resolved to the first element."""

    def forward(self, params, x, train=False, rng=None):
        b, h, w, c = x.shape
        if h % 2 or w % 2:
            raise DimensionError(f"max pool needs even spatial dims, got {x.shape}")
        h2, w2 = h // 2, w // 2
        xr = x.reshape(b, h2, 2, w2, 2, c).transpose(0, 1, 3, 5, 2, 4).reshape(b, h2, w2, c, 4)
        idx = xr.argmax(axis=4)
        y = np.take_along_axis(xr, idx[..., None], axis=4)[..., 0]
        return y, (idx, x.shape), {}

    def backward(self, params, cache, dy):
        idx, x_shape = cache
        b, h, w, c = x_shape
        h2, w2 = h // 2, w // 2
        dxr = np.zeros((b, h2, w2, c, 4), dtype=dy.dtype)
        np.put_along_axis(dxr, idx[..., None], dy[..., None], axis=4)
        dx = dxr.reshape(b, h2, w2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(b, h, w, c)
        return dx, {}


class ReLU(Layer):
    def forward(self, params, x, train=False, rng=None):
        mask = x > 0
        return x * mask, mask, {}

    def backward(self, params, cache, dy):
        return dy * cache, {}


class Flatten(Layer):
    def forward(self, params, x, train=False, rng=None):
        return x.reshape(x.shape[0], -1), x.shape, {}

    def backward(self, params, cache, dy):
        return dy.reshape(cache), {}


class Linear(Layer):
    def __init__(self, name: str, d_in: int, d_out: int):
        self.name = name
        self.d_in, self.d_out = d_in, d_out

    def param_shapes(self):
        return {f"{self.name}/weight": (self.d_in, self.d_out),
                f"{self.name}/bias": (self.d_out,)}

    def init_params(self, rng, dtype=np.float32):
        return {f"{self.name}/weight": _fan_in_uniform(rng, (self.d_in, self.d_out), self.d_in, dtype),
                f"{self.name}/bias": np.zeros(self.d_out, dtype=dtype)}

    def forward(self, params, x, train=False, rng=None):
        if x.ndim != 2 or x.shape[1] != self.d_in:
            raise DimensionError(f"{self.name}: expected (batch, {self.d_in}) input, got {x.shape}")
        w = params[f"{self.name}/weight"]
        return x @ w + params[f"{self.name}/bias"], x, {}

    def backward(self, params, cache, dy):
        x = cache
        w = params[f"{self.name}/weight"]
        return dy @ w.T, {f"{self.name}/weight": x.T @ dy, f"{self.name}/bias": dy.sum(axis=0)}


class BatchNorm(Layer):
    """Batch normalization over all axes but the last (works for NHWC and 2-D).

    Running statistics are returned as stat updates, never written in place,
    so the same forward is safe for both the online net (which applies the
    updates) and the EMA target net (which ignores them).
    """

    def __init__(self, name: str, num_features: int, momentum: float = 0.1, eps: float = 1e-5):
        self.name = name
        self.num_features = num_features
        self.momentum = momentum
        self.eps = eps

    def param_shapes(self):
        f = (self.num_features,)
        return {f"{self.name}/weight": f, f"{self.name}/bias": f,
                f"{self.name}/running_mean": f, f"{self.name}/running_var": f}

    def init_params(self, rng, dtype=np.float32):
        f = self.num_features
        return {f"{self.name}/weight": np.ones(f, dtype=dtype),
                f"{self.name}/bias": np.zeros(f, dtype=dtype),
                f"{self.name}/running_mean": np.zeros(f, dtype=dtype),
                f"{self.name}/running_var": np.ones(f, dtype=dtype)}

    def forward(self, params, x, train=False, rng=None):
        if x.shape[-1] != self.num_features:
            raise DimensionError(f"{self.name}: expected {self.num_features} features, got {x.shape}")
        g = params[f"{self.name}/weight"]
        b = params[f"{self.name}/bias"]
        axes = tuple(range(x.ndim - 1))
        if train:
            mu = x.mean(axis=axes)
            var = x.var(axis=axes)
            invstd = 1.0 / np.sqrt(var + self.eps)
            xhat = (x - mu) * invstd
            n = int(np.prod([x.shape[a] for a in axes]))
            unbiased = var * (n / (n - 1)) if n > 1 else var
            m = self.momentum
            stats = {
                f"{self.name}/running_mean": ((1 - m) * params[f"{self.name}/running_mean"] + m * mu).astype(x.dtype),
                f"{self.name}/running_var": ((1 - m) * params[f"{self.name}/running_var"] + m * unbiased).astype(x.dtype),
            }
            return g * xhat + b, (xhat, invstd, g, n, axes), stats
        rm = params[f"{self.name}/running_mean"]
        rv = params[f"{self.name}/running_var"]
        invstd = 1.0 / np.sqrt(rv + self.eps)
        return g * ((x - rm) * invstd) + b, (invstd, g), {}

    def backward(self, params, cache, dy):
        if len(cache) == 2:  # eval mode: affine transform of the input
            invstd, g = cache
            return dy * (g * invstd), {}
        xhat, invstd, g, n, axes = cache
        gb = dy.sum(axis=axes)
        gg = (dy * xhat).sum(axis=axes)
        dx = (g * invstd / n) * (n * dy - gb - xhat * gg)
        return dx, {f"{self.name}/weight": gg, f"{self.name}/bias": gb}


class Dropout(Layer):
    """Inverted dropout; identity when not training or when p == 0."""

    def __init__(self, p: float):
        if not 0.0 <= p < 1.0:
            raise ValueError(f"dropout probability must be in [0, 1), got {p}")
        self.p = p

    def forward(self, params, x, train=False, rng=None):
        if not train or self.p == 0.0:
            return x, None, {}
        if rng is None:
            raise ValueError("dropout in training mode needs an rng")
        scale = 1.0 / (1.0 - self.p)
        mask = (rng.random(x.shape) >= self.p).astype(x.dtype) * scale
        return x * mask, mask, {}

    def backward(self, params, cache, dy):
        if cache is None:
            return dy, {}
        return dy * cache, {}


class Softmax(Layer):
    def forward(self, params, x, train=False, rng=None):
        z = x - x.max(axis=1, keepdims=True)
        e = np.exp(z)
        y = e / e.sum(axis=1, keepdims=True)
        return y, y, {}

    def backward(self, params, cache, dy):
        y = cache
        return y * (dy - (dy * y).sum(axis=1, keepdims=True)), {}


class Sequential:
    """A fixed chain of layers sharing one external parameter dict."""

    def __init__(self, layers: list[Layer]):
        self.layers = list(layers)
        names = [l.name for l in self.layers if l.param_shapes()]
        if len(names) != len(set(names)):
            raise ValueError(f"duplicate layer names: {names}")

    def param_shapes(self) -> dict[str, tuple]:
        shapes = {}
        for layer in self.layers:
            shapes.update(layer.param_shapes())
        return shapes

    def init_params(self, rng, dtype=np.float32) -> dict[str, np.ndarray]:
        params = {}
        for layer in self.layers:
            params.update(layer.init_params(rng, dtype))
        return params

    def forward(self, params, x, train=False, rng=None):
        caches = []
        stats = {}
        for layer in self.layers:
            x, cache, layer_stats = layer.forward(params, x, train=train, rng=rng)
            caches.append(cache)
            stats.update(layer_stats)
        return x, caches, stats

    def backward(self, params, caches, dy):
        grads = {}
        for layer, cache in zip(reversed(self.layers), reversed(caches)):
            dy, layer_grads = layer.backward(params, cache, dy)
            grads.update(layer_grads)
        return dy, grads
