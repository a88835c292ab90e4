"""Differentiable layers on (N, C, D, H, W) float64 tensors.

Each layer caches what its backward pass needs during ``forward``; calling
``backward`` without a preceding forward raises StateError. Parameter
gradients land in ``layer.grads`` under the same keys as ``layer.params``.
"""
import numpy as np

from ..errors import ShapeError, StateError
from .kernels import conv3d_backward, conv3d_forward

GN_EPS = 1e-5


def _check5(x, name):
    if x.ndim != 5:
        raise ShapeError(f"{name} expects (N, C, D, H, W), got shape {x.shape}")


class Layer:
    kind = "layer"

    def __init__(self, params=None):
        self.params = params if params is not None else {}
        self.grads = {}
        self._ctx = None

    def forward(self, x):
        raise NotImplementedError

    def backward(self, gy):
        raise NotImplementedError

    def _take_ctx(self):
        if self._ctx is None:
            raise StateError(f"{self.kind}.backward called without a recorded forward pass")
        ctx, self._ctx = self._ctx, None
        return ctx


class Conv3d(Layer):
    """Stride-1 convolution with 'same' zero padding; ``w`` is (Co, Ci, k, k, k)."""

    kind = "conv"

    def forward(self, x):
        _check5(x, "conv")
        w, b = self.params["w"], self.params["b"]
        if x.shape[1] != w.shape[1]:
            raise ShapeError(f"conv expects {w.shape[1]} input channels, got {x.shape[1]}")
        self._ctx = x
        return conv3d_forward(x, w, b)

    def backward(self, gy):
        x = self._take_ctx()
        gx, gw, gb = conv3d_backward(x, self.params["w"], gy)
        self.grads = {"w": gw, "b": gb}
        return gx


class Conv1(Conv3d):
    """1x1x1 projection, done as a channel matmul."""

    kind = "conv1"

    def forward(self, x):
        _check5(x, "conv1")
        w, b = self.params["w"], self.params["b"]
        W = w.reshape(w.shape[0], w.shape[1])
        if x.shape[1] != W.shape[1]:
            raise ShapeError(f"conv1 expects {W.shape[1]} input channels, got {x.shape[1]}")
        self._ctx = x
        N, C = x.shape[:2]
        y = np.matmul(W, x.reshape(N, C, -1)) + b[None, :, None]
        return y.reshape((N, W.shape[0]) + x.shape[2:])

    def backward(self, gy):
        x = self._take_ctx()
        w = self.params["w"]
        W = w.reshape(w.shape[0], w.shape[1])
        N, C = x.shape[:2]
        g = gy.reshape(N, gy.shape[1], -1)
        xs = x.reshape(N, C, -1)
        gw = np.matmul(g, xs.transpose(0, 2, 1)).sum(axis=0)
        self.grads = {"w": gw.reshape(w.shape), "b": g.sum(axis=(0, 2))}
        return np.matmul(W.T, g).reshape(x.shape)


def default_groups(channels, cap=8):
    """Largest divisor of ``channels`` not above ``cap``."""
    for g in range(min(cap, channels), 0, -1):
        if channels % g == 0:
            return g
    return 1


class GroupNorm(Layer):
    kind = "groupnorm"

    def __init__(self, params, groups):
        super().__init__(params)
        self.groups = int(groups)

    def forward(self, x):
        _check5(x, "groupnorm")
        N, C = x.shape[:2]
        G = self.groups
        if C % G:
            raise ShapeError(f"{C} channels cannot be split into {G} groups")
        if self.params["gamma"].shape != (C,):
            raise ShapeError(f"groupnorm has {self.params['gamma'].shape[0]} channels, input has {C}")
        xg = x.reshape(N, G, -1)
        mean = xg.mean(axis=2, keepdims=True)
        var = xg.var(axis=2, keepdims=True)
        inv = 1.0 / np.sqrt(var + GN_EPS)
        xhat = ((xg - mean) * inv).reshape(x.shape)
        self._ctx = (xhat, inv)
        bshape = (1, C) + (1,) * (x.ndim - 2)
        return xhat * self.params["gamma"].reshape(bshape) + self.params["beta"].reshape(bshape)

    def backward(self, gy):
        xhat, inv = self._take_ctx()
        N, C = gy.shape[:2]
        G = self.groups
        axes = (0,) + tuple(range(2, gy.ndim))
        self.grads = {"gamma": (gy * xhat).sum(axis=axes), "beta": gy.sum(axis=axes)}
        bshape = (1, C) + (1,) * (gy.ndim - 2)
        dxhat = (gy * self.params["gamma"].reshape(bshape)).reshape(N, G, -1)
        xh = xhat.reshape(N, G, -1)
        dx = inv * (dxhat - dxhat.mean(axis=2, keepdims=True)
                    - xh * (dxhat * xh).mean(axis=2, keepdims=True))
        return dx.reshape(gy.shape)


class ReLU(Layer):
    kind = "relu"

    def forward(self, x):
        mask = x > 0
        self._ctx = mask
        return np.where(mask, x, 0.0)

    def backward(self, gy):
        mask = self._take_ctx()
        return np.where(mask, gy, 0.0)


class MaxPool2(Layer):
    kind = "maxpool"

    def forward(self, x):
        _check5(x, "maxpool")
        N, C, D, H, W = x.shape
        if D % 2 or H % 2 or W % 2:
            raise ShapeError(f"maxpool needs even spatial dims, got {(D, H, W)}")
        blocks = (x.reshape(N, C, D // 2, 2, H // 2, 2, W // 2, 2)
                  .transpose(0, 1, 2, 4, 6, 3, 5, 7).reshape(N, C, D // 2, H // 2, W // 2, 8))
        arg = blocks.argmax(axis=-1)
        self._ctx = (arg, x.shape)
        return np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def backward(self, gy):
        arg, shape = self._take_ctx()
        N, C, D, H, W = shape
        g = np.zeros(gy.shape + (8,))
        np.put_along_axis(g, arg[..., None], gy[..., None], axis=-1)
        g = g.reshape(N, C, D // 2, H // 2, W // 2, 2, 2, 2).transpose(0, 1, 2, 5, 3, 6, 4, 7)
        return g.reshape(shape)


class Upsample2(Layer):
    """Nearest-neighbour upsampling by 2 on each spatial axis."""

    kind = "upsample"

    def forward(self, x):
        _check5(x, "upsample")
        self._ctx = x.shape
        return x.repeat(2, axis=2).repeat(2, axis=3).repeat(2, axis=4)

    def backward(self, gy):
        shape = self._take_ctx()
        N, C, D, H, W = shape
        return gy.reshape(N, C, D, 2, H, 2, W, 2).sum(axis=(3, 5, 7))


_KINDS = {
    "conv3x3x3": Conv3d,
    "conv1": Conv1,
    "groupnorm": GroupNorm,
    "relu": ReLU,
    "maxpool2": MaxPool2,
    "upsample2": Upsample2,
}


def make_layer(kind, params=None, **kw):
    if kind not in _KINDS:
        raise ValueError(f"unknown layer kind {kind!r}")
    cls = _KINDS[kind]
    if cls is GroupNorm:
        groups = kw.get("groups") or default_groups(params["gamma"].shape[0])
        return GroupNorm(params, groups)
    return cls(params or {})


def layer_forward(kind, params, x, **kw):
    return make_layer(kind, params, **kw).forward(x)


def layer_backward(kind, params, x, upstream_grad, **kw):
    """Stateless backward: replays the forward on ``x`` and returns
    (input_grad, param_grads)."""
    layer = make_layer(kind, params, **kw)
    layer.forward(x)
    gx = layer.backward(upstream_grad)
    return gx, layer.grads
