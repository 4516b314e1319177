"""Layers with hand-written backward passes.

Each layer reads its weights from a shared parameter dict and adds its
weight gradients into a matching grads dict, so a layer applied to many
patches at once (the siamese towers) owns one set of weights.
"""

import numpy as np

from .. import kernels
from ..errors import NoForwardCache


class Layer:
    def __init__(self, name):
        self.name = name
        self._cache = None

    def _take_cache(self):
        if self._cache is None:
            raise NoForwardCache(f"{self.name}: backward without a forward pass")
        c, self._cache = self._cache, None
        return c


class Conv2d(Layer):
    """k x k convolution over NCHW input via im2col."""

    def __init__(self, name, c_in, c_out, k, stride=1, pad=0):
        super().__init__(name)
        self.c_in, self.c_out, self.k, self.stride, self.pad = c_in, c_out, k, stride, pad

    def param_shapes(self):
        return {f"{self.name}.w": (self.c_out, self.c_in, self.k, self.k), f"{self.name}.b": (self.c_out,)}

    def out_size(self, h):
        return (h + 2 * self.pad - self.k) // self.stride + 1

    def forward(self, params, x):
        n, _, h, w = x.shape
        ho, wo = self.out_size(h), self.out_size(w)
        W = params[f"{self.name}.w"].reshape(self.c_out, -1)
        b = params[f"{self.name}.b"]
        if self.k == 1 and self.stride == 1 and self.pad == 0:
            cols = np.ascontiguousarray(x.transpose(1, 0, 2, 3)).reshape(self.c_in, -1)
        else:
            cols = kernels.im2col(np.ascontiguousarray(x), self.k, self.stride, self.pad)
        out = W @ cols + b[:, None]
        self._cache = (cols, x.shape)
        return np.ascontiguousarray(out.reshape(self.c_out, n, ho, wo).transpose(1, 0, 2, 3))

    def backward(self, params, grads, dout):
        cols, shape = self._take_cache()
        n = shape[0]
        d2 = np.ascontiguousarray(dout.transpose(1, 0, 2, 3)).reshape(self.c_out, -1)
        W = params[f"{self.name}.w"].reshape(self.c_out, -1)
        grads[f"{self.name}.w"] += (d2 @ cols.T).reshape(grads[f"{self.name}.w"].shape)
        grads[f"{self.name}.b"] += d2.sum(axis=1)
        dcols = W.T @ d2
        if self.k == 1 and self.stride == 1 and self.pad == 0:
            return np.ascontiguousarray(dcols.reshape(self.c_in, n, shape[2], shape[3]).transpose(1, 0, 2, 3))
        return kernels.col2im(np.ascontiguousarray(dcols), shape, self.k, self.stride, self.pad)


class Dense(Layer):
    def __init__(self, name, n_in, n_out):
        super().__init__(name)
        self.n_in, self.n_out = n_in, n_out

    def param_shapes(self):
        return {f"{self.name}.w": (self.n_out, self.n_in), f"{self.name}.b": (self.n_out,)}

    def forward(self, params, x):
        self._cache = x
        return x @ params[f"{self.name}.w"].T + params[f"{self.name}.b"]

    def backward(self, params, grads, dout):
        x = self._take_cache()
        grads[f"{self.name}.w"] += dout.T @ x
        grads[f"{self.name}.b"] += dout.sum(axis=0)
        return dout @ params[f"{self.name}.w"]


class ReLU(Layer):
    def forward(self, params, x):
        mask = x > 0
        self._cache = mask
        return x * mask

    def backward(self, params, grads, dout):
        return dout * self._take_cache()


class GlobalAvgPool(Layer):
    def forward(self, params, x):
        self._cache = x.shape
        return x.mean(axis=(2, 3))

    def backward(self, params, grads, dout):
        n, c, h, w = self._take_cache()
        return np.broadcast_to((dout / (h * w))[:, :, None, None], (n, c, h, w)).copy()


def arrange(feats, inv):
    """Reorder slot features (B, n, ...) into canonical piece order.

    ``inv`` is (B, n): ``inv[b, j]`` is the slot holding original piece j.
    """
    return np.take_along_axis(feats, inv.reshape(inv.shape + (1,) * (feats.ndim - 2)), axis=1)


def arrange_backward(dcanon, perm):
    """Adjoint of ``arrange``: slot i receives the gradient of piece perm[i]."""
    return np.take_along_axis(dcanon, perm.reshape(perm.shape + (1,) * (dcanon.ndim - 2)), axis=1)
