"""Forward/backward kernels for the shape learner (float64 numpy).

Volumes are laid out (N, C, X, Y, Z).  Convolutions use zero padding and
floor-division output sizes.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BN_EPS = 1e-5


def conv_out(size: int, kernel: int, stride: int) -> int:
    return (size - kernel) // stride + 1


def _windows(x: np.ndarray, k: int, s: int, count=None) -> np.ndarray:
    """(N, C, OX, OY, OZ, k, k, k) strided view of kernel windows."""
    w = sliding_window_view(x, (k, k, k), axis=(2, 3, 4))[:, :, ::s, ::s, ::s]
    if count is not None:
        w = w[:, :, :count[0], :count[1], :count[2]]
    return w


def _scatter(cols: np.ndarray, out_shape, k: int, s: int) -> np.ndarray:
    """Adjoint of _windows: add (N, OX, OY, OZ, C, k, k, k) patches into a volume."""
    out = np.zeros(out_shape)
    n, ox, oy, oz = cols.shape[:4]
    for a in range(k):
        for b in range(k):
            for c in range(k):
                out[:, :, a:a + s * (ox - 1) + 1:s, b:b + s * (oy - 1) + 1:s, c:c + s * (oz - 1) + 1:s] += \
                    cols[:, :, :, :, :, a, b, c].transpose(0, 4, 1, 2, 3)
    return out


def conv3d_forward(x, w, b, stride):
    """w: (Cout, Cin, k, k, k)."""
    k = w.shape[2]
    win = _windows(x, k, stride)
    y = np.tensordot(win, w, axes=([1, 5, 6, 7], [1, 2, 3, 4]))  # (N, OX, OY, OZ, Cout)
    y = y.transpose(0, 4, 1, 2, 3) + b[None, :, None, None, None]
    return np.ascontiguousarray(y), (x.shape, win, w, stride)


def conv3d_backward(dy, cache):
    x_shape, win, w, stride = cache
    k = w.shape[2]
    db = dy.sum(axis=(0, 2, 3, 4))
    dw = np.tensordot(dy, win, axes=([0, 2, 3, 4], [0, 2, 3, 4]))
    cols = np.tensordot(dy, w, axes=([1], [0]))  # (N, OX, OY, OZ, Cin, k, k, k)
    dx = _scatter(cols, x_shape, k, stride)
    return dx, dw, db


def deconv3d_forward(x, w, b, stride, out_size):
    """Transposed convolution; w: (Cin, Cout, k, k, k).  Positions of
    ``out_size`` beyond (I - 1) * stride + k receive only the bias."""
    k = w.shape[2]
    cols = np.tensordot(x, w, axes=([1], [0]))  # (N, IX, IY, IZ, Cout, k, k, k)
    shape = (x.shape[0], w.shape[1]) + tuple(out_size)
    y = _scatter(cols, shape, k, stride) + b[None, :, None, None, None]
    return y, (x, w, stride)


def deconv3d_backward(dy, cache):
    x, w, stride = cache
    k = w.shape[2]
    db = dy.sum(axis=(0, 2, 3, 4))
    win = _windows(dy, k, stride, count=x.shape[2:])  # (N, Cout, IX, IY, IZ, k, k, k)
    dx = np.tensordot(win, w, axes=([1, 5, 6, 7], [1, 2, 3, 4])).transpose(0, 4, 1, 2, 3)
    dw = np.tensordot(x, win, axes=([0, 2, 3, 4], [0, 2, 3, 4]))
    return np.ascontiguousarray(dx), dw, db


def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(dy, mask):
    return dy * mask


def batchnorm_forward(x, gamma, beta, train: bool, running_mean=None, running_var=None):
    """Per-channel normalization over batch and spatial axes (axis 1 = channel).

    Returns output, cache and the batch statistics (None in inference mode).
    """
    axes = (0,) + tuple(range(2, x.ndim))
    shape = (1, -1) + (1,) * (x.ndim - 2)
    if train:
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
    else:
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x - mean.reshape(shape)) * inv_std.reshape(shape)
    y = gamma.reshape(shape) * xhat + beta.reshape(shape)
    stats = (mean, var) if train else None
    return y, (xhat, inv_std, gamma, axes, shape), stats


def batchnorm_backward(dy, cache):
    xhat, inv_std, gamma, axes, shape = cache
    m = dy.size / dy.shape[1]
    dgamma = np.sum(dy * xhat, axis=axes)
    dbeta = dy.sum(axis=axes)
    dxhat = dy * gamma.reshape(shape)
    dx = (inv_std.reshape(shape) / m) * (
        m * dxhat - dxhat.sum(axis=axes).reshape(shape) - xhat * np.sum(dxhat * xhat, axis=axes).reshape(shape))
    return dx, dgamma, dbeta


def linear_forward(x, w, b):
    """w: (out, in)."""
    return x @ w.T + b, (x, w)


def linear_backward(dy, cache):
    x, w = cache
    return dy @ w, dy.T @ x, dy.sum(axis=0)


def sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out
