"""Channels-last conv / pool / dense primitives for 2D and 3D inputs.

Tensors are laid out ``(N, *spatial, C)``.  Convolutions use 3-wide kernels
with one voxel of zero padding, so spatial extent is preserved.
"""
from itertools import product

import numpy as np


def _window(offset, extent):
    return (slice(None),) + tuple(slice(o, o + n) for o, n in zip(offset, extent)) + (slice(None),)


def im2col(x):
    """Shifted neighbourhood copies, k-major: (N, *S, C) -> (3**d, N, *S, C)."""
    d = x.ndim - 2
    extent = x.shape[1:-1]
    xp = np.pad(x, [(0, 0)] + [(1, 1)] * d + [(0, 0)])
    cols = np.empty((3 ** d,) + x.shape, dtype=x.dtype)
    for k, off in enumerate(product(range(3), repeat=d)):
        cols[k] = xp[_window(off, extent)]
    return cols


def conv_forward(x, w, b):
    """3-wide 'same' convolution; ``w`` has shape ``(3,)*d + (c_in, c_out)``.

    Returns the output and the column buffer needed by ``conv_backward``.
    """
    cols = im2col(x)
    wk = w.reshape(len(cols), w.shape[-2], w.shape[-1])
    if wk.shape[1] == 1:
        out = cols.reshape(len(cols), -1).T @ wk[:, 0, :]
        out = out.reshape(x.shape[:-1] + (w.shape[-1],))
    else:
        out = cols[0] @ wk[0]
        for k in range(1, len(cols)):
            out += cols[k] @ wk[k]
    out += b
    return out, cols


def conv_backward(x_shape, cols, w, dout, need_dx=True):
    extent = x_shape[1:-1]
    d = len(extent)
    c_in, c_out = w.shape[-2:]
    wk = w.reshape(len(cols), c_in, c_out)
    flat_dout = dout.reshape(-1, c_out)
    dw = np.empty_like(wk)
    for k in range(len(cols)):
        dw[k] = cols[k].reshape(-1, c_in).T @ flat_dout
    db = flat_dout.sum(axis=0)
    if not need_dx:
        return None, dw.reshape(w.shape), db
    dxp = np.zeros((x_shape[0],) + tuple(s + 2 for s in extent) + (c_in,), dtype=dout.dtype)
    for k, off in enumerate(product(range(3), repeat=d)):
        dxp[_window(off, extent)] += dout @ wk[k].T
    dx = dxp[(slice(None),) + (slice(1, -1),) * d + (slice(None),)]
    return dx, dw.reshape(w.shape), db


def _pool_view(x):
    # (N, s1, s2, .., C) -> (N, s1/2, s2/2, .., C, 2**d)
    n, c = x.shape[0], x.shape[-1]
    extent = x.shape[1:-1]
    d = len(extent)
    split = [n]
    for s in extent:
        split += [s // 2, 2]
    split.append(c)
    v = x.reshape(split)
    outer = [0] + [1 + 2 * i for i in range(d)] + [2 * d + 1]
    inner = [2 + 2 * i for i in range(d)]
    v = v.transpose(outer + inner)
    return v.reshape(v.shape[:d + 2] + (2 ** d,)), outer + inner, split


def maxpool_forward(x):
    v, _, _ = _pool_view(x)
    arg = v.argmax(axis=-1)
    return np.take_along_axis(v, arg[..., None], axis=-1)[..., 0], arg


def maxpool_backward(x_shape, arg, dout):
    d = len(x_shape) - 2
    dv = np.zeros(dout.shape + (2 ** d,), dtype=dout.dtype)
    np.put_along_axis(dv, arg[..., None], dout[..., None], axis=-1)
    # undo the transpose in _pool_view
    n, c = x_shape[0], x_shape[-1]
    halves = [s // 2 for s in x_shape[1:-1]]
    dv = dv.reshape([n] + halves + [c] + [2] * d)
    order = [0]
    for i in range(d):
        order += [1 + i, d + 2 + i]
    order.append(d + 1)
    return dv.transpose(order).reshape(x_shape)


def relu_forward(x):
    return np.maximum(x, 0.0)


def relu_backward(x, dout):
    return dout * (x > 0)
