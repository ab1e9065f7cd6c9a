"""VGG-style regression network with explicit forward and backward passes."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import layers

HU_CLIP = (-1000.0, 400.0)


@dataclass
class NetSpec:
    """Architecture of a regression network.

    Each block is conv3 -> ReLU -> 2x max-pool.  The head flattens the last
    feature map into a single fully-connected layer with ``outputs`` units.
    ``input_shape`` is the spatial extent, ordered like the array axes
    (``(ny, nx)`` or ``(nz, ny, nx)``).
    """

    dimensionality: int = 2
    input_shape: tuple = (64, 64)
    block_channels: list = field(default_factory=lambda: [8, 16, 32, 64])
    outputs: int = 3
    in_channels: int = 1

    def __post_init__(self):
        self.input_shape = tuple(int(s) for s in self.input_shape)
        self.block_channels = [int(c) for c in self.block_channels]
        if self.dimensionality not in (2, 3):
            raise ValueError("dimensionality must be 2 or 3")
        if len(self.input_shape) != self.dimensionality:
            raise ValueError(f"input_shape {self.input_shape} does not match {self.dimensionality}D")
        if any(c < 1 for c in self.block_channels):
            raise ValueError("block channels must be positive")
        if self.outputs not in (3, 5):
            raise ValueError("outputs must be 3 (scores) or 5 (levels)")
        div = 2 ** len(self.block_channels)
        if any(s % div for s in self.input_shape):
            raise ValueError(f"input extent {self.input_shape} not divisible by {div}")

    @property
    def feature_size(self):
        n = self.block_channels[-1] if self.block_channels else self.in_channels
        for s in self.input_shape:
            n *= s // 2 ** len(self.block_channels)
        return n

    def to_dict(self):
        d = asdict(self)
        d["input_shape"] = list(self.input_shape)
        return d


def normalize_hu(img, clip=HU_CLIP):
    """Clip to ``clip`` and map linearly onto [-1, 1]."""
    lo, hi = clip
    return 2.0 * (np.clip(img, lo, hi) - lo) / (hi - lo) - 1.0


def mse_loss(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    return float(np.mean((pred - target) ** 2))


class Regressor:
    """Parameters are held in ``self.params``, a dict in declaration order."""

    def __init__(self, spec, seed=0, dtype=np.float64):
        self.spec = spec
        self.dtype = np.dtype(dtype)
        self.params = {}
        rng = np.random.default_rng(seed)
        c_in = spec.in_channels
        k = (3,) * spec.dimensionality
        for i, c_out in enumerate(spec.block_channels):
            fan_in = 3 ** spec.dimensionality * c_in
            self.params[f"conv{i}.w"] = rng.normal(0.0, np.sqrt(2.0 / fan_in), k + (c_in, c_out))
            self.params[f"conv{i}.b"] = np.zeros(c_out)
            c_in = c_out
        f = spec.feature_size
        # small head keeps initial predictions near zero; pooled ReLU features
        # are not zero-mean
        self.params["fc.w"] = rng.normal(0.0, 0.1 / np.sqrt(f), (f, spec.outputs))
        self.params["fc.b"] = np.zeros(spec.outputs)
        for name in self.params:
            self.params[name] = self.params[name].astype(self.dtype)

    # -- parameter vector helpers --------------------------------------------
    def n_parameters(self):
        return sum(p.size for p in self.params.values())

    def get_flat(self):
        return np.concatenate([p.ravel() for p in self.params.values()])

    def set_flat(self, vec):
        vec = np.asarray(vec)
        if vec.size != self.n_parameters():
            raise ValueError(f"expected {self.n_parameters()} values, got {vec.size}")
        pos = 0
        for name, p in self.params.items():
            self.params[name] = vec[pos:pos + p.size].reshape(p.shape).astype(self.dtype)
            pos += p.size

    def copy(self):
        other = Regressor.__new__(Regressor)
        other.spec = self.spec
        other.dtype = self.dtype
        other.params = {k: v.copy() for k, v in self.params.items()}
        return other

    # -- passes ---------------------------------------------------------------
    def _prepare(self, x):
        x = np.asarray(x, dtype=self.dtype)
        spatial = self.spec.input_shape
        if x.shape == spatial:
            x = x[None]
        if x.shape[1:1 + len(spatial)] != spatial:
            raise ValueError(f"input shape {x.shape} does not match network extent {spatial}")
        if x.ndim == len(spatial) + 1:
            x = x[..., None]
        if x.shape[-1] != self.spec.in_channels:
            raise ValueError(f"expected {self.spec.in_channels} channels, got {x.shape[-1]}")
        return x

    def _forward(self, x):
        cache = []
        h = x
        for i in range(len(self.spec.block_channels)):
            z, cols = layers.conv_forward(h, self.params[f"conv{i}.w"], self.params[f"conv{i}.b"])
            a = layers.relu_forward(z)
            p, arg = layers.maxpool_forward(a)
            cache.append((h.shape, cols, z, a.shape, arg))
            h = p
        flat = h.reshape(h.shape[0], -1)
        out = flat @ self.params["fc.w"] + self.params["fc.b"]
        return out, (cache, h.shape, flat)

    def forward(self, x):
        """Raw outputs, shape (N, outputs), for normalised input(s) ``x``."""
        out, _ = self._forward(self._prepare(x))
        return out

    def backward(self, x, target, return_output=False):
        """Loss and exact gradients of the mean squared error.

        Returns
        -------
        loss : float
        grads : dict, same keys and shapes as ``params``
        output : ndarray, only when ``return_output`` is set
        """
        x = self._prepare(x)
        out, (cache, pooled_shape, flat) = self._forward(x)
        target = np.asarray(target, dtype=self.dtype).reshape(out.shape)
        resid = out - target
        loss = float(np.mean(resid ** 2))
        dout = 2.0 * resid / resid.size
        grads = {
            "fc.w": flat.T @ dout,
            "fc.b": dout.sum(axis=0),
        }
        dh = (dout @ self.params["fc.w"].T).reshape(pooled_shape)
        for i in reversed(range(len(self.spec.block_channels))):
            h_shape, cols, z, a_shape, arg = cache[i]
            da = layers.maxpool_backward(a_shape, arg, dh)
            dz = layers.relu_backward(z, da)
            dh, grads[f"conv{i}.w"], grads[f"conv{i}.b"] = layers.conv_backward(
                h_shape, cols, self.params[f"conv{i}.w"], dz, need_dx=i > 0)
        grads = {k: grads[k] for k in self.params}
        if return_output:
            return loss, grads, out
        return loss, grads
