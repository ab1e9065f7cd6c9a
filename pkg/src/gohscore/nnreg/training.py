"""SGD training, checkpoints and prediction post-processing."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from ..errors import DivergenceError, FormatError
from ..imagecore import resize_slice, round_half_up
from ..synth import ScoreTriple, round_to_grade
from .network import HU_CLIP, NetSpec, Regressor, normalize_hu


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch: int = 8
    epochs: int = 10
    seed: int = 0
    input_extent: int = 64
    hu_clip: tuple = HU_CLIP
    dtype: str = "float32"

    def __post_init__(self):
        self.hu_clip = tuple(float(v) for v in self.hu_clip)
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be >= 0")
        if self.epochs < 1 or self.batch < 1:
            raise ValueError("epochs and batch must be >= 1")


def _batches(n, size):
    for start in range(0, n, size):
        yield slice(start, start + size)


def evaluate(net, x, y, batch=32):
    """MSE and MAE of ``net`` on normalised inputs/targets."""
    out = predict_raw(net, x, batch)
    resid = out - np.asarray(y).reshape(out.shape)
    return float(np.mean(resid ** 2)), float(np.mean(np.abs(resid)))


def predict_raw(net, x, batch=32):
    x = np.asarray(x)
    return np.concatenate([net.forward(x[sl]) for sl in _batches(len(x), batch)])


def train(net, source, config, validation=None, mae_scale=1.0):
    """Plain minibatch SGD on the mean squared error.

    Parameters
    ----------
    net : Regressor
        Updated in place.
    source : (x, y) arrays, or callable ``source(epoch, rng) -> (x, y)``
        A fixed dataset is reshuffled every epoch; a callable supplies the
        epoch's samples in the order they are to be used.
    config : TrainConfig
    validation : (x, y), optional
        Evaluated after every epoch.
    mae_scale : float
        Multiplies the logged MAE so it is reported in target units.

    Returns
    -------
    net, log
        ``log`` is a list of ``(epoch, split, mse, mae)`` rows.
    """
    rng = np.random.default_rng(config.seed)
    log = []
    lr = config.learning_rate
    for epoch in range(1, config.epochs + 1):
        if callable(source):
            x, y = source(epoch, rng)
            order = np.arange(len(x))
        else:
            x, y = source
            order = rng.permutation(len(x))
        sq_sum = abs_sum = 0.0
        count = 0
        for sl in _batches(len(order), config.batch):
            idx = order[sl]
            loss, grads, out = net.backward(x[idx], y[idx], return_output=True)
            if not math.isfinite(loss):
                raise DivergenceError(epoch)
            resid = out - np.asarray(y[idx]).reshape(out.shape)
            sq_sum += float(np.sum(resid.astype(np.float64) ** 2))
            abs_sum += float(np.sum(np.abs(resid.astype(np.float64))))
            count += resid.size
            for name, g in grads.items():
                net.params[name] -= lr * g
        log.append((epoch, "train", sq_sum / count, mae_scale * abs_sum / count))
        if validation is not None:
            mse, mae = evaluate(net, *validation)
            if not math.isfinite(mse):
                raise DivergenceError(epoch)
            log.append((epoch, "val", mse, mae_scale * mae))
    return net, log


def write_loss_log(path, log):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "split", "mse", "mae"])
        for epoch, split, mse, mae in log:
            w.writerow([epoch, split, repr(float(mse)), repr(float(mae))])


# ---------------------------------------------------------------------------
# checkpoints

_MAGIC = "gohscore-checkpoint 1"


def save_checkpoint(path, net, seed=0, epoch=0):
    spec = net.spec
    lines = [
        _MAGIC,
        f"dimensionality={spec.dimensionality}",
        "input_shape=" + " ".join(str(s) for s in spec.input_shape),
        "block_channels=" + " ".join(str(c) for c in spec.block_channels),
        f"outputs={spec.outputs}",
        f"in_channels={spec.in_channels}",
        f"dtype={net.dtype.name}",
        f"seed={seed}",
        f"epoch={epoch}",
        f"n_parameters={net.n_parameters()}",
        "END",
    ]
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("ascii"))
        fh.write(net.get_flat().astype("<f8").tobytes())


def load_checkpoint(path):
    """Returns ``(net, meta)`` where ``meta`` holds the seed and epoch."""
    with open(path, "rb") as fh:
        blob = fh.read()
    marker = b"\nEND\n"
    cut = blob.find(marker)
    if not blob.startswith(_MAGIC.encode()) or cut < 0:
        raise FormatError("header", "not a checkpoint file")
    header = {}
    for line in blob[:cut].decode("ascii").splitlines()[1:]:
        key, _, value = line.partition("=")
        header[key] = value
    try:
        spec = NetSpec(
            dimensionality=int(header["dimensionality"]),
            input_shape=[int(v) for v in header["input_shape"].split()],
            block_channels=[int(v) for v in header["block_channels"].split()],
            outputs=int(header["outputs"]),
            in_channels=int(header["in_channels"]),
        )
        n = int(header["n_parameters"])
        dtype = header.get("dtype", "float64")
        meta = {"seed": int(header["seed"]), "epoch": int(header["epoch"])}
    except KeyError as exc:
        raise FormatError(exc.args[0], "missing") from None
    except ValueError as exc:
        raise FormatError("header", str(exc)) from None
    payload = blob[cut + len(marker):]
    if len(payload) != 8 * n:
        raise FormatError("payload", f"{len(payload)} bytes, expected {8 * n}")
    net = Regressor(spec, dtype=dtype)
    if net.n_parameters() != n:
        raise FormatError("n_parameters", f"{n} does not match the architecture")
    net.set_flat(np.frombuffer(payload, dtype="<f8"))
    return net, meta


# ---------------------------------------------------------------------------
# prediction

def prepare_slice(img, spec, clip=HU_CLIP):
    return normalize_hu(resize_slice(img, spec.input_shape), clip)


def scores_from_raw(raw):
    """Network outputs in [0, 1] units -> clamped percentages and grades."""
    pct = np.clip(np.asarray(raw, dtype=np.float64) * 100.0, 0.0, 100.0)
    triple = ScoreTriple(*(float(v) for v in pct))
    return triple, tuple(round_to_grade(v) for v in triple)


def predict_scores(net, img, clip=HU_CLIP):
    """Score one slice: continuous ``ScoreTriple`` and the grade triple."""
    if net.spec.dimensionality != 2 or net.spec.outputs != 3:
        raise ValueError("predict_scores needs a 2D network with 3 outputs")
    raw = net.forward(prepare_slice(img, net.spec, clip))[0]
    return scores_from_raw(raw)


def level_crop_start(depth, crop_depth):
    if crop_depth > depth:
        raise ValueError(f"volume depth {depth} is smaller than the network input {crop_depth}")
    return (depth - crop_depth) // 2


def clamp_levels(idx, depth):
    idx = np.clip(np.asarray(idx, dtype=np.float64), 0.0, depth - 1)
    return idx, np.array([round_half_up(v) for v in idx], dtype=int)


def levels_from_raw(raw, depth):
    """Normalised level outputs -> clamped continuous and rounded indices."""
    return clamp_levels(np.asarray(raw, dtype=np.float64) * (depth - 1), depth)


def predict_levels(net, vol, clip=HU_CLIP):
    """Five level indices (caudal to cranial) for a volume.

    Volumes deeper than the network input are evaluated on the central
    z-window and the result is shifted back to volume indices.

    Returns
    -------
    continuous : ndarray (5,)
    rounded : ndarray (5,) int
    """
    if net.spec.dimensionality != 3 or net.spec.outputs != 5:
        raise ValueError("predict_levels needs a 3D network with 5 outputs")
    cz, cy, cx = net.spec.input_shape
    nx, ny, nz = vol.dims
    if (ny, nx) != (cy, cx):
        raise ValueError(f"in-plane size {nx}x{ny} does not match network input {cx}x{cy}")
    z0 = level_crop_start(nz, cz)
    x = normalize_hu(vol.voxels[z0:z0 + cz], clip)
    raw = net.forward(x)[0]
    return clamp_levels(raw * (cz - 1) + z0, nz)
