"""Multi-tap feedforward network with hand-derived backpropagation.

Layout (batch rows, features columns)::

    x -> [stage 1] -> v_1 -> [stage 2] -> v_2 ... -> v_L -> z (affine) -> g(z)
                       |                   |           |
                     tap 1               tap 2       tap L  (affine classifiers)

Each stage is affine + ReLU.  With three stages the taps are the ``h``,
``u`` and ``f`` classifiers of a three-observation MBIB network; ``f`` is
always the last tap.
"""
from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .losses import ensemble_logits
from .numerics import as_matrix

CHECKPOINT_VERSION = 1


@dataclass
class MultiTapNet:
    input_dim: int
    widths: tuple[int, ...]
    num_classes: int
    z_dim: int
    params: dict[str, np.ndarray]

    @property
    def num_taps(self) -> int:
        return len(self.widths)

    def copy(self) -> "MultiTapNet":
        return MultiTapNet(self.input_dim, self.widths, self.num_classes, self.z_dim,
                           {k: v.copy() for k, v in self.params.items()})

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.params.items()}


@dataclass
class ForwardTrace:
    inputs: np.ndarray
    pre: list[np.ndarray]           # stage pre-activations
    obs: list[np.ndarray]           # v_1 .. v_L
    tap_logits: list[np.ndarray]
    z: np.ndarray
    z_logits: np.ndarray

    @property
    def f_logits(self) -> np.ndarray:
        return self.tap_logits[-1]


def init(dims, num_classes: int, rng: np.random.Generator, z_dim: int | None = None,
         classifier_bias: bool = True) -> MultiTapNet:
    """``dims = [input_dim, width_1, ..., width_L]``, one tap per stage.

    Stage weights are He-uniform (bound ``sqrt(6/fan_in)``), the ``z`` layer
    and classifiers LeCun-uniform (bound ``sqrt(3/fan_in)``); biases start at
    zero.  ``z_dim`` defaults to half the last width.  Without
    ``classifier_bias`` the classifier biases are omitted entirely.
    """
    dims = [int(d) for d in dims]
    if len(dims) < 2:
        raise ValueError("dims must list the input width and at least one stage width")
    if min(dims) < 1 or num_classes < 1:
        raise ValueError("all widths must be >= 1")
    if z_dim is None:
        z_dim = max(1, dims[-1] // 2)

    def uniform(fan_in, fan_out, gain):
        bound = np.sqrt(gain / fan_in)
        return rng.uniform(-bound, bound, size=(fan_in, fan_out))

    params: dict[str, np.ndarray] = {}
    for t in range(1, len(dims)):
        params[f"stage{t}.W"] = uniform(dims[t - 1], dims[t], 6.0)
        params[f"stage{t}.b"] = np.zeros(dims[t])
    for t in range(1, len(dims)):
        params[f"tap{t}.W"] = uniform(dims[t], num_classes, 3.0)
        if classifier_bias:
            params[f"tap{t}.b"] = np.zeros(num_classes)
    params["z.W"] = uniform(dims[-1], z_dim, 3.0)
    params["z.b"] = np.zeros(z_dim)
    params["g.W"] = uniform(z_dim, num_classes, 3.0)
    if classifier_bias:
        params["g.b"] = np.zeros(num_classes)
    return MultiTapNet(dims[0], tuple(dims[1:]), num_classes, z_dim, params)


def _affine(p, name, x):
    # einsum keeps each output row's summation order independent of the
    # batch size, so a row computed alone matches the batched result bitwise
    out = np.einsum("bi,io->bo", x, p[name + ".W"])
    b = p.get(name + ".b")
    return out if b is None else out + b


def forward(net: MultiTapNet, batch) -> ForwardTrace:
    x = as_matrix(batch, "batch")
    if x.shape[1] != net.input_dim:
        raise ValueError(f"batch width {x.shape[1]} != input dim {net.input_dim}")
    p = net.params
    pre, obs, taps = [], [], []
    h = x
    for t in range(1, net.num_taps + 1):
        a = _affine(p, f"stage{t}", h)
        h = np.maximum(a, 0.0)
        pre.append(a)
        obs.append(h)
        taps.append(_affine(p, f"tap{t}", h))
    z = _affine(p, "z", h)
    return ForwardTrace(x, pre, obs, taps, z, _affine(p, "g", z))


def backward(net: MultiTapNet, trace: ForwardTrace, tap_grads, z_grad) -> dict[str, np.ndarray]:
    """Parameter gradients given d(loss)/d(logits) for every tap and for g.

    ``tap_grads`` has one entry per tap; ``None`` means that tap's logits do
    not enter the loss.  ``z_grad`` (gradient w.r.t. the g logits) may also
    be ``None``.
    """
    p = net.params
    L = net.num_taps
    if len(tap_grads) != L:
        raise ValueError(f"expected {L} tap gradients, got {len(tap_grads)}")
    grads = net.zeros_like()
    batch = trace.inputs.shape[0]

    def check(g, like):
        g = np.asarray(g, dtype=np.float64)
        if g.shape != like.shape:
            raise ValueError(f"gradient shape {g.shape} != logits shape {like.shape}")
        return g

    def affine_back(name, inp, d_out):
        grads[name + ".W"] += inp.T @ d_out
        if name + ".b" in grads:
            grads[name + ".b"] += d_out.sum(axis=0)
        return d_out @ p[name + ".W"].T

    d_obs = [np.zeros((batch, w)) for w in net.widths]
    if z_grad is not None:
        dz = affine_back("g", trace.z, check(z_grad, trace.z_logits))
        d_obs[-1] += affine_back("z", trace.obs[-1], dz)
    for t in range(L):
        if tap_grads[t] is not None:
            d_obs[t] += affine_back(f"tap{t + 1}", trace.obs[t], check(tap_grads[t], trace.tap_logits[t]))
    for t in range(L - 1, -1, -1):
        d_pre = d_obs[t] * (trace.pre[t] > 0)
        inp = trace.obs[t - 1] if t > 0 else trace.inputs
        d_in = affine_back(f"stage{t + 1}", inp, d_pre)
        if t > 0:
            d_obs[t - 1] += d_in
    return grads


def predict(net: MultiTapNet, batch, mode: str = "ensemble") -> np.ndarray:
    """Arg-max class per row; ties go to the lower index.

    ``mode`` picks the scores: ``"ensemble"`` (mean of the last-tap and g
    logits), ``"f"`` (last tap only) or ``"g"``.
    """
    tr = forward(net, batch)
    return np.argmax(scores(tr, mode), axis=1)


def scores(trace: ForwardTrace, mode: str = "ensemble") -> np.ndarray:
    if mode == "ensemble":
        return ensemble_logits(trace.f_logits, trace.z_logits)
    if mode == "f":
        return trace.f_logits
    if mode == "g":
        return trace.z_logits
    raise ValueError(f"unknown prediction mode {mode!r}")


def save_checkpoint(net: MultiTapNet, path) -> None:
    """Write every parameter with its shape to an ``.npz`` file atomically."""
    path = Path(path)
    meta = np.array([CHECKPOINT_VERSION, net.input_dim, net.num_classes, net.z_dim, *net.widths],
                    dtype=np.int64)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".npz")
    os.close(fd)
    try:
        with open(tmp, "wb") as fh:
            np.savez(fh, __meta__=meta, **net.params)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def load_checkpoint(path) -> MultiTapNet:
    with np.load(path, allow_pickle=False) as f:
        meta = f["__meta__"]
        if int(meta[0]) != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {int(meta[0])}")
        params = {k: f[k].copy() for k in f.files if k != "__meta__"}
    _, d_in, K, dz, *widths = (int(v) for v in meta)
    return MultiTapNet(d_in, tuple(widths), K, dz, params)
