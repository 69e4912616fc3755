"""Balanced softmax cross-entropy, variational self-distillation and the
BIB / MBIB compositions, each returning exact gradients for every logits
argument.

Conventions
-----------
* Logit adjustment adds ``log n_k`` to the logits inside the training
  losses only; predictions use the raw logits.
* ``reduction="mean"`` for the balanced cross-entropy is the weighted mean
  ``sum_i w[y_i] * l_i / sum_i w[y_i]``, so the loss scale does not depend on
  the class composition of a batch.  This also fixes the effective scale of
  ``beta`` against the distillation term, which is always a plain batch mean.
* The distillation teacher is detached: its gradient is identically zero,
  but its entropy stays in the reported value.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .numerics import as_matrix, log_softmax

TOPOLOGIES = ("star", "sequential", "all_pairs")
REDUCTIONS = ("mean", "sum")


@dataclass(frozen=True)
class RebalanceParams:
    """Class re-weighting exponent ``m``, temperature exponent ``gamma`` and
    whether logits are shifted by ``log n``.  ``m=0, logit_adjust=False`` is
    plain cross-entropy."""

    m: float = 0.1
    gamma: float = 0.0
    logit_adjust: bool = True

    def __post_init__(self):
        if not (self.m >= 0 and np.isfinite(self.m)):
            raise ValueError("m must be a finite value >= 0")
        if not (self.gamma >= 0 and np.isfinite(self.gamma)):
            raise ValueError("gamma must be a finite value >= 0")

    def log_counts(self, counts) -> np.ndarray:
        return _prepared(_key(counts), self.m, self.gamma)[0]

    def weights(self, counts) -> np.ndarray:
        return _prepared(_key(counts), self.m, self.gamma)[1]

    def temperatures(self, counts) -> np.ndarray:
        return _prepared(_key(counts), self.m, self.gamma)[2]


def _key(counts) -> tuple:
    a = np.asarray(counts, dtype=np.float64).ravel()
    if not a.size:
        raise ValueError("counts must be nonempty")
    if a.min() <= 0:
        raise ValueError("empty class")
    return tuple(a.tolist())


@lru_cache(maxsize=256)
def _prepared(counts: tuple, m: float, gamma: float):
    n = np.asarray(counts)
    log_n = np.log(n)
    d = n / n.sum()
    inv = (1.0 / d) ** m
    w = len(n) * inv / inv.sum()
    t = (n.max() / n) ** gamma
    for a in (log_n, w, t):
        a.setflags(write=False)
    return log_n, w, t


def class_weights(counts, m: float) -> np.ndarray:
    """``w_i = K (1/d_i)^m / sum_j (1/d_j)^m`` with ``d_i = n_i / N``."""
    return RebalanceParams(m=m).weights(counts)


def class_temperatures(counts, gamma: float) -> np.ndarray:
    """``T_i = (n_max / n_i)^gamma``."""
    return RebalanceParams(gamma=gamma).temperatures(counts)


@dataclass(frozen=True)
class BibLossConfig:
    beta: float = 1.0
    rebalance: RebalanceParams = field(default_factory=RebalanceParams)
    reduction: str = "mean"

    def __post_init__(self):
        if not (np.isfinite(self.beta) and self.beta >= 0):
            raise ValueError("beta must be a finite value >= 0")
        if self.reduction not in REDUCTIONS:
            raise ValueError(f"reduction must be one of {REDUCTIONS}")


@dataclass(frozen=True)
class MbibConfig:
    """``tap_coefficients`` weight every tap except the last, whose weight is 1.

    With ``dedupe_student_bsc`` the star topology counts the balanced
    cross-entropy of ``z`` once instead of once per term.
    """

    bib: BibLossConfig = field(default_factory=BibLossConfig)
    tap_coefficients: tuple[float, ...] = (0.1, 0.3)
    topology: str = "star"
    dedupe_student_bsc: bool = False

    def __post_init__(self):
        object.__setattr__(self, "tap_coefficients", tuple(float(c) for c in self.tap_coefficients))
        if self.topology not in TOPOLOGIES:
            raise ValueError(f"topology must be one of {TOPOLOGIES}")
        if any(not (c >= 0 and np.isfinite(c)) for c in self.tap_coefficients):
            raise ValueError("tap coefficients must be finite and >= 0")
        if self.dedupe_student_bsc and self.topology != "star":
            raise ValueError("dedupe_student_bsc only applies to the star topology")


@dataclass
class LossValueAndGrads:
    value: float
    grads: tuple[np.ndarray, ...]


def balanced_posterior(logits, counts) -> np.ndarray:
    """``q_j = n_j exp(f_j) / sum_k n_k exp(f_k)`` computed as
    ``softmax(logits + log n)``."""
    x = as_matrix(logits, "logits")
    log_n = RebalanceParams().log_counts(counts)
    if log_n.shape[0] != x.shape[1]:
        raise ValueError("counts length must equal the number of classes")
    # shifting by max(log n) leaves the result unchanged and makes equal
    # counts reproduce the plain softmax exactly
    return np.exp(log_softmax(x + (log_n - log_n.max())))


def _check_labels(labels, batch: int, K: int) -> np.ndarray:
    y = np.asarray(labels)
    if y.ndim != 1 or y.shape[0] != batch:
        raise ValueError(f"expected {batch} labels, got shape {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        if not (np.mod(y, 1) == 0).all():
            raise ValueError("labels must be integers")
        y = y.astype(np.int64)
    if y.size and (y.min() < 0 or y.max() >= K):
        raise ValueError(f"label out of range [0, {K})")
    return y


def bsc_loss(logits, labels, rebalance: RebalanceParams, counts, reduction: str = "mean") -> LossValueAndGrads:
    """Class-weighted balanced softmax cross-entropy."""
    x = as_matrix(logits, "logits")
    B, K = x.shape
    y = _check_labels(labels, B, K)
    if reduction not in REDUCTIONS:
        raise ValueError(f"reduction must be one of {REDUCTIONS}")
    w = rebalance.weights(counts)
    if w.shape[0] != K:
        raise ValueError("counts length must equal the number of classes")
    if rebalance.logit_adjust:
        x = x + rebalance.log_counts(counts)
    logq = log_softmax(x)
    rows = np.arange(B)
    wy = w[y]
    total = float(-(wy * logq[rows, y]).sum())
    grad = np.exp(logq)
    grad[rows, y] -= 1.0
    grad *= wy[:, None]
    if reduction == "mean":
        denom = float(wy.sum())
        total /= denom
        grad /= denom
    return LossValueAndGrads(total, (grad,))


def vsd_loss(teacher_logits, student_logits, rebalance: RebalanceParams, counts) -> LossValueAndGrads:
    """Batch-mean ``KL(softmax(teacher/T) || softmax(student/T))`` with a
    detached teacher."""
    t = as_matrix(teacher_logits, "teacher logits")
    s = as_matrix(student_logits, "student logits")
    if t.shape != s.shape:
        raise ValueError(f"shape mismatch: teacher {t.shape} vs student {s.shape}")
    T = rebalance.temperatures(counts)
    if T.shape[0] != t.shape[1]:
        raise ValueError("counts length must equal the number of classes")
    B = t.shape[0]
    log_pt = log_softmax(t / T)
    log_ps = log_softmax(s / T)
    pt = np.exp(log_pt)
    value = float((pt * (log_pt - log_ps)).sum() / B)
    grad_s = (np.exp(log_ps) - pt) / T / B
    return LossValueAndGrads(value, (np.zeros_like(t), grad_s))


def bib_loss(teacher_logits, student_logits, labels, counts, config: BibLossConfig) -> LossValueAndGrads:
    """``bsc(teacher) + bsc(student) + beta * vsd(teacher -> student)``."""
    rb, red = config.rebalance, config.reduction
    l1 = bsc_loss(teacher_logits, labels, rb, counts, red)
    l2 = bsc_loss(student_logits, labels, rb, counts, red)
    l3 = vsd_loss(teacher_logits, student_logits, rb, counts)
    value = l1.value + l2.value + config.beta * l3.value
    # teacher gradient of the distillation term is zero by construction
    g_teacher = l1.grads[0]
    g_student = l2.grads[0] + config.beta * l3.grads[1]
    return LossValueAndGrads(value, (g_teacher, g_student))


def mbib_terms(num_taps: int, coefficients, topology: str) -> list[tuple[int, int, float]]:
    """``(teacher, student, weight)`` triples over nodes ``0..num_taps``,
    where node ``num_taps`` is the representation ``z``."""
    coeffs = tuple(coefficients) + (1.0,)
    if len(coeffs) != num_taps:
        raise ValueError(
            f"{num_taps} taps need {num_taps - 1} coefficients, got {len(coeffs) - 1}"
        )
    z = num_taps
    star = [(t, z, coeffs[t]) for t in range(num_taps)]
    seq = [(t, t + 1, coeffs[t]) for t in range(num_taps)]
    if topology == "star":
        return star
    if topology == "sequential":
        return seq
    if topology == "all_pairs":
        # the (last tap, z) pair belongs to both and is counted once
        return star + seq[:-1]
    raise ValueError(f"unknown topology {topology!r}")


def mbib_loss(tap_logits, z_logits, labels, counts, config: MbibConfig) -> LossValueAndGrads:
    """Weighted sum of BIB terms between taps and ``z``.

    Returns one gradient per tap followed by the gradient for ``z_logits``.
    Zero-weight terms are skipped, so ``a = b = 0`` reproduces
    :func:`bib_loss` on the last tap bit for bit.
    """
    taps = [as_matrix(t, "tap logits") for t in tap_logits]
    if not taps:
        raise ValueError("need at least one tap")
    z = as_matrix(z_logits, "z logits")
    nodes = taps + [z]
    for n in nodes:
        if n.shape != z.shape:
            raise ValueError(f"shape mismatch: {n.shape} vs {z.shape}")
    terms = mbib_terms(len(taps), config.tap_coefficients, config.topology)
    grads = [np.zeros_like(z) for _ in nodes]
    value = 0.0
    bib = config.bib
    if config.dedupe_student_bsc:
        # z appears once as a plain BSC term; each tap term keeps its own BSC + VSD
        rb, red = bib.rebalance, bib.reduction
        lz = bsc_loss(z, labels, rb, counts, red)
        value = lz.value
        grads[-1] = grads[-1] + lz.grads[0]
        for t, s, c in terms:
            if c == 0.0:
                continue
            lt = bsc_loss(nodes[t], labels, rb, counts, red)
            lv = vsd_loss(nodes[t], nodes[s], rb, counts)
            value += c * (lt.value + bib.beta * lv.value)
            grads[t] = grads[t] + c * lt.grads[0]
            grads[s] = grads[s] + c * (bib.beta * lv.grads[1])
        return LossValueAndGrads(value, tuple(grads))
    for t, s, c in terms:
        if c == 0.0:
            continue
        term = bib_loss(nodes[t], nodes[s], labels, counts, bib)
        value += c * term.value
        grads[t] = grads[t] + c * term.grads[0]
        grads[s] = grads[s] + c * term.grads[1]
    return LossValueAndGrads(value, tuple(grads))


def ensemble_logits(f_logits, g_logits, mode: str = "logits") -> np.ndarray:
    """Mean of two classifier outputs; ``mode="probs"`` averages softmaxes."""
    f = as_matrix(f_logits, "f logits")
    g = as_matrix(g_logits, "g logits")
    if f.shape != g.shape:
        raise ValueError(f"shape mismatch: {f.shape} vs {g.shape}")
    if mode == "logits":
        return (f + g) / 2.0
    if mode == "probs":
        return (np.exp(log_softmax(f)) + np.exp(log_softmax(g))) / 2.0
    raise ValueError(f"unknown ensemble mode {mode!r}")
