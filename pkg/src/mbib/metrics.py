"""Evaluation diagnostics: group accuracy, mean positive posterior,
intra/inter-class distance ratio, plug-in mutual information, and a
central-difference gradient used as a test oracle."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist, pdist

from .data import FEW, MANY, MEDIUM, ClassFrequencyTable


@dataclass(frozen=True)
class GroupAccuracy:
    all: float
    many: float
    medium: float
    few: float
    per_class: np.ndarray

    def as_row(self) -> dict[str, float]:
        return {"acc_all": self.all, "acc_many": self.many,
                "acc_medium": self.medium, "acc_few": self.few}


def _labels(labels, K: int) -> np.ndarray:
    y = np.asarray(labels, dtype=np.int64)
    if y.ndim != 1:
        raise ValueError("labels must be 1-D")
    if y.size and (y.min() < 0 or y.max() >= K):
        raise ValueError(f"labels must lie in [0, {K})")
    return y


def group_accuracy(predictions, labels, freq: ClassFrequencyTable) -> GroupAccuracy:
    """Per-class accuracy, averaged over classes overall and within each
    frequency group.  An empty group reports NaN."""
    K = freq.num_classes
    y = _labels(labels, K)
    pred = np.asarray(predictions, dtype=np.int64)
    if pred.shape != y.shape:
        raise ValueError("predictions and labels differ in length")
    support = np.bincount(y, minlength=K)
    if np.any(support == 0):
        missing = np.flatnonzero(support == 0).tolist()
        raise ValueError(f"classes {missing} have no test samples")
    correct = np.bincount(y, weights=(pred == y).astype(float), minlength=K)
    per_class = correct / support
    groups = np.asarray(freq.groups)

    def mean_of(g):
        sel = groups == g
        return float(per_class[sel].mean()) if sel.any() else float("nan")

    return GroupAccuracy(float(per_class.mean()), mean_of(MANY), mean_of(MEDIUM), mean_of(FEW), per_class)


def mean_positive_posterior(probabilities, labels, num_classes: int) -> np.ndarray:
    """For each class, the average probability assigned to it over the
    samples that truly belong to it."""
    p = np.asarray(probabilities, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] != num_classes:
        raise ValueError(f"probabilities must have shape [N, {num_classes}]")
    if not np.allclose(p.sum(axis=1), 1.0, rtol=0, atol=1e-9):
        raise ValueError("probability rows must sum to 1")
    y = _labels(labels, num_classes)
    if y.shape[0] != p.shape[0]:
        raise ValueError("probabilities and labels differ in length")
    support = np.bincount(y, minlength=num_classes)
    if np.any(support == 0):
        raise ValueError(f"classes {np.flatnonzero(support == 0).tolist()} have no test samples")
    hits = np.bincount(y, weights=p[np.arange(len(y)), y], minlength=num_classes)
    return hits / support


@dataclass(frozen=True)
class RepresentationReport:
    d_intra: float
    d_inter: float
    rho: float
    centers: np.ndarray


def representation_quality(representations, labels, num_classes: int) -> RepresentationReport:
    """Mean intra-class distance over ordered pairs (self-pairs included, so
    normalised by ``|R_i|^2``), mean distance between distinct class
    centres, and their ratio."""
    r = np.asarray(representations, dtype=np.float64)
    if r.ndim != 2:
        raise ValueError("representations must be 2-D")
    y = _labels(labels, num_classes)
    if y.shape[0] != r.shape[0]:
        raise ValueError("representations and labels differ in length")
    if num_classes < 2:
        raise ValueError("need at least two classes")
    intra = np.empty(num_classes)
    centers = np.empty((num_classes, r.shape[1]))
    for k in range(num_classes):
        rk = r[y == k]
        if rk.shape[0] == 0:
            raise ValueError(f"class {k} has no samples")
        centers[k] = rk.mean(axis=0)
        # pdist covers unordered distinct pairs; ordered pairs double it
        intra[k] = 2.0 * pdist(rk).sum() / rk.shape[0] ** 2 if rk.shape[0] > 1 else 0.0
    d_intra = float(intra.mean())
    d_inter = float(cdist(centers, centers).sum() / (num_classes * (num_classes - 1)))
    if d_inter == 0.0:
        raise ValueError("coincident class centers")
    return RepresentationReport(d_intra, d_inter, d_intra / d_inter, centers)


def plugin_mutual_information(a, b) -> float:
    """Empirical-joint plug-in estimate of ``I(a; b)`` in nats."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("sequences must be 1-D and of equal length")
    n = a.size
    if n == 0:
        raise ValueError("empty sequences")
    _, ia = np.unique(a, return_inverse=True)
    _, ib = np.unique(b, return_inverse=True)
    joint = np.zeros((ia.max() + 1, ib.max() + 1))
    np.add.at(joint, (ia, ib), 1.0)
    pab = joint / n
    pa = pab.sum(axis=1, keepdims=True)
    pb = pab.sum(axis=0, keepdims=True)
    nz = pab > 0
    return float(np.sum(pab[nz] * np.log(pab[nz] / (pa @ pb)[nz])))


def quantize(values, edges) -> np.ndarray:
    """Map continuous values to bin indices with explicit bin edges."""
    return np.digitize(np.asarray(values, dtype=np.float64), np.asarray(edges, dtype=np.float64))


def finite_difference_gradient(fn, point, h: float = 1e-6) -> np.ndarray:
    """Central differences ``(f(x + h e_i) - f(x - h e_i)) / 2h`` per coordinate."""
    if not h > 0:
        raise ValueError("h must be positive")
    x = np.array(point, dtype=np.float64)
    grad = np.empty_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = fn(x)
        flat[i] = orig - h
        fm = fn(x)
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ValueError(f"non-finite evaluation at coordinate {i}")
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad
