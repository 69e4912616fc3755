"""Long-tailed datasets: frequency tables, Gaussian synthesis, CSV I/O."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

MANY, MEDIUM, FEW = "Many", "Medium", "Few"


@dataclass(frozen=True)
class ClassFrequencyTable:
    """Per-class training counts and the many/medium/few grouping.

    A class is Many if its count exceeds ``many_threshold``, Few if it is
    below ``few_threshold`` and Medium otherwise.
    """

    counts: tuple[int, ...]
    many_threshold: int = 100
    few_threshold: int = 20

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        if len(counts) < 1:
            raise ValueError("need at least one class")
        if min(counts) <= 0:
            raise ValueError("empty class: every count must be positive")
        if self.few_threshold > self.many_threshold:
            raise ValueError("few_threshold must not exceed many_threshold")
        object.__setattr__(self, "counts", counts)

    @classmethod
    def from_labels(cls, labels, num_classes: int | None = None, **kw) -> "ClassFrequencyTable":
        labels = np.asarray(labels, dtype=np.int64)
        k = int(labels.max()) + 1 if num_classes is None else num_classes
        return cls(tuple(np.bincount(labels, minlength=k).tolist()), **kw)

    @property
    def num_classes(self) -> int:
        return len(self.counts)

    @property
    def total(self) -> int:
        return sum(self.counts)

    @property
    def imbalance_factor(self) -> float:
        return max(self.counts) / min(self.counts)

    @property
    def counts_array(self) -> np.ndarray:
        return np.asarray(self.counts, dtype=np.float64)

    @property
    def log_counts(self) -> np.ndarray:
        return np.log(self.counts_array)

    def group_of(self, k: int) -> str:
        n = self.counts[k]
        if n > self.many_threshold:
            return MANY
        if n < self.few_threshold:
            return FEW
        return MEDIUM

    @property
    def groups(self) -> tuple[str, ...]:
        return tuple(self.group_of(k) for k in range(self.num_classes))


def exponential_profile(
    num_classes: int, n_max: int, imbalance_factor: float, **thresholds
) -> ClassFrequencyTable:
    """Counts ``n_k = round(n_max * IF**(-k/(K-1)))`` for ``k = 0..K-1``."""
    if num_classes < 2:
        raise ValueError("need K >= 2")
    if n_max < 1:
        raise ValueError("need n_max >= 1")
    if imbalance_factor < 1:
        raise ValueError("imbalance factor must be >= 1")
    k = np.arange(num_classes)
    counts = np.rint(n_max * imbalance_factor ** (-k / (num_classes - 1))).astype(int)
    counts = np.maximum(counts, 1)
    return ClassFrequencyTable(tuple(counts.tolist()), **thresholds)


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    frequency_table: ClassFrequencyTable
    split: str = "train"
    centers: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        x = np.ascontiguousarray(self.features, dtype=np.float64)
        y = np.ascontiguousarray(self.labels, dtype=np.int64)
        if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
            raise ValueError(f"inconsistent shapes {x.shape} / {y.shape}")
        k = self.frequency_table.num_classes
        if y.size and (y.min() < 0 or y.max() >= k):
            raise ValueError(f"labels must lie in [0, {k})")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def num_classes(self) -> int:
        return self.frequency_table.num_classes


def synthesize_gaussian(
    freq: ClassFrequencyTable,
    dim: int,
    separation: float,
    rng: np.random.Generator,
    test_per_class: int = 100,
) -> tuple[Dataset, Dataset]:
    """Unit-variance isotropic Gaussian classes around ``separation * mu_k``.

    The unit directions ``mu_k`` are drawn from ``rng`` first, then the
    training points (class-sorted, following ``freq``), then a balanced test
    split with ``test_per_class`` points per class.
    """
    if dim < 2:
        raise ValueError("dim must be >= 2")
    if separation < 0:
        raise ValueError("separation must be >= 0")
    K = freq.num_classes
    mu = rng.standard_normal((K, dim))
    mu /= np.linalg.norm(mu, axis=1, keepdims=True)
    centers = separation * mu

    def draw(per_class):
        labels = np.repeat(np.arange(K), per_class)
        x = rng.standard_normal((labels.size, dim)) + centers[labels]
        return x, labels

    xtr, ytr = draw(np.asarray(freq.counts))
    xte, yte = draw(np.full(K, test_per_class))
    thresholds = dict(many_threshold=freq.many_threshold, few_threshold=freq.few_threshold)
    train = Dataset(xtr, ytr, freq, "train", centers)
    test = Dataset(xte, yte, ClassFrequencyTable(tuple([test_per_class] * K), **thresholds), "test", centers)
    return train, test


class CsvFormatError(ValueError):
    pass


def load_csv(path, split: str = "train", num_classes: int | None = None, **thresholds) -> Dataset:
    """Read a header-less ``label,f1,...,fd`` file.

    Errors name the 1-based line number of the first offending row.
    """
    path = Path(path)
    labels, rows = [], []
    width = None
    with path.open(newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if width is None:
                width = len(row)
                if width < 2:
                    raise CsvFormatError(f"{path}:{lineno}: need a label and at least one feature")
            elif len(row) != width:
                raise CsvFormatError(
                    f"{path}:{lineno}: ragged row, expected {width} fields, got {len(row)}"
                )
            try:
                label = int(row[0])
                feats = [float(c) for c in row[1:]]
            except ValueError as exc:
                raise CsvFormatError(f"{path}:{lineno}: non-numeric field ({exc})") from None
            if label < 0:
                raise CsvFormatError(f"{path}:{lineno}: negative label {label}")
            labels.append(label)
            rows.append(feats)
    if not rows:
        raise CsvFormatError(f"{path}: empty file")
    y = np.asarray(labels, dtype=np.int64)
    freq = ClassFrequencyTable.from_labels(y, num_classes, **thresholds)
    return Dataset(np.asarray(rows, dtype=np.float64), y, freq, split)


def write_csv(data: Dataset, path) -> None:
    # repr() round-trips float64 exactly
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        for label, x in zip(data.labels.tolist(), data.features.tolist()):
            w.writerow([label, *map(repr, x)])


def batch_iterator(
    data: Dataset, batch_size: int, rng: np.random.Generator
) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """One epoch of shuffled mini-batches; the last batch may be short."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = rng.permutation(len(data))
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        yield data.features[idx], data.labels[idx]
