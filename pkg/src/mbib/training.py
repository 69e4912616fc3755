"""SGD with momentum and coupled weight decay, epoch-level learning-rate
schedules, and the training loop."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset, batch_iterator
from .losses import MbibConfig, bsc_loss, mbib_loss
from .metrics import group_accuracy
from .model import MultiTapNet, backward, forward, predict
from .numerics import make_rng

OBJECTIVES = ("mbib", "single")
LOG_FIELDS = ("epoch", "lr", "train_loss", "acc_all", "acc_many", "acc_medium", "acc_few")


@dataclass(frozen=True)
class StepSchedule:
    """Linear warm-up, then multiply by ``factor`` at each milestone."""

    warmup_epochs: int = 5
    milestones: tuple[int, ...] = (160, 180)
    factor: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, "milestones", tuple(int(m) for m in self.milestones))
        if any(b <= a for a, b in zip(self.milestones, self.milestones[1:])):
            raise ValueError("milestones must be strictly increasing")
        if not 0 < self.factor <= 1:
            raise ValueError("factor must lie in (0, 1]")
        if self.warmup_epochs < 0:
            raise ValueError("warmup_epochs must be >= 0")


@dataclass(frozen=True)
class CosineSchedule:
    lr_final: float = 0.0


def lr_at(schedule, epoch: int, total_epochs: int, lr_initial: float) -> float:
    """Learning rate used throughout ``epoch`` (0-based).

    During warm-up epoch ``e`` runs at ``lr_initial * (e + 1) / warmup``, so
    the ramp reaches ``lr_initial`` on the last warm-up epoch.  The cosine
    schedule also accepts ``epoch == total_epochs`` and returns ``lr_final``.
    """
    if isinstance(schedule, CosineSchedule):
        if not 0 <= epoch <= total_epochs:
            raise ValueError("epoch out of range")
        frac = epoch / total_epochs if total_epochs else 1.0
        return schedule.lr_final + (lr_initial - schedule.lr_final) * (1 + math.cos(math.pi * frac)) / 2
    if isinstance(schedule, StepSchedule):
        if not 0 <= epoch < max(total_epochs, 1):
            raise ValueError("epoch out of range")
        if epoch < schedule.warmup_epochs:
            return lr_initial * (epoch + 1) / schedule.warmup_epochs
        passed = sum(1 for m in schedule.milestones if epoch >= m)
        return lr_initial * schedule.factor ** passed
    raise TypeError(f"unknown schedule {schedule!r}")


@dataclass(frozen=True)
class TrainConfig:
    """``objective="single"`` trains only the last tap with the balanced
    cross-entropy of ``loss.bib`` (the CE / BSCE baselines); ``"mbib"``
    trains every tap and ``g`` with :func:`mbib_loss`."""

    epochs: int = 60
    batch_size: int = 128
    lr_initial: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 3e-4
    schedule: StepSchedule | CosineSchedule = field(
        default_factory=lambda: StepSchedule(5, (48, 54), 0.01))
    seed: int = 0
    loss: MbibConfig = field(default_factory=MbibConfig)
    objective: str = "mbib"
    decay_biases: bool = False

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if not self.lr_initial > 0:
            raise ValueError("lr_initial must be > 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}")
        if isinstance(self.schedule, StepSchedule) and self.schedule.milestones \
                and self.schedule.milestones[-1] >= max(self.epochs, 1):
            raise ValueError("milestones must be < epochs")

    @property
    def prediction_mode(self) -> str:
        return "f" if self.objective == "single" else "ensemble"


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    acc_all: float
    acc_many: float
    acc_medium: float
    acc_few: float


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(LOG_FIELDS)
            for r in self.records:
                w.writerow([r.epoch, repr(r.lr), repr(r.train_loss), repr(r.acc_all),
                            repr(r.acc_many), repr(r.acc_medium), repr(r.acc_few)])


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, batch: int, value: float):
        super().__init__(f"non-finite training loss {value} at epoch {epoch}, batch {batch}")
        self.epoch, self.batch = epoch, batch


def sgd_step(params: dict, grads: dict, state: dict, lr: float, momentum: float,
             weight_decay: float, decay_biases: bool = False) -> tuple[dict, dict]:
    """``buf = momentum*buf + grad + wd*param``; ``param -= lr*buf``.

    Weight decay touches only ``*.W`` entries unless ``decay_biases``.
    Returns new parameter and buffer dicts; the inputs are not modified.
    """
    new_params, new_state = {}, {}
    for name, p in params.items():
        g = grads[name]
        if weight_decay and (decay_biases or name.endswith(".W")):
            g = g + weight_decay * p
        buf = state.get(name)
        buf = g.copy() if buf is None else momentum * buf + g
        new_state[name] = buf
        new_params[name] = p - lr * buf
    return new_params, new_state


def loss_and_logit_grads(net: MultiTapNet, x, y, counts, config: TrainConfig):
    trace = forward(net, x)
    if config.objective == "single":
        res = bsc_loss(trace.f_logits, y, config.loss.bib.rebalance, counts, config.loss.bib.reduction)
        tap_grads = [None] * (net.num_taps - 1) + [res.grads[0]]
        return trace, res.value, tap_grads, None
    res = mbib_loss(trace.tap_logits, trace.z_logits, y, counts, config.loss)
    return trace, res.value, list(res.grads[:-1]), res.grads[-1]


def evaluate(net: MultiTapNet, data: Dataset, train_freq, mode: str = "ensemble"):
    """Group accuracy on ``data`` with groups taken from the training table."""
    return group_accuracy(predict(net, data.features, mode), data.labels, train_freq)


def train(net: MultiTapNet, train_data: Dataset, test_data: Dataset,
          config: TrainConfig) -> tuple[MultiTapNet, TrainLog]:
    if train_data.dim != net.input_dim or test_data.dim != net.input_dim:
        raise ValueError("data dimension does not match the network input")
    if train_data.num_classes != net.num_classes:
        raise ValueError("data class count does not match the network")
    net = net.copy()
    counts = train_data.frequency_table.counts_array
    rng = make_rng(config.seed, "batching")
    log = TrainLog()
    state: dict = {}
    for epoch in range(config.epochs):
        lr = lr_at(config.schedule, epoch, config.epochs, config.lr_initial)
        total, seen = 0.0, 0
        for b, (x, y) in enumerate(batch_iterator(train_data, config.batch_size, rng)):
            try:
                trace, value, tap_grads, z_grad = loss_and_logit_grads(net, x, y, counts, config)
            except ValueError as exc:
                if "non-finite" not in str(exc):
                    raise
                raise TrainingDiverged(epoch, b, float("nan")) from exc
            if not np.isfinite(value):
                raise TrainingDiverged(epoch, b, value)
            grads = backward(net, trace, tap_grads, z_grad)
            net.params, state = sgd_step(net.params, grads, state, lr, config.momentum,
                                         config.weight_decay, config.decay_biases)
            total += value * len(y)
            seen += len(y)
        acc = evaluate(net, test_data, train_data.frequency_table, config.prediction_mode)
        log.records.append(EpochRecord(epoch, lr, total / seen, acc.all, acc.many, acc.medium, acc.few))
    return net, log
