"""Config-driven runs, sweeps and method comparisons.

A config is a JSON object with ``data``, ``model``, ``loss`` and ``train``
sections plus top-level ``seed`` and ``output_dir``.  Unknown keys are
errors.  Every random draw comes from the top-level seed through the named
substreams ``data``, ``init`` and ``batching``.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import data as lt
from .losses import BibLossConfig, MbibConfig, RebalanceParams
from .metrics import (GroupAccuracy, RepresentationReport, group_accuracy,
                      mean_positive_posterior, representation_quality)
from .model import MultiTapNet, forward, init, save_checkpoint, scores
from .numerics import make_rng, softmax
from .training import CosineSchedule, StepSchedule, TrainConfig, TrainLog, train

METHODS = ("ce", "bsce", "bib", "mbib", "se_mbib", "all_mbib")
TOPOLOGY_OF = {"bib": "star", "mbib": "star", "se_mbib": "sequential", "all_mbib": "all_pairs"}
OUTPUT_ROOT_ENV = "MBIB_OUTPUT_ROOT"
SUMMARY_FIELDS = ("point", "seed", "acc_all", "acc_many", "acc_medium", "acc_few", "rho_z")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataSection:
    num_classes: int = 10
    n_max: int = 800
    imbalance_factor: float = 100.0
    dim: int = 16
    separation: float = 2.5
    test_per_class: int = 100
    many_threshold: int = 100
    few_threshold: int = 20
    train_csv: str | None = None
    test_csv: str | None = None


@dataclass(frozen=True)
class ModelSection:
    widths: tuple[int, ...] = (64, 64, 64)
    z_dim: int | None = None
    classifier_bias: bool = True


@dataclass(frozen=True)
class LossSection:
    method: str = "mbib"
    beta: float = 5.0
    gamma: float = 0.0
    m: float = 0.1
    a: float = 0.1
    b: float = 0.3
    coefficients: tuple[float, ...] | None = None
    dedupe_student_bsc: bool = False
    reduction: str = "mean"
    ensemble: str = "logits"


@dataclass(frozen=True)
class TrainSection:
    epochs: int = 60
    batch_size: int = 128
    lr: float = 0.02
    momentum: float = 0.9
    weight_decay: float = 0.01
    schedule: str = "step"
    warmup_epochs: int = 5
    milestones: tuple[int, ...] = (48, 54)
    factor: float = 0.01
    lr_final: float = 0.0
    decay_biases: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    loss: LossSection = field(default_factory=LossSection)
    train: TrainSection = field(default_factory=TrainSection)
    seed: int = 0
    output_dir: str | None = None

    def __post_init__(self):
        validate(self)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **sections) -> "ExperimentConfig":
        """Shallow update, e.g. ``cfg.replace(loss={"beta": 2.0}, seed=3)``."""
        kw = {}
        for key, val in sections.items():
            cur = getattr(self, key)
            kw[key] = dataclasses.replace(cur, **val) if isinstance(val, dict) else val
        return dataclasses.replace(self, **kw)


_SECTIONS = {"data": DataSection, "model": ModelSection, "loss": LossSection, "train": TrainSection}


def _build_section(cls, raw, name):
    if not isinstance(raw, dict):
        raise ConfigError(f"{name}: expected an object")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - set(known))
    if unknown:
        raise ConfigError(f"{name}: unknown key(s) {', '.join(unknown)}")
    kw = {}
    for key, val in raw.items():
        default = getattr(cls(), key)
        if isinstance(val, list):
            val = tuple(val)
        if isinstance(default, bool) and not isinstance(val, bool):
            raise ConfigError(f"{name}.{key}: expected true/false")
        if isinstance(default, float) and isinstance(val, int) and not isinstance(val, bool):
            val = float(val)
        if default is not None and val is not None and not isinstance(default, tuple) \
                and type(val) is not type(default):
            raise ConfigError(f"{name}.{key}: expected {type(default).__name__}, got {val!r}")
        kw[key] = val
    return cls(**kw)


def config_from_dict(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(raw) - set(_SECTIONS) - {"seed", "output_dir"})
    if unknown:
        raise ConfigError(f"unknown top-level key(s) {', '.join(unknown)}")
    kw = {name: _build_section(cls, raw.get(name, {}), name) for name, cls in _SECTIONS.items()}
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError("seed: expected a nonnegative integer")
    out = raw.get("output_dir")
    if out is not None and not isinstance(out, str):
        raise ConfigError("output_dir: expected a string")
    try:
        return ExperimentConfig(**kw, seed=seed, output_dir=out)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return config_from_dict(raw)


def validate(cfg: ExperimentConfig) -> None:
    d, m, lo, t = cfg.data, cfg.model, cfg.loss, cfg.train
    checks = [
        (d.num_classes >= 2, "data.num_classes must be >= 2"),
        (d.n_max >= 1, "data.n_max must be >= 1"),
        (d.imbalance_factor >= 1, "data.imbalance_factor must be >= 1"),
        (d.dim >= 2, "data.dim must be >= 2"),
        (d.separation >= 0, "data.separation must be >= 0"),
        (d.test_per_class >= 1, "data.test_per_class must be >= 1"),
        ((d.train_csv is None) == (d.test_csv is None), "data.train_csv and data.test_csv go together"),
        (len(m.widths) >= 1 and min(m.widths) >= 1, "model.widths must be a nonempty list of positive ints"),
        (m.z_dim is None or m.z_dim >= 1, "model.z_dim must be >= 1"),
        (lo.method in METHODS, f"loss.method must be one of {', '.join(METHODS)}"),
        (lo.beta >= 0 and math.isfinite(lo.beta), "loss.beta must be >= 0"),
        (lo.gamma >= 0, "loss.gamma must be >= 0"),
        (lo.m >= 0, "loss.m must be >= 0"),
        (lo.a >= 0 and lo.b >= 0, "loss.a and loss.b must be >= 0"),
        (lo.reduction in ("mean", "sum"), "loss.reduction must be mean or sum"),
        (lo.ensemble in ("logits", "probs"), "loss.ensemble must be logits or probs"),
        (lo.coefficients is None or len(lo.coefficients) == len(m.widths) - 1,
         "loss.coefficients needs one entry per tap except the last"),
        (not lo.dedupe_student_bsc or lo.method in ("bib", "mbib"),
         "loss.dedupe_student_bsc only applies to bib/mbib"),
        (t.epochs >= 0, "train.epochs must be >= 0"),
        (t.batch_size >= 1, "train.batch_size must be >= 1"),
        (t.lr > 0, "train.lr must be > 0"),
        (0 <= t.momentum < 1, "train.momentum must lie in [0, 1)"),
        (t.weight_decay >= 0, "train.weight_decay must be >= 0"),
        (t.schedule in ("step", "cosine"), "train.schedule must be step or cosine"),
        (0 < t.factor <= 1, "train.factor must lie in (0, 1]"),
        (all(b > a for a, b in zip(t.milestones, t.milestones[1:])), "train.milestones must increase"),
        (t.schedule != "step" or not t.milestones or t.milestones[-1] < max(t.epochs, 1),
         "train.milestones must be < train.epochs"),
    ]
    for ok, msg in checks:
        if not ok:
            raise ConfigError(msg)


def tap_coefficients(cfg: ExperimentConfig) -> tuple[float, ...]:
    """Coefficients for all taps but the last.

    Defaults from ``a`` and ``b``: 2 taps -> ``(b,)``; 3 -> ``(a, b)``;
    more -> ``a`` for every extra shallow tap, then ``(a, b)``.
    """
    lo, n = cfg.loss, len(cfg.model.widths)
    if lo.method == "bib":
        return (0.0,) * (n - 1)
    if lo.coefficients is not None:
        return tuple(lo.coefficients)
    if n == 1:
        return ()
    if n == 2:
        return (lo.b,)
    return (lo.a,) * (n - 2) + (lo.b,)


def train_config(cfg: ExperimentConfig) -> TrainConfig:
    lo, t = cfg.loss, cfg.train
    if lo.method == "ce":
        rb = RebalanceParams(m=0.0, gamma=lo.gamma, logit_adjust=False)
    else:
        rb = RebalanceParams(m=lo.m, gamma=lo.gamma, logit_adjust=True)
    single = lo.method in ("ce", "bsce")
    mb = MbibConfig(
        bib=BibLossConfig(beta=lo.beta, rebalance=rb, reduction=lo.reduction),
        tap_coefficients=tap_coefficients(cfg),
        topology=TOPOLOGY_OF.get(lo.method, "star"),
        dedupe_student_bsc=lo.dedupe_student_bsc,
    )
    sched = (StepSchedule(t.warmup_epochs, t.milestones, t.factor) if t.schedule == "step"
             else CosineSchedule(t.lr_final))
    return TrainConfig(epochs=t.epochs, batch_size=t.batch_size, lr_initial=t.lr, momentum=t.momentum,
                       weight_decay=t.weight_decay, schedule=sched, seed=cfg.seed, loss=mb,
                       objective="single" if single else "mbib", decay_biases=t.decay_biases)


def make_data(cfg: ExperimentConfig) -> tuple[lt.Dataset, lt.Dataset]:
    d = cfg.data
    thr = dict(many_threshold=d.many_threshold, few_threshold=d.few_threshold)
    if d.train_csv is not None:
        train_data = lt.load_csv(d.train_csv, "train", **thr)
        K = train_data.num_classes
        test_data = lt.load_csv(d.test_csv, "test", num_classes=K, **thr)
        return train_data, test_data
    freq = lt.exponential_profile(d.num_classes, d.n_max, d.imbalance_factor, **thr)
    return lt.synthesize_gaussian(freq, d.dim, d.separation, make_rng(cfg.seed, "data"), d.test_per_class)


def make_net(cfg: ExperimentConfig, input_dim: int, num_classes: int) -> MultiTapNet:
    m = cfg.model
    return init([input_dim, *m.widths], num_classes, make_rng(cfg.seed, "init"),
                z_dim=m.z_dim, classifier_bias=m.classifier_bias)


@dataclass
class ExperimentReport:
    accuracy: GroupAccuracy
    representation_v: RepresentationReport
    representation_z: RepresentationReport
    mean_positive_posterior: np.ndarray
    log: TrainLog
    config: ExperimentConfig
    net: MultiTapNet
    seconds: float
    output_dir: Path | None = None

    @property
    def rho_primary(self) -> float:
        """rho of the branch the method actually trains: ``v`` for the
        single-classifier baselines, ``z`` otherwise."""
        if self.config.loss.method in ("ce", "bsce"):
            return self.representation_v.rho
        return self.representation_z.rho

    def summary(self) -> dict:
        return {**self.accuracy.as_row(), "rho_v": self.representation_v.rho,
                "rho_z": self.representation_z.rho, "rho_primary": self.rho_primary}


def prediction_mode(cfg: ExperimentConfig) -> str:
    return "f" if cfg.loss.method in ("ce", "bsce") else "ensemble"


def posterior(trace, cfg: ExperimentConfig) -> np.ndarray:
    mode = prediction_mode(cfg)
    if mode == "ensemble" and cfg.loss.ensemble == "probs":
        return (softmax(trace.f_logits) + softmax(trace.z_logits)) / 2.0
    return softmax(scores(trace, mode))


def run(cfg: ExperimentConfig, out_dir=None) -> ExperimentReport:
    """Data, model, training and metrics for one config; writes all report
    files when ``out_dir`` (or ``cfg.output_dir``) is set."""
    start = time.perf_counter()
    train_data, test_data = make_data(cfg)
    net0 = make_net(cfg, train_data.dim, train_data.num_classes)
    net, log = train(net0, train_data, test_data, train_config(cfg))
    trace = forward(net, test_data.features)
    probs = posterior(trace, cfg)
    pred = np.argmax(probs, axis=1)
    K = train_data.num_classes
    acc = group_accuracy(pred, test_data.labels, train_data.frequency_table)
    mpp = mean_positive_posterior(probs, test_data.labels, K)
    rep_v = representation_quality(trace.obs[-1], test_data.labels, K)
    rep_z = representation_quality(trace.z, test_data.labels, K)
    report = ExperimentReport(acc, rep_v, rep_z, mpp, log, cfg, net, time.perf_counter() - start)
    out = out_dir if out_dir is not None else cfg.output_dir
    if out is not None:
        report.output_dir = Path(out)
        write_outputs(report, train_data, test_data, trace, probs, pred)
    return report


def _write_rows(path: Path, header, rows) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    with tmp.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    os.replace(tmp, path)


def _fmt(x) -> str:
    return repr(float(x))


def write_outputs(report: ExperimentReport, train_data, test_data, trace, probs, pred) -> None:
    out = report.output_dir
    out.mkdir(parents=True, exist_ok=True)
    cfg = report.config
    K = train_data.num_classes
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")
    report.log.write_csv(out / "train_log.csv")
    freq = train_data.frequency_table
    _write_rows(out / "per_class.csv", ("class", "count", "group", "accuracy", "mean_positive_posterior"),
                [(k, freq.counts[k], freq.group_of(k), _fmt(report.accuracy.per_class[k]),
                  _fmt(report.mean_positive_posterior[k])) for k in range(K)])
    _write_rows(out / "representation.csv", ("branch", "d_intra", "d_inter", "rho"),
                [(name, _fmt(r.d_intra), _fmt(r.d_inter), _fmt(r.rho))
                 for name, r in (("v", report.representation_v), ("z", report.representation_z))])
    _write_rows(out / "predictions.csv", ("index", "label", "prediction", *(f"p_{k}" for k in range(K))),
                [(i, int(y), int(p), *map(_fmt, row))
                 for i, (y, p, row) in enumerate(zip(test_data.labels, pred, probs))])
    for name, rep in (("v", trace.obs[-1]), ("z", trace.z)):
        _write_rows(out / f"embeddings_{name}.csv",
                    ("label", *(f"{name}_{j + 1}" for j in range(rep.shape[1]))),
                    [(int(y), *map(_fmt, row)) for y, row in zip(test_data.labels, rep)])
    save_checkpoint(report.net, out / "checkpoint.npz")
    summary = {**report.summary(), "d_intra_v": report.representation_v.d_intra,
               "d_inter_v": report.representation_v.d_inter, "d_intra_z": report.representation_z.d_intra,
               "d_inter_z": report.representation_z.d_inter, "seconds": report.seconds,
               "config": cfg.to_dict()}
    (out / "report.json").write_text(json.dumps(summary, indent=2) + "\n")


def default_output_dir(name: str) -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs")) / name


# ---------------------------------------------------------------------------
# sweeps and comparisons


def parse_axis(spec: str) -> tuple[str, list]:
    """``beta=0,1,2`` | ``ab_grid=0,0.1;0,0.3`` | ``taps=2,3`` | ``topology=star,sequential``."""
    try:
        name, values = spec.split("=", 1)
    except ValueError:
        raise ConfigError(f"axis must look like name=values, got {spec!r}") from None
    name = name.strip()
    try:
        if name == "beta":
            pts = [float(v) for v in values.split(",")]
        elif name == "ab_grid":
            a_vals, b_vals = values.split(";")
            pts = [(float(a), float(b)) for a in a_vals.split(",") for b in b_vals.split(",")]
        elif name == "taps":
            pts = [int(v) for v in values.split(",")]
        elif name == "topology":
            pts = [v.strip() for v in values.split(",")]
        else:
            raise ConfigError(f"unknown sweep axis {name!r}")
    except ValueError as exc:
        raise ConfigError(f"bad values for axis {name}: {exc}") from None
    if not pts:
        raise ConfigError("empty sweep axis")
    return name, pts


_TOPOLOGY_METHOD = {"star": "mbib", "sequential": "se_mbib", "all_pairs": "all_mbib",
                    "mbib": "mbib", "se_mbib": "se_mbib", "all_mbib": "all_mbib"}


def apply_point(cfg: ExperimentConfig, axis: str, point) -> tuple[str, ExperimentConfig]:
    if axis == "beta":
        return f"beta={point:g}", cfg.replace(loss={"beta": point})
    if axis == "ab_grid":
        a, b = point
        return f"a={a:g};b={b:g}", cfg.replace(loss={"a": a, "b": b, "coefficients": None})
    if axis == "taps":
        w = cfg.model.widths[-1]
        return f"taps={point}", cfg.replace(model={"widths": (w,) * point}, loss={"coefficients": None})
    if axis == "topology":
        if point not in _TOPOLOGY_METHOD:
            raise ConfigError(f"unknown topology {point!r}")
        return f"topology={point}", cfg.replace(loss={"method": _TOPOLOGY_METHOD[point]})
    raise ConfigError(f"unknown sweep axis {axis!r}")


def _run_point(args):
    label, cfg, out = args
    try:
        return label, cfg.seed, run(cfg, out).summary(), None
    except Exception as exc:  # recorded; the sweep carries on
        return label, cfg.seed, None, f"{type(exc).__name__}: {exc}"


def _execute(jobs, workers: int):
    if workers <= 1:
        return [_run_point(j) for j in jobs]
    from concurrent.futures import ProcessPoolExecutor
    with ProcessPoolExecutor(workers) as ex:
        return list(ex.map(_run_point, jobs))


def sweep(base: ExperimentConfig, axis: str, points, seeds, out_dir=None, workers: int = 1,
          write_runs: bool = True) -> list[dict]:
    """One run per ``(point, seed)``; returns the summary rows (data rows
    first, then one ``seed="mean"`` row per point)."""
    if not points or not seeds:
        raise ConfigError("sweep needs at least one point and one seed")
    jobs = []
    for p in points:
        label, cfg_p = apply_point(base, axis, p)
        for s in seeds:
            run_out = (Path(out_dir) / _slug(label) / f"seed_{s}") if out_dir and write_runs else None
            jobs.append((label, cfg_p.replace(seed=int(s), output_dir=None), run_out))
    results = _execute(jobs, workers)
    rows, failures = [], []
    for label, seed, summ, err in results:
        if err is not None:
            failures.append({"point": label, "seed": seed, "error": err})
            continue
        rows.append({"point": label, "seed": seed, **{k: summ[k] for k in SUMMARY_FIELDS[2:]}})
    means = []
    for p in points:
        label = apply_point(base, axis, p)[0]
        sel = [r for r in rows if r["point"] == label]
        if sel:
            means.append({"point": label, "seed": "mean",
                          **{k: float(np.mean([r[k] for r in sel])) for k in SUMMARY_FIELDS[2:]}})
    all_rows = rows + means
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_rows(out / "summary.csv", SUMMARY_FIELDS,
                    [[r["point"], r["seed"], *(_fmt(r[k]) for k in SUMMARY_FIELDS[2:])] for r in all_rows])
        if failures:
            _write_rows(out / "failures.csv", ("point", "seed", "error"),
                        [[f["point"], f["seed"], f["error"]] for f in failures])
    return all_rows


COMPARE_METRICS = ("acc_all", "acc_many", "acc_medium", "acc_few", "rho_v", "rho_z", "rho_primary")


def compare(methods, base: ExperimentConfig, seeds, out_dir=None, workers: int = 1,
            write_runs: bool = False) -> dict[str, dict]:
    """Mean and sample standard deviation of every metric per method."""
    for m in methods:
        if m not in METHODS:
            raise ConfigError(f"unknown method {m!r}")
    jobs = []
    for m in methods:
        for s in seeds:
            run_out = (Path(out_dir) / m / f"seed_{s}") if out_dir and write_runs else None
            jobs.append((m, base.replace(loss={"method": m}, seed=int(s), output_dir=None), run_out))
    results = _execute(jobs, workers)
    table, per_run, failures = {}, [], []
    for m in methods:
        summ = [r[2] for r in results if r[0] == m and r[3] is None]
        failures += [{"point": m, "seed": r[1], "error": r[3]} for r in results if r[0] == m and r[3]]
        per_run += [{"method": r[0], "seed": r[1], **r[2]} for r in results if r[0] == m and r[3] is None]
        stats = {"n": len(summ)}
        for k in COMPARE_METRICS:
            vals = np.array([s[k] for s in summ])
            stats[f"{k}_mean"] = float(vals.mean()) if len(vals) else float("nan")
            stats[f"{k}_sd"] = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
        table[m] = stats
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        cols = ["n"] + [f"{k}_{s}" for k in COMPARE_METRICS for s in ("mean", "sd")]
        _write_rows(out / "comparison.csv", ["method", *cols],
                    [[m, table[m]["n"], *(_fmt(table[m][c]) for c in cols[1:])] for m in methods])
        _write_rows(out / "runs.csv", ["method", "seed", *COMPARE_METRICS],
                    [[r["method"], r["seed"], *(_fmt(r[k]) for k in COMPARE_METRICS)] for r in per_run])
        if failures:
            _write_rows(out / "failures.csv", ("method", "seed", "error"),
                        [[f["point"], f["seed"], f["error"]] for f in failures])
    return table


def _slug(label: str) -> str:
    return label.replace("=", "_").replace(";", "__")
