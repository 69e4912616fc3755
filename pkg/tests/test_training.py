import math

import numpy as np
import pytest

from mbib.data import exponential_profile, synthesize_gaussian
from mbib.losses import BibLossConfig, MbibConfig
from mbib.model import init
from mbib.numerics import make_rng
from mbib.training import (CosineSchedule, StepSchedule, TrainConfig, TrainingDiverged, evaluate,
                           lr_at, sgd_step, train)


def test_cosine_schedule():
    s = CosineSchedule(lr_final=0.0)
    assert lr_at(s, 0, 90, 0.05) == 0.05
    assert lr_at(s, 90, 90, 0.05) == pytest.approx(0.0, abs=1e-18)
    assert lr_at(CosineSchedule(0.01), 45, 90, 0.05) == pytest.approx(0.03, abs=1e-15)


def test_step_schedule_recipe():
    s = StepSchedule(warmup_epochs=5, milestones=(160, 180), factor=0.01)
    assert lr_at(s, 170, 200, 0.1) == pytest.approx(0.001, rel=1e-12)
    assert lr_at(s, 190, 200, 0.1) == pytest.approx(1e-5, rel=1e-12)
    assert lr_at(s, 100, 200, 0.1) == 0.1
    ramp = [lr_at(s, e, 200, 0.1) for e in range(5)]
    assert ramp == pytest.approx([0.02, 0.04, 0.06, 0.08, 0.1])
    with pytest.raises(ValueError):
        StepSchedule(milestones=(10, 5))
    with pytest.raises(ValueError):
        StepSchedule(factor=0.0)


def test_sgd_step_cases():
    p = {"a.W": np.array([1.0, -2.0]), "a.b": np.array([0.5])}
    g = {"a.W": np.array([0.3, 0.1]), "a.b": np.array([1.0])}
    same, _ = sgd_step(p, g, {}, 0.0, 0.9, 0.1)
    assert all(np.array_equal(same[k], p[k]) for k in p)
    plain, _ = sgd_step(p, g, {}, 0.5, 0.0, 0.0)
    for k in p:
        np.testing.assert_array_equal(plain[k], p[k] - 0.5 * g[k])
    # weights decay, biases do not (unless asked)
    wd, _ = sgd_step(p, g, {}, 1.0, 0.0, 0.1)
    np.testing.assert_allclose(wd["a.W"], p["a.W"] - (g["a.W"] + 0.1 * p["a.W"]))
    np.testing.assert_array_equal(wd["a.b"], p["a.b"] - g["a.b"])
    wdb, _ = sgd_step(p, g, {}, 1.0, 0.0, 0.1, decay_biases=True)
    np.testing.assert_allclose(wdb["a.b"], p["a.b"] - (g["a.b"] + 0.1 * p["a.b"]))


def test_sgd_quadratic_recurrence():
    # f(x) = 1.5 x^2, grad 3x; scalar recurrence written out by hand
    lr, mom, wd = 0.1, 0.9, 0.01
    x, buf = 2.0, 0.0
    params, state = {"x.W": np.array([2.0])}, {}
    for _ in range(2):
        buf = mom * buf + 3 * x + wd * x
        x = x - lr * buf
        params, state = sgd_step(params, {"x.W": 3 * params["x.W"]}, state, lr, mom, wd)
    assert params["x.W"][0] == x
    assert state["x.W"][0] == buf


@pytest.fixture(scope="module")
def small_task():
    freq = exponential_profile(4, 60, 10, many_threshold=30, few_threshold=10)
    return synthesize_gaussian(freq, 6, 3.0, make_rng(0, "data"), test_per_class=40)


def _cfg(**kw):
    base = dict(epochs=4, batch_size=32, lr_initial=0.02, weight_decay=5e-3,
                schedule=StepSchedule(1, (3,), 0.1), seed=3,
                loss=MbibConfig(BibLossConfig(beta=1.0), (0.1, 0.3)))
    base.update(kw)
    return TrainConfig(**base)


def test_zero_epochs(small_task):
    tr, te = small_task
    net = init([6, 8, 8, 8], 4, make_rng(1))
    out, log = train(net, tr, te, _cfg(epochs=0, schedule=CosineSchedule()))
    assert len(log) == 0
    assert all(np.array_equal(out.params[k], net.params[k]) for k in net.params)


def test_training_deterministic_and_logs_lr(small_task):
    tr, te = small_task
    net = init([6, 8, 8, 8], 4, make_rng(1))
    cfg = _cfg()
    a, log_a = train(net, tr, te, cfg)
    b, log_b = train(net, tr, te, cfg)
    assert all(a.params[k].tobytes() == b.params[k].tobytes() for k in a.params)
    assert log_a.records == log_b.records
    assert len(log_a) == 4
    for r in log_a.records:
        assert r.lr == lr_at(cfg.schedule, r.epoch, cfg.epochs, cfg.lr_initial)
    # the caller's network is not mutated
    assert all(np.array_equal(net.params[k], init([6, 8, 8, 8], 4, make_rng(1)).params[k]) for k in net.params)


def test_training_improves(small_task):
    tr, te = small_task
    net = init([6, 16, 16, 16], 4, make_rng(2))
    before = evaluate(net, te, tr.frequency_table).all
    out, log = train(net, tr, te, _cfg(epochs=15, schedule=StepSchedule(2, (12,), 0.1)))
    assert log.records[-1].acc_all > before
    assert log.records[-1].train_loss < log.records[0].train_loss


def test_single_objective_leaves_other_heads(small_task):
    tr, te = small_task
    net = init([6, 8, 8], 4, make_rng(4))
    out, _ = train(net, tr, te, _cfg(objective="single", weight_decay=0.0, momentum=0.0, epochs=2,
                                      schedule=CosineSchedule()))
    for k in ("g.W", "g.b", "z.W", "z.b", "tap1.W", "tap1.b"):
        assert np.array_equal(out.params[k], net.params[k])
    assert not np.array_equal(out.params["tap2.W"], net.params["tap2.W"])


def test_divergence_guard(small_task):
    tr, te = small_task
    net = init([6, 8, 8, 8], 4, make_rng(1))
    with pytest.raises(TrainingDiverged, match=r"epoch \d+, batch \d+"):
        train(net, tr, te, _cfg(lr_initial=1e6, schedule=CosineSchedule()))


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(momentum=1.0)
    with pytest.raises(ValueError):
        TrainConfig(epochs=10, schedule=StepSchedule(1, (20,), 0.1))
    with pytest.raises(ValueError):
        TrainConfig(objective="other")
