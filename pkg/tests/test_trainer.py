import numpy as np
import pytest

from kancl import ndtensor as nd
from kancl.layers import Dense
from kancl.network import Network, NetworkSpec, build_network
from kancl.trainer import (SGD, Adam, ClSchedule, GridSpec, PeaksConfig, RunConfig, confusion, execute_run,
                           lr_for_task, run_grid, run_peaks_cl, step)
from kancl.datasets import split_class_il

from oracles import tally
from synth import blocks


def scalar_net(w=3.0, b=0.0):
    layer = Dense(1, 1)
    layer.params["W"][:] = w
    layer.params["b"][:] = b
    return Network(NetworkSpec(model="mlp", widths=[1, 1]), [layer]), layer


def test_sgd_hand_step():
    net, layer = scalar_net(3.0, 0.5)
    # loss (w*x + b - y)^2 at x=2, y=1: residual 5.5, dL/dw = 2*5.5*2, dL/db = 2*5.5
    loss = step(net, np.array([[2.0]]), np.array([[1.0]]), SGD(0.01), loss="mse")
    assert loss == 5.5 ** 2
    assert layer.params["W"][0, 0] == 3.0 - 0.01 * 22.0
    assert layer.params["b"][0] == 0.5 - 0.01 * 11.0


def test_zero_gradient_leaves_params():
    net, layer = scalar_net(3.0, 0.5)
    step(net, np.array([[2.0]]), np.array([[6.5]]), SGD(0.1), loss="mse")
    assert layer.params["W"][0, 0] == 3.0 and layer.params["b"][0] == 0.5


def test_adam_first_step_is_lr_times_sign():
    net, layer = scalar_net(3.0, 0.5)
    step(net, np.array([[2.0]]), np.array([[1.0]]), Adam(1e-3), loss="mse")
    # bias-corrected moments give m/sqrt(v) = sign(g) on the first step
    assert abs(layer.params["W"][0, 0] - (3.0 - 1e-3 * 22.0 / (22.0 + 1e-8))) < 1e-15


def test_adam_matches_reference_sequence():
    net, layer = scalar_net(1.0, 0.0)
    opt = Adam(0.05)
    # textbook recurrence for loss (w + b)^2 at x=1, y=0; both parameters see g = 2(w + b)
    w, b = 1.0, 0.0
    m = v = np.zeros(2)
    for t in range(1, 6):
        step(net, np.array([[1.0]]), np.array([[0.0]]), opt, loss="mse")
        g = np.array([2 * (w + b)] * 2)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        upd = 0.05 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        w, b = w - upd[0], b - upd[1]
        assert abs(layer.params["W"][0, 0] - w) < 1e-14 and abs(layer.params["b"][0] - b) < 1e-14


def test_adam_state_only_for_trainable():
    net = build_network(NetworkSpec(model="kan", widths=[3, 2], kan_mode="cl"))
    opt = Adam(1e-3)
    step(net, np.zeros((4, 3)), np.array([0, 1, 0, 1]), opt)
    assert set(opt.m) == {"0.coef"}


def test_non_finite_loss_aborts():
    net, layer = scalar_net(np.inf)
    with pytest.raises(nd.NumericError):
        step(net, np.array([[1.0]]), np.array([[0.0]]), SGD(1.0), loss="mse")


def test_lr_schedule():
    assert abs(lr_for_task(1e-5, 0.8, 5) - 4.096e-6) < 1e-20
    s = ClSchedule(list(range(5)), 1, 3e-4, 1.0, 0)
    assert [s.lr(t) for t in range(1, 6)] == [3e-4] * 5
    for bad in (dict(epochs_per_task=0), dict(decay=0.0), dict(decay=1.5), dict(lr0=0.0)):
        kw = dict(tasks=[], epochs_per_task=1, lr0=1e-3, decay=0.5, seed=0) | bad
        with pytest.raises(ValueError):
            ClSchedule(**kw)


def test_confusion():
    labels = np.repeat(np.arange(10), 3)
    assert np.array_equal(confusion(labels, labels), np.diag([3] * 10))
    cm = confusion(np.zeros_like(labels), labels)
    assert cm[:, 0].tolist() == [3] * 10 and cm[:, 1:].sum() == 0
    assert np.trace(cm) / cm.sum() == 0.1
    rng = np.random.default_rng(4)
    pred, lab = rng.integers(0, 10, 100), rng.integers(0, 10, 100)
    assert np.array_equal(confusion(pred, lab), tally(pred, lab))
    with pytest.raises(ValueError):
        confusion([0, 10], [0, 1])


@pytest.fixture(scope="module")
def synth():
    return blocks(24, seed=0), blocks(12, seed=1)


def small_run(model="kan", epochs=2, lr=3e-3, decay=0.9, seed=0, **net):
    spec = NetworkSpec(model=model, widths=[784, 8, 10], **net)
    return RunConfig(spec, epochs, lr, decay, seed, batch_size=32)


def test_run_cl_protocol(synth):
    train, test = synth
    net, m = execute_run(small_run(), train, test)
    assert len(m.epochs) == 10 and len(m.confusions) == 10
    assert [r.task for r in m.epochs] == [1, 1, 2, 2, 3, 3, 4, 4, 5, 5]
    assert [r.lr for r in m.epochs[::2]] == [lr_for_task(3e-3, 0.9, t) for t in range(1, 6)]
    true_counts = np.bincount(test.labels, minlength=10)
    for r, cm in zip(m.epochs, m.confusions):
        assert cm.sum() == len(test)
        assert np.array_equal(cm.sum(axis=1), true_counts)
        assert r.test_accuracy == np.trace(cm) / cm.sum()
    for t, acc in m.accuracy_after_task().items():
        assert acc <= 0.2 * t + 0.05
    final = [r for r in m.epochs if r.task == 5]
    best = max(r.test_accuracy for r in final)
    assert m.best_final_task()[0] == best
    assert m.epochs[m.best_final_task()[1] - 1].test_accuracy == best
    assert m.n_params == net.n_trainable()


def test_run_is_deterministic(synth):
    train, test = synth
    a = execute_run(small_run(epochs=1), train, test)[1]
    b = execute_run(small_run(epochs=1), train, test)[1]
    assert [r.test_accuracy for r in a.epochs] == [r.test_accuracy for r in b.epochs]
    assert [r.loss for r in a.epochs] == [r.loss for r in b.epochs]


def test_frozen_parameters_survive_full_run(synth):
    train, test = synth
    cfg = small_run(epochs=1, kan_mode="cl")
    before = build_network(cfg.network, seed=__import__("kancl").ndtensor.child_seeds(cfg.seed, 3)[0]).state()
    net, _ = execute_run(cfg, train, test)
    after = net.state()
    for key in before:
        if key.endswith(("w_s", "w_b", "beta")):
            assert np.array_equal(before[key], after[key]), key
        if key.endswith("coef"):
            assert not np.array_equal(before[key], after[key])


def test_grid_sizes_and_best(synth):
    spec = NetworkSpec()
    assert len(GridSpec(spec, [1e-3, 1e-4, 1e-5, 1e-6], [0.6, 0.7, 0.8, 0.9, 1.0], list(range(1, 11)))) == 200
    assert len(GridSpec(spec, [1e-3, 1e-4, 1e-5, 1e-6], [0.6, 0.7, 0.8, 0.9, 1.0], list(range(1, 11))).configs()) == 200
    train, test = synth
    one = run_grid(GridSpec(NetworkSpec(widths=[784, 4, 10]), [1e-3], [1.0], [1], batch_size=32), train, test)
    assert len(one.runs) == 1 and one.best_index() == 0


@pytest.mark.filterwarnings("ignore:overflow")
def test_grid_failures_are_recorded_and_excluded(synth):
    train, test = synth
    grid = GridSpec(NetworkSpec(model="mlp", widths=[784, 4, 10]), [1e-3, 1e200], [1.0], [1],
                    optimizer="sgd", batch_size=32)
    res = run_grid(grid, train, test)
    assert [m.status for m in res.runs] == ["ok", "failed"]
    assert res.runs[1].error
    assert res.best_index() == 0
    rows = res.rows()
    assert np.isnan(rows[1]["best_final_task_accuracy"])


def test_grid_parallel_matches_serial(synth):
    train, test = synth
    grid = GridSpec(NetworkSpec(widths=[784, 4, 10]), [1e-3, 3e-3], [0.8], [1], seeds=[0, 1], batch_size=32)
    serial = run_grid(grid, train, test, jobs=1).rows()
    parallel = run_grid(grid, train, test, jobs=2).rows()
    assert serial == parallel


def test_peaks_baseline_and_single_task():
    cfg = PeaksConfig(n_peaks=1, steps_per_task=50, points_per_peak=50, G=20, eval_points=200)
    rep = run_peaks_cl(cfg)
    assert rep.rmse.shape == (2, 1) and len(rep.predictions) == 2
    assert rep.rmse[1, 0] < rep.rmse[0, 0]
    # before training the error is that of the initial function
    init = rep.predictions[0]
    assert abs(rep.rmse_total[0] - np.sqrt(np.mean((init - rep.target) ** 2))) < 1e-12
