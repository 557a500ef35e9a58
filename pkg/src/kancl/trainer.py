"""Optimisers, the class-incremental training protocol, grid search and the peaks study."""
from __future__ import annotations

import itertools
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from . import ndtensor as nd
from .datasets import DEFAULT_PAIRS, ClTask, LabeledImages, build_balanced_test, gaussian_peaks, split_class_il
from .layers import GradientTape, KanLinear, half_mse, mse, softmax_cross_entropy
from .network import CONV_MODELS, Network, NetworkSpec, build_network

log = logging.getLogger(__name__)


class SGD:
    kind = "sgd"

    def __init__(self, lr: float):
        self.lr = lr

    def update(self, net: Network, grads: dict[str, np.ndarray]) -> None:
        params = net.named_params()
        for key in net.trainable_keys():
            if key in grads:
                params[key] -= self.lr * grads[key]


class Adam:
    kind = "adam"

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def update(self, net: Network, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        params = net.named_params()
        for key in net.trainable_keys():
            g = grads.get(key)
            if g is None:
                continue
            if key not in self.m:
                self.m[key] = np.zeros_like(g)
                self.v[key] = np.zeros_like(g)
            m, v = self.m[key], self.v[key]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            params[key] -= (self.lr / bc1) * m / (np.sqrt(v / bc2) + self.eps)


def make_optimizer(kind: str, lr: float):
    if kind == "adam":
        return Adam(lr)
    if kind == "sgd":
        return SGD(lr)
    raise ValueError(f"unknown optimizer {kind!r}")


_REGRESSION_LOSSES = {"mse": mse, "half_mse": half_mse}


def step(net: Network, x: np.ndarray, y: np.ndarray, optimizer, loss: str = "xent") -> float:
    """One forward/backward/update; returns the batch loss."""
    if len(x) == 0:
        raise ValueError("empty batch")
    tape = GradientTape()
    out = net.forward(x, tape=tape, train=True)
    if loss == "xent":
        value, grad = softmax_cross_entropy(out, y)
    elif loss in _REGRESSION_LOSSES:
        value, grad = _REGRESSION_LOSSES[loss](out, y.reshape(out.shape))
    else:
        raise ValueError(f"unknown loss {loss!r}")
    if not np.isfinite(value):
        raise nd.NumericError(f"non-finite loss {value}")
    grads = net.backward(grad, tape)
    optimizer.update(net, grads)
    return value


def confusion(predictions, labels, n_classes: int = 10) -> np.ndarray:
    """``m[true, pred]`` counts."""
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape:
        raise ValueError(f"{predictions.shape[0]} predictions for {labels.shape[0]} labels")
    for name, arr in (("label", labels), ("prediction", predictions)):
        if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
            raise ValueError(f"{name} out of range 0..{n_classes - 1}")
    flat = labels.astype(np.int64) * n_classes + predictions.astype(np.int64)
    return np.bincount(flat, minlength=n_classes * n_classes).reshape(n_classes, n_classes)


# 64 lets Adam drift too far from earlier tasks within one epoch; see README
DEFAULT_BATCH_SIZE = 256


def predict(net: Network, x: np.ndarray, batch_size: int = 1000) -> np.ndarray:
    out = [np.argmax(net.forward(x[i:i + batch_size], train=False), axis=1) for i in range(0, len(x), batch_size)]
    return np.concatenate(out)


def lr_for_task(lr0: float, decay: float, task_index: int) -> float:
    """Learning rate of 1-based task ``task_index``."""
    return lr0 * decay ** (task_index - 1)


@dataclass
class ClSchedule:
    tasks: list[ClTask]
    epochs_per_task: int
    lr0: float
    decay: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.epochs_per_task < 1:
            raise ValueError(f"epochs_per_task must be >= 1, got {self.epochs_per_task}")
        if not 0 < self.decay <= 1:
            raise ValueError(f"decay must lie in (0, 1], got {self.decay}")
        if not self.lr0 > 0:
            raise ValueError(f"lr0 must be positive, got {self.lr0}")

    def lr(self, task_index: int) -> float:
        return lr_for_task(self.lr0, self.decay, task_index)


@dataclass
class EpochRecord:
    epoch: int
    task: int
    lr: float
    loss: float
    test_accuracy: float


@dataclass
class RunMetrics:
    epochs: list[EpochRecord] = field(default_factory=list)
    confusions: list[np.ndarray] = field(default_factory=list)
    wall_clock: float = 0.0
    n_params: int = 0
    n_tasks: int = 0
    epochs_per_task: int = 0
    status: str = "ok"
    error: str = ""

    def task_best(self) -> dict[int, float]:
        best: dict[int, float] = {}
        for r in self.epochs:
            best[r.task] = max(best.get(r.task, -1.0), r.test_accuracy)
        return best

    def accuracy_after_task(self) -> dict[int, float]:
        """Test accuracy at the last epoch of each task."""
        return {r.task: r.test_accuracy for r in self.epochs}

    def best_final_task(self) -> tuple[float, int]:
        """Highest accuracy within the last task and its (1-based) epoch; ties go to the earliest."""
        final = [r for r in self.epochs if r.task == self.n_tasks]
        if not final:
            return float("nan"), 0
        best = max(final, key=lambda r: (r.test_accuracy, -r.epoch))
        return best.test_accuracy, best.epoch


def _batches(order: np.ndarray, batch_size: int):
    starts = list(range(0, len(order), batch_size))
    # fold a trailing singleton into the previous batch (batch norm needs >= 2)
    if len(starts) > 1 and len(order) - starts[-1] == 1:
        starts.pop()
    for j, s in enumerate(starts):
        end = starts[j + 1] if j + 1 < len(starts) else len(order)
        yield order[s:end]


def run_cl(net: Network, schedule: ClSchedule, train: LabeledImages, test: LabeledImages,
           test_indices: np.ndarray | None = None, optimizer: str = "adam", batch_size: int = DEFAULT_BATCH_SIZE,
           eval_batch_size: int = 1000, on_epoch=None) -> RunMetrics:
    """Train task by task on that task's samples only, evaluating on the fixed test set after every epoch."""
    t0 = time.perf_counter()
    rng = nd.make_rng(schedule.seed)
    idx = np.arange(len(test)) if test_indices is None else np.asarray(test_indices)
    x_test = test.features(idx)
    y_test = test.labels[idx].astype(np.int64)
    opt = make_optimizer(optimizer, schedule.lr0)
    metrics = RunMetrics(n_params=net.n_trainable(), n_tasks=len(schedule.tasks),
                         epochs_per_task=schedule.epochs_per_task)
    epoch = 0
    for task in schedule.tasks:
        opt.lr = schedule.lr(task.task_index)
        for _ in range(schedule.epochs_per_task):
            epoch += 1
            losses, sizes = [], []
            for b in _batches(task.shuffled(rng), batch_size):
                losses.append(step(net, train.features(b), train.labels[b].astype(np.int64), opt))
                sizes.append(len(b))
            pred = predict(net, x_test, eval_batch_size)
            cm = confusion(pred, y_test)
            rec = EpochRecord(epoch, task.task_index, opt.lr, float(np.average(losses, weights=sizes)),
                              float(np.trace(cm) / cm.sum()))
            metrics.epochs.append(rec)
            metrics.confusions.append(cm)
            log.debug("epoch %d task %d lr %.3g loss %.4f acc %.4f", epoch, task.task_index, rec.lr, rec.loss,
                      rec.test_accuracy)
            if on_epoch is not None:
                on_epoch(rec, cm)
    metrics.wall_clock = time.perf_counter() - t0
    return metrics


def eval_batch_for(spec: NetworkSpec) -> int:
    # KAN convolutions expand every pixel window into a basis tensor
    return 50 if spec.model in CONV_MODELS else 1000


@dataclass
class RunConfig:
    """Everything one class-incremental run needs besides the data."""

    network: NetworkSpec
    epochs_per_task: int
    lr: float
    decay: float = 1.0
    seed: int = 0
    optimizer: str = "adam"
    batch_size: int = DEFAULT_BATCH_SIZE
    pairs: tuple = DEFAULT_PAIRS
    test_per_class: int | None = None
    train_per_class: int | None = None


def execute_run(cfg: RunConfig, train: LabeledImages, test: LabeledImages, on_epoch=None) -> tuple[Network, RunMetrics]:
    net_seed, data_seed, test_seed, sub_seed = nd.child_seeds(cfg.seed, 4)
    net = build_network(cfg.network, seed=net_seed)
    if cfg.train_per_class is not None:
        keep = build_balanced_test(train, cfg.train_per_class, nd.make_rng(sub_seed))
        train = LabeledImages(train.images[keep], train.labels[keep])
    tasks = split_class_il(train, cfg.pairs)
    test_idx = build_balanced_test(test, cfg.test_per_class, nd.make_rng(test_seed))
    schedule = ClSchedule(tasks, cfg.epochs_per_task, cfg.lr, cfg.decay, data_seed)
    metrics = run_cl(net, schedule, train, test, test_idx, optimizer=cfg.optimizer, batch_size=cfg.batch_size,
                     eval_batch_size=eval_batch_for(cfg.network), on_epoch=on_epoch)
    return net, metrics


@dataclass
class GridSpec:
    network: NetworkSpec
    lrs: list[float]
    decays: list[float]
    epoch_counts: list[int]
    seeds: list[int] = field(default_factory=lambda: [0])
    optimizer: str = "adam"
    batch_size: int = DEFAULT_BATCH_SIZE
    pairs: tuple = DEFAULT_PAIRS
    test_per_class: int | None = None
    train_per_class: int | None = None

    def configs(self) -> list[RunConfig]:
        return [RunConfig(self.network, e, lr, d, s, self.optimizer, self.batch_size, self.pairs, self.test_per_class,
                          self.train_per_class)
                for lr, d, e, s in itertools.product(self.lrs, self.decays, self.epoch_counts, self.seeds)]

    def __len__(self) -> int:
        return len(self.lrs) * len(self.decays) * len(self.epoch_counts) * len(self.seeds)


@dataclass
class GridResult:
    configs: list[RunConfig]
    runs: list[RunMetrics]

    def rows(self) -> list[dict]:
        out = []
        for i, (cfg, m) in enumerate(zip(self.configs, self.runs)):
            acc, ep = m.best_final_task() if m.status == "ok" else (float("nan"), 0)
            row = {"run": i, "lr": cfg.lr, "decay": cfg.decay, "epochs_per_task": cfg.epochs_per_task,
                   "seed": cfg.seed, "status": m.status, "best_final_task_accuracy": acc, "best_epoch": ep}
            best, after = m.task_best(), m.accuracy_after_task()
            for t in range(1, len(cfg.pairs) + 1):
                row[f"task{t}_best"] = best.get(t, float("nan"))
            for t in range(1, len(cfg.pairs) + 1):
                row[f"after_task{t}"] = after.get(t, float("nan"))
            out.append(row)
        return out

    def best_index(self) -> int | None:
        """Run with the highest final-task accuracy among successful runs (lowest index on ties)."""
        best, best_acc = None, -np.inf
        for i, m in enumerate(self.runs):
            if m.status != "ok":
                continue
            acc = m.best_final_task()[0]
            if acc > best_acc:
                best, best_acc = i, acc
        return best


_WORKER_DATA: dict = {}


def _init_worker(train, test):
    _WORKER_DATA["train"], _WORKER_DATA["test"] = train, test


def _run_one(cfg: RunConfig) -> RunMetrics:
    with threadpool_limits(1):
        try:
            return execute_run(cfg, _WORKER_DATA["train"], _WORKER_DATA["test"])[1]
        except (nd.NumericError, FloatingPointError, ValueError) as exc:
            log.warning("run failed (lr=%g decay=%g epochs=%d seed=%d): %s", cfg.lr, cfg.decay,
                        cfg.epochs_per_task, cfg.seed, exc)
            return RunMetrics(status="failed", error=str(exc), n_tasks=len(cfg.pairs),
                              epochs_per_task=cfg.epochs_per_task)


def run_grid(grid: GridSpec, train: LabeledImages, test: LabeledImages, jobs: int = 1) -> GridResult:
    """Execute every grid point; results are ordered by grid index whatever ``jobs`` is."""
    configs = grid.configs()
    if jobs <= 1:
        _init_worker(train, test)
        runs = [_run_one(c) for c in configs]
    else:
        with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker, initargs=(train, test)) as pool:
            runs = list(pool.map(_run_one, configs))
    return GridResult(configs, runs)


# --- 1D Gaussian-peaks study -------------------------------------------------

ABLATIONS = {
    "scales_bias_trainable": dict(train_ws=True, train_wb=True, train_beta=True),
    "scales_trainable": dict(train_ws=True, train_wb=True, train_beta=False),
    "bias_trainable": dict(train_ws=False, train_wb=False, train_beta=True),
    "frozen": dict(train_ws=False, train_wb=False, train_beta=False),
}


@dataclass
class PeaksConfig:
    train_ws: bool = False
    train_wb: bool = False
    train_beta: bool = False
    n_peaks: int = 5
    points_per_peak: int = 200
    amplitude: float = 1.0
    sigma: float = 0.02
    G: int = 200
    k: int = 3
    lr: float = 1.0
    steps_per_task: int = 2000
    eval_points: int = 1000
    seed: int = 0
    loss: str = "half_mse"
    name: str = "custom"


@dataclass
class PeaksReport:
    config: PeaksConfig
    grid_x: np.ndarray
    target: np.ndarray
    predictions: list[np.ndarray]  # index 0: before training, then one per task
    rmse: np.ndarray  # (n_tasks + 1, n_peaks) per-window RMSE
    rmse_total: np.ndarray  # (n_tasks + 1,)
    final_loss: list[float]

    def to_dict(self) -> dict:
        return {
            "config": asdict(self.config),
            "rmse_per_window": self.rmse.tolist(),
            "rmse_total": self.rmse_total.tolist(),
            "final_loss": self.final_loss,
        }


def window_rmse(pred: np.ndarray, target: np.ndarray, x: np.ndarray, n_peaks: int) -> np.ndarray:
    j = np.clip(np.floor(x * n_peaks).astype(np.int64), 0, n_peaks - 1)
    return np.array([np.sqrt(np.mean((pred[j == w] - target[j == w]) ** 2)) for w in range(n_peaks)])


def build_peaks_model(cfg: PeaksConfig, seed: int) -> Network:
    spec = NetworkSpec(model="kan", widths=[1, 1], G=cfg.G, k=cfg.k, kan_mode="pykan_full", lo=0.0, hi=1.0,
                       train_ws=cfg.train_ws, train_wb=cfg.train_wb, train_beta=cfg.train_beta, scale_init="unit")
    return build_network(spec, seed=seed)


def run_peaks_cl(cfg: PeaksConfig) -> PeaksReport:
    """Fit a [1, 1] KAN to the peaks one window at a time with full-batch gradient descent."""
    net_seed, data_seed = nd.child_seeds(cfg.seed, 2)
    data = gaussian_peaks(cfg.n_peaks, cfg.points_per_peak, cfg.amplitude, cfg.sigma, nd.make_rng(data_seed))
    net = build_peaks_model(cfg, net_seed)
    # cell midpoints so every evaluation point belongs to exactly one window
    gx = (np.arange(cfg.eval_points) + 0.5) / cfg.eval_points
    target = data.target(gx)
    opt = SGD(cfg.lr)

    def snapshot():
        pred = net.forward(gx[:, None])[:, 0]
        return pred, window_rmse(pred, target, gx, cfg.n_peaks), float(np.sqrt(np.mean((pred - target) ** 2)))

    snaps = [snapshot()]
    final_loss = []
    for j in range(1, cfg.n_peaks + 1):
        x, y = data.task(j)
        x = x[:, None]
        loss = float("nan")
        for _ in range(cfg.steps_per_task):
            loss = step(net, x, y, opt, loss=cfg.loss)
        final_loss.append(loss)
        snaps.append(snapshot())
    preds, rmse, total = zip(*snaps)
    return PeaksReport(cfg, gx, target, list(preds), np.array(rmse), np.array(total), final_loss)


def peaks_kan_layer(net: Network) -> KanLinear:
    return next(layer for layer in net.layers if isinstance(layer, KanLinear))
