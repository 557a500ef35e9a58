"""Run artefacts: metrics CSVs, per-epoch confusion CSVs, JSON summaries, SVG figures, and their verification."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict
from pathlib import Path

import jsonschema
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

SCHEMA_VERSION = 1
METRICS_FIELDS = ["epoch", "task", "lr", "loss", "test_accuracy"]
RMSE_PREFIX = "window"
CONFUSION_HEADER = ["true\\pred"] + [str(c) for c in range(10)]


class VerifyError(ValueError):
    pass


def _finite_or_none(v):
    return None if isinstance(v, float) and not math.isfinite(v) else v


# --- writers -------------------------------------------------------------------------


def write_metrics_csv(path, metrics) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRICS_FIELDS)
        for r in metrics.epochs:
            w.writerow([r.epoch, r.task, repr(r.lr), repr(r.loss), repr(r.test_accuracy)])
    return path


def confusion_name(epoch: int) -> str:
    return f"confusion_epoch_{epoch:03d}.csv"


def write_confusion_csv(path, cm: np.ndarray) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CONFUSION_HEADER)
        for c, row in enumerate(cm):
            w.writerow([c] + [int(v) for v in row])
    return path


def read_confusion_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if rows[0] != CONFUSION_HEADER:
        raise VerifyError(f"{path}: unexpected header {rows[0]}")
    body = rows[1:]
    if len(body) != 10 or any(len(r) != 11 or r[0] != str(i) for i, r in enumerate(body)):
        raise VerifyError(f"{path}: expected 10 labelled rows of 10 counts")
    try:
        cm = np.array([[int(v) for v in r[1:]] for r in body])
    except ValueError as exc:
        raise VerifyError(f"{path}: non-integer count ({exc})") from None
    if cm.min() < 0:
        raise VerifyError(f"{path}: negative count")
    return cm


def read_metrics_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != METRICS_FIELDS:
            raise VerifyError(f"{path}: header {reader.fieldnames} != {METRICS_FIELDS}")
        rows = []
        for line, r in enumerate(reader, start=2):
            try:
                rows.append({"epoch": int(r["epoch"]), "task": int(r["task"]), "lr": float(r["lr"]),
                             "loss": float(r["loss"]), "test_accuracy": float(r["test_accuracy"])})
            except (TypeError, ValueError) as exc:
                raise VerifyError(f"{path}:{line}: {exc}") from None
    return rows


def task_boundaries(epochs_per_task: int, n_tasks: int) -> list[int]:
    """x-positions of the dashed lines marking the start of tasks 2..n."""
    return [epochs_per_task * t for t in range(1, n_tasks)]


def accuracy_figure(metrics, title: str = ""):
    fig, ax = plt.subplots(figsize=(7, 3.2))
    x = [r.epoch for r in metrics.epochs]
    y = [r.test_accuracy for r in metrics.epochs]
    ax.plot(x, y, marker="o", ms=3, lw=1.2, color="C0", label="test accuracy")
    for t, pos in enumerate(task_boundaries(metrics.epochs_per_task, metrics.n_tasks), start=1):
        line = ax.axvline(pos, ls="--", lw=0.8, color="0.4")
        line.set_gid(f"task-boundary-{t}")
    ax.set_xlabel("epoch")
    ax.set_ylabel("test accuracy")
    ax.set_ylim(0, 1)
    ax.set_xlim(0, max(x, default=1) + 0.5)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    return fig


def save_figure(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, format=path.suffix.lstrip(".") or "svg")
    plt.close(fig)
    return path


def write_run(out_dir, metrics, summary_extra: dict | None = None, title: str = "") -> dict:
    """Emit ``metrics.csv``, one confusion CSV per epoch, ``summary.json`` and ``accuracy.svg``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(out / "metrics.csv", metrics)
    for r, cm in zip(metrics.epochs, metrics.confusions):
        write_confusion_csv(out / confusion_name(r.epoch), cm)
    save_figure(accuracy_figure(metrics, title), out / "accuracy.svg")
    summary = run_summary(metrics)
    summary.update(summary_extra or {})
    write_json(out / "summary.json", summary)
    return summary


def run_summary(metrics) -> dict:
    acc, ep = metrics.best_final_task()
    return {
        "kind": "run",
        "schema_version": SCHEMA_VERSION,
        "status": metrics.status,
        "error": metrics.error,
        "n_params": metrics.n_params,
        "n_tasks": metrics.n_tasks,
        "epochs_per_task": metrics.epochs_per_task,
        "n_epochs": len(metrics.epochs),
        "best_final_task_accuracy": _finite_or_none(acc),
        "best_epoch": ep,
        "accuracy_after_task": {str(t): a for t, a in metrics.accuracy_after_task().items()},
        "task_best": {str(t): a for t, a in metrics.task_best().items()},
        "task_boundaries": task_boundaries(metrics.epochs_per_task, metrics.n_tasks),
        "wall_clock_seconds": metrics.wall_clock,
    }


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(json.dumps(obj, indent=2, sort_keys=False, default=_json_default) + "\n")
    return path


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


GRID_FIELDS = ["run", "lr", "decay", "epochs_per_task", "seed", "status", "best_final_task_accuracy", "best_epoch"]


def write_grid(out_dir, result, grid_extra: dict | None = None) -> dict:
    """Emit ``results.csv``, ``grid_summary.json`` and the best run's artefacts under ``best/``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = result.rows()
    fields = list(rows[0]) if rows else GRID_FIELDS
    with open(out / "results.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    best = result.best_index()
    summary = {
        "kind": "grid",
        "schema_version": SCHEMA_VERSION,
        "n_runs": len(rows),
        "n_failed": sum(r["status"] != "ok" for r in rows),
        "failures": [{"run": i, "error": m.error} for i, m in enumerate(result.runs) if m.status != "ok"],
        "best_run": best,
        "best": {k: _finite_or_none(v) for k, v in rows[best].items()} if best is not None else None,
        "configs": [{"run": i, "lr": c.lr, "decay": c.decay, "epochs_per_task": c.epochs_per_task, "seed": c.seed,
                     "task_best": {str(t): a for t, a in m.task_best().items()}}
                    for i, (c, m) in enumerate(zip(result.configs, result.runs))],
        "wall_clock_seconds": [m.wall_clock for m in result.runs],
    }
    summary.update(grid_extra or {})
    write_json(out / "grid_summary.json", summary)
    if best is not None:
        write_run(out / "best", result.runs[best], {"grid_run": best}, title=f"best run #{best}")
    return summary


def read_grid_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or reader.fieldnames[:len(GRID_FIELDS)] != GRID_FIELDS:
            raise VerifyError(f"{path}: header must start with {GRID_FIELDS}")
        rows = []
        for line, r in enumerate(reader, start=2):
            try:
                row = {"run": int(r["run"]), "lr": float(r["lr"]), "decay": float(r["decay"]),
                       "epochs_per_task": int(r["epochs_per_task"]), "seed": int(r["seed"]), "status": r["status"],
                       "best_final_task_accuracy": float(r["best_final_task_accuracy"]),
                       "best_epoch": int(r["best_epoch"])}
                for key in reader.fieldnames[len(GRID_FIELDS):]:
                    row[key] = float(r[key])
            except (TypeError, ValueError) as exc:
                raise VerifyError(f"{path}:{line}: {exc}") from None
            rows.append(row)
    return rows


# --- peaks study -------------------------------------------------------------------------


def peaks_figure(report):
    fig, ax = plt.subplots(figsize=(7, 3))
    ax.plot(report.grid_x, report.target, color="0.6", lw=2.5, label="target")
    for t in range(1, len(report.predictions)):
        ax.plot(report.grid_x, report.predictions[t], lw=1, label=f"after task {t}")
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    ax.set_title(report.config.name)
    ax.legend(fontsize=7, ncol=3)
    fig.tight_layout()
    return fig


def write_peaks(out_dir, report) -> dict:
    """Per-ablation RMSE table, dense-grid predictions, summary JSON and overlay figure."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n_win = report.rmse.shape[1]
    with open(out / "rmse.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["after_task"] + [f"{RMSE_PREFIX}{j}" for j in range(1, n_win + 1)] + ["total"])
        for t, (row, tot) in enumerate(zip(report.rmse, report.rmse_total)):
            w.writerow([t] + [repr(float(v)) for v in row] + [repr(float(tot))])
    with open(out / "predictions.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "target"] + [f"after_task{t}" for t in range(len(report.predictions))])
        for i, x in enumerate(report.grid_x):
            w.writerow([repr(float(x)), repr(float(report.target[i]))]
                       + [repr(float(p[i])) for p in report.predictions])
    save_figure(peaks_figure(report), out / "fit.svg")
    summary = {"kind": "peaks", "schema_version": SCHEMA_VERSION, **report.to_dict()}
    write_json(out / "summary.json", summary)
    return summary


def read_peaks_tables(out_dir) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """``(rmse[tasks+1, windows+1], x, target, predictions[tasks+1, points])`` as written by :func:`write_peaks`."""
    out = Path(out_dir)
    with open(out / "rmse.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    if rows[0][0] != "after_task" or rows[0][-1] != "total":
        raise VerifyError(f"{out / 'rmse.csv'}: unexpected header")
    rmse = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    with open(out / "predictions.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    if rows[0][:2] != ["x", "target"]:
        raise VerifyError(f"{out / 'predictions.csv'}: unexpected header")
    body = np.array([[float(v) for v in r] for r in rows[1:]])
    return rmse, body[:, 0], body[:, 1], body[:, 2:].T


# --- verification ------------------------------------------------------------------------

_NUM = {"type": ["number", "null"]}
_SCHEMAS = {
    "run": {
        "type": "object",
        "required": ["kind", "schema_version", "status", "n_params", "n_tasks", "epochs_per_task", "n_epochs",
                     "best_final_task_accuracy", "best_epoch", "accuracy_after_task", "task_best",
                     "task_boundaries", "wall_clock_seconds"],
        "properties": {
            "kind": {"const": "run"},
            "schema_version": {"const": SCHEMA_VERSION},
            "status": {"enum": ["ok", "failed"]},
            "n_params": {"type": "integer", "minimum": 0},
            "n_epochs": {"type": "integer", "minimum": 0},
            "best_final_task_accuracy": _NUM,
            "accuracy_after_task": {"type": "object", "additionalProperties": {"type": "number"}},
            "task_best": {"type": "object", "additionalProperties": {"type": "number"}},
            "task_boundaries": {"type": "array", "items": {"type": "integer"}},
        },
    },
    "grid": {
        "type": "object",
        "required": ["kind", "schema_version", "n_runs", "n_failed", "best_run", "best", "configs"],
        "properties": {
            "kind": {"const": "grid"},
            "schema_version": {"const": SCHEMA_VERSION},
            "n_runs": {"type": "integer", "minimum": 0},
            "best_run": {"type": ["integer", "null"]},
            "configs": {"type": "array", "items": {"type": "object", "required": ["lr", "decay", "epochs_per_task"]}},
        },
    },
    "peaks": {
        "type": "object",
        "required": ["kind", "schema_version", "config", "rmse_per_window", "rmse_total"],
        "properties": {
            "kind": {"const": "peaks"},
            "rmse_per_window": {"type": "array", "items": {"type": "array", "items": {"type": "number"}}},
            "rmse_total": {"type": "array", "items": {"type": "number"}},
        },
    },
    "params": {
        "type": "object",
        "required": ["kind", "layers", "total", "total_channel_aware"],
        "properties": {"kind": {"const": "params"}, "total": {"type": "integer"}},
    },
    "peaks_study": {
        "type": "object",
        "required": ["kind", "ablations"],
        "properties": {"kind": {"const": "peaks_study"}, "ablations": {"type": "object"}},
    },
}


def verify_json(path) -> dict:
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise VerifyError(f"{path}: invalid JSON ({exc})") from None
    kind = obj.get("kind") if isinstance(obj, dict) else None
    if kind not in _SCHEMAS:
        raise VerifyError(f"{path}: unknown document kind {kind!r}")
    try:
        jsonschema.validate(obj, _SCHEMAS[kind])
    except jsonschema.ValidationError as exc:
        raise VerifyError(f"{path}: {exc.message}") from None
    return obj


def verify_run_dir(out_dir) -> list[str]:
    """Cross-check a run directory; returns the list of files checked."""
    out = Path(out_dir)
    summary = verify_json(out / "summary.json")
    rows = read_metrics_csv(out / "metrics.csv")
    checked = [out / "summary.json", out / "metrics.csv"]
    if len(rows) != summary["n_epochs"]:
        raise VerifyError(f"{out}: {len(rows)} metric rows but summary reports {summary['n_epochs']} epochs")
    total = None
    for r in rows:
        path = out / confusion_name(r["epoch"])
        cm = read_confusion_csv(path)
        checked.append(path)
        if total is None:
            total = cm.sum()
        if cm.sum() != total:
            raise VerifyError(f"{path}: matrix total {cm.sum()} differs from {total}")
        if abs(np.trace(cm) / cm.sum() - r["test_accuracy"]) > 1e-12:
            raise VerifyError(f"{path}: trace/total disagrees with metrics.csv accuracy")
    return [str(p) for p in checked]


def verify_path(path) -> list[str]:
    """Verify one file or every recognised artefact below a directory."""
    path = Path(path)
    if path.is_dir():
        checked = []
        if (path / "summary.json").exists() and (path / "metrics.csv").exists():
            checked += verify_run_dir(path)
        for p in sorted(path.rglob("*")):
            if p.is_file() and str(p) not in checked and p.suffix in (".csv", ".json"):
                checked += verify_path(p)
        return checked
    name = path.name
    if name.endswith(".json"):
        verify_json(path)
    elif name.startswith("confusion_epoch_"):
        read_confusion_csv(path)
    elif name == "metrics.csv":
        read_metrics_csv(path)
    elif name == "results.csv":
        read_grid_csv(path)
    elif name == "rmse.csv":
        read_peaks_tables(path.parent)
    elif name == "predictions.csv":
        read_peaks_tables(path.parent)
    else:
        raise VerifyError(f"{path}: unrecognised artefact")
    return [str(path)]


def asdict_config(cfg) -> dict:
    d = asdict(cfg)
    d["pairs"] = [list(p) for p in d.get("pairs", [])]
    return d
