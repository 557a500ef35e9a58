"""``kancl`` command line: train, grid, peaks, params, check-data, verify.

Exit codes: 0 success, 1 configuration error, 2 data/environment error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

import yaml

from . import report
from .accounting import AccountingError, count_network
from .datasets import DEFAULT_PAIRS, MNIST_FILES, DataError, find_mnist_file, load_mnist
from .ndtensor import NumericError
from .network import NetworkSpec, SpecError, build_network, save_checkpoint
from .trainer import (ABLATIONS, DEFAULT_BATCH_SIZE, ClSchedule, GridSpec, PeaksConfig, RunConfig, execute_run,
                      run_grid, run_peaks_cl)

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
DATA_ENV = "KANCL_DATA_DIR"
DEFAULT_DATA_DIR = "data/mnist"

log = logging.getLogger("kancl")

# accounting names accepted as shorthand for a kan_mode plus trainability flags
_MODE_ALIASES = {"cl_fixed": ("cl", False), "cl_ws_trainable": ("cl", True)}
_NETWORK_KEYS = {f.name for f in fields(NetworkSpec)}
_RUN_KEYS = {"epochs_per_task", "lr", "decay", "seed", "optimizer", "batch_size", "pairs", "test_per_class",
             "train_per_class"}
_GRID_KEYS = {"lrs", "decays", "epoch_counts", "seeds"}
_IO_KEYS = {"data_dir", "out"}
_PEAKS_KEYS = {f.name for f in fields(PeaksConfig)} - {"train_ws", "train_wb", "train_beta", "name"} | {"ablations"}


class ConfigError(ValueError):
    pass


def load_config(path) -> dict:
    if path is None:
        return {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"--config: cannot read {path}: {exc.strerror}") from None
    try:
        cfg = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"--config: {path} is not valid YAML ({exc})") from None
    if cfg is None:
        return {}
    if not isinstance(cfg, dict):
        raise ConfigError(f"--config: {path} must contain a key/value mapping")
    return cfg


def _check_keys(cfg: dict, allowed: set[str]) -> None:
    unknown = sorted(set(cfg) - allowed)
    if unknown:
        raise ConfigError(f"unknown config field(s): {', '.join(unknown)}")


def network_from(cfg: dict) -> NetworkSpec:
    d = {k: v for k, v in cfg.items() if k in _NETWORK_KEYS}
    if d.get("kan_mode") in _MODE_ALIASES:
        d["kan_mode"], ws = _MODE_ALIASES[d["kan_mode"]]
        d.setdefault("train_ws", ws)
    try:
        spec = NetworkSpec.from_dict(d)
        spec.validate()
        # the accounting pass rejects inconsistent layer/mode combinations before any training
        count_network(build_network(spec).count_specs())
    except (SpecError, AccountingError) as exc:
        raise ConfigError(str(exc)) from None
    except TypeError as exc:
        raise ConfigError(f"network: {exc}") from None
    return spec


def _pos_int(cfg, key, default):
    v = cfg.get(key, default)
    if v is None:
        return None
    if isinstance(v, bool) or not isinstance(v, int) or v < 1:
        raise ConfigError(f"{key}: must be a positive integer, got {v!r}")
    return v


def _float(cfg, key, default):
    v = cfg.get(key, default)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{key}: must be a number, got {v!r}")
    return float(v)


def _check_schedule(epochs, lr, decay) -> None:
    try:
        ClSchedule([], epochs, lr, decay, 0)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def run_config_from(cfg: dict, seed: int | None) -> RunConfig:
    _check_keys(cfg, _NETWORK_KEYS | _RUN_KEYS | _IO_KEYS)
    if "epochs_per_task" not in cfg or "lr" not in cfg:
        raise ConfigError("epochs_per_task and lr are required")
    epochs = cfg["epochs_per_task"]
    if isinstance(epochs, bool) or not isinstance(epochs, int) or epochs < 1:
        raise ConfigError(f"epochs_per_task: must be an integer >= 1, got {epochs!r}")
    lr, decay = _float(cfg, "lr", None), _float(cfg, "decay", 1.0)
    _check_schedule(epochs, lr, decay)
    optimizer = cfg.get("optimizer", "adam")
    if optimizer not in ("adam", "sgd"):
        raise ConfigError(f"optimizer: expected adam or sgd, got {optimizer!r}")
    pairs = tuple(tuple(p) for p in cfg.get("pairs", DEFAULT_PAIRS))
    return RunConfig(network_from(cfg), epochs, lr, decay,
                     seed if seed is not None else int(cfg.get("seed", 0)), optimizer,
                     _pos_int(cfg, "batch_size", DEFAULT_BATCH_SIZE), pairs, _pos_int(cfg, "test_per_class", None),
                     _pos_int(cfg, "train_per_class", None))


def grid_from(cfg: dict, seed: int | None) -> GridSpec:
    _check_keys(cfg, _NETWORK_KEYS | _RUN_KEYS | _IO_KEYS | _GRID_KEYS)
    lists = {}
    for key, single in (("lrs", "lr"), ("decays", "decay"), ("epoch_counts", "epochs_per_task"), ("seeds", "seed")):
        v = cfg.get(key, [cfg[single]] if single in cfg else None)
        if key == "seeds" and seed is not None:
            v = [seed]
        if key == "decays" and v is None:
            v = [1.0]
        if key == "seeds" and v is None:
            v = [0]
        if not isinstance(v, list) or not v:
            raise ConfigError(f"{key}: must be a non-empty list")
        lists[key] = v
    for e in lists["epoch_counts"]:
        if isinstance(e, bool) or not isinstance(e, int) or e < 1:
            raise ConfigError(f"epoch_counts: entries must be integers >= 1, got {e!r}")
    for lr in lists["lrs"]:
        for d in lists["decays"]:
            _check_schedule(1, float(lr), float(d))
    single = {k: v for k, v in cfg.items() if k not in _GRID_KEYS}
    single.setdefault("epochs_per_task", lists["epoch_counts"][0])
    single.setdefault("lr", float(lists["lrs"][0]))
    base = run_config_from(single, None)
    return GridSpec(base.network, [float(x) for x in lists["lrs"]], [float(x) for x in lists["decays"]],
                    list(lists["epoch_counts"]), [int(s) for s in lists["seeds"]], base.optimizer, base.batch_size,
                    base.pairs, base.test_per_class, base.train_per_class)


def resolve_data_dir(flag: str | None, cfg: dict) -> Path:
    return Path(flag or os.environ.get(DATA_ENV) or cfg.get("data_dir") or DEFAULT_DATA_DIR)


def resolve_out(flag: str | None, cfg: dict, default: str) -> Path:
    return Path(flag or cfg.get("out") or default)


# --- commands --------------------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    run_cfg = run_config_from(cfg, args.seed)
    data_dir = resolve_data_dir(args.data_dir, cfg)
    train, test = load_mnist(data_dir)
    out = resolve_out(args.out, cfg, "runs/train")
    net = build_network(run_cfg.network)
    print(f"training {run_cfg.network.model} ({net.n_trainable()} trainable parameters), "
          f"{run_cfg.epochs_per_task} epoch(s)/task, lr {run_cfg.lr:g}, decay {run_cfg.decay:g}")

    def on_epoch(rec, cm):
        print(f"epoch {rec.epoch:3d}  task {rec.task}  lr {rec.lr:.3g}  loss {rec.loss:.4f}  "
              f"acc {rec.test_accuracy:.4f}", flush=True)

    net, metrics = execute_run(run_cfg, train, test, on_epoch=on_epoch)
    out.mkdir(parents=True, exist_ok=True)
    summary = report.write_run(out, metrics, {"config": report.asdict_config(run_cfg),
                                              "parameters": net.parameter_report()},
                               title=f"{run_cfg.network.model} lr={run_cfg.lr:g} decay={run_cfg.decay:g}")
    save_checkpoint(net, out / "model.npz")
    print(f"best final-task accuracy {summary['best_final_task_accuracy']:.4f} at epoch {summary['best_epoch']}")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_grid(args) -> int:
    cfg = load_config(args.config)
    grid = grid_from(cfg, args.seed)
    data_dir = resolve_data_dir(args.data_dir, cfg)
    train, test = load_mnist(data_dir)
    out = resolve_out(args.out, cfg, "runs/grid")
    print(f"grid of {len(grid)} run(s) on {args.jobs} worker(s)")
    result = run_grid(grid, train, test, jobs=args.jobs)
    summary = report.write_grid(out, result, {"network": grid.network.to_dict()})
    if summary["n_failed"]:
        print(f"{summary['n_failed']} run(s) failed; see grid_summary.json")
    if summary["best"] is not None:
        b = summary["best"]
        print(f"best run #{b['run']}: lr {b['lr']:g} decay {b['decay']:g} epochs {b['epochs_per_task']} "
              f"-> {b['best_final_task_accuracy']:.4f}")
    print(f"wrote {out}")
    return EXIT_OK if summary["best"] is not None else EXIT_NUMERIC


def peaks_configs(cfg: dict, seed: int | None) -> list[PeaksConfig]:
    _check_keys(cfg, _PEAKS_KEYS | {"out"})
    names = cfg.get("ablations", list(ABLATIONS))
    if not isinstance(names, list) or not names:
        raise ConfigError("ablations: must be a non-empty list")
    bad = [n for n in names if n not in ABLATIONS]
    if bad:
        raise ConfigError(f"ablations: unknown name(s) {bad}; expected any of {list(ABLATIONS)}")
    common = {k: v for k, v in cfg.items() if k not in ("ablations", "out")}
    if seed is not None:
        common["seed"] = seed
    for key in ("n_peaks", "points_per_peak", "G", "steps_per_task", "eval_points"):
        if key in common:
            _pos_int(common, key, None)
    for key in ("amplitude", "sigma", "lr"):
        if key in common and _float(common, key, None) <= 0:
            raise ConfigError(f"{key}: must be positive")
    if common.get("loss", "half_mse") not in ("mse", "half_mse"):
        raise ConfigError("loss: expected mse or half_mse")
    return [PeaksConfig(name=n, **ABLATIONS[n], **common) for n in names]


def cmd_peaks(args) -> int:
    cfg = load_config(args.config)
    configs = peaks_configs(cfg, args.seed)
    out = resolve_out(args.out, cfg, "runs/peaks")
    study = {"kind": "peaks_study", "schema_version": report.SCHEMA_VERSION, "ablations": {}}
    for pc in configs:
        rep = run_peaks_cl(pc)
        report.write_peaks(out / pc.name, rep)
        study["ablations"][pc.name] = {"rmse_total_final": float(rep.rmse_total[-1]),
                                       "rmse_per_window_final": rep.rmse[-1].tolist()}
        windows = " ".join(f"{v:.4f}" for v in rep.rmse[-1])
        print(f"{pc.name:<24} final RMSE {rep.rmse_total[-1]:.4f}  per window [{windows}]")
    report.write_json(out / "summary.json", study)
    print(f"wrote {out}")
    return EXIT_OK


def cmd_params(args) -> int:
    cfg = load_config(args.config)
    _check_keys(cfg, _NETWORK_KEYS | _RUN_KEYS | _IO_KEYS | _GRID_KEYS)
    spec = network_from(cfg)
    net = build_network(spec)
    counts = count_network(net.count_specs())
    doc = {"kind": "params", "model": spec.model, **counts.to_dict(),
           "instantiated_trainable": net.n_trainable()}
    text = json.dumps(doc, indent=2)
    print(text)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text + "\n")
    return EXIT_OK


def cmd_check_data(args) -> int:
    data_dir = resolve_data_dir(args.data_dir, {})
    missing = 0
    print(f"data directory: {data_dir}")
    for name, size in MNIST_FILES.values():
        try:
            path = find_mnist_file(data_dir, name)
            print(f"  ok       {path.name}")
        except DataError:
            missing += 1
            print(f"  missing  {name} (or {name}.gz), expected {size} bytes uncompressed")
    if missing:
        return EXIT_DATA
    try:
        train, test = load_mnist(data_dir)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    print(f"loaded {len(train)} training and {len(test)} test images")
    return EXIT_OK


def cmd_verify(args) -> int:
    bad = 0
    for p in args.paths:
        try:
            checked = report.verify_path(p)
            print(f"ok    {p} ({len(checked)} file(s))")
        except (report.VerifyError, OSError, KeyError, ValueError) as exc:
            bad += 1
            print(f"FAIL  {p}: {exc}")
    return EXIT_OK if not bad else EXIT_CONFIG


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kancl", description="Class-incremental learning experiments with KANs and MLPs.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=True, jobs=False):
        sp.add_argument("--config", help="YAML configuration file")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--seed", type=int, help="override the configured seed")
        if data:
            sp.add_argument("--data-dir", help=f"MNIST IDX directory (default: ${DATA_ENV} or {DEFAULT_DATA_DIR})")
        if jobs:
            sp.add_argument("--jobs", type=int, default=1, help="parallel worker processes")

    common(sub.add_parser("train", help="one class-incremental run"))
    common(sub.add_parser("grid", help="hyper-parameter grid"), jobs=True)
    common(sub.add_parser("peaks", help="1D Gaussian-peaks ablation"), data=False)
    sp = sub.add_parser("params", help="parameter accounting for a network config")
    sp.add_argument("--config", help="YAML configuration file")
    sp.add_argument("--out", help="also write the JSON to this file")
    sp = sub.add_parser("check-data", help="verify that the MNIST IDX files are present")
    sp.add_argument("--data-dir")
    sp = sub.add_parser("verify", help="schema-check emitted CSV/JSON artefacts")
    sp.add_argument("paths", nargs="+")
    return p


COMMANDS = {"train": cmd_train, "grid": cmd_grid, "peaks": cmd_peaks, "params": cmd_params,
            "check-data": cmd_check_data, "verify": cmd_verify}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "jobs", 1) is not None and getattr(args, "jobs", 1) < 1:
        print("config error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
