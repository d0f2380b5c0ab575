"""Command-line surface: theory verification suites, training runs, linear
probing, bound sweeps over the distillation coefficient, and hyperparameter
sweeps.

Exit codes: 0 success, 1 property violation, 2 configuration error,
3 I/O error. Every command writes a manifest sufficient to reproduce it.
JSON in, JSON/CSV out; plotting is downstream of the CSVs.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .bounds import (
    constants,
    decomposition_check_trials,
    lemma1_trials,
    theorem1_lower,
    theorem1_upper,
    turning_point,
)
from .continual import RunConfig, linear_probe, run_sequence
from .data import (
    ScenarioSpec,
    make_blob_sequence,
    scenario_train_losses,
    scenario_weights,
)
from .trainer import (
    Encoder,
    SgdConfig,
    Temperatures,
    finite_diff_check,
    load_checkpoint,
    save_checkpoint,
)

EXIT_OK = 0
EXIT_VIOLATION = 1
EXIT_CONFIG = 2
EXIT_IO = 3


class ConfigError(ValueError):
    pass


def _load_config(path: str | None, allowed: dict) -> dict:
    """Merge a JSON config over defaults, rejecting unknown keys."""
    cfg = dict(allowed)
    if path:
        try:
            user = json.loads(Path(path).read_text())
        except OSError as exc:
            raise OSError(f"cannot read config: {exc}") from exc
        unknown = set(user) - set(allowed)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(user)
    return cfg


def _write_manifest(out: Path, command: str, cfg: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.json").write_text(
        json.dumps(
            {"command": command, "config": cfg, "version": __version__},
            sort_keys=True,
            indent=2,
        )
    )


VERIFY_DEFAULTS = {
    "trials": 200,
    "ks": [1, 2, 5],
    "seed": 0,
    "support_size": 4,
    "dimension": 3,
    "embed_dim": 4,
    "grad_seeds": 5,
    "alpha_corruption": 0.0,  # test hook: shifts alpha to force a failure
}


def cmd_verify(cfg: dict, out: Path) -> int:
    report = {"constants": {}, "lemma1": {}, "decomposition": {}, "gradients": {}}
    failures = []
    for k in cfg["ks"]:
        c = constants(k)
        report["constants"][str(k)] = {
            "alpha": c.alpha, "beta": c.beta, "beta_prime": c.beta_prime,
        }
        if c.beta <= 0 or c.beta_prime >= 0:
            failures.append(f"constants sanity failed at k={k}")
        worst_up, worst_lo = lemma1_trials(
            trials=cfg["trials"], k=k, seed=cfg["seed"],
            support_size=cfg["support_size"], dimension=cfg["dimension"],
            embed_dim=cfg["embed_dim"],
            alpha_corruption=cfg["alpha_corruption"],
        )
        report["lemma1"][str(k)] = {
            "worst_upper_slack": worst_up, "worst_lower_slack": worst_lo,
        }
        if worst_up < -1e-10 or worst_lo < -1e-10:
            failures.append(f"loss sandwich violated at k={k}")
        worst_res = decomposition_check_trials(
            trials=cfg["trials"], k=k, seed=cfg["seed"] + 1,
            support_size=cfg["support_size"], dimension=cfg["dimension"],
            embed_dim=cfg["embed_dim"],
        )
        report["decomposition"][str(k)] = {"worst_residual": worst_res}
        if worst_res > 1e-10:
            failures.append(f"cross-entropy decomposition violated at k={k}")
    rng = np.random.default_rng(cfg["seed"])
    worst_grad = 0.0
    for s in range(cfg["grad_seeds"]):
        enc = Encoder((2, 16, 8), seed=s)
        prev = Encoder((2, 16, 8), seed=s + 1000)
        pts = rng.standard_normal((8, 2))
        labels = np.repeat(np.arange(4), 2)
        worst_grad = max(
            worst_grad,
            finite_diff_check(enc, prev, pts, labels, 1.0, Temperatures()),
        )
    report["gradients"] = {"worst_relative_error": worst_grad}
    if worst_grad > 1e-4:
        failures.append("gradient check failed")
    report["failures"] = failures
    (out / "verify_report.json").write_text(json.dumps(report, sort_keys=True, indent=2))
    if failures:
        print("FAIL: " + "; ".join(failures))
        return EXIT_VIOLATION
    print("verify: all properties hold")
    return EXIT_OK


TRAIN_DEFAULTS = {
    "tasks": 3,
    "classes_per_task": 2,
    "points_per_class": 20,
    "d_in": 2,
    "data_seed": 0,
    "seed": 0,
    "hidden": 32,
    "embed_dim": 8,
    "lr": 0.05,
    "epochs": 60,
    "batch_size": 32,
    "momentum": 0.9,
    "mode": "max",
    "lam0": 1.0,
    "kappa": 1.0,
    "buffer_size": 50,
    "probe_epochs": 100,
    "tau_contrastive": 0.5,
    "tau_distill_current": 0.2,
    "tau_distill_past": 0.01,
}


def _run_from_config(cfg: dict):
    tasks = make_blob_sequence(
        cfg["tasks"], cfg["classes_per_task"], cfg["points_per_class"],
        cfg["d_in"], seed=cfg["data_seed"],
    )
    run_cfg = RunConfig(
        hidden=cfg["hidden"],
        embed_dim=cfg["embed_dim"],
        sgd=SgdConfig(
            lr=cfg["lr"], epochs=cfg["epochs"], batch_size=cfg["batch_size"],
            momentum=cfg["momentum"], seed=cfg["seed"],
        ),
        temps=Temperatures(
            contrastive=cfg["tau_contrastive"],
            distill_current=cfg["tau_distill_current"],
            distill_past=cfg["tau_distill_past"],
        ),
        mode=cfg["mode"], lam0=cfg["lam0"], kappa=cfg["kappa"],
        buffer_size=cfg["buffer_size"], seed=cfg["seed"],
        probe_epochs=cfg["probe_epochs"],
    )
    return tasks, run_cfg


def _probe_run(tasks, run_cfg, enc, buffer):
    last = tasks[-1].train
    pts = list(last.points) + buffer.points
    labs = list(last.labels) + buffer.labels
    n_classes = int(max(np.max(t.train.labels) for t in tasks)) + 1
    return linear_probe(
        enc.forward, np.asarray(pts), np.asarray(labs),
        [t.test for t in tasks], n_classes,
        epochs=run_cfg.probe_epochs, seed=run_cfg.seed,
    )


def cmd_train(cfg: dict, out: Path) -> int:
    tasks, run_cfg = _run_from_config(cfg)
    result = run_sequence(tasks, run_cfg)
    enc, trace, buffer = result.encoder, result.trace, result.buffer
    probe = _probe_run(tasks, run_cfg, enc, buffer)
    trace.probe = {
        "per_task_accuracy": probe.per_task_accuracy,
        "average_accuracy": probe.average_accuracy,
        "missing_classes": probe.missing_classes,
    }
    (out / "trace.json").write_text(trace.to_json())
    (out / "epochs.csv").write_text(trace.epoch_csv())
    save_checkpoint(
        enc, out / "final.ckpt", seed=cfg["seed"], task=cfg["tasks"],
        lam=trace.records[-1].lam or 0.0, temps=run_cfg.temps,
    )
    print(f"train: {cfg['tasks']} tasks done, avg probe accuracy "
          f"{probe.average_accuracy:.3f}")
    return EXIT_OK


PROBE_DEFAULTS = dict(TRAIN_DEFAULTS)
PROBE_DEFAULTS["checkpoint"] = ""


def cmd_probe(cfg: dict, out: Path) -> int:
    tasks, run_cfg = _run_from_config(cfg)
    if cfg["checkpoint"]:
        enc, _ = load_checkpoint(cfg["checkpoint"])
        buffer = run_sequence(tasks, run_cfg).buffer  # rebuild buffer state
    else:
        result = run_sequence(tasks, run_cfg)
        enc, buffer = result.encoder, result.buffer
    probe = _probe_run(tasks, run_cfg, enc, buffer)
    doc = {
        "per_task_accuracy": probe.per_task_accuracy,
        "average_accuracy": probe.average_accuracy,
        "missing_classes": probe.missing_classes,
    }
    (out / "probe.json").write_text(json.dumps(doc, sort_keys=True, indent=2))
    lines = ["task,accuracy"] + [
        f"{i + 1},{a!r}" for i, a in enumerate(probe.per_task_accuracy)
    ]
    (out / "probe.csv").write_text("\n".join(lines) + "\n")
    print(f"probe: average accuracy {probe.average_accuracy:.3f}")
    return EXIT_OK


BOUNDS_DEFAULTS = {
    "scenario": "example1",
    "T": 5,
    "rho": 1.0,
    "base_loss": 1.0,
    "loss_rule": "equal",
    "k": 1,
}


def _parse_grid(spec: str) -> np.ndarray:
    try:
        start, stop, count = spec.split(":")
        return np.linspace(float(start), float(stop), int(count))
    except ValueError as exc:
        raise ConfigError(f"bad grid spec {spec!r}, want start:stop:count") from exc


def cmd_bounds(cfg: dict, out: Path, grid_spec: str) -> int:
    spec = ScenarioSpec(
        T=cfg["T"], weight_rule=cfg["scenario"], rho=cfg["rho"],
        loss_rule=cfg["loss_rule"], base_loss=cfg["base_loss"],
    )
    weights = scenario_weights(spec)
    losses = scenario_train_losses(spec)
    lam_star = turning_point(weights)
    grid = _parse_grid(grid_spec)
    rows = ["lambda,upper,lower"]
    uppers = []
    for lam in grid:
        try:
            up = theorem1_upper(losses, weights, lam, k=cfg["k"]).value
            lo = theorem1_lower(losses, weights, lam, k=cfg["k"]).value
        except ValueError:
            print(f"warning: skipping grid point {lam} (zero denominator)",
                  file=sys.stderr)
            continue
        uppers.append(up)
        rows.append(f"{float(lam)!r},{float(up)!r},{float(lo)!r}")
    (out / "bounds.csv").write_text("\n".join(rows) + "\n")
    (out / "turning_point.json").write_text(
        json.dumps({"lambda_star": lam_star}, sort_keys=True)
    )
    print(f"bounds: turning point at lambda = {lam_star:g}")
    diffs = np.diff(uppers)
    if np.any(diffs > 1e-9):
        print("FAIL: upper bound increased along the grid")
        return EXIT_VIOLATION
    return EXIT_OK


SWEEP_DEFAULTS = dict(TRAIN_DEFAULTS)
SWEEP_DEFAULTS.update({"vary": "mode", "values": ["fixed", "max"], "seeds": [0, 1]})


def _sweep_cell(args):
    cfg, vary, value, seed = args
    cell = dict(cfg)
    cell[vary] = value
    cell["seed"] = seed
    tasks, run_cfg = _run_from_config(cell)
    result = run_sequence(tasks, run_cfg)
    probe = _probe_run(tasks, run_cfg, result.encoder, result.buffer)
    return value, seed, probe.average_accuracy


def cmd_sweep(cfg: dict, out: Path) -> int:
    vary, values, seeds = cfg["vary"], cfg["values"], cfg["seeds"]
    if vary not in ("lam0", "kappa", "mode", "seed"):
        raise ConfigError(f"cannot vary {vary!r}")
    base = {k: v for k, v in cfg.items() if k not in ("vary", "values", "seeds")}
    jobs = [(base, vary, v, s) for v in values for s in seeds]
    workers = int(os.environ.get("CCL_THREADS", "0")) or None
    results, errors = [], []
    with ProcessPoolExecutor(max_workers=workers) as pool:
        for job, res in zip(jobs, pool.map(_sweep_cell_safe, jobs)):
            if isinstance(res, str):
                errors.append((job[2], job[3], res))
            else:
                results.append(res)
    rows = ["value,mean_accuracy,std_accuracy,n_seeds"]
    for v in values:
        accs = [a for val, _, a in results if val == v]
        if accs:
            rows.append(
                f"{v},{np.mean(accs):.2f},{np.std(accs):.2f},{len(accs)}"
            )
        else:
            rows.append(f"{v},nan,nan,0")
    (out / "sweep.csv").write_text("\n".join(rows) + "\n")
    if errors:
        (out / "sweep_errors.json").write_text(json.dumps(
            [{"value": str(v), "seed": s, "error": e} for v, s, e in errors]
        ))
        print(f"sweep: {len(errors)} cells failed")
        return EXIT_VIOLATION
    print(f"sweep: {len(results)} cells done")
    return EXIT_OK


def _sweep_cell_safe(args):
    try:
        return _sweep_cell(args)
    except Exception as exc:  # recorded per cell, surfaced via exit code
        return f"{type(exc).__name__}: {exc}"


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="cclab",
        description="contrastive continual learning laboratory",
    )
    parser.add_argument("command",
                        choices=["verify", "train", "probe", "bounds", "sweep"])
    parser.add_argument("--config", default=None, help="JSON config path")
    parser.add_argument("--out", default="out", help="output directory")
    parser.add_argument("--seed", type=int, default=None, help="seed override")
    parser.add_argument("--grid", default="0.01:20:400",
                        help="lambda grid as start:stop:count (bounds)")
    args = parser.parse_args(argv)
    defaults = {
        "verify": VERIFY_DEFAULTS,
        "train": TRAIN_DEFAULTS,
        "probe": PROBE_DEFAULTS,
        "bounds": BOUNDS_DEFAULTS,
        "sweep": SWEEP_DEFAULTS,
    }[args.command]
    try:
        cfg = _load_config(args.config, defaults)
        if args.seed is not None and "seed" in cfg:
            cfg["seed"] = args.seed
        out = Path(args.out)
        _write_manifest(out, args.command, cfg)
        if args.command == "verify":
            return cmd_verify(cfg, out)
        if args.command == "train":
            return cmd_train(cfg, out)
        if args.command == "probe":
            return cmd_probe(cfg, out)
        if args.command == "bounds":
            return cmd_bounds(cfg, out, args.grid)
        return cmd_sweep(cfg, out)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
