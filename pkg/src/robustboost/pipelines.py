"""Experiment pipelines behind the CLI: each one loads or synthesizes a
dataset, runs its stage of the toolchain, and writes four artifacts into
the output directory:

- metrics.json    deterministic scalar results (schema 1)
- trace.ndjson    per-round / per-epoch / per-example records
- model.json      model archive (reloadable, byte-stable)
- plotdata.csv    x,y series for accuracy-vs-budget style curves

Every number under metrics["results"] is recomputable from the archived
model plus the dataset; the audit pipeline does exactly that.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np

from robustboost import archive
from robustboost.core import Dataset, PerturbationBall, SeededRng
from robustboost.data import SyntheticSpec, load_dataset_csv, save_dataset_csv, synth_dataset
from robustboost.game_boost import (
    BoostConfig,
    margin_report,
    robust_vote_ok_on_grid,
    run_boost,
)
from robustboost.hypotheses import MixtureQ, StumpWeakLearner
from robustboost.losses import ExactEvaluator
from robustboost.pgd import PgdConfig, batched_ce_pgd
from robustboost.certify import (
    CheckerSpec,
    SmoothedRadiusPredictor,
    SmoothingConfig,
    check,
)
from robustboost.stagewise import StagewiseConfig, mlp_factory, run_stagewise

SCHEMA = 1


def resolve_seed(seed: int) -> int:
    env = os.environ.get("RB_SEED")
    return int(env) if env else seed


def resolve_dataset(data_path: str | None, synth: str | None):
    """Load a CSV dataset or synthesize one; returns (dataset, echo dict)."""
    if (data_path is None) == (synth is None):
        raise ValueError("provide exactly one of a dataset path or a synthetic spec")
    if data_path is not None:
        ds = load_dataset_csv(data_path)
        return ds, {"source": "csv", "path": os.path.abspath(data_path)}
    spec = SyntheticSpec.parse(synth)
    ds, info = synth_dataset(spec)
    echo = {"source": "synthetic", "spec": synth, **info}
    return ds, echo


def _fmt(v) -> float:
    # canonical float for stable JSON output
    return float(f"{float(v):.17g}")


def write_metrics(out_dir: str, doc: dict) -> str:
    path = os.path.join(out_dir, "metrics.json")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n")
    return path


def write_trace(out_dir: str, rows: list[dict]) -> str:
    path = os.path.join(out_dir, "trace.ndjson")
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True, separators=(",", ":")) + "\n")
    return path


def write_plotdata(out_dir: str, rows: list[tuple[str, float, float]]) -> str:
    path = os.path.join(out_dir, "plotdata.csv")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("series,x,y\n")
        for series, x, y in rows:
            fh.write(f"{series},{x:.17g},{y:.17g}\n")
    return path


def _ball(p: str | float, delta: float) -> PerturbationBall:
    pv = math.inf if str(p) in ("inf", "oo") else float(p)
    return PerturbationBall(pv, delta)


def _certified_robust_accuracy(report, dataset: Dataset) -> float:
    """Fraction of examples whose every margin is strictly negative."""
    ok = np.ones(dataset.m, dtype=bool)
    for idx, loss in zip(report.example_idx, report.mixture_loss):
        if loss >= 0.0:
            ok[int(idx)] = False
    return float(np.mean(ok))


def run_boost_game(
    dataset: Dataset, dataset_echo: dict, out_dir: str, *,
    p: str = "inf", delta: float = 0.5, gamma: float = 0.5,
    rounds: int | None = None, eta: float | None = None,
    mode: str = "pairs", seed: int = 0, grid_points: int = 10_000,
) -> dict:
    seed = resolve_seed(seed)
    ball = _ball(p, delta)
    learner = StumpWeakLearner(dataset, ball, mode=mode)
    config = BoostConfig(gamma=gamma, ball=ball, rounds=rounds, eta=eta, mode=mode)
    result = run_boost(dataset, learner, config)

    clean_acc = float(np.mean(result.mixture.predict_batch(dataset.X) == dataset.y))
    robust_acc = _certified_robust_accuracy(result.report, dataset)
    grid_ok = robust_vote_ok_on_grid(result.mixture, dataset, ball, n_total=grid_points)

    run_echo = {
        "pipeline": "boost-game",
        "seed": seed,
        "dataset": dataset_echo,
        "p": str(p),
        "delta": delta,
        "gamma": gamma,
        "mode": mode,
        "rounds_requested": rounds,
        "eta": eta,
        "grid_points": grid_points,
    }
    metrics = {
        "schema": SCHEMA,
        "run": run_echo,
        "results": {
            "rounds_run": result.rounds_run,
            "early_stopped": result.early_stopped,
            "max_margin": _fmt(result.report.max_margin),
            "robust_train_accuracy": _fmt(robust_acc),
            "clean_train_accuracy": _fmt(clean_acc),
            "grid_adversary_accuracy": _fmt(float(np.mean(grid_ok))),
            "certified": True,
        },
    }
    write_metrics(out_dir, metrics)
    write_trace(out_dir, [dict(record="round", **row) for row in result.trace])
    archive.save_model(result.mixture, os.path.join(out_dir, "model.json"), run_echo, seed)
    plot = [("max_margin", row["round"], row["max_margin"]) for row in result.trace]
    plot += [("edge", row["round"], row["edge"]) for row in result.trace]
    write_plotdata(out_dir, plot)
    return metrics


def run_boost_stagewise(
    dataset: Dataset, dataset_echo: dict, out_dir: str, *,
    p: str = "inf", delta: float = 0.3, stages: int = 5, n1: int = 5,
    eta_max: float = 0.05, batch_size: int = 64, hidden: tuple[int, ...] = (16,),
    warm_start: bool = True, pgd_steps: int = 7, pgd_restarts: int = 1,
    pgd_step_size: float | None = None, pgd_random_start: bool = True,
    eval_pgd_steps: int = 20, eval_pgd_restarts: int = 3,
    exact_objective: bool = False, noise_sigma: float = 0.0, noise_samples: int = 2,
    seed: int = 0,
) -> dict:
    seed = resolve_seed(seed)
    ball = _ball(p, delta)
    rng = SeededRng(seed)
    config = StagewiseConfig(
        stages=stages, n1=n1, eta_max=eta_max, batch_size=batch_size, ball=ball,
        base_factory=mlp_factory(dataset.d, tuple(hidden), dataset.k), rng=rng,
        pgd=PgdConfig(steps=pgd_steps, restarts=pgd_restarts, step_size=pgd_step_size,
                      random_start=pgd_random_start, rng=rng.child(1)),
        warm_start=warm_start, exact_objective=exact_objective,
        eval_pgd_steps=eval_pgd_steps, eval_pgd_restarts=eval_pgd_restarts,
        noise_sigma=noise_sigma, noise_samples=noise_samples,
    )
    result = run_stagewise(dataset, config)
    stage_rows = [r for r in result.trace if r["record"] == "stage"]
    final = stage_rows[-1]

    run_echo = {
        "pipeline": "boost-stagewise",
        "seed": seed,
        "dataset": dataset_echo,
        "p": str(p),
        "delta": delta,
        "stages": stages,
        "n1": n1,
        "eta_max": eta_max,
        "batch_size": batch_size,
        "hidden": list(hidden),
        "warm_start": warm_start,
        "pgd_steps": pgd_steps,
        "pgd_restarts": pgd_restarts,
        "pgd_step_size": pgd_step_size,
        "pgd_random_start": pgd_random_start,
        "eval_pgd_steps": eval_pgd_steps,
        "eval_pgd_restarts": eval_pgd_restarts,
        "exact_objective": exact_objective,
        "noise_sigma": noise_sigma,
        "noise_samples": noise_samples,
    }
    metrics = {
        "schema": SCHEMA,
        "run": run_echo,
        "results": {
            "final_clean_accuracy": _fmt(final["clean_acc"]),
            "final_robust_accuracy": _fmt(final["robust_acc"]),
            "final_robust_loss": _fmt(final["robust_loss"]),
            "total_epochs": sum(r["epochs"] for r in stage_rows),
        },
    }
    write_metrics(out_dir, metrics)
    write_trace(out_dir, result.trace)
    archive.save_model(result.ensemble, os.path.join(out_dir, "model.json"), run_echo, seed)
    plot = [("clean_acc", r["stage"], r["clean_acc"]) for r in stage_rows]
    plot += [("robust_acc", r["stage"], r["robust_acc"]) for r in stage_rows]
    plot += [
        ("loss_vs_epoch", i + 1, r["loss"])
        for i, r in enumerate(t for t in result.trace if t["record"] == "epoch")
    ]
    write_plotdata(out_dir, plot)
    return metrics


DEFAULT_RADII = (0.0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0, 2.25)


def _certify_rows(predictor: SmoothedRadiusPredictor, dataset: Dataset):
    rows = []
    for i in range(dataset.m):
        row = predictor.certify_point(dataset.X[i])
        rows.append((i, row))
    return rows


def run_certify(
    dataset: Dataset, dataset_echo: dict, out_dir: str, *,
    model_path: str, sigma: float = 0.25, n_samples: int = 1000,
    radii: tuple[float, ...] = DEFAULT_RADII, conservative: bool = False, seed: int = 0,
) -> dict:
    seed = resolve_seed(seed)
    base, _ = archive.load_model(model_path)
    predictor = SmoothedRadiusPredictor(
        base, SmoothingConfig(sigma, n_samples, SeededRng(seed), conservative=conservative)
    )
    rows = _certify_rows(predictor, dataset)

    curve = []
    for r in radii:
        acc = float(
            np.mean([
                row.label == int(dataset.y[i]) and row.radius >= r for i, row in rows
            ])
        )
        curve.append((float(r), acc))
    run_echo = {
        "pipeline": "certify",
        "seed": seed,
        "dataset": dataset_echo,
        "sigma": sigma,
        "n_samples": n_samples,
        "radii": [float(r) for r in radii],
        "conservative": conservative,
        "base_model": os.path.abspath(model_path),
    }
    metrics = {
        "schema": SCHEMA,
        "run": run_echo,
        "results": {
            "certified_accuracy": {f"{r:.17g}": _fmt(a) for r, a in curve},
            "mean_radius": _fmt(float(np.mean([row.radius for _, row in rows]))),
            "abstain_rate": _fmt(float(np.mean([row.abstain for _, row in rows]))),
        },
    }
    write_metrics(out_dir, metrics)
    write_trace(
        out_dir,
        [
            {
                "record": "certify",
                "example": i,
                "label": int(row.label) + 1,
                "correct": bool(row.label == int(dataset.y[i])),
                "radius": row.radius,
                "abstain": bool(row.abstain),
            }
            for i, row in rows
        ],
    )
    archive.save_model(predictor, os.path.join(out_dir, "model.json"), run_echo, seed)
    write_plotdata(out_dir, [("certified_accuracy", r, a) for r, a in curve])
    return metrics


def run_check(
    dataset: Dataset, dataset_echo: dict, out_dir: str, *,
    model_path: str, p: str = "inf", delta: float = 0.5,
    backend: str = "exact-grid", c: float = 1.0, gamma: float = 0.5,
    grid_points: int = 10_000, seed: int = 0,
) -> dict:
    seed = resolve_seed(seed)
    ball = _ball(p, delta)
    model, _ = archive.load_model(model_path)
    pgd = PgdConfig(steps=20, restarts=5, rng=SeededRng(seed).child(7))
    spec = CheckerSpec(ball=ball, c=c, backend=backend, grid_points=grid_points, pgd=pgd)
    outcomes = []
    for i in range(dataset.m):
        outcomes.append(check(model, dataset.X[i], int(dataset.y[i]), spec))
    n_found = sum(o.kind == "found" for o in outcomes)
    n_good = sum(o.kind == "good" for o in outcomes)
    n_unknown = sum(o.kind == "unknown" for o in outcomes)
    estimate = float(np.mean([2.0 * float(o.found) - 1.0 for o in outcomes]))

    run_echo = {
        "pipeline": "check",
        "seed": seed,
        "dataset": dataset_echo,
        "p": str(p),
        "delta": delta,
        "backend": backend,
        "c": c,
        "gamma": gamma,
        "grid_points": grid_points,
        "base_model": os.path.abspath(model_path),
    }
    metrics = {
        "schema": SCHEMA,
        "run": run_echo,
        "results": {
            "found": n_found,
            "good": n_good,
            "unknown": n_unknown,
            "ova_error_estimate": _fmt(estimate),
            "meets_edge": bool(estimate <= -gamma),
        },
    }
    write_metrics(out_dir, metrics)
    write_trace(
        out_dir,
        [
            {
                "record": "check",
                "example": i,
                "outcome": o.kind,
                "z": None if o.z is None else [float(v) for v in o.z],
            }
            for i, o in enumerate(outcomes)
        ],
    )
    archive.save_model(model, os.path.join(out_dir, "model.json"), run_echo, seed)
    write_plotdata(out_dir, [("found_fraction", delta, n_found / dataset.m)])
    return metrics


def _eval_robust(model, dataset: Dataset, ball: PerturbationBall, seed: int,
                 steps: int, restarts: int):
    """Robust accuracy: certified margins for stump mixtures, PGD estimate
    for differentiable ensembles.
    """
    if isinstance(model, MixtureQ) and model.all_stumps() and ball.is_linf:
        report = margin_report(model, dataset, ball, ExactEvaluator(), mode="pairs")
        return _certified_robust_accuracy(report, dataset), True
    step = 1.3 * ball.delta / steps if ball.delta > 0 else 1.0
    _, _, flipped = batched_ce_pgd(
        model, dataset.X, dataset.y, ball, steps=steps, step=step,
        restarts=restarts, include_zero_start=True,
        rng=SeededRng(seed).child(3), row_ids=np.arange(dataset.m),
    )
    return float(np.mean(~flipped)), False


def run_eval(
    dataset: Dataset, dataset_echo: dict, out_dir: str, *,
    model_path: str, p: str = "inf", delta: float = 0.3,
    pgd_steps: int = 20, pgd_restarts: int = 3, seed: int = 0,
) -> dict:
    seed = resolve_seed(seed)
    ball = _ball(p, delta)
    model, _ = archive.load_model(model_path)
    clean = float(np.mean(model.predict_batch(dataset.X) == dataset.y))
    robust, certified = _eval_robust(model, dataset, ball, seed, pgd_steps, pgd_restarts)
    run_echo = {
        "pipeline": "eval",
        "seed": seed,
        "dataset": dataset_echo,
        "p": str(p),
        "delta": delta,
        "pgd_steps": pgd_steps,
        "pgd_restarts": pgd_restarts,
        "base_model": os.path.abspath(model_path),
    }
    metrics = {
        "schema": SCHEMA,
        "run": run_echo,
        "results": {
            "clean_accuracy": _fmt(clean),
            "robust_accuracy": _fmt(robust),
            "certified": certified,
        },
    }
    write_metrics(out_dir, metrics)
    write_trace(out_dir, [])
    archive.save_model(model, os.path.join(out_dir, "model.json"), run_echo, seed)
    write_plotdata(out_dir, [("robust_acc", delta, robust)])
    return metrics


def run_synth(out_dir: str, *, synth: str, seed: int | None = None) -> dict:
    spec = SyntheticSpec.parse(synth)
    if seed is not None:
        spec = SyntheticSpec(spec.generator, spec.m, spec.k, spec.d, spec.separation, resolve_seed(seed))
    ds, info = synth_dataset(spec)
    path = os.path.join(out_dir, "dataset.csv")
    save_dataset_csv(ds, path)
    doc = {
        "schema": SCHEMA,
        "run": {"pipeline": "synth", "spec": synth, "seed": spec.seed},
        "results": {"m": ds.m, "k": ds.k, "d": ds.d, **{k: _fmt(v) if isinstance(v, float) else v for k, v in info.items()}},
    }
    write_metrics(out_dir, doc)
    return doc


def recompute_results(run_dir: str) -> tuple[dict, dict]:
    """Recompute metrics['results'] for an existing run directory from its
    archived model and dataset echo. Returns (stored, recomputed).
    """
    with open(os.path.join(run_dir, "metrics.json"), "r", encoding="utf-8") as fh:
        stored = json.load(fh)
    run = stored["run"]
    pipeline = run["pipeline"]
    ds_echo = run["dataset"]
    if ds_echo["source"] == "csv":
        dataset = load_dataset_csv(ds_echo["path"])
    else:
        dataset, _ = synth_dataset(SyntheticSpec.parse(ds_echo["spec"]))
    model_path = os.path.join(run_dir, "model.json")
    model, _ = archive.load_model(model_path)

    if pipeline == "boost-game":
        ball = _ball(run["p"], run["delta"])
        report = margin_report(model, dataset, ball, mode=run["mode"])
        grid_ok = robust_vote_ok_on_grid(model, dataset, ball, n_total=run["grid_points"])
        recomputed = {
            "max_margin": _fmt(report.max_margin),
            "robust_train_accuracy": _fmt(_certified_robust_accuracy(report, dataset)),
            "clean_train_accuracy": _fmt(float(np.mean(model.predict_batch(dataset.X) == dataset.y))),
            "grid_adversary_accuracy": _fmt(float(np.mean(grid_ok))),
        }
    elif pipeline == "boost-stagewise":
        ball = _ball(run["p"], run["delta"])
        rng = SeededRng(run["seed"])
        cfg = StagewiseConfig(
            stages=run["stages"], n1=run["n1"], eta_max=run["eta_max"],
            batch_size=run["batch_size"], ball=ball,
            base_factory=mlp_factory(dataset.d, tuple(run["hidden"]), dataset.k),
            rng=rng, eval_pgd_steps=run["eval_pgd_steps"],
            eval_pgd_restarts=run["eval_pgd_restarts"],
        )
        from robustboost.stagewise import evaluate_robust

        robust_acc, robust_loss = evaluate_robust(model, dataset, ball, cfg)
        recomputed = {
            "final_clean_accuracy": _fmt(float(np.mean(model.predict_batch(dataset.X) == dataset.y))),
            "final_robust_accuracy": _fmt(robust_acc),
            "final_robust_loss": _fmt(robust_loss),
        }
    elif pipeline == "certify":
        rows = _certify_rows(model, dataset)
        recomputed = {
            "certified_accuracy": {
                f"{r:.17g}": _fmt(
                    float(np.mean([row.label == int(dataset.y[i]) and row.radius >= r for i, row in rows]))
                )
                for r in run["radii"]
            },
            "mean_radius": _fmt(float(np.mean([row.radius for _, row in rows]))),
            "abstain_rate": _fmt(float(np.mean([row.abstain for _, row in rows]))),
        }
    elif pipeline == "eval":
        ball = _ball(run["p"], run["delta"])
        clean = float(np.mean(model.predict_batch(dataset.X) == dataset.y))
        robust, _ = _eval_robust(model, dataset, ball, run["seed"], run["pgd_steps"], run["pgd_restarts"])
        recomputed = {"clean_accuracy": _fmt(clean), "robust_accuracy": _fmt(robust)}
    elif pipeline == "check":
        ball = _ball(run["p"], run["delta"])
        pgd = PgdConfig(steps=20, restarts=5, rng=SeededRng(run["seed"]).child(7))
        spec = CheckerSpec(ball=ball, c=run["c"], backend=run["backend"],
                           grid_points=run["grid_points"], pgd=pgd)
        outcomes = [check(model, dataset.X[i], int(dataset.y[i]), spec) for i in range(dataset.m)]
        recomputed = {
            "found": sum(o.kind == "found" for o in outcomes),
            "good": sum(o.kind == "good" for o in outcomes),
            "unknown": sum(o.kind == "unknown" for o in outcomes),
            "ova_error_estimate": _fmt(float(np.mean([2.0 * float(o.found) - 1.0 for o in outcomes]))),
        }
    else:
        raise ValueError(f"cannot audit pipeline {pipeline!r}")
    return stored, recomputed


def run_audit(run_dir: str, out_dir: str | None = None) -> dict:
    """Verify that every recomputable number in a run's metrics matches a
    fresh recomputation from the archived model and dataset.
    """
    stored, recomputed = recompute_results(run_dir)
    mismatches = {}
    for key, value in recomputed.items():
        if stored["results"].get(key) != value:
            mismatches[key] = {"stored": stored["results"].get(key), "recomputed": value}
    doc = {
        "schema": SCHEMA,
        "run": {"pipeline": "audit", "target": os.path.abspath(run_dir)},
        "results": {"ok": not mismatches, "checked": sorted(recomputed), "mismatches": mismatches},
    }
    if out_dir is not None:
        write_metrics(out_dir, doc)
    return doc
