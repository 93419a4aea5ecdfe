"""Command-line driver.

Subcommands: boost-game, boost-stagewise, certify, check, eval, audit,
synth. Any flag may instead come from a config file of ``key = value``
lines (``--config file``); explicit flags override the file. RB_SEED in
the environment overrides any configured seed.

Exit codes: 0 success, 2 configuration error, 3 weak-learner failure,
4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from robustboost import pipelines
from robustboost.archive import CorruptArchiveError, VersionMismatchError
from robustboost.core import RobustBoostError
from robustboost.data import LabelOutOfRangeError, ParseError, RaggedRowError
from robustboost.game_boost import WeakLearnerFailedError
from robustboost.pgd import NonFiniteLossError
from robustboost.stagewise import NonFiniteParametersError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_WEAK_LEARNER = 3
EXIT_NUMERIC = 4


def _add_dataset_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", help="CSV dataset (header label,f1,...,fd; labels 1..k)")
    p.add_argument("--synth", help="synthetic spec, e.g. stripes-1d:m=4,k=2,margin=1.5")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value file supplying any flag of this subcommand")
    p.add_argument("--out-dir", default=".", help="directory for metrics/trace/model/plotdata")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="robustboost", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("boost-game", help="minimax boosting of exact stump weak learners")
    _add_dataset_args(g)
    _add_common(g)
    g.add_argument("--p", default="inf", choices=["2", "inf"])
    g.add_argument("--delta", type=float, default=0.5)
    g.add_argument("--gamma", type=float, default=0.5)
    g.add_argument("--rounds", type=int, default=None, help="override the auto round count")
    g.add_argument("--eta", type=float, default=None, help="override the auto step")
    g.add_argument("--ova", action="store_true", help="reweight whole examples, not pairs")
    g.add_argument("--grid-points", type=int, default=10_000)

    s = sub.add_parser("boost-stagewise", help="greedy stagewise adversarial boosting")
    _add_dataset_args(s)
    _add_common(s)
    s.add_argument("--p", default="inf", choices=["2", "inf"])
    s.add_argument("--delta", type=float, default=0.3)
    s.add_argument("--stages", type=int, default=5)
    s.add_argument("--n1", type=int, default=10, help="epochs of the first stage; later stages double")
    s.add_argument("--eta-max", type=float, default=0.01)
    s.add_argument("--batch-size", type=int, default=64)
    s.add_argument("--hidden", default="16", help="comma-separated hidden widths")
    s.add_argument("--cold-start", action="store_true",
                   help="re-randomize each stage's base predictor instead of warm starting")
    s.add_argument("--pgd-steps", type=int, default=7)
    s.add_argument("--pgd-restarts", type=int, default=1)
    s.add_argument("--pgd-step-size", type=float, default=None,
                   help="inner step size; default 1.3*delta/steps")
    s.add_argument("--pgd-from-input", action="store_true",
                   help="start the inner maximization at the input point, not a random one")
    s.add_argument("--eval-pgd-steps", type=int, default=20)
    s.add_argument("--eval-pgd-restarts", type=int, default=3)
    s.add_argument("--exact-objective", action="store_true",
                   help="reference mode: keep prior stages evaluable at perturbed points")
    s.add_argument("--noise-sigma", type=float, default=0.0,
                   help="train against a noise-averaged base predictor (l2 smoothing)")
    s.add_argument("--noise-samples", type=int, default=2)

    c = sub.add_parser("certify", help="randomized smoothing certification of a model archive")
    _add_dataset_args(c)
    _add_common(c)
    c.add_argument("--model", required=True)
    c.add_argument("--sigma", type=float, default=0.25)
    c.add_argument("--n-samples", type=int, default=1000)
    c.add_argument("--radii", default=",".join(str(r) for r in pipelines.DEFAULT_RADII))
    c.add_argument("--conservative", action="store_true",
                   help="confidence-bound radii (stricter than the plug-in estimate)")

    k = sub.add_parser("check", help="approximate robustness checker over a dataset")
    _add_dataset_args(k)
    _add_common(k)
    k.add_argument("--model", required=True)
    k.add_argument("--p", default="inf", choices=["2", "inf"])
    k.add_argument("--delta", type=float, default=0.5)
    k.add_argument("--backend", default="exact-grid", choices=["exact-grid", "pgd-heuristic"])
    k.add_argument("--c", type=float, default=1.0)
    k.add_argument("--gamma", type=float, default=0.5)
    k.add_argument("--grid-points", type=int, default=10_000)

    e = sub.add_parser("eval", help="clean and robust accuracy of a model archive")
    _add_dataset_args(e)
    _add_common(e)
    e.add_argument("--model", required=True)
    e.add_argument("--p", default="inf", choices=["2", "inf"])
    e.add_argument("--delta", type=float, default=0.3)
    e.add_argument("--pgd-steps", type=int, default=20)
    e.add_argument("--pgd-restarts", type=int, default=3)

    a = sub.add_parser("audit", help="recompute a run's metrics from its archive")
    a.add_argument("run_dir")
    a.add_argument("--out-dir", default=None)

    y = sub.add_parser("synth", help="write a synthetic dataset to CSV")
    y.add_argument("--synth", required=True)
    y.add_argument("--seed", type=int, default=None)
    y.add_argument("--out-dir", default=".")
    y.add_argument("--config", help=argparse.SUPPRESS)
    return parser


def _config_file_args(path: str) -> list[str]:
    args: list[str] = []
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"config line without '=': {raw.strip()!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            flag = "--" + key.replace("_", "-")
            if value.lower() in ("true", "false"):
                if value.lower() == "true":
                    args.append(flag)
            else:
                args.extend([flag, value])
    return args


def expand_config(argv: list[str]) -> list[str]:
    """Splice config-file entries in right after the subcommand so explicit
    command-line flags, coming later, override them.
    """
    if "--config" not in argv:
        return argv
    i = argv.index("--config")
    if i + 1 >= len(argv):
        raise ValueError("--config requires a path")
    path = argv[i + 1]
    rest = argv[:i] + argv[i + 2 :]
    if not rest:
        raise ValueError("--config requires a subcommand")
    return [rest[0]] + _config_file_args(path) + rest[1:]


def _ensure_out_dir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def _dispatch(args: argparse.Namespace) -> int:
    if args.command == "audit":
        doc = pipelines.run_audit(args.run_dir, args.out_dir and _ensure_out_dir(args.out_dir))
        print(json.dumps(doc["results"], sort_keys=True))
        return EXIT_OK if doc["results"]["ok"] else 1

    if args.command == "synth":
        out = _ensure_out_dir(args.out_dir)
        doc = pipelines.run_synth(out, synth=args.synth, seed=args.seed)
        print(json.dumps(doc["results"], sort_keys=True))
        return EXIT_OK

    dataset, echo = pipelines.resolve_dataset(args.data, args.synth)
    out = _ensure_out_dir(args.out_dir)
    if args.command == "boost-game":
        metrics = pipelines.run_boost_game(
            dataset, echo, out, p=args.p, delta=args.delta, gamma=args.gamma,
            rounds=args.rounds, eta=args.eta, mode="ova" if args.ova else "pairs",
            grid_points=args.grid_points, seed=args.seed,
        )
    elif args.command == "boost-stagewise":
        hidden = tuple(int(h) for h in str(args.hidden).split(",") if h.strip())
        metrics = pipelines.run_boost_stagewise(
            dataset, echo, out, p=args.p, delta=args.delta, stages=args.stages,
            n1=args.n1, eta_max=args.eta_max, batch_size=args.batch_size,
            hidden=hidden, warm_start=not args.cold_start,
            pgd_steps=args.pgd_steps, pgd_restarts=args.pgd_restarts,
            pgd_step_size=args.pgd_step_size, pgd_random_start=not args.pgd_from_input,
            eval_pgd_steps=args.eval_pgd_steps, eval_pgd_restarts=args.eval_pgd_restarts,
            exact_objective=args.exact_objective, noise_sigma=args.noise_sigma,
            noise_samples=args.noise_samples, seed=args.seed,
        )
    elif args.command == "certify":
        radii = tuple(float(r) for r in str(args.radii).split(",") if r.strip())
        metrics = pipelines.run_certify(
            dataset, echo, out, model_path=args.model, sigma=args.sigma,
            n_samples=args.n_samples, radii=radii, conservative=args.conservative,
            seed=args.seed,
        )
    elif args.command == "check":
        metrics = pipelines.run_check(
            dataset, echo, out, model_path=args.model, p=args.p, delta=args.delta,
            backend=args.backend, c=args.c, gamma=args.gamma,
            grid_points=args.grid_points, seed=args.seed,
        )
    elif args.command == "eval":
        metrics = pipelines.run_eval(
            dataset, echo, out, model_path=args.model, p=args.p, delta=args.delta,
            pgd_steps=args.pgd_steps, pgd_restarts=args.pgd_restarts, seed=args.seed,
        )
    else:  # pragma: no cover
        raise ValueError(f"unknown command {args.command!r}")
    print(json.dumps(metrics["results"], sort_keys=True))
    return EXIT_OK


def _error_record(code: int, exc: Exception) -> str:
    return json.dumps(
        {"error": type(exc).__name__, "message": str(exc), "exit_code": code},
        sort_keys=True,
    )


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        argv = expand_config(argv)
        args = build_parser().parse_args(argv)
        return _dispatch(args)
    except WeakLearnerFailedError as exc:
        print(_error_record(EXIT_WEAK_LEARNER, exc), file=sys.stderr)
        return EXIT_WEAK_LEARNER
    except (NonFiniteParametersError, NonFiniteLossError) as exc:
        print(_error_record(EXIT_NUMERIC, exc), file=sys.stderr)
        return EXIT_NUMERIC
    except (
        ParseError, RaggedRowError, LabelOutOfRangeError,
        CorruptArchiveError, VersionMismatchError,
        RobustBoostError, ValueError, OSError,
    ) as exc:
        print(_error_record(EXIT_CONFIG, exc), file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
