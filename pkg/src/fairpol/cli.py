"""Command-line entry point: ``fairpol <subcommand> ...``.

Subcommands: simulate, train, evaluate, gridsearch, bounds, toycheck. The
default output root is ``$FAIRPOL_OUT`` (falling back to ``./fairpol_out``).
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .data import CsvSchema, SimConfig, Standardizer, load_csv, simulate, write_csv
from .errors import FairPolError
from .experiment import (ExperimentConfig, default_out_dir, grid_search, nuisance_validation_loss,
                         policy_validation_score, run_experiment)
from .nuisance import OutcomeModel, PropensityModel, fitted_nuisance
from .policy import TrainedPolicy, evaluate_policy
from .theory import (TABLE4, TABLE5, BoundInputs, ToyProblem, brute_force_toy_search, bound_report,
                     check_lemma1, check_lemma2)


def _seeds(text):
    return [int(t) for t in text.replace(" ", "").split(",") if t]


def _load_config(args):
    if args.config:
        return ExperimentConfig.from_file(args.config, args.profile)
    return ExperimentConfig.from_mapping({}, args.profile)


def _emit(obj, out):
    text = json.dumps(obj, indent=2, sort_keys=True)
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)


def cmd_simulate(args):
    ds, _ = simulate(SimConfig(n=args.n, p_s=args.p_s, noise_sd=args.noise_sd, seed=args.seed))
    out = Path(args.out) if args.out else default_out_dir() / f"sim_n{args.n}_seed{args.seed}.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(ds, out)
    print(out)
    return 0


def cmd_train(args):
    cfg = _load_config(args)
    seeds = _seeds(args.seeds) if args.seeds else None
    table = run_experiment(cfg, seeds=seeds, out_dir=args.out, jobs=args.jobs)
    sys.stdout.write(table.to_csv())
    failed = [r for r in table.rows if r.error is not None]
    for r in failed:
        print(f"seed {r.seed} failed: {r.error}", file=sys.stderr)
    return 1 if failed else 0


def cmd_evaluate(args):
    snap = json.loads(Path(args.snapshot).read_text(encoding="utf-8"))
    if "outcome" not in snap:
        raise FairPolError("snapshot has no fitted nuisance models (trained with oracle nuisances?)")
    schema = CsvSchema(x=tuple(snap["feature_names"]), s=args.s_column, a=args.a_column,
                       y=args.y_column, s_order=tuple(snap["group_labels"]))
    ds = load_csv(args.data, schema)
    std = Standardizer.from_dict(snap["standardizer"])
    ds = ds.with_x(std.transform(ds.x))
    policy = TrainedPolicy.from_dict(snap["policy"])
    nuis = fitted_nuisance(ds, OutcomeModel.from_dict(snap["outcome"]),
                           PropensityModel.from_dict(snap["propensity"]))
    method = (args.method or policy.score_method).upper()
    report = evaluate_policy(policy, ds, nuis, method)
    _emit({"method": method, **report.to_dict(), "mean_policy_output": float(np.mean(policy.predict(ds)))},
          args.out)
    return 0


def cmd_gridsearch(args):
    cfg = _load_config(args)
    spec = tomllib.loads(Path(args.grid).read_text(encoding="utf-8"))
    params = spec.get("params", {})
    target = spec.get("target", "policy")
    seed = int(spec.get("seed", cfg["run.seeds"][0]))
    if target == "policy":
        fn, maximize = (lambda p: policy_validation_score(cfg.override(**p), seed)), True
    elif target == "nuisance":
        fn, maximize = (lambda p: nuisance_validation_loss(cfg.override(**p), seed)), False
    else:
        raise FairPolError(f"grid target must be 'policy' or 'nuisance', got {target!r}")
    res = grid_search(fn, params, budget=int(spec.get("budget", 30)), seed=seed, maximize=maximize)
    out_dir = Path(args.out) if args.out else default_out_dir()
    out_dir.mkdir(parents=True, exist_ok=True)
    result = {"target": target, "best_params": res.best_params, "best_score": res.best_score,
              "best_trial": res.best_trial, "trials": res.log}
    _emit(result, out_dir / "gridsearch.json")
    print(json.dumps({"best_params": res.best_params, "best_score": res.best_score}, sort_keys=True))
    return 0


def cmd_bounds(args):
    fields = {}
    if args.inputs:
        text = Path(args.inputs).read_text(encoding="utf-8")
        fields = json.loads(text) if args.inputs.endswith(".json") else tomllib.loads(text)
    for name in ("n", "nu", "group_count", "C", "xi", "rademacher", "p", "p1", "p2"):
        val = getattr(args, name)
        if val is not None:
            fields[name] = val
    methods = fields.pop("methods", None) or (args.method.split(",") if args.method else [fields.pop("method", "DM")])
    fields.pop("method", None)
    reports = {m.upper(): bound_report(BoundInputs(method=m.upper(), **fields)) for m in methods}
    _emit(reports, args.out)
    return 0


def cmd_toycheck(args):
    toy = ToyProblem.from_csv(args.toy) if args.toy else {"4": TABLE4, "5": TABLE5}[args.table]
    step = args.grid_step
    cells = [f"({c.s},{c.x})" for c in toy.cells]
    out = {"cells": cells, "grid_step": step, "searches": {}}
    for name, obj, af in (("unrestricted", "unrestricted", False), ("action_fair", "unrestricted", True),
                          ("max_min", "max_min", False), ("action_fair_max_min", "max_min", True)):
        r = brute_force_toy_search(toy, obj, step, af_constrained=af)
        out["searches"][name] = {"policy": list(r.policy), "objective": r.objective, "v": r.v,
                                 "v_by_group": list(r.v_by_group)}
    out["lemma1"] = check_lemma1(toy, step)
    out["lemma2"] = check_lemma2(toy, step)
    _emit(out, args.out)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="fairpol", description="Fair off-policy learning experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="TOML config file with dotted section keys")
        p.add_argument("--profile", default="sim", help="default profile: sim or csv")
        p.add_argument("--seeds", help="comma-separated seeds, overriding run.seeds")
        p.add_argument("--out", help="output directory (default $FAIRPOL_OUT or ./fairpol_out)")
        p.add_argument("--jobs", type=int, default=None, help="parallel seed jobs")

    p = sub.add_parser("simulate", help="write a simulated dataset to CSV")
    p.add_argument("--n", type=int, default=3000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--p-s", dest="p_s", type=float, default=0.5)
    p.add_argument("--noise-sd", dest="noise_sd", type=float, default=0.1)
    p.add_argument("--out", help="CSV path")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("train", help="run the full pipeline for every seed")
    common(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a saved policy snapshot on a CSV dataset")
    p.add_argument("--snapshot", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--method", help="DM, IPW or DR (default: the training method)")
    p.add_argument("--s-column", default="s")
    p.add_argument("--a-column", default="a")
    p.add_argument("--y-column", default="y")
    p.add_argument("--out", help="JSON output path (default stdout)")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("gridsearch", help="random grid search over hyperparameters")
    common(p)
    p.add_argument("--grid", required=True, help="TOML grid spec: budget, target, seed, [params]")
    p.set_defaults(fn=cmd_gridsearch)

    p = sub.add_parser("bounds", help="generalization-bound penalties")
    p.add_argument("--inputs", help="JSON or TOML file with bound inputs")
    p.add_argument("--method", help="comma-separated score methods")
    for name, typ in (("n", int), ("nu", float), ("group_count", int), ("C", float), ("xi", float),
                      ("rademacher", float), ("p", float), ("p1", float), ("p2", float)):
        p.add_argument(f"--{name.replace('_', '-')}", dest=name, type=typ)
    p.add_argument("--out", help="JSON output path (default stdout)")
    p.set_defaults(fn=cmd_bounds)

    p = sub.add_parser("toycheck", help="brute-force toy optima and lemma verdicts")
    p.add_argument("--table", choices=("4", "5"), default="4")
    p.add_argument("--toy", help="toy CSV with columns s,x,prob,mu1,mu0")
    p.add_argument("--grid-step", type=float, default=1 / 30)
    p.add_argument("--out", help="JSON output path (default stdout)")
    p.set_defaults(fn=cmd_toycheck)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (FairPolError, OSError, tomllib.TOMLDecodeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
