"""Experiment runner: config parsing, the per-seed pipeline, result tables,
grid search and simulator baselines.

A config is a TOML file with dotted section keys, for example::

    data.source = "simulate"
    data.n = 3000
    fairness.action_fair = true
    fairness.value = "max_min"
    score.method = "DM"
    run.seeds = [0, 1, 2, 3, 4]

Every key has a default (see :data:`PROFILES`); unknown keys are rejected.
"""
from __future__ import annotations

import copy
import hashlib
import json
import math
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .data import CsvSchema, SimConfig, SimOracle, load_csv, simulate, split, standardize
from .errors import ConfigError, FairPolError
from .fairrep import RepHyper, train_fair_representation
from .nuisance import NuisanceHyper, fit_outcome_model, fit_propensity, fitted_nuisance, oracle_nuisance
from .policy import Objective, PolicyHyper, evaluate_policy, train_policy
from .scores import METHODS, conditional_values, score
from .theory import action_fairness_gap_sim, spearman_rank

OUT_ENV = "FAIRPOL_OUT"

DEFAULTS = {
    "data": {"source": "simulate", "n": 3000, "p_s": 0.5, "noise_sd": 0.1,
             "csv_path": "", "x_columns": [], "s_column": "s", "a_column": "a", "y_column": "y",
             "s_order": []},
    "split": {"train": 0.8, "val": 0.0, "test": 0.2},
    "nuisance": {"mode": "oracle", "hidden": 20, "dropout": 0.0, "lr": 1e-3, "batch_size": 64,
                 "epochs": 200, "weight_decay": 0.0, "clip": 0.05},
    "fairness": {"action_fair": False, "gamma": 0.5, "value": "none", "lambda": 0.5},
    "score": {"method": "DM"},
    "rep": {"k": 5, "hidden": 32, "dropout": 0.0, "lr": 5e-3, "batch_size": 64, "epochs": 300,
            "weight_decay": 0.0, "adversary_steps": 5, "adversary_lr_scale": 2.0, "lr_decay": 0.95},
    "policy": {"hidden": 20, "dropout": 0.0, "lr": 1e-3, "batch_size": 128, "epochs": 400,
               "weight_decay": 0.0, "lr_decay": 0.0},
    "eval": {"n_mc": 100_000},
    "run": {"config_id": "experiment", "seeds": [0, 1, 2, 3, 4], "out": "", "jobs": 1},
    "output": {"record_wall_time": False, "snapshots": True},
}

PROFILES = {
    "sim": {},
    "csv": {"data": {"source": "csv"}, "split": {"train": 0.7, "val": 0.1, "test": 0.2},
            "nuisance": {"mode": "fitted"}, "fairness": {"lambda": 0.3}, "score": {"method": "DR"}},
}


def _merge(base, override, path=""):
    out = copy.deepcopy(base)
    for key, val in override.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"config key {where!r} is a section")
            out[key] = _merge(base[key], val, where + ".")
        else:
            out[key] = val
    return out


def _dotted_to_nested(flat):
    nested = {}
    for key, val in flat.items():
        head, _, tail = key.partition(".")
        if tail:
            nested.setdefault(head, {})[tail] = val
        else:
            nested[head] = val
    return nested


@dataclass
class ExperimentConfig:
    """Validated experiment settings, stored as ``section -> key -> value``."""

    values: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS))

    def __post_init__(self):
        self.values = _merge(DEFAULTS, self.values)
        self.validate()

    @classmethod
    def from_mapping(cls, mapping, profile="sim"):
        if profile not in PROFILES:
            raise ConfigError(f"unknown profile {profile!r}; expected one of {sorted(PROFILES)}")
        base = _merge(DEFAULTS, PROFILES[profile])
        return cls(_merge(base, mapping))

    @classmethod
    def from_toml(cls, text, profile="sim"):
        try:
            mapping = tomllib.loads(text)
        except tomllib.TOMLDecodeError as err:
            raise ConfigError(f"config is not valid TOML: {err}") from None
        return cls.from_mapping(mapping, profile)

    @classmethod
    def from_file(cls, path, profile="sim"):
        return cls.from_toml(Path(path).read_text(encoding="utf-8"), profile)

    def override(self, **dotted):
        """Copy with ``section.key`` overrides, e.g. ``cfg.override(**{"fairness.lambda": 1.0})``."""
        return ExperimentConfig(_merge(self.values, _dotted_to_nested(dotted)))

    def __getitem__(self, dotted):
        section, key = dotted.split(".")
        return self.values[section][key]

    def validate(self):
        v = self.values
        if v["data"]["source"] not in ("simulate", "csv"):
            raise ConfigError("data.source must be 'simulate' or 'csv'")
        if v["data"]["source"] == "csv" and not (v["data"]["csv_path"] and v["data"]["x_columns"]):
            raise ConfigError("csv data needs data.csv_path and data.x_columns")
        if v["nuisance"]["mode"] not in ("oracle", "fitted"):
            raise ConfigError("nuisance.mode must be 'oracle' or 'fitted'")
        if v["nuisance"]["mode"] == "oracle" and v["data"]["source"] != "simulate":
            raise ConfigError("oracle nuisances need simulated data")
        if v["fairness"]["value"] not in ("none", "envy_free", "max_min"):
            raise ConfigError("fairness.value must be 'none', 'envy_free' or 'max_min'")
        if v["fairness"]["lambda"] < 0 or v["fairness"]["gamma"] < 0:
            raise ConfigError("fairness.lambda and fairness.gamma must be non-negative")
        if v["score"]["method"].upper() not in METHODS:
            raise ConfigError(f"score.method must be one of {METHODS}")
        if not v["run"]["seeds"]:
            raise ConfigError("run.seeds is empty")
        fr = [v["split"][k] for k in ("train", "val", "test")]
        if any(f < 0 for f in fr) or abs(sum(fr) - 1.0) > 1e-9 or fr[2] <= 0:
            raise ConfigError("split fractions must be non-negative, sum to 1 and leave a test set")

    @property
    def objective(self):
        f = self.values["fairness"]
        kind = "unrestricted" if f["value"] == "none" else f["value"]
        return Objective(kind, f["lambda"] if kind == "envy_free" else 0.0)

    @property
    def method(self):
        return self.values["score"]["method"].upper()

    @property
    def config_hash(self):
        text = json.dumps(self.values, sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def to_json(self):
        return json.dumps(self.values, sort_keys=True, indent=2)


# ----------------------------------------------------------------------------
# simulator baselines


def _group_averaged_ite_sign(x_u, p_s, n_quad=400):
    """Sign of ``E[mu1 - mu0 | x_u]`` averaged over the group and ``x_s``, by midpoint quadrature."""
    t = (np.arange(n_quad) + 0.5) / n_quad
    x_u = np.asarray(x_u, float)
    total = np.zeros_like(x_u)
    for s, w in ((0, 1.0 - p_s), (1, p_s)):
        x_s = s - 1.0 + t
        ite = SimOracle.ite(x_u[:, None], x_s[None, :], s)
        total += w * ite.mean(axis=1)
    return total


def oracle_unrestricted_policy(oracle):
    """Treat exactly where the true effect is positive. Takes raw ``(x, s)``."""
    def policy(x, s):
        x_u, x_s = oracle.columns(x)
        return (oracle.ite(x_u, x_s, s) > 0).astype(float)
    return policy


def oracle_action_fair_policy(p_s=0.5, grid=4001):
    """Best policy of ``x_u`` alone: treat where the group-averaged effect is positive.

    ``x_u`` is the only covariate independent of the group, so policies of
    ``x_u`` are action fair. The decision is tabulated on a uniform ``x_u``
    grid and looked up by nearest grid point.
    """
    knots = np.linspace(-1.0, 1.0, grid)
    treat = (_group_averaged_ite_sign(knots, p_s) > 1e-12).astype(float)

    def policy(x, s):
        x_u = np.asarray(x, float)[..., 0]
        pos = np.clip(np.rint((x_u + 1.0) / 2.0 * (grid - 1)), 0, grid - 1).astype(int)
        return treat[pos]
    return policy


def sim_policy_fn(policy, standardizer):
    """Wrap a trained policy so it accepts raw simulator covariates."""
    return lambda x, s: policy.predict_xs(standardizer.transform(x), s)


def evaluate_callable(fn, ds_raw, nuis, method="DM"):
    return conditional_values(score(method, np.asarray(fn(ds_raw.x, ds_raw.s), float), ds_raw, nuis),
                              ds_raw.s, ds_raw.group_count)


# ----------------------------------------------------------------------------
# pipeline


@dataclass
class SeedResult:
    seed: int
    method: str
    objective: str
    v_hat: float
    v_hat_by_group: list
    fairness_metric: float
    wall_ms: float = 0.0
    artifacts: dict = field(default_factory=dict)
    error: str = None


def _load_data(cfg, seed):
    d = cfg.values["data"]
    if d["source"] == "simulate":
        return simulate(SimConfig(n=d["n"], p_s=d["p_s"], noise_sd=d["noise_sd"], seed=seed))
    schema = CsvSchema(x=tuple(d["x_columns"]), s=d["s_column"], a=d["a_column"], y=d["y_column"],
                       s_order=tuple(d["s_order"]) or None)
    return load_csv(d["csv_path"], schema), None


def _nuisances(cfg, seed, parts_std, parts_raw, oracle):
    nv = cfg.values["nuisance"]
    if nv["mode"] == "oracle":
        return [oracle_nuisance(s, oracle, x_raw=r.x) for s, r in zip(parts_std, parts_raw)], {}
    hyper = NuisanceHyper(hidden=nv["hidden"], dropout=nv["dropout"], lr=nv["lr"],
                          batch_size=nv["batch_size"], epochs=nv["epochs"],
                          weight_decay=nv["weight_decay"], clip_bound=nv["clip"], seed=seed)
    outcome = fit_outcome_model(parts_std[0], hyper)
    prop = fit_propensity(parts_std[0], hyper)
    out = [fitted_nuisance(p, outcome, prop) if p.n else None for p in parts_std]
    return out, {"outcome": outcome, "propensity": prop}


def _check_group_blind(policy, ds, seed, probes=100):
    """Paired probes: the same covariate row under every group must get one output."""
    rng = np.random.default_rng(seed)
    rows = ds.x[rng.integers(0, ds.n, probes)]
    outs = [policy.predict_xs(rows, np.full(probes, g)) for g in range(ds.group_count)]
    if any(not np.array_equal(outs[0], o) for o in outs[1:]):
        raise FairPolError("action-fair policy output depends on the group")


def run_seed(cfg: ExperimentConfig, seed: int, out_dir=None, rep_cache=None):
    """Full pipeline for one seed; returns ``(SeedResult, extras)``.

    ``extras`` holds the trained objects for programmatic use. ``rep_cache``
    (a dict) lets several configs sharing data, split and Step-1 settings reuse
    one trained representation.
    """
    t0 = time.perf_counter()
    v = cfg.values
    ds, oracle = _load_data(cfg, seed)
    raw = split(ds, (v["split"]["train"], v["split"]["val"], v["split"]["test"]), seed=seed)
    std_parts, standardizer = standardize(*raw)
    train, val, test = std_parts
    nuis, fitted = _nuisances(cfg, seed, std_parts, raw, oracle)
    # simulated data is always evaluated against the true outcome functions
    test_nuis = oracle_nuisance(test, oracle, x_raw=raw[2].x) if oracle is not None else nuis[2]
    eval_method = "DM" if oracle is not None else cfg.method

    front_end, rep_report = None, None
    if v["fairness"]["action_fair"]:
        r = v["rep"]
        hyper = RepHyper(k=r["k"], hidden=r["hidden"], dropout=r["dropout"], lr=r["lr"],
                         batch_size=r["batch_size"], epochs=r["epochs"], weight_decay=r["weight_decay"],
                         gamma=v["fairness"]["gamma"], seed=seed, adversary_steps=r["adversary_steps"],
                         adversary_lr_scale=r["adversary_lr_scale"], lr_decay=r["lr_decay"])
        key = json.dumps([v["data"], v["split"], r, v["fairness"]["gamma"], seed], sort_keys=True)
        if rep_cache is not None and key in rep_cache:
            front_end, rep_report = rep_cache[key]
        else:
            front_end, rep_report = train_fair_representation(train, val, hyper)
            if rep_cache is not None:
                rep_cache[key] = (front_end, rep_report)

    p = v["policy"]
    phyper = PolicyHyper(hidden=p["hidden"], dropout=p["dropout"], lr=p["lr"], batch_size=p["batch_size"],
                         epochs=p["epochs"], weight_decay=p["weight_decay"], lr_decay=p["lr_decay"], seed=seed)
    policy, prep = train_policy(train, val, nuis[0], front_end, cfg.objective, cfg.method, phyper,
                                val_nuis=nuis[1])
    if policy.action_fair:
        _check_group_blind(policy, test, seed)
    report = evaluate_policy(policy, test, test_nuis, eval_method)
    if oracle is not None:
        metric = action_fairness_gap_sim(sim_policy_fn(policy, standardizer),
                                         SimConfig(n=1, p_s=v["data"]["p_s"]), v["eval"]["n_mc"], seed)
    else:
        metric = spearman_rank(test.s, policy.predict(test)) if test.group_count > 1 else float("nan")
    wall = (time.perf_counter() - t0) * 1000.0 if v["output"]["record_wall_time"] else 0.0
    result = SeedResult(seed, cfg.method, cfg.objective.label, report.v_hat,
                        report.v_hat_by_group.tolist(), float(metric), wall)

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        tag = f"{v['run']['config_id']}_seed{seed}"
        prep.write_csv(out_dir / f"{tag}_policy_trace.csv")
        result.artifacts["policy_trace"] = f"{tag}_policy_trace.csv"
        if rep_report is not None:
            rep_report.write_csv(out_dir / f"{tag}_rep_trace.csv")
            result.artifacts["rep_trace"] = f"{tag}_rep_trace.csv"
        if v["output"]["snapshots"]:
            snap = {"config_hash": cfg.config_hash, "seed": seed, "policy": policy.to_dict(),
                    "standardizer": standardizer.to_dict(), "feature_names": list(ds.feature_names),
                    "group_labels": list(ds.group_labels)}
            for name, model in fitted.items():
                snap[name] = model.to_dict()
            (out_dir / f"{tag}_snapshot.json").write_text(json.dumps(snap, sort_keys=True), encoding="utf-8")
            result.artifacts["snapshot"] = f"{tag}_snapshot.json"
    extras = {"policy": policy, "train_report": prep, "test_report": report, "standardizer": standardizer,
              "oracle": oracle, "front_end": front_end, "rep_report": rep_report, "data": (train, val, test),
              "raw": raw, "nuisance": nuis, "test_nuisance": test_nuis}
    return result, extras


def _seed_job(args):
    values, seed, out_dir = args
    cfg = ExperimentConfig(values)
    try:
        result, _ = run_seed(cfg, seed, out_dir)
    except (FairPolError, OSError, ValueError, FloatingPointError) as err:
        result = SeedResult(seed, cfg.method, cfg.objective.label, float("nan"), [], float("nan"),
                            error=f"{type(err).__name__}: {err}")
    return result


@dataclass
class ResultsTable:
    config_id: str
    group_count: int
    rows: list

    @property
    def ok_rows(self):
        return [r for r in self.rows if r.error is None]

    @property
    def columns(self):
        return (["config_id", "seed", "method", "objective", "v_hat"]
                + [f"v_hat_s{g}" for g in range(self.group_count)] + ["af_gap_or_spearman", "wall_ms"])

    def _row_values(self, r):
        return ([r.v_hat] + list(r.v_hat_by_group) + [r.fairness_metric, r.wall_ms])

    def aggregate(self):
        """Mean and sample standard deviation over completed seeds, per numeric column."""
        ok = self.ok_rows
        if not ok:
            return {}
        mat = np.array([self._row_values(r) for r in ok], float)
        sd = mat.std(axis=0, ddof=1) if len(ok) > 1 else np.full(mat.shape[1], float("nan"))
        names = self.columns[4:]
        return {n: (float(m), float(s)) for n, m, s in zip(names, mat.mean(axis=0), sd)}

    def to_csv(self):
        lines = [",".join(self.columns)]
        for r in self.rows:
            if r.error is not None:
                continue
            cells = [self.config_id, str(r.seed), r.method, r.objective] + [repr(float(x)) for x in self._row_values(r)]
            lines.append(",".join(cells))
        agg = self.aggregate()
        if agg:
            r0 = self.ok_rows[0]
            for stat, pos in (("mean", 0), ("sd", 1)):
                cells = [self.config_id, stat, r0.method, r0.objective] + [repr(agg[n][pos]) for n in self.columns[4:]]
                lines.append(",".join(cells))
        return "\n".join(lines) + "\n"

    def summary(self):
        return {"config_id": self.config_id,
                "aggregate": {k: {"mean": m, "sd": s} for k, (m, s) in self.aggregate().items()},
                "completed_seeds": [r.seed for r in self.ok_rows],
                "errors": [{"seed": r.seed, "error": r.error} for r in self.rows if r.error is not None]}


def default_out_dir():
    return Path(os.environ.get(OUT_ENV, "fairpol_out"))


def run_experiment(cfg: ExperimentConfig, seeds=None, out_dir=None, jobs=None):
    """Run every seed, write ``results.csv``, ``summary.json`` and per-seed artifacts.

    Seeds run in separate processes when ``jobs > 1``; results are reduced in
    seed order so the output does not depend on scheduling. A failing seed is
    recorded in the summary and the remaining seeds still run.
    """
    v = cfg.values
    seeds = list(v["run"]["seeds"] if seeds is None else seeds)
    jobs = int(v["run"]["jobs"] if jobs is None else jobs)
    out_dir = Path(out_dir or v["run"]["out"] or default_out_dir())
    out_dir.mkdir(parents=True, exist_ok=True)
    args = [(v, seed, out_dir) for seed in seeds]
    if jobs > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_seed_job, args))
    else:
        rows = [_seed_job(a) for a in args]
    rows.sort(key=lambda r: r.seed)
    groups = max((len(r.v_hat_by_group) for r in rows), default=0)
    table = ResultsTable(v["run"]["config_id"], groups, rows)
    (out_dir / "results.csv").write_text(table.to_csv(), encoding="utf-8")
    summary = table.summary()
    summary["config_hash"] = cfg.config_hash
    (out_dir / "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=2), encoding="utf-8")
    (out_dir / "config.json").write_text(cfg.to_json(), encoding="utf-8")
    return table


# ----------------------------------------------------------------------------
# grid search


@dataclass
class GridSearchResult:
    best_params: dict
    best_score: float
    best_trial: int
    log: list


def grid_search(trial_fn, grid: dict, budget=30, seed=0, maximize=True):
    """Random search over the Cartesian product of ``grid`` without replacement.

    ``trial_fn(params) -> score``. The best score wins; ties go to the earlier
    trial. A budget above the grid size is clamped with a warning.
    """
    if not grid or any(len(v) == 0 for v in grid.values()):
        raise ConfigError("grid must be non-empty")
    names = list(grid)
    size = math.prod(len(grid[n]) for n in names)
    if budget > size:
        warnings.warn(f"budget {budget} exceeds grid size {size}; clamped", stacklevel=2)
        budget = size
    if budget < 1:
        raise ConfigError("budget must be positive")
    rng = np.random.default_rng(seed)
    picks = rng.choice(size, size=budget, replace=False)
    radices = [len(grid[n]) for n in names]
    log = []
    best = None
    for trial, flat in enumerate(picks):
        idx = np.unravel_index(int(flat), radices)
        params = {n: grid[n][i] for n, i in zip(names, idx)}
        value = float(trial_fn(params))
        log.append({"trial": trial, "params": params, "score": value})
        better = best is None or (value > best[0] if maximize else value < best[0])
        if better and np.isfinite(value):
            best = (value, trial, params)
    if best is None:
        raise FairPolError("no grid-search trial produced a finite score")
    return GridSearchResult(best[2], best[0], best[1], log)


def policy_validation_score(cfg: ExperimentConfig, seed):
    """Validation objective of the trained policy (the grid-search target for Step 2)."""
    if cfg["split.val"] <= 0:
        raise ConfigError("grid search needs a validation split")
    _, extras = run_seed(cfg, seed)
    rep = extras["train_report"]
    return rep.val_objective[-1]


def nuisance_validation_loss(cfg: ExperimentConfig, seed):
    """Validation factual-outcome MSE of the fitted outcome model (the target for nuisance tuning)."""
    if cfg["split.val"] <= 0:
        raise ConfigError("grid search needs a validation split")
    v = cfg.values
    ds, _ = _load_data(cfg, seed)
    raw = split(ds, (v["split"]["train"], v["split"]["val"], v["split"]["test"]), seed=seed)
    (train, val, _), _ = standardize(*raw)
    nv = v["nuisance"]
    hyper = NuisanceHyper(hidden=nv["hidden"], dropout=nv["dropout"], lr=nv["lr"], batch_size=nv["batch_size"],
                          epochs=nv["epochs"], weight_decay=nv["weight_decay"], clip_bound=nv["clip"], seed=seed)
    model = fit_outcome_model(train, hyper)
    mu0, mu1 = model.predict(val)
    pred = np.where(val.a == 1, mu1, mu0)
    return float(np.mean((pred - val.y) ** 2))

