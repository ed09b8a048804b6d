import csv
import io
import json
import warnings

import numpy as np
import pytest

from fairpol.data import SimConfig, SimOracle, simulate, write_csv
from fairpol.errors import ConfigError
from fairpol.experiment import (ExperimentConfig, ResultsTable, SeedResult, default_out_dir, grid_search,
                                oracle_action_fair_policy, oracle_unrestricted_policy, run_experiment,
                                run_seed)
from fairpol.theory import action_fairness_gap_sim

SMALL = {"data": {"n": 300}, "policy": {"epochs": 5, "lr": 5e-3},
         "rep": {"epochs": 2, "hidden": 8}, "nuisance": {"epochs": 5, "hidden": 8}}


def _cfg(**dotted):
    return ExperimentConfig.from_mapping(SMALL).override(**dotted)


def test_toml_parsing_and_defaults():
    cfg = ExperimentConfig.from_toml('data.n = 500\nfairness.value = "envy_free"\nfairness.lambda = 1.5\n')
    assert cfg["data.n"] == 500 and cfg["split.train"] == 0.8
    assert cfg.objective.kind == "envy_free" and cfg.objective.lam == 1.5
    assert cfg["fairness.gamma"] == 0.5 and cfg["run.seeds"] == [0, 1, 2, 3, 4]


def test_csv_profile_defaults():
    cfg = ExperimentConfig.from_mapping({"data": {"csv_path": "x.csv", "x_columns": ["a1"]}}, "csv")
    assert cfg.method == "DR" and cfg["fairness.lambda"] == 0.3
    assert (cfg["split.train"], cfg["split.val"], cfg["split.test"]) == (0.7, 0.1, 0.2)


@pytest.mark.parametrize("text", [
    "data.bogus = 1\n",
    "fairness.lambda = -1.0\n",
    "fairness.gamma = -0.5\n",
    'score.method = "XYZ"\n',
    "split.train = 0.9\n",
    'data.source = "csv"\ndata.csv_path = "d.csv"\ndata.x_columns = ["x"]\n',
    "data = 3\n",
    "not toml ===\n",
])
def test_invalid_configs(text):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_toml(text)


def test_unknown_profile():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_mapping({}, "nope")


def test_config_hash_tracks_values():
    a, b = _cfg(), _cfg(**{"fairness.lambda": 2.0})
    assert a.config_hash == _cfg().config_hash and a.config_hash != b.config_hash


def test_run_is_deterministic(tmp_path):
    cfg = _cfg(**{"fairness.value": "max_min"})
    t1 = run_experiment(cfg, seeds=[0, 1], out_dir=tmp_path / "a")
    t2 = run_experiment(cfg, seeds=[0, 1], out_dir=tmp_path / "b")
    assert (tmp_path / "a" / "results.csv").read_bytes() == (tmp_path / "b" / "results.csv").read_bytes()
    snap = tmp_path / "a" / "experiment_seed0_snapshot.json"
    assert snap.read_bytes() == (tmp_path / "b" / "experiment_seed0_snapshot.json").read_bytes()
    assert t1.to_csv() == t2.to_csv()


def test_five_seeds_table_and_traces(tmp_path):
    table = run_experiment(_cfg(), out_dir=tmp_path)
    rows = list(csv.DictReader(io.StringIO((tmp_path / "results.csv").read_text())))
    assert list(rows[0]) == ["config_id", "seed", "method", "objective", "v_hat", "v_hat_s0", "v_hat_s1",
                             "af_gap_or_spearman", "wall_ms"]
    assert [r["seed"] for r in rows] == ["0", "1", "2", "3", "4", "mean", "sd"]
    assert len(list(tmp_path.glob("*_policy_trace.csv"))) == 5
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["completed_seeds"] == [0, 1, 2, 3, 4] and not summary["errors"]
    # aggregation recomputed from the per-seed rows
    per_seed = np.array([[float(r[c]) for c in table.columns[4:]] for r in rows[:5]])
    mean = [float(rows[5][c]) for c in table.columns[4:]]
    sd = [float(rows[6][c]) for c in table.columns[4:]]
    assert np.allclose(per_seed.mean(axis=0), mean, atol=1e-12, rtol=0)
    assert np.allclose(per_seed.std(axis=0, ddof=1), sd, atol=1e-12, rtol=0)


def test_failed_seed_is_recorded(tmp_path):
    cfg = ExperimentConfig.from_mapping({**SMALL, "data": {"source": "csv", "csv_path": str(tmp_path / "missing.csv"),
                                                           "x_columns": ["x"]}}, "csv")
    with pytest.raises(OSError):
        run_seed(cfg, 0)
    rows = [SeedResult(0, "DM", "unrestricted", 1.0, [1.0, 1.0], 0.0), SeedResult(1, "DM", "unrestricted",
            float("nan"), [], float("nan"), error="boom")]
    table = ResultsTable("x", 2, rows)
    assert len(table.ok_rows) == 1 and table.summary()["errors"] == [{"seed": 1, "error": "boom"}]


def test_action_fair_run_is_group_blind():
    _, extras = run_seed(_cfg(**{"fairness.action_fair": True}), 0)
    policy = extras["policy"]
    test = extras["data"][2]
    assert np.array_equal(policy.predict_xs(test.x, np.zeros(test.n)), policy.predict_xs(test.x, np.ones(test.n)))


def test_csv_pipeline_with_fitted_nuisances(tmp_path):
    ds, _ = simulate(SimConfig(n=300, seed=0))
    write_csv(ds, tmp_path / "d.csv")
    cfg = ExperimentConfig.from_mapping({**SMALL, "data": {"source": "csv", "csv_path": str(tmp_path / "d.csv"),
                                                           "x_columns": ["x_u", "x_s"]}}, "csv")
    result, extras = run_seed(cfg, 0, out_dir=tmp_path / "out")
    assert result.method == "DR" and -1 <= result.fairness_metric <= 1
    snap = json.loads((tmp_path / "out" / "experiment_seed0_snapshot.json").read_text())
    assert {"outcome", "propensity", "policy", "standardizer"} <= set(snap)


def test_wall_time_only_when_requested():
    r, _ = run_seed(_cfg(), 0)
    assert r.wall_ms == 0.0
    r, _ = run_seed(_cfg(**{"output.record_wall_time": True}), 0)
    assert r.wall_ms > 0


def test_default_out_dir(monkeypatch, tmp_path):
    monkeypatch.setenv("FAIRPOL_OUT", str(tmp_path))
    assert default_out_dir() == tmp_path
    monkeypatch.delenv("FAIRPOL_OUT")
    assert str(default_out_dir()) == "fairpol_out"


def test_oracle_baselines():
    o = SimOracle()
    unr = oracle_unrestricted_policy(o)
    assert unr(np.array([[0.75, 0.5]]), np.array([1]))[0] == 1.0
    assert unr(np.array([[0.75, -0.5]]), np.array([0]))[0] == 0.0
    af = oracle_action_fair_policy()
    assert abs(action_fairness_gap_sim(af, SimConfig(), 20_000)) == 0.0
    # above 0.5 the effect is +0.3 or -0.3 with equal weight, so the averaged effect is zero
    assert af(np.array([[0.9, 0.0]]), np.array([0]))[0] == 0.0


def test_grid_search_single_point():
    res = grid_search(lambda p: p["a"], {"a": [3]}, budget=1)
    assert res.best_params == {"a": 3} and len(res.log) == 1


def test_grid_search_budget_and_ties():
    grid = {"a": [1, 2, 3, 4, 5, 6], "b": [0, 1, 2, 3, 4]}
    res = grid_search(lambda p: 1.0, grid, budget=30, seed=3)
    assert len(res.log) == 30 and res.best_trial == 0
    combos = {(t["params"]["a"], t["params"]["b"]) for t in res.log}
    assert len(combos) == 30
    low = grid_search(lambda p: p["a"] + p["b"], grid, budget=10, seed=1, maximize=False)
    assert low.best_score == min(t["score"] for t in low.log)


def test_grid_search_clamps_budget():
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        res = grid_search(lambda p: p["a"], {"a": [1, 2]}, budget=5)
    assert len(res.log) == 2 and any("clamped" in str(w.message) for w in caught)
    with pytest.raises(ConfigError):
        grid_search(lambda p: 0, {})
