"""The CSV route: fitted nuisances and doubly robust scores.

Real data has no known outcome functions, so the outcome model and the
propensity score are fitted on the training split and the policy is trained
and evaluated with doubly robust scores. The group-fairness metric becomes the
rank correlation between group and policy output. The CSV here is exported
from the simulator.

Run: python demos/csv_workflow.py   (output lands in $FAIRPOL_OUT or ./fairpol_out)
"""
import json

from fairpol import SimConfig, simulate, write_csv
from fairpol.experiment import ExperimentConfig, default_out_dir, run_experiment

out = default_out_dir() / "csv_demo"
out.mkdir(parents=True, exist_ok=True)
ds, _ = simulate(SimConfig(n=2000, seed=1))
path = write_csv(ds, out / "lending.csv")

cfg = ExperimentConfig.from_mapping({
    "data": {"csv_path": str(path), "x_columns": ["x_u", "x_s"]},
    "fairness": {"action_fair": True, "value": "envy_free"},
    "rep": {"epochs": 100},
    "policy": {"epochs": 200},
    "run": {"config_id": "csv_demo", "seeds": [0, 1]},
}, profile="csv")
table = run_experiment(cfg, out_dir=out)
print(table.to_csv())
print(json.dumps(table.summary()["aggregate"], indent=2))
print(f"artifacts in {out}")
