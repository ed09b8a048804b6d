"""One seed of the simulated lending experiment, step by step.

The simulator has a covariate x_u that is independent of the group and a
covariate x_s whose range is shifted by the group, so x_s nearly reveals s.
We train

* an unrestricted policy on (x, one-hot s);
* an action-fair policy on a learned representation from which an adversary
  cannot recover s;
* the same action-fair policy with a max-min objective on top.

Values are computed on the test split with the true outcome functions, and
the action-fairness gap E[pi(x, s=1) - pi(x, s=0)] by Monte Carlo.

Run: python demos/simulated_lending.py   (about a minute)
"""
import numpy as np

from fairpol import (Objective, PolicyHyper, RepHyper, SimConfig, action_fairness_gap_sim, evaluate_policy,
                     oracle_nuisance, probe_accuracy, simulate, split, standardize, train_fair_representation,
                     train_policy)

SEED = 0

ds, oracle = simulate(SimConfig(n=3000, seed=SEED))
raw_train, _, raw_test = split(ds, (0.8, 0.0, 0.2), seed=SEED)
(train, test), scaler = standardize(raw_train, raw_test)
nuis_train = oracle_nuisance(train, oracle, x_raw=raw_train.x)
nuis_test = oracle_nuisance(test, oracle, x_raw=raw_test.x)

print("step 1: adversarial representation (gamma = 0.5)")
rep, rep_report = train_fair_representation(train, hyper=RepHyper(gamma=0.5, seed=SEED))
majority = max(test.s.mean(), 1 - test.s.mean())
print(f"  probe accuracy for s from raw x:          {probe_accuracy(train.x, train.s, test.x, test.s):.3f}")
print(f"  probe accuracy for s from representation: "
      f"{probe_accuracy(rep.represent(train.x), train.s, rep.represent(test.x), test.s):.3f}"
      f"  (majority rate {majority:.3f})")

print("\nstep 2: policies")
for label, front_end, objective in (("unrestricted", None, Objective()),
                                    ("action fair", rep, Objective()),
                                    ("action fair + max-min", rep, Objective("max_min"))):
    policy, _ = train_policy(train, nuis=nuis_train, front_end=front_end, objective=objective,
                             hyper=PolicyHyper(seed=SEED))
    report = evaluate_policy(policy, test, nuis_test, "DM")
    gap = action_fairness_gap_sim(lambda x, s: policy.predict_xs(scaler.transform(x), s), SimConfig(),
                                  n_mc=50_000, seed=SEED)
    print(f"  {label:22s} V={report.v_hat:.4f}  V_s={np.round(report.v_hat_by_group, 4)}  "
          f"action-fairness gap={gap:+.4f}")
