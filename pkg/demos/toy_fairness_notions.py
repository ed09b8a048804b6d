"""Toy lending problem: how the fairness notions pick different policies.

Two groups (F, M) and two grade levels (L, H). The unrestricted optimum lends
only to (M, H). Forcing the decision to ignore the group moves it to "lend to
every H", and adding the max-min objective lends to a third of the H
applicants. In the second table max-min fairness simply lends to everyone.

Run: python demos/toy_fairness_notions.py
"""
import numpy as np

from fairpol import (TABLE4, TABLE5, IdentityFrontEnd, Objective, PolicyHyper, brute_force_toy_search,
                     check_lemma1, check_lemma2, materialize_toy, train_policy)


def show(name, toy):
    print(f"\n{name}: cells {[f'({c.s},{c.x})' for c in toy.cells]}")
    for label, obj, af in (("unrestricted", "unrestricted", False),
                           ("action fair", "unrestricted", True),
                           ("max-min", "max_min", False),
                           ("action fair + max-min", "max_min", True)):
        r = brute_force_toy_search(toy, obj, 1 / 30, af_constrained=af)
        pol = ", ".join(f"{p:.3f}" for p in r.policy)
        print(f"  {label:22s} policy ({pol})  V={r.v:.3f}  V_s={np.round(r.v_by_group, 3)}")
    print(f"  per-group optimum is also max-min optimal: {check_lemma1(toy)}")
    print(f"  action-fair max-min is envy free at alpha=0: {check_lemma2(toy)}")


show("table 4", TABLE4)
show("table 5", TABLE5)

# the same optima found by gradient training on a materialized sample
ds, nuis, cell = materialize_toy(TABLE4, n=1000)
print("\ngradient-trained policies on a 1000-row sample of table 4 (mean output per cell):")
for label, fe, obj in (("unrestricted", None, Objective()),
                       ("action fair", IdentityFrontEnd(), Objective()),
                       ("action fair + max-min", IdentityFrontEnd(), Objective("max_min"))):
    policy, _ = train_policy(ds, nuis=nuis, front_end=fe, objective=obj, hyper=PolicyHyper())
    out = policy.predict(ds)
    print(f"  {label:22s}", np.round([out[cell == j].mean() for j in range(4)], 3))
