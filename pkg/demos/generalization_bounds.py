"""How much the empirical objective can overstate the true one.

The penalty shrinks like 1/sqrt(n). Fairness objectives pay more: the
envy-free and max-min bounds need every group to hold at least a fraction
nu of the sample, and only apply once n is large enough for that to be
likely. Inverse-propensity scores pay a factor that grows as the overlap
bound xi shrinks.

Run: python demos/generalization_bounds.py
"""
from fairpol import BoundInputs, bound_penalty
from fairpol.errors import BoundInapplicableError

print(f"{'n':>8}  {'method':6}  {'unrestricted':>12}  {'envy_free':>12}  {'max_min':>12}")
for n in (20, 100, 1_000, 10_000, 100_000):
    for method in ("DM", "IPW", "DR"):
        inputs = BoundInputs(n=n, nu=0.4, group_count=2, xi=0.1, method=method)
        cells = []
        for kind in ("unrestricted", "envy_free", "max_min"):
            try:
                cells.append(f"{bound_penalty(inputs, kind):12.4f}")
            except BoundInapplicableError:
                cells.append(f"{'n/a':>12}")
        print(f"{n:>8}  {method:6}  " + "  ".join(cells))
