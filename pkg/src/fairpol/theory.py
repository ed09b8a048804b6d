"""Analytic oracles: toy fairness problems, brute-force policy search, lemma
checks, the action-fairness and rank-correlation metrics, and the
generalization-bound calculator."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import stats

from .data import Dataset
from .errors import BoundInapplicableError, ConfigError, EstimationError
from .nuisance import NuisanceEstimates
from .policy import Objective

# ----------------------------------------------------------------------------
# toy problems


@dataclass(frozen=True)
class ToyCell:
    s: str
    x: str
    prob: float
    mu1: float
    mu0: float


@dataclass(frozen=True)
class ToyProblem:
    """Finite population of (group, covariate level) cells with known outcomes."""

    cells: tuple

    def __post_init__(self):
        object.__setattr__(self, "cells", tuple(ToyCell(*c) if not isinstance(c, ToyCell) else c
                                                for c in self.cells))
        probs = np.array([c.prob for c in self.cells])
        if len(probs) == 0 or (probs < 0).any() or abs(probs.sum() - 1.0) > 1e-9:
            raise ConfigError("cell probabilities must be non-negative and sum to 1")
        if len({(c.s, c.x) for c in self.cells}) != len(self.cells):
            raise ConfigError("duplicate (s, x) cell")

    @property
    def groups(self):
        return tuple(dict.fromkeys(c.s for c in self.cells))

    @property
    def levels(self):
        return tuple(dict.fromkeys(c.x for c in self.cells))

    def arrays(self):
        """``(prob, mu1, mu0, group index, level index)`` per cell."""
        g, lv = self.groups, self.levels
        return (np.array([c.prob for c in self.cells]), np.array([c.mu1 for c in self.cells]),
                np.array([c.mu0 for c in self.cells]),
                np.array([g.index(c.s) for c in self.cells]),
                np.array([lv.index(c.x) for c in self.cells]))

    def group_probs(self):
        prob, _, _, gi, _ = self.arrays()
        return np.bincount(gi, weights=prob, minlength=len(self.groups))

    @classmethod
    def from_csv(cls, path):
        with Path(path).open(newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        return cls(tuple(ToyCell(r["s"], r["x"], float(r["prob"]), float(r["mu1"]), float(r["mu0"]))
                         for r in rows))

    def to_csv(self, path):
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["s", "x", "prob", "mu1", "mu0"])
            for c in self.cells:
                w.writerow([c.s, c.x, repr(c.prob), repr(c.mu1), repr(c.mu0)])


# groups F/M, GPA levels L/H; cell order (F,L), (M,L), (F,H), (M,H)
TABLE4 = ToyProblem((
    ("F", "L", 0.1, 0.0, 1.0),
    ("M", "L", 0.4, 0.0, 1.0),
    ("F", "H", 0.1, -1.0, 1.0),
    ("M", "H", 0.4, 1.0, 0.0),
))
TABLE5 = ToyProblem((
    ("F", "L", 0.1, 0.0, -1.0),
    ("M", "L", 0.4, 1.0, 0.0),
    ("F", "H", 0.1, 0.0, -1.0),
    ("M", "H", 0.4, 2.0, 0.0),
))


def _values_batch(toy, policies):
    """Overall and per-group values for a batch of cell policies ``(N, cells)``."""
    prob, mu1, mu0, gi, _ = toy.arrays()
    pg = toy.group_probs()
    contrib = prob * (mu0 + policies * (mu1 - mu0))
    onehot = np.eye(len(pg))[gi]
    v_s = contrib @ onehot / pg
    return contrib.sum(axis=1), v_s


def toy_conditional_values(toy: ToyProblem, policy):
    """Exact ``(V, V_s)`` of a policy given per cell (in ``toy.cells`` order).

    ``V_s = sum_x P(x | s) [pi mu1 + (1 - pi) mu0]`` and ``V = sum_s P(s) V_s``.
    """
    pol = np.asarray(policy, float).reshape(1, -1)
    if pol.shape[1] != len(toy.cells):
        raise ConfigError("policy needs one value per cell")
    v, v_s = _values_batch(toy, pol)
    return float(v[0]), v_s[0]


@dataclass(frozen=True)
class ToySearchResult:
    policy: tuple
    objective: float
    v: float
    v_by_group: tuple


def _grid(step):
    count = round(1.0 / step)
    if count < 1 or abs(count * step - 1.0) > 1e-9:
        raise ConfigError("grid step must divide 1")
    return np.arange(count + 1) / count


def _objective_batch(objective, v, v_s):
    if objective.kind == "unrestricted":
        return v
    if objective.kind == "max_min":
        return v_s.min(axis=1)
    return v - objective.lam * (v_s.max(axis=1) - v_s.min(axis=1))


def brute_force_toy_search(toy: ToyProblem, objective="unrestricted", grid_step=1 / 30,
                           af_constrained=False, alpha=None, max_candidates=5_000_000):
    """Exhaustive search over per-cell policy values on a grid.

    ``af_constrained`` ties cells of the same covariate level together across
    groups. ``alpha`` restricts the search to policies whose largest group-value
    gap is at most ``alpha``. Ties on the objective (within 1e-12) go to the
    higher overall value, then to the lexicographically smallest policy vector.
    Returns ``None`` when ``alpha`` leaves nothing feasible.
    """
    if isinstance(objective, str):
        objective = Objective(objective)
    grid = _grid(grid_step)
    _, _, _, _, li = toy.arrays()
    free = len(toy.levels) if af_constrained else len(toy.cells)
    if len(grid) ** free > max_candidates:
        raise ConfigError(f"{len(grid)}^{free} candidates exceed the search budget")
    # meshgrid in 'ij' order enumerates vectors lexicographically
    mesh = np.meshgrid(*([grid] * free), indexing="ij")
    cand = np.stack([m.ravel() for m in mesh], axis=1)
    policies = cand[:, li] if af_constrained else cand
    v, v_s = _values_batch(toy, policies)
    obj = _objective_batch(objective, v, v_s)
    feasible = np.ones(len(obj), bool)
    if alpha is not None:
        feasible = (v_s.max(axis=1) - v_s.min(axis=1)) <= alpha + 1e-12
        if not feasible.any():
            return None
    obj_f = np.where(feasible, obj, -np.inf)
    best = obj_f.max()
    tied = obj_f >= best - 1e-12
    v_tied = np.where(tied, v, -np.inf)
    pick = int(np.flatnonzero(v_tied >= v_tied.max() - 1e-12)[0])
    return ToySearchResult(tuple(float(p) for p in policies[pick]), float(obj[pick]),
                           float(v[pick]), tuple(float(x) for x in v_s[pick]))


def check_lemma1(toy: ToyProblem, grid_step=1 / 30):
    """Does the per-group optimal policy attain both the max-min and the unrestricted optimum?"""
    _, mu1, mu0, _, _ = toy.arrays()
    per_group = (mu1 > mu0).astype(float)
    v, v_s = toy_conditional_values(toy, per_group)
    best_u = brute_force_toy_search(toy, "unrestricted", grid_step)
    best_mm = brute_force_toy_search(toy, "max_min", grid_step)
    return bool(abs(v - best_u.objective) <= 1e-9 and abs(v_s.min() - best_mm.objective) <= 1e-9)


def check_lemma2(toy: ToyProblem, grid_step=1 / 30):
    """Numerical check that the action-fair max-min policy is envy free with alpha = 0.

    Returns ``"holds"``, ``"fails"`` or ``"inapplicable"``. The premise proxy: the
    action-fair max-min optimum takes an interior value on some positive
    probability cell with non-zero treatment effect. The tolerance for both
    comparisons is ``2 * grid_step * max |mu1 - mu0|``, the most a value can
    move over two grid steps.
    """
    prob, mu1, mu0, _, _ = toy.arrays()
    ite = mu1 - mu0
    if np.all(ite == 0):
        return "holds"
    mm = brute_force_toy_search(toy, "max_min", grid_step, af_constrained=True)
    pol = np.asarray(mm.policy)
    interior = (pol > 0) & (pol < 1) & (prob > 0) & (ite != 0)
    if not interior.any():
        return "inapplicable"
    tol = 2 * grid_step * np.abs(ite).max()
    gap = max(mm.v_by_group) - min(mm.v_by_group)
    ef = brute_force_toy_search(toy, "unrestricted", grid_step, af_constrained=True, alpha=tol)
    if ef is None or gap > tol:
        return "fails"
    return "holds" if abs(min(ef.v_by_group) - mm.objective) <= tol else "fails"


def materialize_toy(toy: ToyProblem, n=1000):
    """Dataset with cell frequencies ``round(prob * n)`` plus exact nuisances.

    The single covariate is the level index, so a policy on ``x`` alone is
    blind to the group. Actions alternate within a cell and outcomes equal the
    cell mean of the taken action; the propensity is 1/2.
    """
    prob, mu1, mu0, gi, li = toy.arrays()
    counts = np.rint(prob * n).astype(int)
    cell = np.repeat(np.arange(len(prob)), counts)
    a = np.concatenate([np.arange(c) % 2 for c in counts]).astype(int)
    y = np.where(a == 1, mu1[cell], mu0[cell])
    ds = Dataset(x=li[cell].astype(float)[:, None], s=gi[cell], a=a, y=y,
                 group_count=len(toy.groups), feature_names=("level",), group_labels=toy.groups)
    nuis = NuisanceEstimates(mu0[cell].astype(float), mu1[cell].astype(float),
                             np.full(len(cell), 0.5), "oracle")
    return ds, nuis, cell


# ----------------------------------------------------------------------------
# fairness metrics


def action_fairness_gap_sim(policy, sim_cfg, n_mc=100_000, seed=0):
    """Monte Carlo ``E[pi(X_u, X_s^(1), 1) - pi(X_u, X_s^(0), 0)]`` on the simulator.

    ``policy(x, s)`` takes raw simulator covariate rows ``(x_u, x_s)`` and group
    labels and returns probabilities of action 1. ``X_u`` is shared between the
    two arms; ``X_s^(g)`` is drawn from group ``g``'s conditional ``U[g-1, g]``.
    """
    rng = np.random.default_rng(seed)
    x_u = rng.uniform(-1.0, 1.0, n_mc)
    x_s0 = rng.uniform(-1.0, 0.0, n_mc)
    x_s1 = rng.uniform(0.0, 1.0, n_mc)
    p1 = np.asarray(policy(np.column_stack([x_u, x_s1]), np.ones(n_mc, int)), float)
    p0 = np.asarray(policy(np.column_stack([x_u, x_s0]), np.zeros(n_mc, int)), float)
    return float(np.mean(p1 - p0))


def spearman_rank(s, policy_out):
    """Spearman rank correlation with average ranks for ties."""
    s = np.asarray(s, float)
    p = np.asarray(policy_out, float)
    if len(s) != len(p) or len(s) < 2:
        raise EstimationError("need two equal-length vectors with at least two entries")
    if np.all(s == s[0]) or np.all(p == p[0]):
        raise EstimationError("rank correlation is undefined for a constant vector")
    return float(stats.spearmanr(s, p).statistic)


# ----------------------------------------------------------------------------
# generalization bounds

BOUND_KINDS = ("unrestricted", "envy_free", "max_min")


def k_constant(method, xi):
    """Bounded-difference constant of the score for method DM, IPW or DR."""
    m = method.upper()
    if m == "DM":
        return 1.0
    if not 0 < xi < 0.5:
        raise ConfigError("xi must lie in (0, 0.5)")
    if m == "IPW":
        return 1.0 / (2.0 * xi)
    if m == "DR":
        return (xi + 1.0) / xi
    raise ConfigError(f"unknown score method {method!r}")


@dataclass(frozen=True)
class BoundInputs:
    n: int
    nu: float
    group_count: int
    C: float = 1.0
    xi: float = 0.1
    rademacher: float = None
    p: float = 0.05
    p1: float = 0.05
    p2: float = 0.05
    method: str = "DM"

    def __post_init__(self):
        if self.rademacher is None:
            object.__setattr__(self, "rademacher", 1.0 / math.sqrt(self.n))
        if self.n <= 0 or self.group_count < 1 or self.C <= 0 or self.rademacher < 0:
            raise ConfigError("n, group_count and C must be positive, rademacher non-negative")
        if not 0 < self.nu <= 1.0 / self.group_count:
            raise ConfigError("nu must lie in (0, 1/|S|]")
        if not (0 < self.p < 1 and self.p1 > 0 and self.p2 > 0 and self.p1 + self.p2 < 1):
            raise ConfigError("failure probabilities must be positive with p < 1 and p1 + p2 < 1")
        k_constant(self.method, self.xi)

    @property
    def k(self):
        return k_constant(self.method, self.xi)

    @property
    def ell(self):
        return 1.0 - self.nu + math.sqrt(math.log(self.group_count / self.p2) / 2.0)


def bound_penalty(inputs: BoundInputs, kind="unrestricted"):
    """The term subtracted from the empirical objective in the generalization bound.

    Natural logarithms throughout. The envy-free and max-min bounds need
    ``ell / sqrt(n) < nu`` and raise :class:`BoundInapplicableError` otherwise.
    """
    b = inputs
    ck = 2.0 * b.C * b.k
    root_n = math.sqrt(b.n)
    if kind == "unrestricted":
        return ck * (b.rademacher + math.sqrt(8.0 * math.log(2.0 / b.p) / b.n))
    if kind not in BOUND_KINDS:
        raise ConfigError(f"unknown bound kind {kind!r}")
    ell = b.ell
    if not ell / root_n < b.nu:
        raise BoundInapplicableError(f"ell(n, p2)/sqrt(n) = {ell / root_n:.6g} is not below nu = {b.nu:g}",
                                     ell=ell, nu=b.nu)
    frac = ell / (b.nu - ell / root_n)
    if kind == "envy_free":
        return ck * (2.0 + b.nu) / b.nu * (
            b.rademacher + math.sqrt(8.0 * math.log(4.0 * b.group_count / b.p1) / b.n)
            + 2.0 / ((2.0 + b.nu) * root_n) * frac)
    return ck / b.nu * (b.rademacher + math.sqrt(8.0 * math.log(2.0 * b.group_count / b.p1) / b.n)
                        + frac / root_n)


def bound_report(inputs: BoundInputs):
    """All three penalties with per-bound applicability; never raises on the precondition."""
    out = {"inputs": {k: getattr(inputs, k) for k in inputs.__dataclass_fields__},
           "K": inputs.k, "ell": inputs.ell,
           "precondition": inputs.ell / math.sqrt(inputs.n) < inputs.nu, "penalties": {}}
    for kind in BOUND_KINDS:
        try:
            out["penalties"][kind] = {"applicable": True, "value": bound_penalty(inputs, kind)}
        except BoundInapplicableError as err:
            out["penalties"][kind] = {"applicable": False, "value": None, "reason": str(err)}
    return out
