"""Per-sample policy scores (DM, IPW, DR) and empirical policy values."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import EstimationError, NumericError, ShapeError

METHODS = ("DM", "IPW", "DR")


@dataclass(frozen=True, eq=False)
class ScoreVector:
    method: str
    values: np.ndarray

    def __len__(self):
        return len(self.values)

    def std_error(self):
        v = self.values
        return float(v.std(ddof=1) / np.sqrt(len(v)))


@dataclass(frozen=True, eq=False)
class ValueReport:
    v_hat: float
    v_hat_by_group: np.ndarray
    p_hat_by_group: np.ndarray

    @property
    def group_gap(self):
        """Largest pairwise difference of group values."""
        return float(self.v_hat_by_group.max() - self.v_hat_by_group.min())

    @property
    def worst_group(self):
        return float(self.v_hat_by_group.min())

    def to_dict(self):
        return {"v_hat": self.v_hat, "v_hat_by_group": self.v_hat_by_group.tolist(),
                "p_hat_by_group": self.p_hat_by_group.tolist()}


def _check_method(method):
    m = method.upper()
    if m not in METHODS:
        raise ValueError(f"unknown score method {method!r}; expected one of {METHODS}")
    return m


def _behavior_weight_parts(ds, nuis):
    pb = np.asarray(nuis.pb_hat, float)
    if ((pb <= 0) | (pb >= 1)).any():
        bad = int(np.flatnonzero((pb <= 0) | (pb >= 1))[0])
        raise NumericError(f"propensity {pb[bad]} at row {bad} is outside (0, 1)", index=bad)
    a = ds.a
    return a / pb, (1 - a) / (1 - pb)


def score_coefficients(method, ds, nuis):
    """Affine decomposition ``psi_i = c_i + d_i * pi_i`` of the chosen score.

    All three scores are affine in the policy output, so ``(c, d)`` is all a
    policy optimizer needs: the objective gradient with respect to ``pi_i`` is
    built from ``d``.
    """
    m = _check_method(method)
    mu0 = np.asarray(nuis.mu0_hat, float)
    mu1 = np.asarray(nuis.mu1_hat, float)
    if not (len(mu0) == len(mu1) == len(nuis.pb_hat) == ds.n):
        raise ShapeError("nuisance estimates are not aligned with the dataset")
    c = np.zeros(ds.n)
    d = np.zeros(ds.n)
    if m in ("DM", "DR"):
        c += mu0
        d += mu1 - mu0
    if m in ("IPW", "DR"):
        w1, w0 = _behavior_weight_parts(ds, nuis)
        resid = ds.y if m == "IPW" else ds.y - np.where(ds.a == 1, mu1, mu0)
        # weight = a*pi/pb + (1-a)(1-pi)/(1-pb)
        c += w0 * resid
        d += (w1 - w0) * resid
    return c, d


def score(method, policy_out, ds, nuis):
    """Per-sample scores of a policy given as probabilities of action 1."""
    m = _check_method(method)
    pi = np.asarray(policy_out, float)
    if pi.shape != (ds.n,):
        raise ShapeError(f"policy output has shape {pi.shape}, dataset has {ds.n} rows")
    mu0 = np.asarray(nuis.mu0_hat, float)
    mu1 = np.asarray(nuis.mu1_hat, float)
    dm = pi * mu1 + (1 - pi) * mu0
    if m == "DM":
        values = dm
    else:
        pb = np.asarray(nuis.pb_hat, float)
        _behavior_weight_parts(ds, nuis)
        a = ds.a
        weight = (a * pi + (1 - a) * (1 - pi)) / (a * pb + (1 - a) * (1 - pb))
        if m == "IPW":
            values = weight * ds.y
        else:
            values = dm + weight * (ds.y - np.where(a == 1, mu1, mu0))
    if not np.isfinite(values).all():
        raise NumericError("non-finite policy score")
    return ScoreVector(m, values)


def empirical_value(sv: ScoreVector):
    if len(sv.values) == 0:
        raise EstimationError("cannot average an empty score vector")
    return float(np.mean(sv.values))


def conditional_values(sv: ScoreVector, s, group_count=None):
    """Overall and group-conditional empirical values.

    The group value is the sample average of ``1{s_i = g} psi_i / p_hat(g)``,
    i.e. the mean score within group ``g``.
    """
    s = np.asarray(s)
    values = sv.values
    n = len(values)
    if n == 0:
        raise EstimationError("cannot average an empty score vector")
    k = int(s.max()) + 1 if group_count is None else int(group_count)
    counts = np.bincount(s, minlength=k).astype(float)
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise EstimationError(f"group {int(empty[0])} has no samples", group=int(empty[0]))
    p_hat = counts / n
    sums = np.bincount(s, weights=values, minlength=k)
    v_by_group = sums / n / p_hat
    return ValueReport(float(values.mean()), v_by_group, p_hat)


def write_scores_csv(path, sv: ScoreVector, index=None):
    index = np.arange(len(sv)) if index is None else index
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "method", "score"])
        for i, v in zip(index, sv.values):
            w.writerow([int(i), sv.method, repr(float(v))])
