"""Policy learning: a sigmoid policy head trained on policy scores.

The head reads either raw covariates plus one-hot group (``front_end=None``) or
the output of a frozen representation, in which case it never sees ``s`` and
is action fair by construction. Objectives are the empirical policy value, the
envy-free objective ``V - lam * (max_s V_s - min_s V_s)`` and the max-min
objective ``min_s V_s``; the group max/min are handled by subgradients.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError, TrainingError
from .fairrep import FairRepModel
from .nn import Mlp, Trainable, minibatches
from .scores import METHODS, conditional_values, score, score_coefficients

OBJECTIVES = ("unrestricted", "envy_free", "max_min")


@dataclass(frozen=True)
class Objective:
    kind: str = "unrestricted"
    lam: float = 0.0

    def __post_init__(self):
        if self.kind not in OBJECTIVES:
            raise ConfigError(f"unknown objective {self.kind!r}; expected one of {OBJECTIVES}")
        if self.lam < 0:
            raise ConfigError("lambda must be non-negative")

    def of_report(self, report):
        """Objective value of a :class:`~fairpol.scores.ValueReport`."""
        if self.kind == "unrestricted":
            return report.v_hat
        if self.kind == "envy_free":
            return envy_free_objective(report, self.lam)
        return maxmin_objective(report)

    @property
    def label(self):
        return f"envy_free({self.lam:g})" if self.kind == "envy_free" else self.kind


def envy_free_objective(report, lam):
    """``V - lam * max_{s,s'} |V_s - V_s'|``."""
    return float(report.v_hat - lam * report.group_gap)


def maxmin_objective(report):
    return report.worst_group


def _extreme_group(values, present, largest):
    masked = np.where(present, values, -np.inf if largest else np.inf)
    # argmax/argmin return the first hit, i.e. the smallest group index on ties
    return int(np.argmax(masked) if largest else np.argmin(masked))


def objective_and_grad(pi, c, d, s, group_count, objective: Objective):
    """Objective on the scores ``c + d * pi`` and its (sub)gradient in ``pi``.

    Group values use the batch's own group frequencies. Groups absent from the
    batch are left out of the max/min. Returns ``(value, grad, n_missing)``.
    """
    pi = np.asarray(pi, float)
    n = len(pi)
    psi = c + d * pi
    value = float(psi.mean())
    grad = d / n
    if objective.kind == "unrestricted":
        return value, grad, 0
    counts = np.bincount(s, minlength=group_count)
    present = counts > 0
    n_missing = int(group_count - present.sum())
    v_s = np.bincount(s, weights=psi, minlength=group_count) / np.maximum(counts, 1)

    def group_grad(g):
        return np.where(s == g, d, 0.0) / counts[g]

    lo = _extreme_group(v_s, present, largest=False)
    if objective.kind == "max_min":
        return float(v_s[lo]), group_grad(lo), n_missing
    hi = _extreme_group(v_s, present, largest=True)
    if hi == lo or objective.lam == 0:
        return value, grad, n_missing
    value -= objective.lam * (v_s[hi] - v_s[lo])
    return float(value), grad - objective.lam * (group_grad(hi) - group_grad(lo)), n_missing


def head_gradients(head: Mlp, feats, c, d, s, group_count, objective: Objective):
    """Objective value and its gradient with respect to the head parameters (eval mode)."""
    pi = head.forward(feats)[:, 0]
    value, g_pi, _ = objective_and_grad(pi, c, d, s, group_count, objective)
    grads, _ = head.backward(g_pi[:, None])
    return value, grads


class IdentityFrontEnd:
    """Front end that passes covariates through unchanged (an s-blind policy on x)."""

    def represent(self, x):
        return np.asarray(x, float)

    def to_dict(self):
        return {"kind": "identity"}


@dataclass
class TrainedPolicy:
    """Sigmoid policy head with an optional frozen front end.

    ``front_end`` is anything with ``represent(x)``; when set, the head input is
    ``front_end.represent(x)`` and the group never enters the policy.
    """

    head: Mlp
    objective: Objective
    score_method: str
    group_count: int
    front_end: object = None

    @property
    def action_fair(self):
        return self.front_end is not None

    def features_xs(self, x, s):
        x = np.atleast_2d(np.asarray(x, float))
        if self.front_end is not None:
            return self.front_end.represent(x)
        return np.hstack([x, np.eye(self.group_count)[np.asarray(s, int).reshape(-1)]])

    def features(self, ds):
        return self.features_xs(ds.x, ds.s)

    def predict_xs(self, x, s):
        """Probability of action 1 for covariate rows ``x`` and groups ``s``."""
        return self.head.predict(self.features_xs(x, s))[:, 0]

    def predict(self, ds):
        return self.predict_xs(ds.x, ds.s)

    def to_dict(self):
        fe = None if self.front_end is None else self.front_end.to_dict()
        return {"head": self.head.to_dict(), "objective": self.objective.kind,
                "lambda": self.objective.lam, "score_method": self.score_method,
                "group_count": self.group_count, "front_end": fe}

    @classmethod
    def from_dict(cls, d):
        fe = d["front_end"]
        if fe is not None:
            fe = IdentityFrontEnd() if fe.get("kind") == "identity" else FairRepModel.from_dict(fe)
        return cls(Mlp.from_dict(d["head"]), Objective(d["objective"], d["lambda"]),
                   d["score_method"], d["group_count"], fe)


@dataclass
class PolicyHyper:
    hidden: int = 20
    dropout: float = 0.0
    lr: float = 1e-3
    batch_size: int = 128
    epochs: int = 400
    weight_decay: float = 0.0
    lr_decay: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.hidden < 1:
            raise ConfigError("epochs, batch_size and hidden must be positive")
        if not 0.0 <= self.lr_decay < 1.0:
            raise ConfigError("lr_decay must lie in [0, 1)")


@dataclass
class PolicyTrainReport:
    train_objective: list = field(default_factory=list)
    val_objective: list = field(default_factory=list)
    missing_group_steps: int = 0
    final: object = None

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_objective", "val_objective"])
            for e, tr in enumerate(self.train_objective):
                va = self.val_objective[e] if e < len(self.val_objective) else float("nan")
                w.writerow([e, repr(float(tr)), repr(float(va))])


def train_policy(train, val=None, nuis=None, front_end=None, objective: Objective = None,
                 score_method="DM", hyper: PolicyHyper = None, val_nuis=None):
    """Minibatch subgradient ascent on the chosen objective.

    Parameters
    ----------
    train, val : Dataset
        ``val`` (with ``val_nuis``) is optional and only used for traces and the
        final report; without it the final report is on ``train``.
    nuis : NuisanceEstimates
        Aligned with ``train``.
    front_end : object with ``represent(x)``, optional
        Frozen representation; ``None`` trains on ``(x, one-hot s)``.

    Returns
    -------
    (TrainedPolicy, PolicyTrainReport)
    """
    objective = objective or Objective()
    hyper = hyper or PolicyHyper()
    method = score_method.upper()
    if method not in METHODS:
        raise ConfigError(f"unknown score method {score_method!r}")
    if len(nuis) != train.n:
        raise ShapeError("nuisance estimates are not aligned with the training set")
    k = train.group_count
    seeds = np.random.SeedSequence(hyper.seed).spawn(3)
    policy = TrainedPolicy(None, objective, method, k, front_end)
    feats = policy.features(train)
    net = Trainable.build([feats.shape[1], hyper.hidden, hyper.hidden, 1], "sigmoid", hyper.dropout,
                          np.random.default_rng(seeds[0]), lr=hyper.lr, weight_decay=hyper.weight_decay)
    policy.head = net.net
    c, d = score_coefficients(method, train, nuis)
    shuffle_rng = np.random.default_rng(seeds[1])
    drop_rng = np.random.default_rng(seeds[2])
    have_val = val is not None and val.n > 0 and val_nuis is not None
    report = PolicyTrainReport()

    for epoch in range(hyper.epochs):
        net.opt.learning_rate = hyper.lr * (1.0 - hyper.lr_decay * epoch / max(1, hyper.epochs - 1))
        for idx in minibatches(train.n, hyper.batch_size, shuffle_rng):
            pi = net.net.forward(feats[idx], train=True, rng=drop_rng)[:, 0]
            value, g_pi, missing = objective_and_grad(pi, c[idx], d[idx], train.s[idx], k, objective)
            if not np.isfinite(value):
                raise TrainingError("non-finite policy objective", epoch=epoch)
            report.missing_group_steps += missing > 0
            grads, _ = net.net.backward(-g_pi[:, None])
            net.step(grads)
        tr = objective.of_report(evaluate_policy(policy, train, nuis, method))
        if not np.isfinite(tr):
            raise TrainingError("non-finite policy objective", epoch=epoch)
        report.train_objective.append(tr)
        if have_val:
            report.val_objective.append(objective.of_report(evaluate_policy(policy, val, val_nuis, method)))

    report.final = (evaluate_policy(policy, val, val_nuis, method) if have_val
                    else evaluate_policy(policy, train, nuis, method))
    return policy, report


def evaluate_policy(policy, ds, nuis, method="DM"):
    """Eval-mode policy outputs scored with ``method``; returns a ValueReport."""
    return conditional_values(score(method, policy.predict(ds), ds, nuis), ds.s, ds.group_count)
