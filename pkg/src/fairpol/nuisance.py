"""Outcome regressions and propensity scores feeding the policy scores."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import FittingError, ShapeError
from .nn import Mlp, Trainable, minibatches

DEFAULT_CLIP = 0.05


@dataclass(frozen=True, eq=False)
class NuisanceEstimates:
    mu0_hat: np.ndarray
    mu1_hat: np.ndarray
    pb_hat: np.ndarray
    source: str = "fitted"
    clip_bound: float = DEFAULT_CLIP

    def __post_init__(self):
        n = len(self.mu0_hat)
        if len(self.mu1_hat) != n or len(self.pb_hat) != n:
            raise ShapeError("nuisance vectors differ in length")

    def __len__(self):
        return len(self.mu0_hat)

    @property
    def ite(self):
        return self.mu1_hat - self.mu0_hat

    def subset(self, rows):
        return NuisanceEstimates(self.mu0_hat[rows], self.mu1_hat[rows], self.pb_hat[rows],
                                 self.source, self.clip_bound)


def clip_propensity(p, xi=DEFAULT_CLIP):
    if not 0.0 < xi < 0.5:
        raise ValueError("clip bound must lie in (0, 0.5)")
    return np.clip(np.asarray(p, float), xi, 1.0 - xi)


def nuisance_features(ds):
    """Covariates plus one-hot group, the input of every nuisance network."""
    return np.hstack([ds.x, ds.onehot_s()])


@dataclass
class NuisanceHyper:
    hidden: int = 20
    dropout: float = 0.0
    lr: float = 1e-3
    batch_size: int = 64
    epochs: int = 200
    weight_decay: float = 0.0
    clip_bound: float = DEFAULT_CLIP
    seed: int = 0


class OutcomeModel:
    """Shared trunk with one regression head per action arm."""

    def __init__(self, trunk: Mlp, head0: Mlp, head1: Mlp, group_count: int):
        if not (trunk.out_dim == head0.in_dim == head1.in_dim):
            raise ShapeError("trunk output does not match head inputs")
        self.trunk, self.head0, self.head1 = trunk, head0, head1
        self.group_count = group_count
        self.history = []

    def predict_features(self, feats):
        h = self.trunk.predict(feats)
        return self.head0.predict(h)[:, 0], self.head1.predict(h)[:, 0]

    def predict(self, ds):
        """``(mu0_hat, mu1_hat)`` for every row of ``ds``."""
        return self.predict_features(nuisance_features(ds))

    def to_dict(self):
        return {"trunk": self.trunk.to_dict(), "head0": self.head0.to_dict(),
                "head1": self.head1.to_dict(), "group_count": self.group_count}

    @classmethod
    def from_dict(cls, d):
        return cls(Mlp.from_dict(d["trunk"]), Mlp.from_dict(d["head0"]),
                   Mlp.from_dict(d["head1"]), d["group_count"])


class PropensityModel:
    def __init__(self, net: Mlp, clip_bound=DEFAULT_CLIP, group_count=2):
        self.net = net
        self.clip_bound = clip_bound
        self.group_count = group_count
        self.history = []

    def predict_raw(self, ds):
        return self.net.predict(nuisance_features(ds))[:, 0]

    def predict(self, ds):
        return clip_propensity(self.predict_raw(ds), self.clip_bound)

    def to_dict(self):
        return {"net": self.net.to_dict(), "clip_bound": self.clip_bound, "group_count": self.group_count}

    @classmethod
    def from_dict(cls, d):
        return cls(Mlp.from_dict(d["net"]), d["clip_bound"], d["group_count"])


def _arm_check(train):
    counts = np.bincount(train.a, minlength=2)
    for arm in (0, 1):
        if counts[arm] == 0:
            raise FittingError(f"no training samples with action {arm}")


def fit_outcome_model(train, hyper: NuisanceHyper = None):
    """Least-squares fit where each sample trains only its own arm's head."""
    hyper = hyper or NuisanceHyper()
    _arm_check(train)
    seeds = np.random.SeedSequence(hyper.seed).spawn(4)
    init_rng = [np.random.default_rng(s) for s in seeds[:3]]
    rng = np.random.default_rng(seeds[3])
    feats = nuisance_features(train)
    h = hyper.hidden
    kw = dict(lr=hyper.lr, weight_decay=hyper.weight_decay)
    trunk = Trainable.build([feats.shape[1], h, h], "linear", hyper.dropout, init_rng[0], **kw)
    heads = [Trainable.build([h, h, 1], "linear", hyper.dropout, init_rng[k], **kw) for k in (1, 2)]
    model = OutcomeModel(trunk.net, heads[0].net, heads[1].net, train.group_count)

    for epoch in range(hyper.epochs):
        total = 0.0
        for idx in minibatches(train.n, hyper.batch_size, rng):
            xb, ab, yb = feats[idx], train.a[idx], train.y[idx]
            hb = trunk.net.forward(xb, train=True, rng=rng)
            grad_h = np.zeros_like(hb)
            for arm, head in enumerate(heads):
                rows = np.flatnonzero(ab == arm)
                if rows.size == 0:
                    continue
                pred = head.net.forward(hb[rows], train=True, rng=rng)[:, 0]
                resid = pred - yb[rows]
                total += float(resid @ resid)
                grads, gin = head.net.backward((2.0 * resid / len(idx))[:, None])
                head.step(grads)
                grad_h[rows] = gin
            grads, _ = trunk.net.backward(grad_h)
            trunk.step(grads)
        mse = total / train.n
        if not np.isfinite(mse):
            raise FittingError(f"outcome model diverged at epoch {epoch}")
        model.history.append(mse)
    return model


def fit_propensity(train, hyper: NuisanceHyper = None):
    """Binary cross-entropy fit of P(A=1 | x, s); predictions are clipped."""
    hyper = hyper or NuisanceHyper()
    _arm_check(train)
    seeds = np.random.SeedSequence(hyper.seed + 7919).spawn(2)
    rng = np.random.default_rng(seeds[1])
    feats = nuisance_features(train)
    h = hyper.hidden
    net = Trainable.build([feats.shape[1], h, h, 1], "sigmoid", hyper.dropout,
                          np.random.default_rng(seeds[0]), lr=hyper.lr, weight_decay=hyper.weight_decay)
    model = PropensityModel(net.net, hyper.clip_bound, train.group_count)
    a = train.a.astype(float)
    for epoch in range(hyper.epochs):
        for idx in minibatches(train.n, hyper.batch_size, rng):
            p = net.net.forward(feats[idx], train=True, rng=rng)[:, 0]
            # d(BCE)/d(logit) = p - a
            grads, _ = net.net.backward(((p - a[idx]) / len(idx))[:, None], wrt_logits=True)
            net.step(grads)
        p_all = np.clip(model.predict_raw(train), 1e-12, 1 - 1e-12)
        loss = float(-np.mean(a * np.log(p_all) + (1 - a) * np.log(1 - p_all)))
        if not np.isfinite(loss):
            raise FittingError(f"propensity model diverged at epoch {epoch}")
        model.history.append(loss)
    return model


def fitted_nuisance(ds, outcome: OutcomeModel, propensity: PropensityModel):
    mu0, mu1 = outcome.predict(ds)
    return NuisanceEstimates(mu0, mu1, propensity.predict(ds), "fitted", propensity.clip_bound)


def oracle_nuisance(ds, oracle, x_raw=None):
    """Exact simulator nuisances. ``x_raw`` overrides ``ds.x`` when the dataset is already scaled."""
    x = ds.x if x_raw is None else x_raw
    x_u, x_s = oracle.columns(x)
    return NuisanceEstimates(oracle.mu0(x_u, x_s, ds.s), oracle.mu1(x_u, x_s, ds.s),
                             oracle.propensity(x_u, x_s, ds.s), "oracle", DEFAULT_CLIP)


def write_nuisance_csv(path, nuis: NuisanceEstimates, index=None):
    index = np.arange(len(nuis)) if index is None else index
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "mu0_hat", "mu1_hat", "pb_hat"])
        for row in zip(index, nuis.mu0_hat, nuis.mu1_hat, nuis.pb_hat):
            w.writerow([int(row[0])] + [repr(float(v)) for v in row[1:]])
