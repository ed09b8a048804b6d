"""Adversarial representation learning for action-fair policies.

A representation network reads the non-sensitive covariates only. An outcome
head keeps the representation predictive of ``y``; an adversary head tries to
recover the sensitive group, and the representation is pushed towards making
the adversary output the uniform distribution (the confusion loss).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, TrainingError
from .nn import Mlp, Trainable, minibatches

PROB_FLOOR = 1e-12


def squared_error(pred, y):
    pred = np.asarray(pred, float).reshape(-1)
    return float(np.mean((pred - np.asarray(y, float)) ** 2))


def cross_entropy(probs, s):
    probs = np.atleast_2d(np.asarray(probs, float))
    s = np.asarray(s).reshape(-1)
    picked = probs[np.arange(len(s)), s]
    return float(-np.mean(np.log(np.maximum(picked, PROB_FLOOR))))


def confusion_entropy(probs):
    """Mean of ``-(1/K) sum_j log p_j``; minimal (``log K``) at the uniform output."""
    probs = np.atleast_2d(np.asarray(probs, float))
    return float(-np.mean(np.log(np.maximum(probs, PROB_FLOOR)).mean(axis=1)))


NORM_EPS = 1e-5


def batch_norm(h, eps=NORM_EPS):
    """Standardize columns of ``h`` with its own mean/sd; returns ``(z, (zhat, sd))``."""
    mean = h.mean(axis=0)
    sd = np.sqrt(h.var(axis=0) + eps)
    z = (h - mean) / sd
    return z, (z, sd)


def batch_norm_backward(dz, cache):
    z, sd = cache
    return (dz - dz.mean(axis=0) - z * (dz * z).mean(axis=0)) / sd


@dataclass
class FairRepModel:
    """Trained networks. ``represent`` is the frozen map x -> Phi(x).

    When the representation is normalized, ``norm_mean``/``norm_scale`` hold the
    training-set statistics applied after the network output.
    """

    phi: Mlp
    g_y: Mlp
    g_s: Mlp
    gamma: float
    group_count: int
    norm_mean: np.ndarray = None
    norm_scale: np.ndarray = None

    def represent(self, x):
        z = self.phi.predict(x)
        if self.norm_mean is not None:
            z = (z - self.norm_mean) / self.norm_scale
        return z

    @property
    def dim(self):
        return self.phi.out_dim

    def to_dict(self):
        norm = None if self.norm_mean is None else [self.norm_mean.tolist(), self.norm_scale.tolist()]
        return {"phi": self.phi.to_dict(), "g_y": self.g_y.to_dict(), "g_s": self.g_s.to_dict(),
                "gamma": self.gamma, "group_count": self.group_count, "norm": norm}

    @classmethod
    def from_dict(cls, d):
        norm = d.get("norm")
        mean, scale = (None, None) if norm is None else (np.asarray(norm[0]), np.asarray(norm[1]))
        return cls(Mlp.from_dict(d["phi"]), Mlp.from_dict(d["g_y"]), Mlp.from_dict(d["g_s"]),
                   d["gamma"], d["group_count"], mean, scale)


def outcome_loss(model, x, y):
    return squared_error(model.g_y.predict(model.represent(x)), y)


def sensitivity_loss(model, x, s):
    return cross_entropy(model.g_s.predict(model.represent(x)), s)


def confusion_loss(model, x):
    return confusion_entropy(model.g_s.predict(model.represent(x)))


def loss_gradients(model, x, loss, y=None, s=None):
    """Value of one loss and its gradient for each of the three networks.

    ``loss`` is ``"outcome"``, ``"sensitivity"`` or ``"confusion"``. Networks a
    loss does not touch get ``None``. Evaluation mode (no dropout, frozen
    normalization statistics).
    """
    z = model.phi.forward(x)
    scale = 1.0
    if model.norm_mean is not None:
        scale = model.norm_scale
        z = (z - model.norm_mean) / scale
    n = len(x)
    out = {"phi": None, "g_y": None, "g_s": None}
    if loss == "outcome":
        pred = model.g_y.forward(z)[:, 0]
        resid = pred - y
        out["g_y"], gin = model.g_y.backward((2 * resid / n)[:, None])
        value = float(np.mean(resid ** 2))
    else:
        p = model.g_s.forward(z)
        k = p.shape[1]
        if loss == "sensitivity":
            dz = (p - np.eye(k)[s]) / n
            value = cross_entropy(p, s)
        elif loss == "confusion":
            dz = (p - 1.0 / k) / n
            value = confusion_entropy(p)
        else:
            raise ValueError(f"unknown loss {loss!r}")
        out["g_s"], gin = model.g_s.backward(dz, wrt_logits=True)
    out["phi"], _ = model.phi.backward(gin / scale)
    return value, out


@dataclass
class RepHyper:
    """Step-1 hyperparameters.

    ``adversary_steps`` adversary updates follow each representation update and
    the adversary learns ``adversary_lr_scale`` times faster; both keep the
    adversary close to the best response so the confusion loss has a useful
    target. ``normalize`` standardizes the representation output (batch
    statistics in training, frozen training-set statistics afterwards), which
    stops the encoder from hiding the group in a shrinking direction.
    ``lr_decay`` is the fraction of the learning rate removed linearly by the
    final epoch.
    """

    k: int = 5
    hidden: int = 32
    dropout: float = 0.0
    lr: float = 5e-3
    batch_size: int = 64
    epochs: int = 300
    weight_decay: float = 0.0
    gamma: float = 0.5
    seed: int = 0
    adversary_seed: int = None
    rep_head: str = "linear"
    adversary_steps: int = 5
    adversary_lr_scale: float = 2.0
    normalize: bool = True
    lr_decay: float = 0.95

    def __post_init__(self):
        if self.gamma < 0:
            raise ConfigError("gamma must be non-negative")
        if self.k < 1 or self.hidden < 1 or self.epochs < 1 or self.adversary_steps < 1:
            raise ConfigError("k, hidden, epochs and adversary_steps must be positive")
        if not 0.0 <= self.lr_decay < 1.0:
            raise ConfigError("lr_decay must lie in [0, 1)")


@dataclass
class RepTrainReport:
    outcome_loss: list = field(default_factory=list)
    sensitivity_loss: list = field(default_factory=list)
    confusion_loss: list = field(default_factory=list)
    adversary_accuracy: float = float("nan")
    outcome_mse: float = float("nan")

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "L_Y", "L_S", "L_conf"])
            for e, row in enumerate(zip(self.outcome_loss, self.sensitivity_loss, self.confusion_loss)):
                w.writerow([e] + [repr(float(v)) for v in row])


def train_fair_representation(train, val=None, hyper: RepHyper = None, callback=None):
    """Alternating adversarial training; returns ``(FairRepModel, RepTrainReport)``.

    Per minibatch: outcome head step on the outcome loss; representation step on
    outcome loss + ``gamma`` * confusion loss (both gradients taken before either
    update); then a fresh forward pass and ``adversary_steps`` adversary steps on
    ``gamma`` * sensitivity loss. ``callback(event, iteration, model)`` is invoked after each
    update with event ``"g_y"``, ``"phi"`` or ``"g_s"``.
    """
    hyper = hyper or RepHyper()
    k_groups = train.group_count
    if hyper.gamma > 0 and k_groups < 2:
        raise ConfigError("adversarial training needs at least two groups")
    ss = np.random.SeedSequence(hyper.seed).spawn(4)
    adv_seed = ss[2] if hyper.adversary_seed is None else np.random.SeedSequence(hyper.adversary_seed)
    p, h = train.x.shape[1], hyper.hidden
    kw = dict(lr=hyper.lr, weight_decay=hyper.weight_decay)
    phi = Trainable.build([p, h, h, hyper.k], hyper.rep_head, hyper.dropout, np.random.default_rng(ss[0]), **kw)
    g_y = Trainable.build([hyper.k, h, h, 1], "linear", hyper.dropout, np.random.default_rng(ss[1]), **kw)
    g_s = Trainable.build([hyper.k, h, h, k_groups], "softmax", hyper.dropout,
                          np.random.default_rng(adv_seed), lr=hyper.lr * hyper.adversary_lr_scale,
                          weight_decay=hyper.weight_decay)
    shuffle_rng = np.random.default_rng(ss[3])
    # separate dropout streams so the adversary never perturbs the other networks
    drop_rng = [np.random.default_rng(s) for s in ss[3].spawn(3)]
    model = FairRepModel(phi.net, g_y.net, g_s.net, hyper.gamma, k_groups)
    report = RepTrainReport()
    onehot = np.eye(k_groups)
    it = 0

    def encode(xb):
        h_raw = phi.net.forward(xb, train=True, rng=drop_rng[0])
        return batch_norm(h_raw) if hyper.normalize and len(xb) > 1 else (h_raw, None)

    def freeze_stats():
        if hyper.normalize:
            h_all = phi.net.predict(train.x)
            model.norm_mean = h_all.mean(axis=0)
            model.norm_scale = np.sqrt(h_all.var(axis=0) + NORM_EPS)

    freeze_stats()
    nets = (phi, g_y, g_s)
    base_lr = [t.opt.learning_rate for t in nets]
    for epoch in range(hyper.epochs):
        # linear decay to (1 - lr_decay) of the base rate over the run
        frac = 1.0 - hyper.lr_decay * epoch / max(1, hyper.epochs - 1)
        for t, lr0 in zip(nets, base_lr):
            t.opt.learning_rate = lr0 * frac
        for idx in minibatches(train.n, hyper.batch_size, shuffle_rng):
            xb, yb, sb = train.x[idx], train.y[idx], train.s[idx]
            m = len(idx)
            z, norm_cache = encode(xb)
            pred = g_y.net.forward(z, train=True, rng=drop_rng[1])[:, 0]
            grads_y, gin = g_y.net.backward((2 * (pred - yb) / m)[:, None])
            if hyper.gamma > 0:
                probs = g_s.net.forward(z, train=True, rng=drop_rng[2])
                _, gin_conf = g_s.net.backward(hyper.gamma * (probs - 1.0 / k_groups) / m, wrt_logits=True)
                gin = gin + gin_conf
            if norm_cache is not None:
                gin = batch_norm_backward(gin, norm_cache)
            grads_phi, _ = phi.net.backward(gin)
            g_y.step(grads_y)
            if callback:
                callback("g_y", it, model)
            phi.step(grads_phi)
            if callback:
                callback("phi", it, model)

            z, _ = encode(xb)
            for _ in range(hyper.adversary_steps):
                probs = g_s.net.forward(z, train=True, rng=drop_rng[2])
                grads_s, _ = g_s.net.backward(hyper.gamma * (probs - onehot[sb]) / m, wrt_logits=True)
                g_s.step(grads_s)
            if callback:
                callback("g_s", it, model)
            it += 1

        freeze_stats()
        ly = outcome_loss(model, train.x, train.y)
        probs = g_s.net.predict(model.represent(train.x))
        ls, lc = cross_entropy(probs, train.s), confusion_entropy(probs)
        if not np.isfinite([ly, ls, lc]).all():
            raise TrainingError("representation training diverged", epoch=epoch)
        report.outcome_loss.append(ly)
        report.sensitivity_loss.append(ls)
        report.confusion_loss.append(lc)

    held = val if val is not None and val.n > 0 else train
    z = model.represent(held.x)
    report.adversary_accuracy = float(np.mean(g_s.net.predict(z).argmax(axis=1) == held.s))
    report.outcome_mse = squared_error(g_y.net.predict(z), held.y)
    return model, report


def probe_accuracy(features_train, s_train, features_test, s_test, group_count=None,
                   hidden=32, epochs=200, lr=5e-3, batch_size=64, seed=0):
    """Held-out accuracy of a freshly trained classifier predicting ``s`` from features."""
    s_train = np.asarray(s_train)
    k = int(max(s_train.max(), np.max(s_test)) + 1) if group_count is None else group_count
    f_tr = np.asarray(features_train, float)
    f_te = np.asarray(features_test, float)
    mu, sd = f_tr.mean(axis=0), f_tr.std(axis=0)
    sd = np.where(sd > 1e-12, sd, 1.0)
    f_tr, f_te = (f_tr - mu) / sd, (f_te - mu) / sd
    ss = np.random.SeedSequence(seed).spawn(2)
    net = Trainable.build([f_tr.shape[1], hidden, hidden, k], "softmax", 0.0,
                          np.random.default_rng(ss[0]), lr=lr)
    rng = np.random.default_rng(ss[1])
    onehot = np.eye(k)
    for _ in range(epochs):
        for idx in minibatches(len(f_tr), batch_size, rng):
            p = net.net.forward(f_tr[idx])
            grads, _ = net.net.backward((p - onehot[s_train[idx]]) / len(idx), wrt_logits=True)
            net.step(grads)
    return float(np.mean(net.net.predict(f_te).argmax(axis=1) == np.asarray(s_test)))
