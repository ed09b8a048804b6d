"""Small feed-forward network engine in plain numpy.

Dense layers with ELU hidden activations, an output head (linear, sigmoid or
softmax), inverted dropout on hidden layers, hand-written reverse-mode
gradients and an Adam optimizer. Every network used by the package is built
from :class:`Mlp`.

Inputs are rows: ``forward`` accepts a vector of shape ``(in_dim,)`` or a batch
of shape ``(n, in_dim)``. ``backward`` expects the gradient of a scalar loss
with respect to the output of the same shape as the last forward output, so
batch averaging is the caller's business.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import NumericError, ShapeError, UsageError

HEADS = ("linear", "sigmoid", "softmax")


def elu(z):
    z = np.asarray(z, dtype=float)
    return np.where(z > 0, z, np.expm1(np.minimum(z, 0.0)))


def elu_grad(z):
    z = np.asarray(z, dtype=float)
    return np.where(z > 0, 1.0, np.exp(np.minimum(z, 0.0)))


def softmax(z):
    z = np.asarray(z, dtype=float)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


class Mlp:
    """Dense network ``in -> hidden... -> out`` with an output head.

    Parameters
    ----------
    weights, biases : list of ndarray
        ``weights[i]`` has shape ``(out_i, in_i)``, ``biases[i]`` shape ``(out_i,)``.
    head : {"linear", "sigmoid", "softmax"}
    dropout : float or sequence of float
        Drop probability per hidden layer, used only when ``train=True``.
    """

    def __init__(self, weights, biases, head="linear", dropout=0.0):
        if head not in HEADS:
            raise ValueError(f"unknown head {head!r}; expected one of {HEADS}")
        if len(weights) != len(biases) or not weights:
            raise ShapeError("need one bias per weight matrix and at least one layer")
        self.weights = [np.array(w, dtype=float) for w in weights]
        self.biases = [np.array(b, dtype=float) for b in biases]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ShapeError(f"layer {i}: weight {w.shape} and bias {b.shape} disagree")
            if i and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ShapeError(
                    f"layer {i} expects {w.shape[1]} inputs, previous layer gives "
                    f"{self.weights[i - 1].shape[0]}"
                )
        n_hidden = len(self.weights) - 1
        if np.isscalar(dropout):
            dropout = [float(dropout)] * n_hidden
        dropout = [float(p) for p in dropout]
        if len(dropout) != n_hidden or any(not 0.0 <= p < 1.0 for p in dropout):
            raise ValueError(f"dropout must give {n_hidden} probabilities in [0, 1)")
        self.head = head
        self.dropout = dropout
        self._cache = None

    @classmethod
    def init(cls, sizes, head="linear", dropout=0.0, rng=None):
        """Kaiming-uniform weights (bound ``sqrt(6 / fan_in)``), zero biases."""
        rng = np.random.default_rng(rng)
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = np.sqrt(6.0 / fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases, head=head, dropout=dropout)

    @property
    def in_dim(self):
        return self.weights[0].shape[1]

    @property
    def out_dim(self):
        return self.weights[-1].shape[0]

    @property
    def sizes(self):
        return [self.in_dim] + [w.shape[0] for w in self.weights]

    @property
    def params(self):
        """Parameter arrays in optimizer order ``[W0, b0, W1, b1, ...]``.

        These are the live arrays; in-place updates change the network.
        """
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def forward(self, x, train=False, rng=None):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        a = x[None, :] if single else x
        if a.ndim != 2 or a.shape[1] != self.in_dim:
            raise ShapeError(f"input has shape {x.shape}, network expects {self.in_dim} features")
        use_dropout = train and any(p > 0 for p in self.dropout)
        if use_dropout and rng is None:
            raise UsageError("training-mode dropout needs a random generator")

        acts, pre, masks = [a], [], []
        for i in range(len(self.weights) - 1):
            z = a @ self.weights[i].T + self.biases[i]
            a = elu(z)
            mask = None
            p = self.dropout[i]
            if use_dropout and p > 0:
                mask = (rng.random(a.shape) >= p) / (1.0 - p)
                a = a * mask
            pre.append(z)
            masks.append(mask)
            acts.append(a)
        z = a @ self.weights[-1].T + self.biases[-1]
        if self.head == "linear":
            out = z
        elif self.head == "sigmoid":
            out = expit(z)
        else:
            out = softmax(z)
        self._cache = {"acts": acts, "pre": pre, "masks": masks, "logits": z, "out": out, "single": single}
        return out[0] if single else out

    __call__ = forward

    def predict(self, x):
        """Evaluation-mode forward that leaves any training cache untouched."""
        cache = self._cache
        try:
            return self.forward(x, train=False)
        finally:
            self._cache = cache

    @property
    def cached_logits(self):
        if self._cache is None:
            raise UsageError("no cached forward pass")
        z = self._cache["logits"]
        return z[0] if self._cache["single"] else z

    def backward(self, grad_out, wrt_logits=False):
        """Reverse pass through the last forward call.

        Parameters
        ----------
        grad_out : ndarray
            dLoss/d(output), same shape as the forward output. With
            ``wrt_logits=True`` it is dLoss/d(pre-head logits) instead, which
            is the numerically safe route for cross-entropy losses.

        Returns
        -------
        grads : list of ndarray
            Same order and shapes as :attr:`params`.
        grad_input : ndarray
            dLoss/d(input), shaped like the forward input.
        """
        if self._cache is None:
            raise UsageError("backward called without a cached forward pass")
        c = self._cache
        g = np.asarray(grad_out, dtype=float)
        if c["single"]:
            g = g[None, :] if g.ndim == 1 else g
        if g.shape != c["out"].shape:
            raise ShapeError(f"gradient shape {g.shape} does not match output {c['out'].shape}")

        if wrt_logits or self.head == "linear":
            dz = g
        elif self.head == "sigmoid":
            y = c["out"]
            dz = g * y * (1.0 - y)
        else:
            y = c["out"]
            dz = y * (g - (g * y).sum(axis=1, keepdims=True))

        n_layers = len(self.weights)
        grads = [None] * (2 * n_layers)
        for i in range(n_layers - 1, -1, -1):
            a_prev = c["acts"][i]
            grads[2 * i] = dz.T @ a_prev
            grads[2 * i + 1] = dz.sum(axis=0)
            da = dz @ self.weights[i]
            if i == 0:
                break
            if c["masks"][i - 1] is not None:
                da = da * c["masks"][i - 1]
            dz = da * elu_grad(c["pre"][i - 1])
        grad_input = da[0] if c["single"] else da
        return grads, grad_input

    def copy(self):
        return Mlp([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                   head=self.head, dropout=list(self.dropout))

    def to_dict(self):
        return {
            "sizes": self.sizes,
            "head": self.head,
            "dropout": list(self.dropout),
            "weights": [w.ravel().tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, d):
        sizes = d["sizes"]
        weights = [np.asarray(w, dtype=float).reshape(o, i)
                   for w, i, o in zip(d["weights"], sizes[:-1], sizes[1:])]
        return cls(weights, d["biases"], head=d["head"], dropout=d["dropout"])

    def dumps(self):
        return json.dumps(self.to_dict())

    @classmethod
    def loads(cls, text):
        return cls.from_dict(json.loads(text))

    def __repr__(self):
        return f"Mlp(sizes={self.sizes}, head={self.head!r}, dropout={self.dropout})"


@dataclass
class AdamState:
    """Moment estimates for one parameter list."""

    first_moment: list
    second_moment: list
    step_count: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.0

    @classmethod
    def zeros_like(cls, params, **hyper):
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], **hyper)


def adam_step(params, grads, state):
    """One bias-corrected Adam update, in place. Returns ``(params, state)``.

    Weight decay is added to the gradient (L2) before the moment updates.
    """
    if not (len(params) == len(grads) == len(state.first_moment)):
        raise ShapeError("params, grads and optimizer state differ in length")
    for k, g in enumerate(grads):
        if g.shape != params[k].shape:
            raise ShapeError(f"gradient {k} has shape {g.shape}, parameter has {params[k].shape}")
        bad = ~np.isfinite(g)
        if bad.any():
            flat = int(np.flatnonzero(bad.ravel())[0])
            raise NumericError(f"non-finite gradient in parameter {k} at flat index {flat}", index=(k, flat))

    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        if state.weight_decay:
            g = g + state.weight_decay * p
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        p -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return params, state


@dataclass
class Trainable:
    """An Mlp bundled with its optimizer state."""

    net: Mlp
    opt: AdamState = field(default=None)

    def __post_init__(self):
        if self.opt is None:
            self.opt = AdamState.zeros_like(self.net.params)

    @classmethod
    def build(cls, sizes, head, dropout, rng, lr, weight_decay=0.0):
        net = Mlp.init(sizes, head=head, dropout=dropout, rng=rng)
        return cls(net, AdamState.zeros_like(net.params, learning_rate=lr, weight_decay=weight_decay))

    def step(self, grads):
        adam_step(self.net.params, grads, self.opt)


def minibatches(n, batch_size, rng):
    """Shuffled index batches covering ``range(n)`` once."""
    order = rng.permutation(n)
    batch_size = max(1, min(int(batch_size), n))
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]
