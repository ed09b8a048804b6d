"""Observational datasets: the credit-lending simulator, CSV I/O, splits, scaling."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.special import expit

from .errors import (
    ConfigError,
    CsvParseError,
    EmptyFileError,
    MissingColumnError,
    NonBinaryActionError,
    NonNumericCellError,
    ShapeError,
)

MAX_GROUPS = 16


def _frozen(arr, dtype):
    out = np.array(arr, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Dataset:
    """Rows of (covariates x, sensitive group s, binary action a, outcome y).

    ``index`` holds the row ids of the dataset this one was cut from, so splits
    can be traced back. Arrays are read-only.
    """

    x: np.ndarray
    s: np.ndarray
    a: np.ndarray
    y: np.ndarray
    group_count: int
    feature_names: tuple = ()
    group_labels: tuple = ()
    index: np.ndarray = None

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        n = x.shape[0]
        object.__setattr__(self, "x", _frozen(x, float))
        object.__setattr__(self, "s", _frozen(self.s, np.int64))
        object.__setattr__(self, "a", _frozen(self.a, np.int64))
        object.__setattr__(self, "y", _frozen(self.y, float))
        idx = np.arange(n) if self.index is None else self.index
        object.__setattr__(self, "index", _frozen(idx, np.int64))
        if not self.feature_names:
            object.__setattr__(self, "feature_names", tuple(f"x{j + 1}" for j in range(x.shape[1])))
        if not self.group_labels:
            object.__setattr__(self, "group_labels", tuple(str(g) for g in range(self.group_count)))

        for name in ("s", "a", "y", "index"):
            if getattr(self, name).shape != (n,):
                raise ShapeError(f"column {name} has shape {getattr(self, name).shape}, expected ({n},)")
        if len(self.feature_names) != x.shape[1]:
            raise ShapeError("one feature name per covariate column required")
        if self.group_count < 1 or len(self.group_labels) != self.group_count:
            raise ValueError("group_count must be >= 1 and match group_labels")
        if n and (self.s.min() < 0 or self.s.max() >= self.group_count):
            raise ValueError(f"s must lie in 0..{self.group_count - 1}")
        if not np.isin(self.a, (0, 1)).all():
            raise ValueError("actions must be 0 or 1")
        if not (np.isfinite(self.x).all() and np.isfinite(self.y).all()):
            raise ValueError("dataset contains non-finite values")

    @property
    def n(self):
        return self.x.shape[0]

    def __len__(self):
        return self.n

    def subset(self, rows):
        rows = np.asarray(rows, dtype=np.int64)
        return replace(self, x=self.x[rows], s=self.s[rows], a=self.a[rows],
                       y=self.y[rows], index=self.index[rows])

    def onehot_s(self):
        return np.eye(self.group_count)[self.s]

    def with_x(self, x):
        return replace(self, x=x)


# ----------------------------------------------------------------------------
# simulator


@dataclass(frozen=True)
class SimConfig:
    n: int = 3000
    p_s: float = 0.5
    noise_sd: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.n <= 0:
            raise ConfigError("n must be positive")
        if not 0.0 < self.p_s < 1.0:
            raise ConfigError("p_s must lie in (0, 1)")
        if self.noise_sd < 0:
            raise ConfigError("noise_sd must be non-negative")


class SimOracle:
    """Ground-truth nuisance functions of the credit-lending simulator.

    All methods broadcast over array arguments. ``x_u`` is the group-independent
    covariate, ``x_s`` the one whose support shifts with ``s``.
    """

    @staticmethod
    def propensity(x_u, x_s, s):
        return expit(np.sin(2 * np.asarray(x_u, float)) + np.sin(2 * np.asarray(x_s, float))
                     + np.sin(2 * np.asarray(s, float)))

    @staticmethod
    def mu0(x_u, x_s, s):
        return np.zeros(np.broadcast(np.asarray(x_u), np.asarray(x_s), np.asarray(s)).shape)

    @staticmethod
    def mu1(x_u, x_s, s):
        x_u = np.asarray(x_u, float)
        x_s = np.asarray(x_s, float)
        s = np.asarray(s, float)
        # both indicators are zero at x_u == 0.5
        low = (x_u < 0.5) * np.sin(4 * x_s - 2)
        high = (x_u > 0.5) * (0.6 * s - 0.3)
        return low + high

    @classmethod
    def ite(cls, x_u, x_s, s):
        return cls.mu1(x_u, x_s, s) - cls.mu0(x_u, x_s, s)

    @staticmethod
    def columns(x):
        """Split a raw simulator covariate matrix into ``(x_u, x_s)``."""
        x = np.asarray(x, float)
        return x[..., 0], x[..., 1]


def simulate(cfg: SimConfig):
    """Draw a credit-lending dataset; returns ``(Dataset, SimOracle)``."""
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n
    s = (rng.random(n) < cfg.p_s).astype(np.int64)
    x_u = rng.uniform(-1.0, 1.0, n)
    x_s = s - 1.0 + rng.uniform(0.0, 1.0, n)
    oracle = SimOracle()
    a = (rng.random(n) < oracle.propensity(x_u, x_s, s)).astype(np.int64)
    y = a * oracle.mu1(x_u, x_s, s) + (1 - a) * oracle.mu0(x_u, x_s, s)
    y = y + cfg.noise_sd * rng.standard_normal(n)
    ds = Dataset(x=np.column_stack([x_u, x_s]), s=s, a=a, y=y, group_count=2,
                 feature_names=("x_u", "x_s"), group_labels=("0", "1"))
    return ds, oracle


# ----------------------------------------------------------------------------
# CSV


@dataclass(frozen=True)
class CsvSchema:
    """Column roles. ``s_order`` pins the group index order (default: first appearance)."""

    x: tuple
    s: str = "s"
    a: str = "a"
    y: str = "y"
    s_order: tuple = None


def _number(text, row, column):
    try:
        v = float(text)
    except ValueError:
        raise NonNumericCellError(f"non-numeric value {text!r}", row=row, column=column) from None
    if not math.isfinite(v):
        raise NonNumericCellError(f"non-finite value {text!r}", row=row, column=column)
    return v


def load_csv(path, schema: CsvSchema):
    """Read an observational dataset.

    Group labels in the ``s`` column are mapped to ``0..|S|-1`` by first
    appearance unless ``schema.s_order`` is given; the mapping is available as
    ``dataset.group_labels``.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise EmptyFileError(f"{path} is empty")
        header = [h.strip() for h in header]
        pos = {name: j for j, name in enumerate(header)}
        needed = list(schema.x) + [schema.s, schema.a, schema.y]
        for col in needed:
            if col not in pos:
                raise MissingColumnError(f"missing column in {path}", column=col)

        labels = list(schema.s_order) if schema.s_order is not None else []
        fixed = schema.s_order is not None
        xs, ss, as_, ys = [], [], [], []
        for r, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < len(header):
                raise CsvParseError("row has fewer cells than the header", row=r)
            xs.append([_number(row[pos[c]], r, c) for c in schema.x])
            label = row[pos[schema.s]].strip()
            if label not in labels:
                if fixed:
                    raise CsvParseError(f"group label {label!r} not in s_order", row=r, column=schema.s)
                labels.append(label)
                if len(labels) > MAX_GROUPS:
                    raise CsvParseError(f"more than {MAX_GROUPS} distinct groups", row=r, column=schema.s)
            ss.append(labels.index(label))
            a = _number(row[pos[schema.a]], r, schema.a)
            if a not in (0.0, 1.0):
                raise NonBinaryActionError(f"action must be 0 or 1, got {row[pos[schema.a]]!r}",
                                           row=r, column=schema.a)
            as_.append(int(a))
            ys.append(_number(row[pos[schema.y]], r, schema.y))
    if not ys:
        raise EmptyFileError(f"{path} has a header but no data rows")
    return Dataset(x=np.array(xs).reshape(len(ys), len(schema.x)), s=ss, a=as_, y=ys,
                   group_count=len(labels), feature_names=tuple(schema.x),
                   group_labels=tuple(labels))


def write_csv(ds: Dataset, path, s_name="s", a_name="a", y_name="y"):
    """Write ``ds`` with full float precision; readable by :func:`load_csv`."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(list(ds.feature_names) + [s_name, a_name, y_name])
        for i in range(ds.n):
            w.writerow([repr(float(v)) for v in ds.x[i]]
                       + [ds.group_labels[ds.s[i]], int(ds.a[i]), repr(float(ds.y[i]))])
    return path


def schema_for(ds: Dataset):
    return CsvSchema(x=tuple(ds.feature_names), s_order=tuple(ds.group_labels))


# ----------------------------------------------------------------------------
# splitting and scaling


def split(ds: Dataset, fractions=(0.8, 0.0, 0.2), seed=0):
    """Random disjoint train/validation/test partition."""
    fr = np.asarray(fractions, dtype=float)
    if fr.shape != (3,) or (fr < 0).any() or abs(fr.sum() - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must be three non-negative numbers summing to 1, got {fractions}")
    n = ds.n
    n_train = int(round(n * fr[0]))
    n_val = int(round(n * fr[1]))
    n_val = min(n_val, n - n_train)
    if n_train == 0:
        raise ConfigError("training split is empty")
    perm = np.random.default_rng(seed).permutation(n)
    parts = (perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:])
    return tuple(ds.subset(np.sort(p)) for p in parts)


@dataclass(frozen=True, eq=False)
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray
    constant: np.ndarray = field(default=None)

    def transform(self, x):
        return (np.asarray(x, float) - self.mean) / self.scale

    def to_dict(self):
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist(),
                "constant": [bool(c) for c in self.constant]}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["mean"], float), np.asarray(d["scale"], float),
                   np.asarray(d["constant"], bool))

    @classmethod
    def identity(cls, p):
        return cls(np.zeros(p), np.ones(p), np.zeros(p, bool))


def standardize(train: Dataset, *others: Dataset):
    """Scale covariates by training-set mean and (population) standard deviation.

    Constant training features are passed through unchanged and flagged in
    ``Standardizer.constant``. Returns ``(standardized datasets, Standardizer)``
    with the training set first.
    """
    if train.n == 0:
        raise ConfigError("cannot standardize on an empty training set")
    mean = train.x.mean(axis=0)
    sd = train.x.std(axis=0)
    constant = sd <= 1e-12 * np.maximum(1.0, np.abs(mean))
    mean = np.where(constant, 0.0, mean)
    sd = np.where(constant, 1.0, sd)
    std = Standardizer(mean, sd, constant)
    out = [d.with_x(std.transform(d.x)) if d.n else d for d in (train,) + others]
    return out, std
