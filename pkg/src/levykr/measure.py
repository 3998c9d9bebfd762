"""Weighted point clouds, initial laws and weak-convergence diagnostics."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from . import rng as _rng
from .errors import ConfigurationError

WEIGHT_TOL = 1e-12

# Test-function dictionary for weak_gap. Bump the version whenever the
# dictionary changes so stored diagnostics can be compared safely.
WEAK_GAP_DICTIONARY_VERSION = 1
WEAK_GAP_FREQUENCIES = (1, 2, 3, 4)


def _as_points(points):
    points = getattr(points, "positions", points)
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise ValueError(f"points must be an (N, d) array, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class DiscreteMeasure:
    """Probability measure sum_i w_i delta_{x_i} on R^d.

    ``support`` has shape (N, d) and ``weights`` shape (N,). Duplicate support
    points are allowed and are never merged.
    """

    support: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        x = _as_points(self.support)
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if len(x) == 0:
            raise ValueError("empty measure")
        if len(w) != len(x):
            raise ValueError("support and weights differ in length")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(w))):
            raise ValueError("measure contains non-finite values")
        if np.any(w < 0):
            raise ValueError("negative weight")
        if abs(w.sum() - 1.0) > WEIGHT_TOL:
            raise ValueError(f"weights sum to {w.sum()!r}, not 1")
        x.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "support", x)
        object.__setattr__(self, "weights", w)

    @classmethod
    def normalized(cls, support, weights):
        w = np.asarray(weights, dtype=float)
        return cls(support, w / w.sum())

    @property
    def dim(self):
        return self.support.shape[1]

    def __len__(self):
        return len(self.weights)

    def is_uniform(self):
        return bool(np.all(self.weights == self.weights[0]))

    def mean(self):
        return self.weights @ self.support

    def expect(self, f):
        """Integral of ``f`` (vectorised over rows) against the measure."""
        return float(self.weights @ np.asarray(f(self.support), dtype=float))

    def same_as(self, other):
        """True when both measures have bitwise identical atoms and weights."""
        return (
            self.support.shape == other.support.shape
            and np.array_equal(self.support, other.support)
            and np.array_equal(self.weights, other.weights)
        )

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x_{k + 1}" for k in range(self.dim)] + ["weight"])
            for row, wt in zip(self.support, self.weights):
                w.writerow([repr(float(v)) for v in row] + [repr(float(wt))])

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        if not header or header[-1] != "weight":
            raise ConfigurationError(f"{path}: last column must be 'weight'")
        data = np.array([[float(v) for v in r] for r in body if r], dtype=float)
        return cls.normalized(data[:, :-1], data[:, -1])


@dataclass(frozen=True)
class EnsembleSnapshot:
    """Particle positions at one time; each particle carries weight 1/N."""

    time: float
    positions: np.ndarray

    def __post_init__(self):
        pos = _as_points(self.positions)
        if len(pos) == 0:
            raise ValueError("empty ensemble")
        object.__setattr__(self, "positions", pos)

    @property
    def measure(self):
        return empirical_measure(self.positions)


def empirical_measure(points):
    """Uniform-weight measure on ``points`` (array or snapshot); order and duplicates are kept."""
    x = _as_points(points)
    if len(x) == 0:
        raise ValueError("empty ensemble")
    return DiscreteMeasure(x, np.full(len(x), 1.0 / len(x)))


def log_moment(mu):
    """sum_i w_i log(1 + |x_i|)."""
    r = np.linalg.norm(mu.support, axis=1)
    return float(mu.weights @ np.log1p(r))


# ---------------------------------------------------------------- initial laws

INITIAL_KINDS = ("dirac", "gaussian", "uniform-box", "mixture")


@dataclass(frozen=True)
class InitialLaw:
    """Initial distribution of the particle system.

    ``params`` per kind:

    * dirac: ``loc``
    * gaussian: ``mean``, ``std`` (scalar or per coordinate, independent axes)
    * uniform-box: ``low``, ``high``
    * mixture: ``components`` (list of InitialLaw or dicts), ``weights``
    """

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in INITIAL_KINDS:
            raise ConfigurationError(f"unknown initial law kind {self.kind!r}")
        p = dict(self.params)
        if self.kind == "dirac":
            p["loc"] = np.atleast_1d(np.asarray(p.get("loc", 0.0), dtype=float))
        elif self.kind == "gaussian":
            mean = np.atleast_1d(np.asarray(p.get("mean", 0.0), dtype=float))
            std = np.asarray(p.get("std", 1.0), dtype=float)
            std = np.broadcast_to(std, mean.shape).copy()
            if np.any(std < 0) or not np.all(np.isfinite(std)):
                raise ConfigurationError("gaussian std must be finite and nonnegative")
            p["mean"], p["std"] = mean, std
        elif self.kind == "uniform-box":
            low = np.atleast_1d(np.asarray(p.get("low", -1.0), dtype=float))
            high = np.atleast_1d(np.asarray(p.get("high", 1.0), dtype=float))
            if low.shape != high.shape or np.any(high <= low):
                raise ConfigurationError("uniform-box needs low < high coordinatewise")
            p["low"], p["high"] = low, high
        else:
            comps = [c if isinstance(c, InitialLaw) else InitialLaw.from_dict(c)
                     for c in p.get("components", [])]
            if not comps:
                raise ConfigurationError("mixture needs at least one component")
            w = np.asarray(p.get("weights", np.ones(len(comps))), dtype=float)
            if len(w) != len(comps) or np.any(w < 0) or w.sum() <= 0:
                raise ConfigurationError("invalid mixture weights")
            if len({c.dim for c in comps}) != 1:
                raise ConfigurationError("mixture components differ in dimension")
            p["components"], p["weights"] = tuple(comps), w / w.sum()
        object.__setattr__(self, "params", p)

    @classmethod
    def dirac(cls, loc):
        return cls("dirac", {"loc": loc})

    @classmethod
    def gaussian(cls, mean=0.0, std=1.0):
        return cls("gaussian", {"mean": mean, "std": std})

    @classmethod
    def uniform_box(cls, low, high):
        return cls("uniform-box", {"low": low, "high": high})

    @classmethod
    def mixture(cls, components, weights=None):
        return cls("mixture", {"components": components, "weights": weights
                               if weights is not None else np.ones(len(components))})

    @classmethod
    def from_dict(cls, spec):
        spec = dict(spec)
        kind = spec.pop("kind")
        return cls(kind, spec)

    def to_dict(self):
        out = {"kind": self.kind}
        for k, v in self.params.items():
            if k == "components":
                out[k] = [c.to_dict() for c in v]
            else:
                out[k] = np.asarray(v).tolist()
        return out

    @property
    def dim(self):
        p = self.params
        if self.kind == "dirac":
            return len(p["loc"])
        if self.kind == "gaussian":
            return len(p["mean"])
        if self.kind == "uniform-box":
            return len(p["low"])
        return p["components"][0].dim

    def _draw(self, gen, n):
        p = self.params
        d = self.dim
        if self.kind == "dirac":
            return np.tile(p["loc"], (n, 1))
        if self.kind == "gaussian":
            return p["mean"] + p["std"] * gen.standard_normal((n, d))
        if self.kind == "uniform-box":
            return p["low"] + (p["high"] - p["low"]) * gen.random((n, d))
        labels = gen.choice(len(p["components"]), size=n, p=p["weights"])
        out = np.empty((n, d))
        for k, comp in enumerate(p["components"]):
            idx = np.flatnonzero(labels == k)
            if len(idx):
                out[idx] = comp._draw(gen, len(idx))
        return out

    def cdf(self, x):
        """Distribution function of a 1-d law, vectorised over ``x``."""
        if self.dim != 1:
            raise ConfigurationError("cdf is only defined for 1-d laws")
        x = np.asarray(x, dtype=float)
        p = self.params
        if self.kind == "dirac":
            return (x >= p["loc"][0]).astype(float)
        if self.kind == "gaussian":
            s = p["std"][0]
            if s == 0:
                return (x >= p["mean"][0]).astype(float)
            return special.ndtr((x - p["mean"][0]) / s)
        if self.kind == "uniform-box":
            lo, hi = p["low"][0], p["high"][0]
            return np.clip((x - lo) / (hi - lo), 0.0, 1.0)
        return sum(w * c.cdf(x) for w, c in zip(p["weights"], p["components"]))


def sample(law, n, seed, stream=_rng.INIT):
    """``n`` i.i.d. draws from ``law``; bit-reproducible for a fixed seed."""
    if int(n) < 1:
        raise ConfigurationError("sample size must be at least 1")
    return law._draw(_rng.stream(seed, stream), int(n))


# ------------------------------------------------------------- weak diagnostics

def _weak_features(x):
    cols = [np.tanh(x)]
    for k in WEAK_GAP_FREQUENCIES:
        cols.append(np.cos(k * x) / k)
    return np.concatenate(cols, axis=1)


def weak_gap(mu, nu):
    """Largest discrepancy of mu and nu over a fixed bounded 1-Lipschitz dictionary.

    The dictionary is ``tanh(x_j)`` and ``cos(k x_j)/k`` for k = 1..4 on each
    coordinate.
    """
    if mu.dim != nu.dim:
        raise ValueError(f"dimension mismatch: {mu.dim} vs {nu.dim}")
    a = mu.weights @ _weak_features(mu.support)
    b = nu.weights @ _weak_features(nu.support)
    return float(np.max(np.abs(a - b)))
