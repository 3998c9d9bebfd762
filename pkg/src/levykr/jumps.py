"""Truncated power-law Levy measures on an annulus eps0 <= |z| < R."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConfigurationError, NumericalError

SIGN_MODES = ("symmetric", "one-sided")
DEFAULT_ORDER = 64
_PANELS = 4
_ANGLES_2D = 32


@lru_cache(maxsize=None)
def _gauss_legendre(n):
    return np.polynomial.legendre.leggauss(n)


@dataclass(frozen=True)
class JumpMeasure:
    """nu(dz) = |z|^(-d-alpha) dz restricted to eps0 <= |z| < R.

    In one dimension ``sign_mode="one-sided"`` keeps only z > 0. The measure
    has finite mass, so the driving Poisson random measure is a compound
    Poisson process and can be simulated exactly.
    """

    dim: int = 1
    alpha: float = 1.0
    inner_cutoff: float = 0.1
    outer_cutoff: float = 1.0
    sign_mode: str = "symmetric"

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ConfigurationError("only d = 1 and d = 2 are supported")
        if not 0 < self.alpha < 2:
            raise ConfigurationError("alpha must lie in (0, 2)")
        if not 0 < self.inner_cutoff < self.outer_cutoff:
            raise ConfigurationError("need 0 < inner_cutoff < outer_cutoff")
        if self.sign_mode not in SIGN_MODES:
            raise ConfigurationError(f"unknown sign_mode {self.sign_mode!r}")
        if self.dim == 2 and self.sign_mode != "symmetric":
            raise ConfigurationError("one-sided measures exist only for d = 1")

    @classmethod
    def from_dict(cls, spec):
        return cls(**spec)

    def to_dict(self):
        return {"dim": self.dim, "alpha": self.alpha, "inner_cutoff": self.inner_cutoff,
                "outer_cutoff": self.outer_cutoff, "sign_mode": self.sign_mode}

    @property
    def symmetric(self):
        return self.sign_mode == "symmetric"

    @property
    def angular_mass(self):
        if self.dim == 2:
            return 2.0 * np.pi
        return 2.0 if self.symmetric else 1.0

    @property
    def total_mass(self):
        return total_mass(self)

    def radial_moment(self, q):
        """Closed form of the integral of |z|^q against nu."""
        a, e0, r = self.alpha, self.inner_cutoff, self.outer_cutoff
        if np.isclose(q, a):
            return self.angular_mass * np.log(r / e0)
        return self.angular_mass * (r ** (q - a) - e0 ** (q - a)) / (q - a)

    def radial_cdf(self, r):
        a, e0, big = self.alpha, self.inner_cutoff, self.outer_cutoff
        r = np.clip(np.asarray(r, dtype=float), e0, big)
        return (e0 ** -a - r ** -a) / (e0 ** -a - big ** -a)

    def radial_quantile(self, u):
        a, e0, big = self.alpha, self.inner_cutoff, self.outer_cutoff
        top = e0 ** -a
        r = (top - np.asarray(u, dtype=float) * (top - big ** -a)) ** (-1.0 / a)
        # guard the half-open upper end against rounding
        return np.minimum(r, np.nextafter(big, 0.0))

    def sample(self, gen, n):
        return sample_jump(self, gen, n)

    def quadrature(self, order=DEFAULT_ORDER):
        """Nodes (Q, d) and weights (Q,) integrating against nu.

        Radial part: composite Gauss-Legendre in log|z| with ``order`` nodes.
        Directions: both signs in d = 1 (symmetric), 32 equispaced angles in
        d = 2; both sets are closed under z -> -z, so odd integrands vanish.
        """
        return _quadrature(self, int(order))


@lru_cache(maxsize=64)
def _quadrature(nu, order):
    per = max(order // _PANELS, 1)
    t, w = _gauss_legendre(per)
    edges = np.linspace(np.log(nu.inner_cutoff), np.log(nu.outer_cutoff), _PANELS + 1)
    us, ws = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        half = 0.5 * (hi - lo)
        us.append(lo + half * (t + 1.0))
        ws.append(half * w)
    u = np.concatenate(us)
    # dr r^(-1-alpha) = du exp(-alpha u)
    radial_w = np.concatenate(ws) * np.exp(-nu.alpha * u)
    r = np.exp(u)
    if nu.dim == 1:
        if nu.symmetric:
            nodes = np.concatenate([r, -r])[:, None]
            weights = np.concatenate([radial_w, radial_w])
        else:
            nodes, weights = r[:, None], radial_w
    else:
        theta = 2.0 * np.pi * np.arange(_ANGLES_2D) / _ANGLES_2D
        dirs = np.stack([np.cos(theta), np.sin(theta)], axis=1)
        nodes = (r[:, None, None] * dirs[None, :, :]).reshape(-1, 2)
        weights = np.repeat(radial_w, _ANGLES_2D) * (2.0 * np.pi / _ANGLES_2D)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


@dataclass(frozen=True)
class AtomicJumpMeasure:
    """Finite jump measure sum_k w_k delta_{z_k}; handy for hand-checked cases."""

    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.nodes, dtype=float)
        if z.ndim == 1:
            z = z[:, None]
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if len(z) != len(w) or np.any(w < 0) or w.sum() <= 0:
            raise ConfigurationError("invalid atomic jump measure")
        object.__setattr__(self, "nodes", z)
        object.__setattr__(self, "weights", w)

    @property
    def dim(self):
        return self.nodes.shape[1]

    @property
    def total_mass(self):
        return float(self.weights.sum())

    @property
    def symmetric(self):
        key = {tuple(z): w for z, w in zip(self.nodes, self.weights)}
        return all(key.get(tuple(-np.asarray(z))) == w for z, w in key.items())

    def quadrature(self, order=None):
        return self.nodes, self.weights

    def sample(self, gen, n):
        idx = gen.choice(len(self.weights), size=n, p=self.weights / self.weights.sum())
        return self.nodes[idx]


def total_mass(nu):
    """lambda = nu({eps0 <= |z| < R}), in closed form."""
    a, e0, r = nu.alpha, nu.inner_cutoff, nu.outer_cutoff
    if e0 >= r:
        raise ConfigurationError("inner cutoff must be below outer cutoff")
    return nu.angular_mass * (e0 ** -a - r ** -a) / a


def sample_jump(nu, gen, n=1):
    """``n`` i.i.d. marks from nu / lambda, shape (n, d).

    The radius comes from the inverse radial CDF; the direction is a uniform
    sign (d = 1) or a uniform angle (d = 2).
    """
    n = int(n)
    r = nu.radial_quantile(gen.random(n))
    if nu.dim == 1:
        if nu.symmetric:
            s = np.where(gen.random(n) < 0.5, -1.0, 1.0)
        else:
            s = np.ones(n)
        return (r * s)[:, None]
    theta = 2.0 * np.pi * gen.random(n)
    return r[:, None] * np.stack([np.cos(theta), np.sin(theta)], axis=1)


def compensator_drift(field, nu, t, x, order=DEFAULT_ORDER):
    """-int g(t, x, z) nu(dz) for each row of ``x``; returns shape (N, d).

    Odd jump coefficients against a symmetric measure give exactly zero.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if getattr(field, "jump_is_zero", False) or (
            nu.symmetric and getattr(field, "jump_odd", False)):
        return np.zeros_like(x)
    nodes, weights = nu.quadrature(order)
    n, q = len(x), len(weights)
    xs = np.repeat(x, q, axis=0)
    zs = np.tile(nodes, (n, 1))
    vals = np.asarray(field.jump(t, xs, zs), dtype=float).reshape(n, q, -1)
    out = -np.einsum("nqd,q->nd", vals, weights)
    if not np.all(np.isfinite(out)):
        raise NumericalError("compensator quadrature produced non-finite values")
    return out
