"""Grid functions, mollification, space-time norms and the stability-bound terms.

Norms are taken on the box [-L, L]^d with the composite trapezoid rule. All
coefficient presets vanish well inside the default box, so truncating the
integrals to it loses nothing; a function that does not vanish on the box
boundary is treated as having infinite L^p norm.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, asdict, field
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy import integrate, signal

from . import rng as _rng
from .errors import ConfigurationError, HypothesisViolation, NumericalError, ResolutionError

BOUNDARY_TOL = 1e-12


# ------------------------------------------------------------------ grids

@dataclass(frozen=True)
class GridFunction:
    """Samples of a scalar function on the nodes -L + i h, i = 0..n-1, of [-L, L]^d.

    With ``times`` set, the leading axis of ``values`` indexes time.
    """

    values: np.ndarray
    L: float
    h: float
    times: Optional[np.ndarray] = None

    def __post_init__(self):
        if not self.h > 0:
            raise ConfigurationError("grid spacing must be positive")
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", v)
        if self.times is not None:
            object.__setattr__(self, "times", np.asarray(self.times, dtype=float))
            if v.shape[0] != len(self.times):
                raise ConfigurationError("values and times disagree")
        n = n_nodes(self.L, self.h)
        if any(s != n for s in self.spatial_shape):
            raise ConfigurationError(f"expected {n} nodes per axis, got {self.spatial_shape}")
        if self.dim not in (1, 2):
            raise ConfigurationError("grid functions live in d = 1 or 2")

    @property
    def spatial_shape(self):
        return self.values.shape[1:] if self.times is not None else self.values.shape

    @property
    def dim(self):
        return len(self.spatial_shape)

    @property
    def nodes1d(self):
        return grid_nodes(self.L, self.h)

    def slices(self):
        if self.times is None:
            return [self.values]
        return list(self.values)

    def with_values(self, values):
        return GridFunction(values, self.L, self.h, self.times)

    def to_csv(self, path):
        x = self.nodes1d
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            coords = [f"x_{k + 1}" for k in range(self.dim)]
            timed = self.times is not None
            w.writerow((["time"] if timed else []) + coords + ["value"])
            times = self.times if timed else [None]
            for t, sl in zip(times, self.slices()):
                for idx in np.ndindex(sl.shape):
                    row = [repr(float(x[i])) for i in idx] + [repr(float(sl[idx]))]
                    w.writerow(([repr(float(t))] if timed else []) + row)


def n_nodes(L, h):
    n = 2.0 * L / h
    if abs(n - round(n)) > 1e-9 * n:
        raise ConfigurationError("grid spacing must divide the box width")
    return int(round(n)) + 1


def grid_nodes(L, h):
    return -L + h * np.arange(n_nodes(L, h))


def grid_points(L, h, d):
    """All grid nodes as an (n^d, d) array, C order."""
    x = grid_nodes(L, h)
    if d == 1:
        return x[:, None]
    mesh = np.meshgrid(*([x] * d), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


@dataclass(frozen=True)
class AnalysisGrid:
    """Discretization used for all norm and Gamma evaluations."""

    L: float = 4.0
    h: float = 1.0 / 256
    d: int = 1
    horizon: float = 1.0
    time_nodes: int = 17

    @property
    def points(self):
        return grid_points(self.L, self.h, self.d)

    @property
    def shape(self):
        return (n_nodes(self.L, self.h),) * self.d

    def times(self):
        return np.linspace(0.0, self.horizon, self.time_nodes)


def _magnitude(vals):
    vals = np.asarray(vals, dtype=float)
    if vals.ndim == 1:
        return np.abs(vals)
    return np.sqrt(np.sum(vals.reshape(len(vals), -1) ** 2, axis=1))


def sample_grid(fn, grid, autonomous=True):
    """Pointwise Euclidean (Frobenius for matrices) magnitude of ``fn(t, x)``."""
    pts = grid.points
    if autonomous:
        return GridFunction(_magnitude(fn(0.0, pts)).reshape(grid.shape), grid.L, grid.h)
    ts = grid.times()
    vals = np.stack([_magnitude(fn(t, pts)).reshape(grid.shape) for t in ts])
    return GridFunction(vals, grid.L, grid.h, ts)


def scalar_grid(fn, L=4.0, h=1.0 / 256, d=1):
    """Signed samples of a scalar function fn(x) -> (N,) on the grid."""
    return GridFunction(np.asarray(fn(grid_points(L, h, d)), dtype=float).reshape(
        (n_nodes(L, h),) * d), L, h)


# ------------------------------------------------------------------ mollifier

def _profile_raw(r2):
    out = np.zeros_like(r2, dtype=float)
    m = r2 < 1.0
    out[m] = np.exp(-1.0 / (1.0 - r2[m]))
    return out


@lru_cache(maxsize=None)
def mollifier_normalizer(d):
    """c_d making c_d exp(-1/(1-|x|^2)) a unit-mass density on the unit ball."""
    if d == 1:
        mass = 2 * integrate.quad(lambda x: _profile_raw(np.array(x * x)), 0, 1,
                                  epsabs=1e-14, epsrel=1e-13)[0]
    elif d == 2:
        mass = 2 * np.pi * integrate.quad(lambda r: _profile_raw(np.array(r * r)) * r, 0, 1,
                                          epsabs=1e-14, epsrel=1e-13)[0]
    else:
        raise ConfigurationError("mollifier available for d = 1, 2")
    return 1.0 / mass


@dataclass(frozen=True)
class Mollifier:
    """chi(x) = c_d exp(-1/(1-|x|^2)) on |x| < 1; chi_eps(x) = eps^-d chi(x/eps)."""

    dim: int = 1

    @property
    def normalizer(self):
        return mollifier_normalizer(self.dim)

    def profile(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return self.normalizer * _profile_raw(np.sum(x * x, axis=1))

    def scaled(self, x, eps):
        return self.profile(np.asarray(x, dtype=float) / eps) / eps ** self.dim

    def stencil(self, eps, h):
        """Discrete chi_eps on grid offsets, rescaled to unit discrete mass."""
        k = int(np.floor(eps / h))
        off = h * np.arange(-k, k + 1)
        if self.dim == 1:
            w = self.scaled(off[:, None], eps)
        else:
            mesh = np.meshgrid(off, off, indexing="ij")
            w = self.scaled(np.stack([m.ravel() for m in mesh], axis=1), eps).reshape(len(off), -1)
        return w / (w.sum() * h ** self.dim)


def mollify(f, eps):
    """f * chi_eps by discrete convolution; zero padding outside the box."""
    if not 0 < eps < 1:
        raise ConfigurationError("eps must lie in (0, 1)")
    if eps < 2 * f.h:
        raise ResolutionError(f"eps={eps} is below twice the grid spacing {f.h}")
    k = Mollifier(f.dim).stencil(eps, f.h) * f.h ** f.dim
    if f.dim == 1:
        out = [np.convolve(s, k, mode="same") for s in f.slices()]
    else:
        out = [signal.convolve2d(s, k, mode="same", boundary="fill") for s in f.slices()]
    vals = np.stack(out) if f.times is not None else out[0]
    return f.with_values(vals)


# ------------------------------------------------------------------ norms

@dataclass(frozen=True)
class NormSpec:
    """Exponents of L^q(0, T; L^p(R^d)).

    ``p`` is the spatial exponent and ``q`` the temporal one. ``conjugate``
    is p/(p-1), the exponent paired with p in the density factor.
    """

    p: float = 2.0
    q: float = 1.0
    horizon: float = 1.0

    def __post_init__(self):
        if not self.p >= 1 or not self.q >= 1:
            raise ConfigurationError("exponents must be at least 1")

    @property
    def conjugate(self):
        if self.p == 1:
            return np.inf
        if np.isinf(self.p):
            return 1.0
        return self.p / (self.p - 1.0)


def _trapz_nd(arr, h):
    out = arr
    for _ in range(arr.ndim):
        out = integrate.trapezoid(out, dx=h, axis=0)
    return float(out)


def spatial_norm(values, h, p):
    a = np.abs(np.asarray(values, dtype=float))
    if not np.all(np.isfinite(a)):
        raise NumericalError("non-finite values in norm")
    if np.isinf(p):
        return float(a.max())
    return _trapz_nd(a ** p, h) ** (1.0 / p)


def lq_lp_norm(f, spec):
    """(int_0^T ||f(t)||_{L^p}^q dt)^(1/q); q or p may be inf.

    A time-independent ``f`` is treated as constant on [0, T].
    """
    if f.times is None:
        s = spatial_norm(f.values, f.h, spec.p)
        return s if np.isinf(spec.q) else s * spec.horizon ** (1.0 / spec.q)
    s = np.array([spatial_norm(v, f.h, spec.p) for v in f.values])
    if np.isinf(spec.q):
        return float(s.max())
    return float(integrate.trapezoid(s ** spec.q, f.times) ** (1.0 / spec.q))


def vanishes_on_boundary(f, tol=BOUNDARY_TOL):
    scale = max(1.0, float(np.max(np.abs(f.values))))
    for sl in f.slices():
        edges = [sl.take(0, axis=a) for a in range(sl.ndim)] + \
                [sl.take(-1, axis=a) for a in range(sl.ndim)]
        if max(float(np.max(np.abs(e))) for e in edges) > tol * scale:
            return False
    return True


def field_norm(fn, grid, spec, autonomous=True):
    """L^q(L^p) norm of |fn(t, x)| over the grid; inf if fn is not supported in the box."""
    g = sample_grid(fn, grid, autonomous)
    if not vanishes_on_boundary(g):
        return np.inf
    return lq_lp_norm(g, spec)


def _gamma(fn, nu, qe, pe, grid, autonomous, order):
    """sum_k w_k ||fn(., ., z_k)||^qe_{L^qe(L^pe)} over the jump quadrature."""
    nodes, weights = nu.quadrature(order)
    spec = NormSpec(pe, qe, grid.horizon)
    pts = grid.points
    total = 0.0
    for z, w in zip(nodes, weights):
        zz = np.broadcast_to(z, pts.shape)
        val = field_norm(lambda t, x: fn(t, x, zz), grid, spec, autonomous)
        if not np.isfinite(val):
            return np.inf
        total += w * val ** qe
    return float(total)


def gamma_quantity(coeffs, nu, j, qe, pe, grid=AnalysisGrid(), order=64):
    """int ||grad_x^j g(z)||^qe_{L^qe(L^pe)} nu(dz) for j in {0, 1}.

    Returns inf when the integrand is not finite on R^d (the coefficient does
    not vanish on the analysis box boundary or produces non-finite values).
    """
    if j not in (0, 1):
        raise ConfigurationError("j must be 0 or 1")
    if getattr(coeffs, "jump_is_zero", False):
        return 0.0
    fn = coeffs.jump if j == 0 else coeffs.jump_gradient
    try:
        return _gamma(fn, nu, qe, pe, grid, coeffs.autonomous, order)
    except NumericalError:
        return np.inf


# ------------------------------------------------------------------ maximal function

def _ball_average_1d(a, k):
    s = np.concatenate([[0.0], np.cumsum(a)])
    n = len(a)
    i = np.arange(n)
    hi = np.minimum(i + k + 1, n)
    lo = np.maximum(i - k, 0)
    return (s[hi] - s[lo]) / (2 * k + 1)


def maximal_function(f, r_max):
    """Discrete Hardy-Littlewood maximal function of |f|.

    Sup over ball averages with dyadic radii h, 2h, 4h, ... <= r_max, and the
    node value itself (the r -> 0 limit). Averages treat the outside of the box
    as zero.
    """
    if f.times is not None:
        raise ConfigurationError("maximal_function expects a time-independent grid function")
    if r_max > f.L:
        raise ConfigurationError("r_max must not exceed the box half-width")
    a = np.abs(f.values)
    out = a.copy()
    k = 1
    while k * f.h <= r_max * (1 + 1e-12):
        if f.dim == 1:
            avg = _ball_average_1d(a, k)
        else:
            off = np.arange(-k, k + 1)
            disk = (off[:, None] ** 2 + off[None, :] ** 2 <= k * k).astype(float)
            avg = signal.convolve2d(a, disk / disk.sum(), mode="same", boundary="fill")
        np.maximum(out, avg, out=out)
        k *= 2
    return f.with_values(out)


class LinearShape:
    """phi(x) = slope . x, a shape with constant gradient for the maximal-function checks."""

    def __init__(self, slope):
        self.slope = np.atleast_1d(np.asarray(slope, dtype=float))
        self.name = f"linear({self.slope.tolist()})"

    def value(self, x):
        return x @ self.slope

    def grad(self, x):
        return np.broadcast_to(self.slope, x.shape).copy()


@dataclass
class Lemma1Report:
    c_hat: float
    pairs_used: int
    maximal_ratios: dict


def lemma1_check(phi, n_pairs=10_000, seed=0, L=4.0, h=1.0 / 64, d=1, ps=(2, 4)):
    """Empirical constants for the maximal-function inequalities.

    ``c_hat`` is the largest |phi(x)-phi(y)| / (|x-y| (M|grad phi|(x) + M|grad phi|(y)))
    over random node pairs; ``maximal_ratios[p]`` is ||M phi||_p / ||phi||_p.
    """
    pts = grid_points(L, h, d)
    shape = (n_nodes(L, h),) * d
    vals = np.asarray(phi.value(pts), dtype=float)
    gmag = np.linalg.norm(phi.grad(pts), axis=1)
    mgrad = maximal_function(GridFunction(gmag.reshape(shape), L, h), L).values.ravel()
    gen = _rng.stream(seed, _rng.MISC)
    i = gen.integers(0, len(pts), n_pairs)
    j = gen.integers(0, len(pts), n_pairs)
    keep = i != j
    i, j = i[keep], j[keep]
    num = np.abs(vals[i] - vals[j])
    den = np.linalg.norm(pts[i] - pts[j], axis=1) * (mgrad[i] + mgrad[j])
    ratio = np.divide(num, den, out=np.where(num > 0, np.inf, 0.0), where=den > 0)
    f = GridFunction(vals.reshape(shape), L, h)
    mf = maximal_function(f, L)
    ratios = {}
    for p in ps:
        base = spatial_norm(f.values, h, p)
        ratios[p] = spatial_norm(mf.values, h, p) / base if base > 0 else 0.0
    return Lemma1Report(float(ratio.max()) if len(ratio) else 0.0, int(len(ratio)), ratios)


# ------------------------------------------------------------------ bound terms

@dataclass
class CoefficientGaps:
    """Unscaled difference norms between two coefficient sets."""

    drift: float   # ||b1 - b2||_{L^1(L^p)}
    jump2: float   # int ||g1 - g2||^2_{L^2(L^2p)} nu(dz)
    jump4: float   # int ||g1 - g2||^4_{L^4(L^4p)} nu(dz)


def coefficient_gaps(field1, field2, nu, spec, grid=AnalysisGrid(), order=64):
    auto = field1.autonomous and field2.autonomous
    p = spec.p
    drift = field_norm(lambda t, x: field1.drift(t, x) - field2.drift(t, x), grid,
                       NormSpec(p, 1.0, grid.horizon), auto)

    def dg(t, x, z):
        return np.asarray(field1.jump(t, x, z)) - np.asarray(field2.jump(t, x, z))

    if field1.jump_is_zero and field2.jump_is_zero:
        j2 = j4 = 0.0
    else:
        j2 = _gamma(dg, nu, 2.0, 2.0 * p, grid, auto, order)
        j4 = _gamma(dg, nu, 4.0, 4.0 * p, grid, auto, order)
    return CoefficientGaps(drift, j2, j4)


def delta_n(field1, field_n, nu, spec, grid=AnalysisGrid(), order=64):
    """||b1-bn||_{L1(Lp)} + (int ||g1-gn||^2_{L2(L2p)})^(1/2) + (int ||g1-gn||^4_{L4(L4p)})^(1/4)."""
    gaps = coefficient_gaps(field1, field_n, nu, spec, grid, order)
    parts = (gaps.drift, gaps.jump2, gaps.jump4)
    if not all(np.isfinite(v) for v in parts):
        raise HypothesisViolation("coefficient difference has an infinite norm")
    return gaps.drift + gaps.jump2 ** 0.5 + gaps.jump4 ** 0.25


BOUND_COLUMNS = ("delta", "p", "q_conjugate", "initial_distance", "term_b", "term_g2",
                 "term_g4", "term_grad_b", "term_grad_g2", "term_grad_g4", "rho_norm_1",
                 "rho_norm_2", "drift_gap", "jump_gap2", "jump_gap4")


@dataclass
class BoundReport:
    """Every term on the right side of the stability estimate, without constants.

    The estimate reads, with unknown constants C, C' depending on d and p:

        D~(mu1_t, mu2_t) <= initial_distance
            + C ||rho2||_{Linf(Lq)} (term_b + term_g2 + term_g4)
            + C' (||rho1|| + ||rho2||) (term_grad_b + term_grad_g2 + term_grad_g4)
    """

    delta: float
    p: float
    q_conjugate: float
    initial_distance: float
    drift_gap: float
    jump_gap2: float
    jump_gap4: float
    term_grad_b: float
    term_grad_g2: float
    term_grad_g4: float
    rho_norm_1: float
    rho_norm_2: float
    term_b: float = field(init=False)
    term_g2: float = field(init=False)
    term_g4: float = field(init=False)

    def __post_init__(self):
        d = self.delta
        self.term_b = self.drift_gap / d
        self.term_g2 = self.jump_gap2 / d ** 2
        self.term_g4 = self.jump_gap4 / d ** 4

    @property
    def difference_bracket(self):
        return self.term_b + self.term_g2 + self.term_g4

    @property
    def gradient_bracket(self):
        return self.term_grad_b + self.term_grad_g2 + self.term_grad_g4

    def with_delta(self, delta):
        kw = {k: v for k, v in asdict(self).items() if k not in ("term_b", "term_g2", "term_g4")}
        kw["delta"] = delta
        return BoundReport(**kw)

    def row(self):
        return [getattr(self, c) for c in BOUND_COLUMNS]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(BOUND_COLUMNS)
            w.writerow([repr(float(v)) for v in self.row()])


def check_hypotheses(coeffs, nu, spec, grid=AnalysisGrid(), order=64):
    """Raise HypothesisViolation unless b in L^1(W^{1,p}) and the Gamma sums are finite."""
    auto = coeffs.autonomous
    l1p = NormSpec(spec.p, 1.0, grid.horizon)
    for label, fn in (("b", coeffs.drift), ("grad b", coeffs.drift_gradient)):
        if not np.isfinite(field_norm(fn, grid, l1p, auto)):
            raise HypothesisViolation(f"{coeffs.name}: {label} is not in L^1(L^p) on the box")
    for j in (0, 1):
        g = gamma_quantity(coeffs, nu, j, 2.0, 2.0 * spec.p, grid, order) + \
            gamma_quantity(coeffs, nu, j, 4.0, 4.0 * spec.p, grid, order)
        if not np.isfinite(g):
            raise HypothesisViolation(f"{coeffs.name}: Gamma_{j} sums are infinite")


def theorem_terms(field1, field2, nu, rho_bounds, delta, initial_distance,
                  spec=NormSpec(), grid=AnalysisGrid(), order=64):
    """BoundReport for two coefficient sets; ``rho_bounds`` = (||rho1||, ||rho2||) in Linf(Lq)."""
    if not delta > 0:
        raise ConfigurationError("delta must be positive")
    for f in (field1, field2):
        check_hypotheses(f, nu, spec, grid, order)
    gaps = coefficient_gaps(field1, field2, nu, spec, grid, order)
    l1p = NormSpec(spec.p, 1.0, grid.horizon)
    grad_b = field_norm(field1.drift_gradient, grid, l1p, field1.autonomous)
    grad_g2 = gamma_quantity(field1, nu, 1, 2.0, 2.0 * spec.p, grid, order)
    grad_g4 = gamma_quantity(field1, nu, 1, 4.0, 4.0 * spec.p, grid, order)
    r1, r2 = (float(r) for r in rho_bounds)
    return BoundReport(float(delta), spec.p, spec.conjugate, float(initial_distance),
                       gaps.drift, gaps.jump2, gaps.jump4, grad_b, grad_g2, grad_g4, r1, r2)


# ------------------------------------------------------------------ density bounds

def kde_lq_norm(snapshots, q, L=4.0, h=1.0 / 64):
    """sup over snapshots of ||rho_KDE||_{L^q}, Gaussian kernel, bandwidth N^(-1/5) std."""
    best = 0.0
    for s in snapshots:
        x = s.positions
        n, d = x.shape
        std = float(np.mean(np.std(x, axis=0)))
        bw = max(std, 1e-12) * n ** (-0.2)
        pts = grid_points(L, h, d)
        dens = np.zeros(len(pts))
        for lo in range(0, len(pts), 2048):
            diff = pts[lo:lo + 2048, None, :] - x[None, :, :]
            dens[lo:lo + 2048] = np.exp(-0.5 * np.sum(diff ** 2, axis=2) / bw ** 2).sum(1)
        dens /= n * (np.sqrt(2 * np.pi) * bw) ** d
        best = max(best, spatial_norm(dens.reshape((n_nodes(L, h),) * d), h, q))
    return best
