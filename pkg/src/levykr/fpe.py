"""Finite-volume solver for the 1-d nonlocal Fokker-Planck equation

    d/dt mu_t = (L^b + L^g_nu)^* mu_t

in pre-compensated form: the compensator -int g nu(dz) is folded into the
drift, and jumps move mass from x to x + g(t, x, z) at rate nu(dz). This is
the same split the particle simulator uses, so the two can be compared
directly.

Mass that leaves the box is booked in ``escaped``; interior mass plus escaped
mass is conserved by every step.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import sparse

from .errors import CFLViolation, ConfigurationError, NumericalError, ResolutionError
from .jumps import DEFAULT_ORDER, compensator_drift
from .measure import DiscreteMeasure

ESCAPE_REJECT = 1e-6


@dataclass(frozen=True)
class DensityGrid:
    """Cell masses on [-L, L] with spacing h at time t."""

    masses: np.ndarray
    L: float
    h: float
    t: float = 0.0
    escaped: float = 0.0

    def __post_init__(self):
        m = np.asarray(self.masses, dtype=float)
        n = 2.0 * self.L / self.h
        if abs(n - round(n)) > 1e-9 * n or len(m) != int(round(n)):
            raise ConfigurationError("masses must have 2L/h entries")
        if np.any(m < 0):
            raise ValueError("negative cell mass")
        m.setflags(write=False)
        object.__setattr__(self, "masses", m)

    @classmethod
    def from_law(cls, law, L=4.0, h=1.0 / 128):
        """Cell masses of a 1-d InitialLaw, renormalized to the box."""
        n = int(round(2 * L / h))
        edges = -L + h * np.arange(n + 1)
        m = np.diff(law.cdf(edges))
        m = np.clip(m, 0.0, None)
        if m.sum() <= 0:
            raise ConfigurationError("initial law puts no mass in the box")
        return cls(m / m.sum(), L, h)

    @property
    def centers(self):
        return -self.L + self.h * (np.arange(len(self.masses)) + 0.5)

    @property
    def density(self):
        return self.masses / self.h

    @property
    def total(self):
        """Interior plus escaped mass; 1 up to rounding."""
        return float(self.masses.sum()) + self.escaped

    def lq_norm(self, q):
        rho = self.density
        if np.isinf(q):
            return float(rho.max())
        return float(np.sum(rho ** q) * self.h) ** (1.0 / q)

    def to_rows(self):
        return [(self.t, c, m) for c, m in zip(self.centers, self.masses)]


@dataclass(frozen=True)
class FpeConfig:
    horizon: float = 1.0
    dt: float = 1.0 / 512
    order: int = DEFAULT_ORDER
    cfl: float = 0.5
    record_times: tuple = (1.0,)

    def __post_init__(self):
        if not 0 < self.dt <= self.horizon:
            raise ConfigurationError("need 0 < dt <= horizon")
        if not 0 < self.cfl <= 0.5:
            # a cell drained through both faces needs Courant <= 1/2 to stay nonnegative
            raise ConfigurationError("CFL safety factor must lie in (0, 1/2]")
        steps = self.horizon / self.dt
        if abs(steps - round(steps)) > 1e-9 * steps:
            raise ConfigurationError("dt must divide the horizon")
        object.__setattr__(self, "record_times",
                           tuple(sorted({float(t) for t in self.record_times})))

    @property
    def steps(self):
        return int(round(self.horizon / self.dt))

    @classmethod
    def from_dict(cls, spec):
        spec = dict(spec)
        if "record_times" in spec:
            spec["record_times"] = tuple(spec["record_times"])
        return cls(**spec)


def effective_drift(coeffs, nu, t=0.0, order=DEFAULT_ORDER):
    """x -> b(t, x) - int g(t, x, z) nu(dz) for 1-d arrays x."""
    def b_eff(x):
        pts = np.asarray(x, dtype=float)[:, None]
        v = np.asarray(coeffs.drift(t, pts), dtype=float)[:, 0]
        return v + compensator_drift(coeffs, nu, t, pts, order)[:, 0]
    return b_eff


def _face_velocity(rho, b_eff):
    faces = -rho.L + rho.h * np.arange(len(rho.masses) + 1)
    return np.asarray(b_eff(faces), dtype=float)


def _advect(rho, v, dt):
    if len(v) != len(rho.masses) + 1:
        raise ConfigurationError("need one velocity per cell face")
    m = rho.masses
    c = dt / rho.h
    padded = np.concatenate([[0.0], m, [0.0]])
    # flux through face k, positive to the right
    flux = c * (np.maximum(v, 0.0) * padded[:-1] + np.minimum(v, 0.0) * padded[1:])
    new = m + flux[:-1] - flux[1:]
    out = -flux[0] + flux[-1]
    return replace(rho, masses=_nonnegative(new, "drift"), escaped=rho.escaped + out)


def _nonnegative(m, label):
    if m.min() < 0:
        raise NumericalError(f"{label} step produced a negative mass {m.min():.3g}")
    return m


def drift_step(rho, b_eff, dt, cfl=0.5):
    """First-order upwind transport of cell masses with velocity ``b_eff``.

    ``b_eff`` is a callable of 1-d positions, evaluated at cell faces. Raises
    CFLViolation when dt max|b_eff| > cfl h.
    """
    v = _face_velocity(rho, b_eff)
    vmax = float(np.max(np.abs(v)))
    if vmax * dt > cfl * rho.h:
        raise CFLViolation(f"dt={dt} violates dt max|b_eff| <= {cfl} h")
    return _advect(rho, v, dt)


@dataclass
class _JumpOperator:
    """Per unit time: ``gain @ m`` arrives, ``leave * m`` departs, ``escape @ m`` exits.

    Deposits back into the source cell are no-ops and appear in neither
    ``gain`` nor ``leave``, so g = 0 gives the identity exactly.
    """

    gain: sparse.csr_matrix
    leave: np.ndarray
    rate: float
    escape: np.ndarray


def _jump_operator(rho, g, nu, t, order):
    nodes, weights = nu.quadrature(order)
    n, q = len(rho.masses), len(weights)
    x = np.repeat(rho.centers, q)[:, None]
    z = np.tile(nodes, (n, 1))
    disp = np.asarray(g(t, x, z), dtype=float)[:, 0]
    owner = np.repeat(np.arange(n), q)
    s = owner + disp / rho.h
    lo = np.floor(s)
    frac = s - lo
    lo = lo.astype(np.int64)
    w = np.tile(weights, n)
    upper = w * frac
    lower = w - upper
    rows = np.concatenate([lo, lo + 1])
    vals = np.concatenate([lower, upper])
    cols = np.concatenate([owner, owner])
    inside = (rows >= 0) & (rows < n)
    moved = inside & (rows != cols) & (vals != 0)
    gain = sparse.csr_matrix((vals[moved], (rows[moved], cols[moved])), shape=(n, n))
    escape = np.bincount(cols[~inside], weights=vals[~inside], minlength=n)
    leave = np.bincount(cols[moved], weights=vals[moved], minlength=n) + escape
    return _JumpOperator(gain, leave, float(np.sum(weights)), escape)


def _apply_jumps(rho, op, dt):
    if dt * op.rate > 1.0 + 1e-12:
        raise CFLViolation(f"dt * lambda = {dt * op.rate} exceeds 1")
    m = rho.masses
    new = (m - dt * op.leave * m) + dt * (op.gain @ m)
    out = dt * float(op.escape @ m)
    return replace(rho, masses=_nonnegative(new, "jump"), escaped=rho.escaped + out)


def jump_step(rho, g, nu, dt, t=0.0, order=DEFAULT_ORDER):
    """Explicit Euler for d/dt rho = int (T_z rho - rho) nu(dz).

    T_z moves the mass of cell i to x_i + g(t, x_i, z), split linearly between
    the two nearest cell centers. ``g`` is a callable g(t, x, z) on (N, 1)
    arrays, or a CoefficientField.
    """
    fn = g.jump if hasattr(g, "jump") else g
    return _apply_jumps(rho, _jump_operator(rho, fn, nu, t, order), dt)


@dataclass
class FpeTrajectory:
    snapshots: list
    ledger: np.ndarray = field(repr=False)
    min_mass: float = 0.0

    def __iter__(self):
        return iter(self.snapshots)

    def __getitem__(self, i):
        return self.snapshots[i]

    def __len__(self):
        return len(self.snapshots)

    @property
    def escaped(self):
        return self.snapshots[-1].escaped if self.snapshots else 0.0

    def at(self, t):
        for s in self.snapshots:
            if abs(s.t - t) <= 1e-9:
                return s
        raise KeyError(f"time {t} was not recorded")

    def lq_norm(self, q):
        """sup over recorded snapshots of ||rho_t||_{L^q}."""
        return max(s.lq_norm(q) for s in self.snapshots)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "center", "mass"])
            for s in self.snapshots:
                for t, c, m in s.to_rows():
                    w.writerow([repr(float(t)), repr(float(c)), repr(float(m))])


def solve(rho0, coeffs, nu, cfg):
    """March rho0 over [0, T]: each step applies jump_step then drift_step.

    Returns snapshots at ``cfg.record_times`` plus the mass ledger (interior
    + escaped) after every step.
    """
    if coeffs.dim != 1:
        raise ConfigurationError("the grid solver is one-dimensional")
    rec = {int(round(t / cfg.dt)): t for t in cfg.record_times}
    rho = replace(rho0, t=0.0)
    snaps = [rho] if 0 in rec else []
    ledger = np.empty(cfg.steps + 1)
    ledger[0] = rho.total
    min_mass = float(rho.masses.min())
    op = v = None
    for k in range(cfg.steps):
        t = k * cfg.dt
        if op is None or not coeffs.autonomous:
            op = None if coeffs.jump_is_zero else _jump_operator(
                rho, coeffs.jump, nu, t, cfg.order)
            v = _face_velocity(rho, effective_drift(coeffs, nu, t, cfg.order))
            vmax = float(np.max(np.abs(v)))
            if vmax * cfg.dt > cfg.cfl * rho.h:
                raise CFLViolation(f"dt={cfg.dt} violates the CFL bound {cfg.cfl} h / {vmax}")
        if op is not None:
            rho = _apply_jumps(rho, op, cfg.dt)
        rho = _advect(rho, v, cfg.dt)
        rho = replace(rho, t=(k + 1) * cfg.dt)
        ledger[k + 1] = rho.total
        min_mass = min(min_mass, float(rho.masses.min()))
        if k + 1 in rec:
            snaps.append(replace(rho, t=rec[k + 1]))
    return FpeTrajectory(snaps, ledger, min_mass)


def density_to_measure(rho, n_atoms=None):
    """Interior mass as a DiscreteMeasure.

    Without ``n_atoms``: one atom per nonempty cell, at its center. With
    ``n_atoms``: N equal atoms at the quantiles (k + 1/2)/N of the
    piecewise-constant density (systematic resampling).
    """
    m = np.asarray(rho.masses)
    total = m.sum()
    if n_atoms is None:
        keep = m > 0
        return DiscreteMeasure.normalized(rho.centers[keep][:, None], m[keep])
    u = (np.arange(n_atoms) + 0.5) / n_atoms
    cdf = np.concatenate([[0.0], np.cumsum(m / total)])
    edges = -rho.L + rho.h * np.arange(len(m) + 1)
    # inverse of the piecewise-linear cdf; skip empty cells
    pos = np.interp(u, *_strict(cdf, edges))
    return DiscreteMeasure(pos[:, None], np.full(n_atoms, 1.0 / n_atoms))


def _strict(cdf, edges):
    keep = np.concatenate([[True], np.diff(cdf) > 0])
    return cdf[keep], edges[keep]


def generator(f, df, coeffs, nu, x, t=0.0, order=DEFAULT_ORDER):
    """(L^b + L^g_nu) f at the rows of x.

    ``f`` maps (N, d) -> (N,), ``df`` maps (N, d) -> (N, d).
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    b = np.asarray(coeffs.drift(t, x), dtype=float)
    grad = df(x)
    out = np.sum(b * grad, axis=1)
    if coeffs.jump_is_zero:
        return out
    nodes, weights = nu.quadrature(order)
    n, q = len(x), len(weights)
    xs = np.repeat(x, q, axis=0)
    gv = np.asarray(coeffs.jump(t, xs, np.tile(nodes, (n, 1))), dtype=float)
    inner = f(xs + gv) - f(xs) - np.sum(gv * np.repeat(grad, q, axis=0), axis=1)
    return out + inner.reshape(n, q) @ weights


def check_escape(rho, limit=ESCAPE_REJECT):
    """Raise ResolutionError when more than ``limit`` mass left the box."""
    if rho.escaped > limit:
        raise ResolutionError(f"escaped mass {rho.escaped:.3g} exceeds {limit:g}; enlarge the box")
    return rho
