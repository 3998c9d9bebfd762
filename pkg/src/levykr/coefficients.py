"""Drift and jump coefficients b(t, x), g(t, x, z) and the preset library.

Array conventions: ``x`` and ``z`` are (N, d); ``drift`` and ``jump`` return
(N, d); gradients return (N, d, d) with entry [n, i, j] = d_j of component i.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .errors import ConfigurationError

FD_STEP = 1e-5


# ------------------------------------------------------------------ shapes

def _smooth_psi(t):
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    pos = t > 0
    out[pos] = np.exp(-1.0 / t[pos])
    return out


def _smooth_psi_prime(t):
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    pos = t > 0
    out[pos] = np.exp(-1.0 / t[pos]) / t[pos] ** 2
    return out


def smooth_step(t):
    """C-infinity step: 0 for t <= 0, 1 for t >= 1."""
    a, b = _smooth_psi(t), _smooth_psi(1.0 - np.asarray(t, dtype=float))
    return a / (a + b)


def smooth_step_prime(t):
    t = np.asarray(t, dtype=float)
    a, b = _smooth_psi(t), _smooth_psi(1.0 - t)
    da, db = _smooth_psi_prime(t), -_smooth_psi_prime(1.0 - t)
    return (da * b - a * db) / (a + b) ** 2


@dataclass(frozen=True)
class RadialShape:
    """Scalar function f(|x|) with derivative df(|x|)."""

    name: str
    f: Callable
    df: Callable

    def value(self, x):
        return self.f(np.linalg.norm(x, axis=1))

    def grad(self, x):
        r = np.linalg.norm(x, axis=1)
        dr = self.df(r)
        unit = np.divide(x, r[:, None], out=np.zeros_like(x), where=r[:, None] > 0)
        return dr[:, None] * unit


def plateau(inner=2.0, outer=3.0):
    """1 on |x| <= inner, smooth decay to 0 at |x| = outer."""
    w = outer - inner
    return RadialShape(
        f"plateau({inner},{outer})",
        lambda r: 1.0 - smooth_step((r - inner) / w),
        lambda r: -smooth_step_prime((r - inner) / w) / w,
    )


def bump(radius=2.0):
    """exp(1 - 1/(1 - (r/a)^2)) on r < a; peak value 1 at the origin."""
    a = float(radius)

    def f(r):
        s = (np.asarray(r) / a) ** 2
        out = np.zeros_like(s, dtype=float)
        m = s < 1
        out[m] = np.exp(1.0 - 1.0 / (1.0 - s[m]))
        return out

    def df(r):
        r = np.asarray(r, dtype=float)
        s = (r / a) ** 2
        out = np.zeros_like(s)
        m = s < 1
        out[m] = np.exp(1.0 - 1.0 / (1.0 - s[m])) * (-2.0 * r[m] / a ** 2) / (1.0 - s[m]) ** 2
        return out

    return RadialShape(f"bump({a})", f, df)


def tent(radius=3.0):
    """(1 - |x|/a)_+: Lipschitz, kinked at 0 and |x| = a."""
    a = float(radius)
    return RadialShape(
        f"tent({a})",
        lambda r: np.clip(1.0 - np.asarray(r) / a, 0.0, None),
        lambda r: np.where((np.asarray(r) > 0) & (np.asarray(r) < a), -1.0 / a, 0.0),
    )


# ------------------------------------------------------------------ fields

def _fd_jacobian(fn, x):
    x = np.asarray(x, dtype=float)
    n, d = x.shape
    out = np.empty((n, d, d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = FD_STEP
        out[:, :, j] = (fn(x + e) - fn(x - e)) / (2 * FD_STEP)
    return out


@dataclass(frozen=True)
class CoefficientField:
    """Coefficients of dX = b dt + int g(X-, z) N~(dt, dz).

    ``jump_profile``, when set, declares the separable structure
    g(t, x, z) = z * sigma(x) with ``jump_profile = (sigma, grad sigma)``
    acting on (N, d) arrays. Missing gradients fall back to central
    differences. Evaluation is stateless, so instances can be shared
    between threads.
    """

    name: str
    dim: int
    drift: Callable
    jump: Callable
    grad_drift: Optional[Callable] = None
    grad_jump: Optional[Callable] = None
    jump_profile: Optional[tuple] = None
    autonomous: bool = True
    jump_odd: bool = False
    jump_is_zero: bool = False
    descriptor: dict = field(default_factory=dict, compare=False)

    def drift_gradient(self, t, x):
        if self.grad_drift is not None:
            return self.grad_drift(t, x)
        return _fd_jacobian(lambda y: self.drift(t, y), x)

    def jump_gradient(self, t, x, z):
        if self.grad_jump is not None:
            return self.grad_jump(t, x, z)
        return _fd_jacobian(lambda y: self.jump(t, y, z), x)

    @property
    def fingerprint(self):
        blob = json.dumps({"name": self.name, "dim": self.dim, **self.descriptor},
                          sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:12]


def separable_field(name, dim, drift, grad_drift, profile, profile_grad, descriptor=None):
    """Field with g(t, x, z) = z * profile(x); drift/profile act on (N, d) arrays."""
    if profile is None:
        def jump(t, x, z):
            return np.zeros_like(np.asarray(z, dtype=float))

        def grad_jump(t, x, z):
            n, d = np.shape(x)
            return np.zeros((n, d, d))

        return CoefficientField(name, dim, lambda t, x: drift(x), jump,
                                lambda t, x: grad_drift(x), grad_jump, None,
                                jump_odd=True, jump_is_zero=True,
                                descriptor=descriptor or {})

    def jump(t, x, z):
        return np.asarray(z, dtype=float) * profile(x)[:, None]

    def grad_jump(t, x, z):
        return np.asarray(z, dtype=float)[:, :, None] * profile_grad(x)[:, None, :]

    return CoefficientField(name, dim, lambda t, x: drift(x), jump,
                            lambda t, x: grad_drift(x), grad_jump,
                            (profile, profile_grad), jump_odd=True,
                            descriptor=descriptor or {})


def _zero_drift(x):
    return np.zeros_like(np.asarray(x, dtype=float))


def _zero_drift_grad(x):
    n, d = np.shape(x)
    return np.zeros((n, d, d))


def frozen(dim=1):
    """b = 0, g = 0: every particle stays where it starts."""
    return separable_field("frozen", dim, _zero_drift, _zero_drift_grad, None, None,
                           {"preset": "frozen"})


def _restoring(cut):
    def b(x):
        return -x * cut.value(x)[:, None]

    def db(x):
        n, d = x.shape
        c = cut.value(x)
        return -(c[:, None, None] * np.eye(d)[None] + x[:, :, None] * cut.grad(x)[:, None, :])

    return b, db


def linear_cutoff(dim=1, inner=2.0, outer=3.0):
    """b(x) = -x on |x| <= inner, smoothly switched off by |x| = outer; g = 0."""
    cut = plateau(inner, outer)
    b, db = _restoring(cut)
    return separable_field("linear_cutoff", dim, b, db, None, None,
                           {"preset": "linear_cutoff", "inner": inner, "outer": outer})


def well(dim=1, inner=2.0, outer=3.0, jump_scale=1.0):
    """Smooth compactly supported restoring drift with g = jump_scale * z * plateau(x)."""
    cut = plateau(inner, outer)
    b, db = _restoring(cut)
    s = float(jump_scale)
    return separable_field(
        "well", dim, b, db,
        lambda x: s * cut.value(x), lambda x: s * cut.grad(x),
        {"preset": "well", "inner": inner, "outer": outer, "jump_scale": s})


def _sawtooth(x):
    y = x[:, 0]
    a = np.abs(y)
    out = np.where(a <= 1.0, -y, np.where(a <= 2.0, -np.sign(y) * (2.0 - a), 0.0))
    return out[:, None]


def _sawtooth_grad(x):
    a = np.abs(x[:, 0])
    g = np.where(a < 1.0, -1.0, np.where(a < 2.0, 1.0, 0.0))
    return g[:, None, None]


def kink(jump_radius=3.0):
    """1-d Lipschitz (not C^1) coefficients: sawtooth restoring drift, g = z * tent(x)."""
    t = tent(jump_radius)
    return separable_field("kink", 1, _sawtooth, _sawtooth_grad, t.value, t.grad,
                           {"preset": "kink", "jump_radius": jump_radius})


def additive(dim=1):
    """b = 0, g(t, x, z) = z. Not in L^p in x; fails the bound hypotheses."""
    return separable_field("additive", dim, _zero_drift, _zero_drift_grad,
                           lambda x: np.ones(len(x)), lambda x: np.zeros_like(x),
                           {"preset": "additive"})


def perturbed(base, drift_amp=0.0, jump_amp=0.0, shape=None):
    """b + drift_amp * phi * e_1 and g + jump_amp * z * phi, phi a smooth bump."""
    general_jump = base.jump_profile is None and not base.jump_is_zero
    if general_jump and jump_amp:
        raise ConfigurationError("jump perturbation needs a separable base field")
    if not base.autonomous:
        raise ConfigurationError("perturbed() expects an autonomous base field")
    phi = shape or bump(2.0)
    d = base.dim
    e1 = np.zeros(d)
    e1[0] = 1.0
    a, c = float(drift_amp), float(jump_amp)

    def b(x):
        return base.drift(0.0, x) + a * phi.value(x)[:, None] * e1

    def db(x):
        return base.drift_gradient(0.0, x) + a * e1[None, :, None] * phi.grad(x)[:, None, :]

    if general_jump:
        return replace(base, name=f"{base.name}+pert", drift=lambda t, x: b(x),
                       grad_drift=lambda t, x: db(x),
                       descriptor={"base": base.name, "base_desc": base.descriptor,
                                   "drift_amp": a, "shape": phi.name})

    if base.jump_profile is not None:
        prof, dprof = base.jump_profile
    else:
        prof, dprof = (lambda x: np.zeros(len(x))), (lambda x: np.zeros_like(x))
    if c == 0.0 and base.jump_is_zero:
        new_prof = None
        new_dprof = None
    else:
        def new_prof(x):
            return prof(x) + c * phi.value(x)

        def new_dprof(x):
            return dprof(x) + c * phi.grad(x)

    desc = {"base": base.name, "base_desc": base.descriptor, "drift_amp": a,
            "jump_amp": c, "shape": phi.name}
    return separable_field(f"{base.name}+pert", d, b, db, new_prof, new_dprof, desc)


class _GridInterp:
    """Linear interpolation of a 1-d grid function, zero outside the box."""

    def __init__(self, nodes, values):
        self.nodes = np.asarray(nodes, dtype=float)
        self.values = np.asarray(values, dtype=float)
        self.slopes = np.gradient(self.values, self.nodes)

    def __call__(self, x):
        return np.interp(x[:, 0], self.nodes, self.values, left=0.0, right=0.0)

    def grad(self, x):
        return np.interp(x[:, 0], self.nodes, self.slopes, left=0.0, right=0.0)[:, None]


def grid_field(name, drift_grid, profile_grid=None, descriptor=None):
    """1-d field from grid samples of b and of the jump profile sigma.

    Values are linearly interpolated and vanish outside the grid box.
    """
    bi = _GridInterp(drift_grid.nodes1d, drift_grid.values)

    def b(x):
        return bi(x)[:, None]

    def db(x):
        return bi.grad(x)[:, :, None]

    if profile_grid is None:
        return separable_field(name, 1, b, db, None, None, descriptor)
    si = _GridInterp(profile_grid.nodes1d, profile_grid.values)
    return separable_field(name, 1, b, db, si, si.grad, descriptor)


# ------------------------------------------------------------------ registry

PRESETS = {
    "frozen": frozen,
    "linear_cutoff": linear_cutoff,
    "well": well,
    "kink": kink,
    "additive": additive,
}


def preset(name, **kwargs):
    try:
        factory = PRESETS[name]
    except KeyError:
        raise ConfigurationError(f"unknown coefficient preset {name!r}") from None
    return factory(**kwargs)


def with_name(field_, name):
    return replace(field_, name=name)
