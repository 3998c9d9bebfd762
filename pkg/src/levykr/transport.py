"""Optimal transport with the logarithmic costs

    tilde:  c(x, y) = log(1 + |x - y|^2 / delta^2)
    plain:  c(x, y) = log(1 + |x - y| / delta)

Neither cost is a metric, and no solver here relies on a triangle inequality.
"""
from __future__ import annotations

import os
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ConfigurationError, InfeasibleMarginals
from .measure import DiscreteMeasure

EXACT_LIMIT = 512
ASSIGNMENT_LIMIT = 4096
MARGINAL_TOL = 1e-9
COST_KINDS = ("tilde", "plain")


@dataclass(frozen=True)
class CostSpec:
    kind: str = "tilde"
    delta: float = 1.0

    def __post_init__(self):
        if self.kind not in COST_KINDS:
            raise ConfigurationError(f"unknown cost kind {self.kind!r}")
        if not self.delta > 0:
            raise ConfigurationError("delta must be positive")

    def of_distance(self, r):
        r = np.asarray(r, dtype=float)
        if self.kind == "tilde":
            return np.log1p((r / self.delta) ** 2)
        return np.log1p(r / self.delta)


@dataclass
class TransportPlan:
    matrix: np.ndarray
    row_residual: float
    col_residual: float


@dataclass
class DistanceReport:
    value: float
    solver: str
    plan: Optional[TransportPlan] = None
    iterations: int = 0
    duality_gap: float = float("nan")
    marginal_error: float = 0.0
    converged: bool = True
    wall_time: float = 0.0
    extra: dict = field(default_factory=dict)

    def csv_row(self):
        gap = self.duality_gap if self.solver == "exact" else self.marginal_error
        return [repr(float(self.value)), self.solver, repr(float(gap)),
                f"{self.wall_time:.6f}"]


def _points(m):
    return m.support if isinstance(m, DiscreteMeasure) else np.atleast_2d(np.asarray(m, dtype=float))


def sq_distances(x, y):
    x, y = _points(x), _points(y)
    if x.shape[1] != y.shape[1]:
        raise ValueError(f"dimension mismatch: {x.shape[1]} vs {y.shape[1]}")
    out = np.zeros((len(x), len(y)))
    for k in range(x.shape[1]):
        out += (x[:, k, None] - y[None, :, k]) ** 2
    return out


def cost_matrix(x, y, spec):
    """c_ij for point arrays (n, d) and (m, d)."""
    sq = sq_distances(x, y)
    if spec.kind == "tilde":
        return np.log1p(sq / spec.delta ** 2)
    return np.log1p(np.sqrt(sq) / spec.delta)


def _check_marginals(mu, nu):
    if mu.dim != nu.dim:
        raise ValueError(f"dimension mismatch: {mu.dim} vs {nu.dim}")
    sa, sb = mu.weights.sum(), nu.weights.sum()
    if abs(sa - sb) > MARGINAL_TOL:
        raise InfeasibleMarginals(f"total masses differ: {sa!r} vs {sb!r}")


def _load_emd():
    # POT probes every array backend on import; we only need numpy.
    for lib in ("PYTORCH", "TENSORFLOW", "JAX", "CUPY"):
        os.environ.setdefault(f"POT_BACKEND_DISABLE_{lib}", "1")
    from ot import emd
    return emd


def _plan(matrix, a, b):
    return TransportPlan(matrix, float(np.abs(matrix.sum(1) - a).max()),
                         float(np.abs(matrix.sum(0) - b).max()))


def exact_ot(mu, nu, spec, limit=EXACT_LIMIT):
    """Network-simplex solution with a primal-dual certificate."""
    _check_marginals(mu, nu)
    if max(len(mu), len(nu)) > limit:
        raise ConfigurationError(f"exact tier is limited to {limit} support points")
    t0 = time.perf_counter()
    a = np.ascontiguousarray(mu.weights, dtype=np.float64)
    b = np.ascontiguousarray(nu.weights * (a.sum() / nu.weights.sum()), dtype=np.float64)
    c = cost_matrix(mu, nu, spec)
    emd = _load_emd()
    g, log = emd(a, b, c, numItermax=10_000_000, log=True)
    primal = float(np.sum(g * c))
    u, v = np.asarray(log["u"]), np.asarray(log["v"])
    dual = float(a @ u + b @ v)
    infeas = float(max(0.0, np.max(u[:, None] + v[None, :] - c)))
    plan = _plan(g, a, b)
    return DistanceReport(
        value=max(primal, 0.0), solver="exact", plan=plan,
        iterations=0, duality_gap=abs(primal - dual),
        marginal_error=max(plan.row_residual, plan.col_residual),
        converged=log.get("warning") is None, wall_time=time.perf_counter() - t0,
        extra={"dual_infeasibility": infeas, "warning": log.get("warning")})


def assignment_ot(mu, nu, spec):
    """Exact OT between two uniform measures with equal atom counts.

    Permutation couplings are the extreme points of the coupling polytope
    here, so an optimal assignment is an optimal plan.
    """
    _check_marginals(mu, nu)
    if len(mu) != len(nu) or not (mu.is_uniform() and nu.is_uniform()):
        raise ConfigurationError("assignment tier needs uniform measures of equal size")
    t0 = time.perf_counter()
    c = cost_matrix(mu, nu, spec)
    rows, cols = linear_sum_assignment(c)
    value = float(c[rows, cols].sum() / len(mu))
    return DistanceReport(value=value, solver="assignment", wall_time=time.perf_counter() - t0,
                          extra={"permutation": cols})


def _lse(x, axis):
    m = x.max(axis=axis, keepdims=True)
    return (np.log(np.exp(x - m).sum(axis=axis, keepdims=True)) + m).squeeze(axis)


def sinkhorn_ot(mu, nu, spec, reg=None, max_iter=2000, tol=1e-6, scaling_steps=8):
    """Entropic OT solved in the log domain.

    ``reg`` defaults to 0.01 times the median cost entry. The reported value
    is the transport cost of the entropic plan (no entropy term). Potentials
    are warm-started along a geometric ladder of regularizations ending at
    ``reg``; only the final level must meet ``tol``.
    """
    _check_marginals(mu, nu)
    t0 = time.perf_counter()
    c = cost_matrix(mu, nu, spec)
    if reg is None:
        reg = 0.01 * float(np.median(c))
    if not reg > 0:
        raise ConfigurationError("reg must be positive")
    loga, logb = np.log(mu.weights), np.log(nu.weights)
    a = mu.weights
    f = np.zeros(len(a))
    g = np.zeros(len(nu))
    cmax = float(c.max())
    ladder = [reg]
    if scaling_steps and cmax > reg:
        ladder = list(np.geomspace(max(cmax, reg), reg, scaling_steps + 1))
    iters = 0
    err = np.inf
    for level, eps in enumerate(ladder):
        last = level == len(ladder) - 1
        budget = max_iter - iters if last else min(200, max_iter - iters)
        for _ in range(max(budget, 0)):
            f = -eps * _lse((g[None, :] - c) / eps + logb[None, :], axis=1)
            g = -eps * _lse((f[:, None] - c) / eps + loga[:, None], axis=0)
            iters += 1
            if iters % 10 == 0 or not last:
                logp = (f[:, None] + g[None, :] - c) / eps + loga[:, None] + logb[None, :]
                err = float(np.abs(np.exp(_lse(logp, axis=1)) - a).sum())
                if err <= (tol if last else 1e-3):
                    break
    logp = (f[:, None] + g[None, :] - c) / reg + loga[:, None] + logb[None, :]
    p = np.exp(logp)
    plan = _plan(p, mu.weights, nu.weights)
    err = float(np.abs(p.sum(1) - mu.weights).sum() + np.abs(p.sum(0) - nu.weights).sum())
    return DistanceReport(value=float(np.sum(p * c)), solver="entropic", plan=plan,
                          iterations=iters, marginal_error=err, converged=err <= tol,
                          wall_time=time.perf_counter() - t0, extra={"reg": reg})


def distance_report(mu, nu, spec, solver="auto", reg=None):
    """Dispatch to a solver tier.

    ``auto``: identical measures give 0; exact network simplex up to
    EXACT_LIMIT atoms; optimal assignment for equal-size uniform measures up
    to ASSIGNMENT_LIMIT; Sinkhorn beyond.
    """
    if solver == "auto":
        _check_marginals(mu, nu)
        if mu.same_as(nu):
            return DistanceReport(value=0.0, solver="identical", duality_gap=0.0)
        if max(len(mu), len(nu)) <= EXACT_LIMIT:
            solver = "exact"
        elif (len(mu) == len(nu) <= ASSIGNMENT_LIMIT and mu.is_uniform()
              and nu.is_uniform()):
            solver = "assignment"
        else:
            solver = "entropic"
    if solver == "exact":
        return exact_ot(mu, nu, spec, limit=max(len(mu), len(nu), EXACT_LIMIT))
    if solver == "assignment":
        return assignment_ot(mu, nu, spec)
    if solver == "entropic":
        return sinkhorn_ot(mu, nu, spec, reg=reg)
    raise ConfigurationError(f"unknown solver {solver!r}")


def kr_tilde(mu, nu, delta, solver="auto"):
    """Log-cost distance with c = log(1 + |x - y|^2 / delta^2)."""
    return distance_report(mu, nu, CostSpec("tilde", delta), solver).value


def kr_plain(mu, nu, delta, solver="auto"):
    """Log-cost distance with c = log(1 + |x - y| / delta)."""
    return distance_report(mu, nu, CostSpec("plain", delta), solver).value


@dataclass
class RelationsReport:
    tilde: float
    plain: float
    upper_slack: float  # 2 D - D~
    lower_slack: float  # sqrt(D~ / log 2) + D~ - D
    tol: float = 1e-9

    @property
    def ok(self):
        return self.upper_slack >= -self.tol and self.lower_slack >= -self.tol

    @property
    def violations(self):
        out = []
        if self.upper_slack < -self.tol:
            out.append("tilde <= 2 plain")
        if self.lower_slack < -self.tol:
            out.append("plain <= sqrt(tilde/log 2) + tilde")
        return out


def remark_relations_check(mu, nu, delta, tol=1e-9):
    """Evaluate D~ <= 2 D and D <= sqrt(D~ / log 2) + D~ with exact solvers."""
    dt = distance_report(mu, nu, CostSpec("tilde", delta)).value
    dp = distance_report(mu, nu, CostSpec("plain", delta)).value
    return RelationsReport(dt, dp, 2.0 * dp - dt, np.sqrt(dt / np.log(2.0)) + dt - dp, tol)


def uniqueness_indicator(mu, nu, deltas):
    """Ratios D~_delta / |log delta| along a strictly decreasing delta ladder in (0, 1)."""
    deltas = [float(d) for d in deltas]
    if any(not 0 < d < 1 for d in deltas):
        raise ConfigurationError("deltas must lie in (0, 1)")
    if any(b >= a for a, b in zip(deltas, deltas[1:])):
        raise ConfigurationError("deltas must be strictly decreasing")
    return [float(kr_tilde(mu, nu, d) / abs(np.log(d))) for d in deltas]
