import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from levykr.errors import ConfigurationError, InfeasibleMarginals
from levykr.measure import DiscreteMeasure, empirical_measure
from levykr.transport import (CostSpec, assignment_ot, cost_matrix, distance_report, exact_ot,
                              kr_plain, kr_tilde, remark_relations_check, sinkhorn_ot,
                              uniqueness_indicator)


def dirac(x):
    return DiscreteMeasure(np.atleast_2d(x), [1.0])


def uniform(points):
    return empirical_measure(np.asarray(points, dtype=float))


def rand_uniform(gen, n, d=1, scale=1.0):
    return uniform(gen.normal(scale=scale, size=(n, d)))


def test_cost_examples():
    assert cost_matrix([[0.0]], [[0.0]], CostSpec("tilde", 1.0))[0, 0] == 0.0
    assert cost_matrix([[0.0]], [[1.0]], CostSpec("tilde", 1.0))[0, 0] == pytest.approx(np.log(2))
    assert cost_matrix([[0.0, 0.0]], [[3.0, 4.0]], CostSpec("plain", 5.0))[0, 0] == \
        pytest.approx(np.log(2))


def test_cost_spec_validation():
    with pytest.raises(ConfigurationError):
        CostSpec("quadratic")
    with pytest.raises(ConfigurationError):
        CostSpec("tilde", 0.0)


def test_dirac_closed_form():
    gen = np.random.default_rng(0)
    for _ in range(20):
        x, y = gen.normal(size=(2, 2))
        d = gen.uniform(0.01, 2.0)
        assert abs(kr_tilde(dirac(x), dirac(y), d) - np.log1p(np.sum((x - y) ** 2) / d ** 2)) < 1e-12
        assert abs(kr_plain(dirac(x), dirac(y), d) - np.log1p(np.linalg.norm(x - y) / d)) < 1e-12


def test_two_point_example():
    # uniform{0, 2} vs uniform{1, 3}: both matchings are shifts by 1 or a 1-3 split;
    # the optimum moves each atom by 1
    v = kr_tilde(uniform([[0.0], [2.0]]), uniform([[1.0], [3.0]]), 1.0, solver="exact")
    assert v == pytest.approx(np.log(2), abs=1e-12)


def test_identical_measures_give_zero():
    mu = rand_uniform(np.random.default_rng(1), 50)
    rep = distance_report(mu, mu, CostSpec())
    assert rep.value == 0.0 and rep.solver == "identical"
    assert exact_ot(mu, mu, CostSpec()).value == pytest.approx(0.0, abs=1e-14)


def test_brute_force_permutations():
    gen = np.random.default_rng(2)
    for _ in range(20):
        n = int(gen.integers(2, 6))
        mu, nu = rand_uniform(gen, n, 2), rand_uniform(gen, n, 2)
        c = cost_matrix(mu, nu, CostSpec("tilde", 0.7))
        best = min(c[np.arange(n), list(p)].sum() for p in itertools.permutations(range(n))) / n
        assert abs(exact_ot(mu, nu, CostSpec("tilde", 0.7)).value - best) < 1e-12


def test_exact_reports_certificate():
    gen = np.random.default_rng(3)
    mu = DiscreteMeasure.normalized(gen.normal(size=(30, 1)), gen.uniform(size=30))
    nu = DiscreteMeasure.normalized(gen.normal(size=(20, 1)), gen.uniform(size=20))
    rep = exact_ot(mu, nu, CostSpec())
    assert rep.duality_gap < 1e-10
    assert rep.marginal_error < 1e-12
    assert rep.extra["dual_infeasibility"] < 1e-10


def test_assignment_matches_exact():
    gen = np.random.default_rng(4)
    mu, nu = rand_uniform(gen, 200), rand_uniform(gen, 200, scale=2.0)
    a = assignment_ot(mu, nu, CostSpec("tilde", 0.3)).value
    e = exact_ot(mu, nu, CostSpec("tilde", 0.3)).value
    assert a == pytest.approx(e, abs=1e-12)


def test_assignment_needs_uniform_equal_sizes():
    gen = np.random.default_rng(5)
    with pytest.raises(ConfigurationError):
        assignment_ot(rand_uniform(gen, 4), rand_uniform(gen, 5), CostSpec())


def test_auto_tiers():
    gen = np.random.default_rng(6)
    assert distance_report(rand_uniform(gen, 10), rand_uniform(gen, 10), CostSpec()).solver == "exact"
    assert distance_report(rand_uniform(gen, 600), rand_uniform(gen, 600),
                           CostSpec()).solver == "assignment"
    mu = DiscreteMeasure.normalized(gen.normal(size=(600, 1)), gen.uniform(size=600))
    assert distance_report(mu, rand_uniform(gen, 600), CostSpec(), reg=1.0).solver == "entropic"


def test_sinkhorn_close_to_exact_for_distinct_laws():
    # clouds from different laws; for same-law clouds the exact value is pure
    # sampling noise and the entropic bias dominates it
    gen = np.random.default_rng(7)
    for _ in range(5):
        mu = uniform(gen.normal(size=(128, 1)))
        nu = uniform(gen.normal(1.0, 1.0, size=(128, 1)))
        spec = CostSpec("tilde", 1.0)
        e = exact_ot(mu, nu, spec).value
        assert abs(sinkhorn_ot(mu, nu, spec).value - e) / e <= 0.02


def test_sinkhorn_values_decrease_with_reg():
    gen = np.random.default_rng(9)
    mu, nu = rand_uniform(gen, 40), rand_uniform(gen, 40, scale=2.0)
    spec = CostSpec("tilde", 1.0)
    e = exact_ot(mu, nu, spec).value
    hi = sinkhorn_ot(mu, nu, spec, reg=0.1, tol=1e-9, max_iter=20_000).value
    lo = sinkhorn_ot(mu, nu, spec, reg=0.01, tol=1e-9, max_iter=20_000).value
    assert hi >= lo >= e - 1e-9


def test_sinkhorn_identical_bias_bound():
    gen = np.random.default_rng(10)
    mu = rand_uniform(gen, 50)
    rep = sinkhorn_ot(mu, mu, CostSpec(), reg=0.01)
    assert rep.value <= 0.01 * np.log(50) + 1e-6


def test_sinkhorn_rejects_bad_reg():
    gen = np.random.default_rng(8)
    with pytest.raises(ConfigurationError):
        sinkhorn_ot(rand_uniform(gen, 4), rand_uniform(gen, 4), CostSpec(), reg=-1.0)


def test_marginal_errors():
    a = DiscreteMeasure(np.zeros((1, 1)), [1.0])
    b = DiscreteMeasure(np.zeros((1, 2)), [1.0])
    with pytest.raises(ValueError):
        kr_tilde(a, b, 1.0)
    # bypass validation to build an unnormalized measure
    c = object.__new__(DiscreteMeasure)
    object.__setattr__(c, "support", np.zeros((1, 1)))
    object.__setattr__(c, "weights", np.array([0.5]))
    with pytest.raises(InfeasibleMarginals):
        exact_ot(a, c, CostSpec())


def test_unknown_solver():
    with pytest.raises(ConfigurationError):
        distance_report(dirac([0.0]), dirac([1.0]), CostSpec(), solver="magic")


points = st.lists(st.floats(-3, 3, allow_nan=False), min_size=1, max_size=8)


@settings(max_examples=30)
@given(points, points, st.floats(0.05, 3.0))
def test_symmetry_and_relations(xs, ys, delta):
    mu, nu = uniform(np.array(xs)[:, None]), uniform(np.array(ys)[:, None])
    a, b = kr_tilde(mu, nu, delta), kr_tilde(nu, mu, delta)
    assert a == pytest.approx(b, abs=1e-12)
    assert a >= 0
    rep = remark_relations_check(mu, nu, delta)
    assert rep.ok, rep


@settings(max_examples=30)
@given(points, points, st.floats(0.05, 1.0), st.floats(1.01, 4.0))
def test_nonincreasing_in_delta(xs, ys, delta, factor):
    mu, nu = uniform(np.array(xs)[:, None]), uniform(np.array(ys)[:, None])
    assert kr_tilde(mu, nu, delta * factor) <= kr_tilde(mu, nu, delta) + 1e-12


def test_uniqueness_indicator_example():
    mu, nu = dirac([0.0]), dirac([1.0])
    out = uniqueness_indicator(mu, nu, [0.5, 0.1, 0.01])
    expect = [np.log1p(1 / d ** 2) / abs(np.log(d)) for d in (0.5, 0.1, 0.01)]
    np.testing.assert_allclose(out, expect, rtol=1e-12)
    # for a fixed pair the ratio tends to 2
    assert abs(uniqueness_indicator(mu, nu, [1e-8])[0] - 2.0) < 1e-8
    assert uniqueness_indicator(mu, mu, [0.5, 0.1]) == [0.0, 0.0]


@pytest.mark.parametrize("deltas", [[0.1, 0.5], [1.5], [0.5, 0.5]])
def test_uniqueness_indicator_validation(deltas):
    with pytest.raises(ConfigurationError):
        uniqueness_indicator(dirac([0.0]), dirac([1.0]), deltas)


def test_report_csv_row():
    row = distance_report(dirac([0.0]), dirac([1.0]), CostSpec()).csv_row()
    assert row[1] == "exact" and float(row[0]) == pytest.approx(np.log(2))
