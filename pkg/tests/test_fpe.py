import numpy as np
import pytest
from scipy import integrate, stats

from levykr import coefficients as co
from levykr import fpe
from levykr.errors import CFLViolation, ConfigurationError, ResolutionError
from levykr.jumps import AtomicJumpMeasure, JumpMeasure
from levykr.measure import InitialLaw, empirical_measure, sample
from levykr.transport import kr_tilde

NU = JumpMeasure(1, 1.0, 0.1, 1.0)
GAUSS = InitialLaw.gaussian([0.0], 0.5)


def gauss_grid(h=1 / 64, L=4.0, mean=0.0, std=0.5):
    return fpe.DensityGrid.from_law(InitialLaw.gaussian([mean], std), L, h)


def test_density_grid_validation():
    with pytest.raises(ConfigurationError):
        fpe.DensityGrid(np.ones(5) / 5, 1.0, 0.5)
    with pytest.raises(ValueError):
        fpe.DensityGrid(np.array([1.5, -0.5, 0.0, 0.0]), 1.0, 0.5)


def test_from_law_normalized():
    rho = gauss_grid()
    assert abs(rho.masses.sum() - 1.0) < 1e-12
    assert rho.centers[0] == -4.0 + 1 / 128
    assert rho.lq_norm(1) == pytest.approx(1.0)


def test_fpe_config_validation():
    with pytest.raises(ConfigurationError):
        fpe.FpeConfig(dt=0.3)
    with pytest.raises(ConfigurationError):
        fpe.FpeConfig(cfl=1.5)
    assert fpe.FpeConfig(dt=0.25).steps == 4


def test_zero_drift_identity():
    rho = gauss_grid()
    out = fpe.drift_step(rho, lambda x: np.zeros_like(x), 0.01)
    assert np.array_equal(out.masses, rho.masses)


def test_zero_jump_identity():
    rho = gauss_grid()
    out = fpe.jump_step(rho, lambda t, x, z: np.zeros_like(x), NU, 0.01)
    assert np.array_equal(out.masses, rho.masses) and out.escaped == 0.0


def test_drift_step_cfl_violation():
    with pytest.raises(CFLViolation):
        fpe.drift_step(gauss_grid(), lambda x: np.full_like(x, 10.0), 0.01)


def test_drift_step_conserves_mass():
    rho = gauss_grid()
    out = fpe.drift_step(rho, lambda x: np.sin(3 * x), 0.004)
    assert abs(out.total - rho.total) <= 1e-15
    assert np.all(out.masses >= 0)


def _translation_error(h):
    c, T = 0.5, 0.5
    rho = gauss_grid(h)
    dt = 0.5 * h / c
    steps = int(round(T / dt))
    for _ in range(steps):
        rho = fpe.drift_step(rho, lambda x: np.full_like(x, c), dt)
    exact = gauss_grid(h, mean=c * steps * dt).masses
    return np.abs(rho.masses - exact).sum()


def test_constant_drift_translates():
    errs = [_translation_error(h) for h in (1 / 32, 1 / 64, 1 / 128)]
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 0.1


def test_jump_deposit_oracle_eight_cells():
    # L=1, h=1/4: 8 cells. One jump atom of rate 2, g = 0.3 = 1.2 cells, dt * rate = 1.
    nu = AtomicJumpMeasure(np.array([[1.0]]), np.array([2.0]))
    m = np.zeros(8)
    m[1], m[5] = 0.25, 0.75
    rho = fpe.DensityGrid(m, 1.0, 0.25)
    out = fpe.jump_step(rho, lambda t, x, z: np.full_like(x, 0.3), nu, 0.5)
    expect = np.zeros(8)
    # cell 1 -> 0.8 to cell 2, 0.2 to cell 3; cell 5 -> 0.8 to cell 6, 0.2 to cell 7
    expect[2], expect[3] = 0.25 * 0.8, 0.25 * 0.2
    expect[6], expect[7] = 0.75 * 0.8, 0.75 * 0.2
    np.testing.assert_allclose(out.masses, expect, atol=1e-15)
    assert out.escaped == 0.0


def test_jump_deposit_escape_ledger():
    nu = AtomicJumpMeasure(np.array([[1.0]]), np.array([1.0]))
    m = np.zeros(8)
    m[7] = 1.0
    rho = fpe.DensityGrid(m, 1.0, 0.25)
    out = fpe.jump_step(rho, lambda t, x, z: np.full_like(x, 0.3), nu, 1.0)
    assert out.masses.sum() == 0.0 and out.escaped == pytest.approx(1.0, abs=1e-15)


def test_jump_step_rate_bound():
    with pytest.raises(CFLViolation):
        fpe.jump_step(gauss_grid(), co.well(1), NU, 0.1)


def test_jump_step_conserves_mass():
    rho = gauss_grid()
    out = fpe.jump_step(rho, co.well(1), NU, 1 / 32)
    assert abs(out.total - rho.total) <= 1e-15
    assert np.all(out.masses >= 0)


def test_frozen_solve_is_identity():
    rho = gauss_grid()
    tr = fpe.solve(rho, co.frozen(1), NU, fpe.FpeConfig(dt=0.01, record_times=(0.0, 0.5, 1.0)))
    for s in tr:
        assert np.array_equal(s.masses, rho.masses)


def test_solve_ledger_and_nonnegativity():
    tr = fpe.solve(gauss_grid(), co.well(1), NU, fpe.FpeConfig(dt=1 / 512))
    assert np.max(np.abs(np.diff(tr.ledger))) <= 1e-15
    assert tr.min_mass >= 0
    assert tr.at(1.0).t == 1.0
    with pytest.raises(KeyError):
        tr.at(0.3)


def test_solve_rejects_cfl_and_dimension():
    with pytest.raises(CFLViolation):
        fpe.solve(gauss_grid(1 / 256), co.well(1), NU, fpe.FpeConfig(dt=1 / 64))
    with pytest.raises(ConfigurationError):
        fpe.solve(gauss_grid(), co.well(2), JumpMeasure(2, 1.0, 0.1, 1.0), fpe.FpeConfig())


def _characteristics_error(h, dt):
    field = co.linear_cutoff(1)
    b = lambda t, y: field.drift(0.0, np.array([[y[0]]]))[0]  # noqa: E731
    rho0 = gauss_grid(h)
    tr = fpe.solve(rho0, field, NU, fpe.FpeConfig(horizon=0.5, dt=dt, record_times=(0.5,)))
    edges = -4.0 + h * np.arange(len(rho0.masses) + 1)
    # pull each cell edge back along the flow and read the initial cdf there
    back = np.array([integrate.solve_ivp(lambda t, y: -b(t, y), (0, 0.5), [e], rtol=1e-11,
                                         atol=1e-12).y[0, -1] for e in edges])
    exact = np.diff(stats.norm(0, 0.5).cdf(back))
    return np.abs(tr.at(0.5).masses - exact).sum()


def test_pure_drift_matches_characteristics():
    errs = [_characteristics_error(h, h / 8) for h in (1 / 16, 1 / 32, 1 / 64)]
    assert errs[0] > errs[1] > errs[2]
    assert errs[1] / errs[0] < 0.75 and errs[2] / errs[1] < 0.75


def _weak_residual(h, dt):
    field = co.well(1)
    f = lambda x: np.exp(-x[:, 0] ** 2)  # noqa: E731
    df = lambda x: -2 * x * np.exp(-x ** 2)  # noqa: E731
    t0, t1 = 0.5, 0.5 + 1 / 16
    tr = fpe.solve(gauss_grid(h), field, NU, fpe.FpeConfig(horizon=t1, dt=dt,
                                                          record_times=(t0, t1)))
    a, b = tr.at(t0), tr.at(t1)
    x = a.centers[:, None]
    lhs = (b.masses @ f(x) - a.masses @ f(x)) / (t1 - t0)
    gen = fpe.generator(f, df, field, NU, x)
    rhs = 0.5 * (a.masses @ gen + b.masses @ gen)
    return abs(lhs - rhs)


def test_weak_form_residual_shrinks():
    r = [_weak_residual(h, h / 8) for h in (1 / 32, 1 / 64, 1 / 128)]
    assert r[0] > r[1] > r[2]
    assert r[2] < 0.01


def test_generator_closed_form():
    # f(x) = x: jumps are compensated, so L f = b
    field = co.well(1)
    x = np.linspace(-3, 3, 13)[:, None]
    out = fpe.generator(lambda y: y[:, 0], lambda y: np.ones_like(y), field, NU, x)
    np.testing.assert_allclose(out, field.drift(0.0, x)[:, 0], atol=1e-12)
    # f(x) = x^2 with g = s z plateau: L f = 2 x b + plateau^2 int z^2 nu
    f2 = fpe.generator(lambda y: y[:, 0] ** 2, lambda y: 2 * y, field, NU, x)
    pl = co.plateau().value(x)
    np.testing.assert_allclose(f2, 2 * x[:, 0] * field.drift(0.0, x)[:, 0]
                               + pl ** 2 * NU.radial_moment(2), atol=1e-12)


def test_density_to_measure_uniform():
    rho = fpe.DensityGrid(np.full(4, 0.25), 1.0, 0.5)
    mu = fpe.density_to_measure(rho)
    np.testing.assert_array_equal(mu.weights, 0.25)
    np.testing.assert_array_equal(mu.support[:, 0], [-0.75, -0.25, 0.25, 0.75])


def test_density_to_measure_resampled_mean():
    rho = gauss_grid(1 / 64, mean=0.3)
    mu = fpe.density_to_measure(rho, 1000)
    assert len(mu) == 1000 and mu.is_uniform()
    assert abs(mu.mean()[0] - 0.3) < 1 / 64


def test_density_to_measure_consistency():
    d = []
    for h, n in ((1 / 16, 64), (1 / 64, 256), (1 / 256, 1024)):
        grid_mu = fpe.density_to_measure(gauss_grid(h), n)
        samples = empirical_measure(sample(GAUSS, n, 0))
        d.append(kr_tilde(grid_mu, samples, 0.1))
    assert d[0] > d[1] > d[2]


def test_check_escape():
    rho = fpe.DensityGrid(np.full(4, 0.25), 1.0, 0.5, escaped=1e-3)
    with pytest.raises(ResolutionError):
        fpe.check_escape(rho)
    assert fpe.check_escape(gauss_grid()) is not None


def test_trajectory_csv(tmp_path):
    tr = fpe.solve(fpe.DensityGrid(np.full(4, 0.25), 1.0, 0.5), co.frozen(1), NU,
                   fpe.FpeConfig(dt=0.5, record_times=(0.5, 1.0)))
    tr.to_csv(tmp_path / "d.csv")
    lines = (tmp_path / "d.csv").read_text().splitlines()
    assert lines[0] == "time,center,mass" and len(lines) == 9
