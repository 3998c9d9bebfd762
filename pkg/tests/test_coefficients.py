import numpy as np
import pytest

from levykr import coefficients as co
from levykr.analysis import grid_nodes, scalar_grid
from levykr.errors import ConfigurationError

X1 = np.linspace(-4, 4, 81)[:, None]
X2 = np.stack(np.meshgrid(np.linspace(-4, 4, 9), np.linspace(-4, 4, 9)), -1).reshape(-1, 2)


@pytest.mark.parametrize("name", sorted(co.PRESETS))
def test_presets_finite(name):
    f = co.preset(name) if name == "kink" else co.preset(name, dim=1)
    z = np.full_like(X1, 0.3)
    assert np.all(np.isfinite(f.drift(0.0, X1)))
    assert np.all(np.isfinite(f.jump(0.0, X1, z)))
    assert f.drift(0.0, X1).shape == X1.shape


@pytest.mark.parametrize("field", [co.well(1), co.well(2), co.linear_cutoff(2), co.kink(),
                                   co.perturbed(co.well(1), 0.3, 0.2)])
def test_analytic_gradients_match_finite_differences(field):
    x = X1 if field.dim == 1 else X2
    x = x + 0.0137  # stay off the kinks of the sawtooth
    analytic = field.drift_gradient(0.0, x)
    numeric = co._fd_jacobian(lambda y: field.drift(0.0, y), x)
    np.testing.assert_allclose(analytic, numeric, atol=1e-6)
    z = np.full((len(x), field.dim), 0.4)
    ga = field.jump_gradient(0.0, x, z)
    gn = co._fd_jacobian(lambda y: field.jump(0.0, y, z), x)
    np.testing.assert_allclose(ga, gn, atol=1e-6)


def test_fd_fallback_used_without_gradient():
    f = co.CoefficientField("sin", 1, lambda t, x: np.sin(x), lambda t, x, z: z * np.cos(x))
    np.testing.assert_allclose(f.drift_gradient(0.0, X1)[:, 0, 0], np.cos(X1[:, 0]), atol=1e-8)


@pytest.mark.parametrize("shape", [co.plateau(), co.bump(2.0), co.tent(3.0)])
def test_shapes_compactly_supported(shape):
    x = np.array([[3.5], [-3.5], [4.0]])
    assert np.all(shape.value(x) == 0.0)


def test_plateau_is_one_inside():
    assert np.all(co.plateau(2.0, 3.0).value(np.array([[0.0], [1.9], [-2.0]])) == 1.0)


def test_frozen_is_zero():
    f = co.frozen(2)
    assert f.jump_is_zero
    assert np.all(f.drift(0.0, X2) == 0)


def test_perturbed_zero_amplitude_is_identity():
    base = co.well(1)
    p = co.perturbed(base, 0.0, 0.0)
    z = np.full_like(X1, 0.5)
    np.testing.assert_array_equal(p.drift(0.0, X1), base.drift(0.0, X1))
    np.testing.assert_array_equal(p.jump(0.0, X1, z), base.jump(0.0, X1, z))


def test_perturbed_adds_bump():
    base, phi = co.well(1), co.bump(2.0)
    p = co.perturbed(base, 0.25, 0.5)
    z = np.full_like(X1, 0.5)
    np.testing.assert_allclose(p.drift(0.0, X1) - base.drift(0.0, X1),
                               0.25 * phi.value(X1)[:, None], atol=1e-15)
    np.testing.assert_allclose(p.jump(0.0, X1, z) - base.jump(0.0, X1, z),
                               0.5 * 0.5 * phi.value(X1)[:, None], atol=1e-15)


def test_perturbed_keeps_general_jump():
    g = lambda t, x, z: z * np.exp(-x ** 2)  # noqa: E731
    base = co.CoefficientField("gen", 1, lambda t, x: -x, g)
    p = co.perturbed(base, drift_amp=0.1)
    z = np.full_like(X1, 0.3)
    np.testing.assert_array_equal(p.jump(0.0, X1, z), g(0.0, X1, z))
    with pytest.raises(ConfigurationError):
        co.perturbed(base, jump_amp=0.1)


def test_fingerprint_stable_and_distinct():
    assert co.well(1).fingerprint == co.well(1).fingerprint
    assert co.well(1).fingerprint != co.well(1, jump_scale=2.0).fingerprint
    assert len(co.kink().fingerprint) == 12


def test_grid_field_reproduces_nodes():
    base = co.kink()
    b = scalar_grid(lambda x: base.drift(0.0, x)[:, 0], 4.0, 1 / 64)
    s = scalar_grid(base.jump_profile[0], 4.0, 1 / 64)
    f = co.grid_field("g", b, s)
    x = grid_nodes(4.0, 1 / 64)[:, None]
    np.testing.assert_allclose(f.drift(0.0, x), base.drift(0.0, x), atol=1e-14)
    assert np.all(f.drift(0.0, np.array([[5.0]])) == 0.0)


def test_unknown_preset():
    with pytest.raises(ConfigurationError):
        co.preset("nope")
