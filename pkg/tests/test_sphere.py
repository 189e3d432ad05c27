import numpy as np
import pytest
from numpy.testing import assert_allclose

from calderon import sphere
from calderon.sphere import BoundaryField, lm_index, n_coeffs, sphere_grid


def _random_field(L, seed=0):
    rng = np.random.default_rng(seed)
    return BoundaryField(rng.normal(size=n_coeffs(L)) + 1j * rng.normal(size=n_coeffs(L)))


@pytest.mark.parametrize("L", [0, 3, 12])
@pytest.mark.parametrize("R", [1.0, 2.5])
def test_analysis_synthesis_round_trip(L, R):
    g = sphere_grid(L, R)
    f = _random_field(L)
    assert_allclose(g.analyze(g.synthesize(f.coeffs)), f.coeffs, atol=1e-12)


def test_quadrature_weights_area():
    g = sphere_grid(7, 2.0)
    assert_allclose(g.weights().sum(), 4 * np.pi * 4.0, rtol=1e-13)


def test_low_degree_closed_forms():
    x = np.array([[0.3, -0.4, 0.5], [0.0, 0.0, 1.0], [1.0, 2.0, -2.0]])
    xh = x / np.linalg.norm(x, axis=1)[:, None]
    Y = sphere.ylm_at(2, x)
    assert_allclose(Y[:, lm_index(0, 0)], 1 / np.sqrt(4 * np.pi))
    assert_allclose(Y[:, lm_index(1, 0)], np.sqrt(3 / (4 * np.pi)) * xh[:, 2], atol=1e-15)
    # Condon-Shortley phase
    assert_allclose(Y[:, lm_index(1, 1)], -np.sqrt(3 / (8 * np.pi)) * (xh[:, 0] + 1j * xh[:, 1]), atol=1e-15)


def test_orthonormal_on_grid():
    L = 6
    g = sphere_grid(L, 1.0)
    Y = sphere.ylm_at(L, g.unit_nodes().reshape(-1, 3))
    gram = (Y.conj().T * g.weights().reshape(-1)) @ Y
    assert_allclose(gram, np.eye(n_coeffs(L)), atol=1e-13)


def test_pointwise_matches_grid():
    L = 8
    g = sphere_grid(L, 1.0)
    f = _random_field(L, 3)
    Y, G = sphere.ylm_at(L, g.unit_nodes().reshape(-1, 3), gradient=True)
    assert_allclose(Y @ f.coeffs, g.synthesize(f.coeffs).reshape(-1), atol=1e-12)
    assert_allclose(np.einsum("pnc,n->pc", G, f.coeffs), g.synthesize_gradient(f.coeffs).reshape(-1, 3), atol=1e-11)


def test_surface_gradient_finite_difference():
    L = 5
    f = _random_field(L, 7)
    x = np.array([[0.2, 0.7, -0.3], [-0.5, 0.1, 0.8]])
    x /= np.linalg.norm(x, axis=1)[:, None]
    _, G = sphere.ylm_at(L, x, gradient=True)
    grad = np.einsum("pnc,n->pc", G, f.coeffs)
    # extend homogeneously of degree 0 so the full gradient is tangential
    h = 1e-6
    fd = np.stack([(sphere.ylm_at(L, x + h * e) - sphere.ylm_at(L, x - h * e)) @ f.coeffs / (2 * h) for e in np.eye(3)], -1)
    assert_allclose(grad, fd, atol=1e-7)


def test_conj_and_pairing():
    L = 5
    g = sphere_grid(L, 1.7)
    a, b = _random_field(L, 1), _random_field(L, 2)
    assert_allclose(a.conj().values(g), np.conj(a.values(g)), atol=1e-12)
    direct = g.integrate(a.values(g) * b.values(g))
    assert_allclose(sphere.pair(a, b, R=1.7), direct, rtol=1e-12)
    assert_allclose(sphere.inner(a, b, R=1.7), g.integrate(a.values(g) * np.conj(b.values(g))), rtol=1e-12)


def test_project_multiply_exact_for_band_limited_product():
    a = BoundaryField.unit(4, 1, 0)
    b = BoundaryField.unit(4, 1, 0)
    c = sphere.project_multiply(a, b)
    # Y10^2 = (1 + 2/sqrt5 Y20 sqrt(4π)) / (4π)
    assert_allclose(c.coeffs[lm_index(0, 0)], 1 / np.sqrt(4 * np.pi), atol=1e-14)
    assert_allclose(c.coeffs[lm_index(2, 0)], 1 / np.sqrt(5 * np.pi), atol=1e-14)


def test_hs_norm_weights():
    f = BoundaryField.unit(3, 3, -1)
    assert_allclose(sphere.hs_norm(f, 1.0), np.sqrt(13.0))
    assert f.truncate(1).L == 1 and f.truncate(5).L == 5


def test_shape_validation():
    g = sphere_grid(3)
    with pytest.raises(ValueError):
        sphere.analyze(np.zeros(5), g)
    with pytest.raises(ValueError):
        BoundaryField(np.zeros(7))
