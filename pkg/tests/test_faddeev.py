import numpy as np
import pytest
from numpy.testing import assert_allclose

from calderon import faddeev as Fd
from calderon import sphere
from calderon.grids import PotentialGrid

RNG = np.random.default_rng(11)


def _rho(norm, a=(1.0, 0.2, -0.3), b=(0.1, 1.0, 0.4)):
    return Fd.ComplexFrequency.from_frame(norm / np.sqrt(2), a, b)


def _fd_ops(f, x0, h):
    """Fourth-order finite-difference Laplacian and gradient."""
    lap = 0.0
    grad = []
    for e in np.eye(3):
        fp2, fp, fm, fm2 = f(x0 + 2 * h * e), f(x0 + h * e), f(x0 - h * e), f(x0 - 2 * h * e)
        lap = lap + (-fp2 + 16 * fp - 30 * f(x0) + 16 * fm - fm2) / (12 * h * h)
        grad.append((-fp2 + 8 * fp - 8 * fm + fm2) / (12 * h))
    return lap, np.array(grad)


def test_frequency_invariants():
    rho = _rho(6.0)
    assert_allclose(rho.rho @ rho.rho, 0, atol=1e-12)
    assert_allclose(rho.norm, 6.0)
    with pytest.raises(ValueError):
        Fd.ComplexFrequency([1, 0, 0], [0, 2, 0])
    with pytest.raises(ValueError):
        Fd.ComplexFrequency([1, 0, 0], [1, 0, 0])


def test_symbol():
    rho = _rho(5.0)
    assert Fd.symbol(rho, np.zeros(3)) == 0
    xi = RNG.normal(size=(20, 3))
    expect = -np.sum(xi * xi, -1) - 2 * xi @ rho.b + 2j * xi @ rho.a
    assert_allclose(Fd.symbol(rho, xi), expect, atol=1e-12)
    # characteristic circle: ξ ⊥ a with |ξ + b| = |b|
    F = rho.frame()
    phi = RNG.uniform(0, 2 * np.pi, 10)
    xi = -rho.b + rho.tau * (np.cos(phi)[:, None] * F[1] + np.sin(phi)[:, None] * F[2])
    assert_allclose(Fd.symbol(rho, xi), 0, atol=1e-12)


@pytest.mark.parametrize("s", [2.0, 3.0, 0.7])
def test_scaling_law(s):
    for _ in range(100 // 10):
        rho = Fd.ComplexFrequency.from_frame(RNG.uniform(0.5, 8), RNG.normal(size=3), RNG.normal(size=3))
        x = RNG.normal(size=(10, 3))
        g = Fd.eval_g(rho, x)
        assert_allclose(s * Fd.eval_g(rho.scaled(1 / s), s * x), g, rtol=1e-6)


def test_zero_frequency_limits():
    x = np.array([[1.0, 0.0, 0.0], [0.3, -0.2, 0.5]])
    zero = Fd.ComplexFrequency(np.zeros(3), np.zeros(3))
    assert_allclose(Fd.eval_G(zero, x[:1]), 0.0795774715459477, rtol=1e-12)
    assert_allclose(Fd.eval_g(zero, x), -1 / (4 * np.pi * np.linalg.norm(x, axis=1)))
    assert_allclose(Fd.eval_H(zero, x), 0)
    tiny = _rho(1e-8)
    assert_allclose(Fd.eval_G(tiny, x), 1 / (4 * np.pi * np.linalg.norm(x, axis=1)), rtol=1e-6)
    assert_allclose(-Fd.eval_g(tiny, x), 1 / (4 * np.pi * np.linalg.norm(x, axis=1)), rtol=1e-6)


def test_conjugation_symmetry():
    rho = _rho(7.0)
    x = RNG.normal(size=(30, 3))
    assert_allclose(np.conj(Fd.eval_g(rho, x)), Fd.eval_g(rho.conj(), x), rtol=1e-6)
    flipped = Fd.ComplexFrequency(-rho.a, rho.b)
    assert_allclose(Fd.eval_g(flipped, x), np.conj(Fd.eval_g(rho, -x)), rtol=1e-6)


def test_branches_agree():
    rho = _rho(6.0)
    F = rho.frame()
    y = -12.0 / rho.tau * F[0] + 0.4 * F[1] - 0.2 * F[2]
    v = Fd.eval_g(rho, np.array([y * (1 - 1e-12), y * (1 + 1e-12)]))
    assert_allclose(v[0], v[1], rtol=1e-8)


def test_g_decays():
    rho = _rho(8.0)
    d = RNG.normal(size=(20, 3))
    d /= np.linalg.norm(d, axis=1)[:, None]
    assert np.max(np.abs(Fd.eval_g(rho, 50 * d))) < 1e-3


def test_H_harmonic():
    rho = _rho(8.0)
    x0 = np.array([0.5, 0.3, -0.2])
    lap, _ = _fd_ops(lambda p: Fd.eval_H(rho, p), x0, 1e-2)
    assert abs(lap) <= 1e-4 * abs(Fd.eval_H(rho, x0))


def test_H_gradient():
    rho = _rho(5.0)
    x = RNG.normal(size=(5, 3))
    _, grad = Fd.eval_H(rho, x, gradient=True)
    for k in range(5):
        _, fd = _fd_ops(lambda p: Fd.eval_H(rho, p), x[k], 1e-3)
        assert_allclose(grad[k], fd, rtol=1e-7, atol=1e-10)


@pytest.mark.parametrize("x0", [[0.5, 0.3, -0.2], [-2.0, 0.3, 0.1]])
def test_g_solves_conjugated_laplacian(x0):
    rho = _rho(8.0)
    x0 = np.array(x0)
    f = lambda p: Fd.eval_g(rho, p)
    lap, grad = _fd_ops(f, x0, 5e-3)
    assert abs(lap + 2 * rho.rho @ grad) <= 1e-3 * abs(f(x0))


def test_G_flux_is_minus_one():
    rho = _rho(6.0)
    g = sphere.sphere_grid(12, 1.0)
    flux = []
    eps = np.array([0.1, 0.05, 0.025])
    for e in eps:
        pts = e * g.unit_nodes()
        dn = np.sum(Fd.eval_grad_G(rho, pts) * g.unit_nodes(), axis=-1)
        flux.append(np.sum(dn * g.weights()) * e * e)
    lim = np.polyval(np.polyfit(eps, flux, 2), 0.0)
    assert abs(lim + 1) <= 1e-3


def test_convolution_inverts_operator():
    """(Δ + 2ρ·∇)(g * φ) = φ for a Gaussian charge."""
    rho = _rho(4.0)
    sigma = 0.25
    c = np.array([0.05, -0.02, 0.03])
    phi = lambda y: np.exp(-np.sum((y - c) ** 2, -1) / (2 * sigma**2))
    rq, wq = np.polynomial.legendre.leggauss(48)
    rmax = 2.0
    rq = 0.5 * rmax * (rq + 1)
    wq = 0.5 * rmax * wq
    grid = sphere.sphere_grid(24, 1.0)
    om = grid.unit_nodes().reshape(-1, 3)
    wo = grid.weights().reshape(-1)
    pts = rq[:, None, None] * om[None]
    gk = Fd.eval_g(rho, pts)

    def conv(x):
        return np.sum(gk * phi(x - pts) * (wq * rq * rq)[:, None] * wo[None, :])

    x0 = np.zeros(3)
    lap, grad = _fd_ops(conv, x0, 0.02)
    assert abs(lap + 2 * rho.rho @ grad - phi(x0)) <= 1e-3 * phi(x0)


# -- layer operators ----------------------------------------------------------


def test_zero_frequency_spectra():
    zero = Fd.ComplexFrequency(np.zeros(3), np.zeros(3))
    R = 1.3
    ops = Fd.assemble_layers(zero, 6, R)
    ls, _ = sphere.degree_arrays(6)
    assert_allclose(np.diag(ops.S), R / (2 * ls + 1), rtol=1e-4)
    assert_allclose(ops.B[0, 0], -0.5, rtol=1e-4)
    assert_allclose(ops.B[sphere.lm_index(2, 1), sphere.lm_index(2, 1)], -0.1, rtol=1e-4)


def test_zero_frequency_single_layer_of_constant():
    zero = Fd.ComplexFrequency(np.zeros(3), np.zeros(3))
    R = 1.5
    ops = Fd.assemble_layers(zero, 2, R)
    one = sphere.BoundaryField(np.array([np.sqrt(4 * np.pi)]))
    x = np.array([[0.0, 0.0, 3.0], [1.0, 2.0, 2.0], [0.2, 0.1, -0.3]])
    v = Fd.eval_single_offboundary(ops, one, x)
    assert_allclose(v[:2], R**2 / np.linalg.norm(x[:2], axis=1), rtol=1e-12)
    assert_allclose(v[2], R, rtol=1e-12)
    d = Fd.eval_double_offboundary(ops, one, x)
    assert_allclose(d, [0, 0, -1], atol=1e-12)


def test_harmonic_part_closed_form_matches_quadrature():
    rho = _rho(6.0)
    SH, BH = Fd.harmonic_layer_matrices(rho, 3, 1.0)
    SD, BD = Fd.harmonic_layer_matrices_direct(rho, 3, 1.0, Lq=20)
    assert_allclose(SH, SD, atol=1e-10 * np.abs(SH).max())
    assert_allclose(BH, BD, atol=1e-10 * np.abs(BH).max())


def test_trace_identity():
    ops = Fd.assemble_layers(_rho(12.0), 12, 1.0)
    assert ops.identity_residual() <= 1e-12


def _side_limits(evaluator, ops, f, xh, eps=(0.04, 0.02, 0.01)):
    out = {}
    for side in (1, -1):
        vals = [evaluator(ops, f, xh[None] * (ops.R + side * e))[0] for e in eps]
        out[side] = np.polyval(np.polyfit(eps, vals, 2), 0.0)
    return out


def test_single_layer_continuity():
    ops = Fd.assemble_layers(_rho(6.0), 4, 1.0)
    f = sphere.BoundaryField.unit(4, 2, 1)
    xh = np.array([0.3, 0.5, 0.81])
    xh /= np.linalg.norm(xh)
    lim = _side_limits(Fd.eval_single_offboundary, ops, f, xh)
    assert abs(lim[1] - lim[-1]) <= 1e-3 * max(abs(lim[1]), 1.0)


def test_double_layer_jump():
    L = 24
    ops = Fd.assemble_layers(_rho(6.0), L, 1.0)
    f = sphere.BoundaryField.unit(L, 1, 0)
    xh = np.array([0.3, 0.5, 0.81])
    xh /= np.linalg.norm(xh)
    lim = _side_limits(Fd.eval_double_offboundary, ops, f, xh)
    Y = sphere.ylm_at(L, xh)
    g = Y @ f.coeffs
    Bg = Y @ (ops.B @ f.coeffs)
    scale = abs(Bg)
    assert abs(lim[1] - lim[-1] - g) <= 1e-3 * scale
    assert abs(lim[1] - (0.5 * g + Bg)) <= 1e-3 * scale
    assert abs(lim[-1] - (-0.5 * g + Bg)) <= 1e-3 * scale


def test_offboundary_refuses_sphere_points():
    ops = Fd.assemble_layers(_rho(2.0), 2, 1.0)
    with pytest.raises(ValueError):
        Fd.eval_single_offboundary(ops, sphere.BoundaryField.unit(2, 0, 0), np.array([[0, 0, 1.0]]))


# -- truncated norms ----------------------------------------------------------


def test_xnorm_basic():
    rho = _rho(8.0)
    z = PotentialGrid.zeros(2.0, 16)
    assert Fd.xnorm_truncated(z, rho, -0.5) == 0
    q = PotentialGrid.from_function(lambda p: np.exp(-4 * np.sum(p * p, -1)), 2.0, 16)
    assert_allclose(Fd.xnorm_truncated(q, rho, 0.0), q.l2(), rtol=1e-10)


def test_xnorm_decreases_with_frequency():
    q = PotentialGrid.from_function(lambda p: np.exp(-4 * np.sum(p * p, -1)), 2.0, 24)
    vals = [Fd.xnorm_truncated(q, _rho(s), -0.5) for s in (8.0, 16.0, 32.0)]
    assert vals[0] > vals[1] > vals[2]
