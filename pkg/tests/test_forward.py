import numpy as np
import pytest
from numpy.testing import assert_allclose

from calderon import forward as F
from calderon import sphere
from calderon.errors import EllipticityError


def _as_general(prof, dprof, R, **kw):
    def func(x):
        return prof(np.linalg.norm(x, axis=-1))

    def grad(x):
        r = np.linalg.norm(x, axis=-1)
        return (dprof(r) / r)[..., None] * x

    return F.ConductivityField.general(func, grad, R, **kw)


@pytest.mark.parametrize("R", [1.0, 2.0])
def test_constant_one_gives_l_over_r(R):
    one = F.ConductivityField.constant(1.0, R)
    ls = np.arange(17)
    assert_allclose(F.dtn_radial(one, 16).eigenvalues, ls / R, rtol=1e-12, atol=1e-14)
    assert_allclose(F.dtn_general(one, 16, Nr=8).eigenvalues, ls / R, rtol=1e-12, atol=1e-13)


def test_constant_scales_dtn():
    c = F.ConductivityField.constant(2.5, 1.0)
    assert_allclose(F.dtn_radial(c, 6).eigenvalues, 2.5 * np.arange(7), atol=1e-12)


@pytest.mark.parametrize("profile", [F.gaussian_profile(0.5, 0.0, 0.4), F.gaussian_profile(-0.3, 0.5, 0.3)])
def test_riccati_matches_galerkin(profile):
    g = F.ConductivityField.radial(*profile, R=1.0)
    d1 = F.dtn_radial(g, 20)
    d2 = F.dtn_general(g, 20, Nr=30)
    assert_allclose(d2.eigenvalues, d1.eigenvalues, atol=1e-10)
    assert_allclose(d1.defect, d1.eigenvalues - np.arange(21), atol=1e-12)


def test_general_assembly_reproduces_radial():
    prof = F.gaussian_profile(0.5, 0.0, 0.4)
    ref = F.dtn_radial(F.ConductivityField.radial(*prof, R=1.0), 5).matrix
    plain = _as_general(*prof, 1.0)
    sep = _as_general(*prof, 1.0, terms=[(prof[0], lambda x: np.ones(len(x)))])
    assert_allclose(F.dtn_general(plain, 5, Nr=16).matrix, ref, atol=1e-12)
    assert_allclose(F.dtn_general(sep, 5, Nr=16).matrix, ref, atol=1e-12)


def test_nonradial_dtn_hermitian_and_converged():
    g = F.ConductivityField.general(
        lambda x: 1 + 0.3 * x[..., 0] + 0.2 * x[..., 1] * x[..., 2],
        lambda x: np.stack([0.3 + 0 * x[..., 0], 0.2 * x[..., 2], 0.2 * x[..., 1]], -1),
        1.0,
    )
    M = F.dtn_general(g, 5, Nr=12).matrix
    assert_allclose(M, M.conj().T, atol=1e-13)
    assert_allclose(F.dtn_general(g, 5, Nr=18).matrix, M, atol=1e-11)
    # constants are in the kernel
    assert_allclose(M[:, 0], 0, atol=1e-12)


def test_annulus_constant_closed_form():
    one = F.ConductivityField.constant(1.0, 2.0, R_inner=1.0)
    a = F.annulus_dtn(one, 4, Nr=10)
    # l = 0: w = A + B/r, flux per unit area
    assert_allclose(a.L11[0, 0], 2.0, rtol=1e-13)
    assert_allclose(a.L22[0, 0], 0.5, rtol=1e-13)
    assert_allclose(a.L12[0, 0], -2.0, rtol=1e-13)
    assert_allclose(4 * a.L21[0, 0], a.L12[0, 0], rtol=1e-13)


@pytest.mark.parametrize("l", [0, 2, 7])
def test_annulus_matches_shooting(l):
    prof = F.poly_bump_profile(0.4, 1.4)
    g = F.ConductivityField.radial(*prof, R=2.0, R_inner=1.0, breakpoints=(1.4,))
    a = F.annulus_dtn(g, 7, Nr=12)
    S = F.radial_two_point(g, l, 1.0, 2.0)
    i = l * l + l
    got = np.array([[a.L11[i, i], a.L12[i, i]], [4 * a.L21[i, i], 4 * a.L22[i, i]]]).real
    assert_allclose(got, S, atol=1e-10)


def test_annulus_energy_positive():
    g = _as_general(*F.gaussian_profile(0.3, 1.2, 0.3), 2.0, R_inner=1.0)
    a = F.annulus_dtn(g, 3, Nr=8)
    B = a.block() * np.repeat([1.0, 4.0], a.L11.shape[0])[:, None]
    assert_allclose(B, B.conj().T, atol=1e-12)
    assert np.min(np.linalg.eigvalsh(B)) > -1e-12


def test_interior_solution_harmonic():
    one = F.ConductivityField.constant(1.0, 1.5)
    u = F.interior_solution(one, sphere.BoundaryField.unit(4, 3, 2), Nr=8)
    x = np.array([[0.3, 0.2, -0.5], [0.1, 0.9, 0.4]])
    r = np.linalg.norm(x, axis=1)
    Y = sphere.ylm_at(4, x)[:, sphere.lm_index(3, 2)]
    val, grad = u.evaluate(x)
    assert_allclose(val, (r / 1.5) ** 3 * Y, atol=1e-14)
    h = 1e-6
    fd = np.stack([(u(x + h * e) - u(x - h * e)) / (2 * h) for e in np.eye(3)], -1)
    assert_allclose(grad, fd, atol=1e-8)


def test_interior_solution_flux_matches_dtn():
    prof = F.gaussian_profile(0.5, 0.0, 0.4)
    g = F.ConductivityField.radial(*prof, R=1.0)
    f = sphere.BoundaryField.unit(5, 4, 1)
    u = F.interior_solution(g, f, Nr=24)
    grid = sphere.sphere_grid(6, 1.0)
    _, ur, _ = u.shell(1.0, grid)
    lam = F.dtn_radial(g, 5).apply(f.coeffs)
    assert_allclose(grid.analyze(prof[0](1.0) * ur, 5), lam, atol=1e-9)


def test_dtn_map_helpers():
    d = F.harmonic_dtn(4, 2.0)
    assert d.is_diagonal
    assert_allclose(d.defect_matrix(), 0)
    assert_allclose(d.truncate(2).matrix, np.diag([0, 0.5, 0.5, 0.5, 1, 1, 1, 1, 1]))
    with pytest.raises(ValueError):
        F.apply_dtn(d, sphere.BoundaryField.zeros(3))


def test_ellipticity_violation_detected():
    bad = F.ConductivityField.radial(*F.gaussian_profile(-1.5, 0.0, 0.3), R=1.0)
    with pytest.raises(EllipticityError):
        F.dtn_radial(bad, 4)
    with pytest.raises(EllipticityError):
        bad.check()


def test_field_check_reports():
    g = F.ConductivityField.radial(*F.poly_bump_profile(0.4, 0.8), R=1.0, R0=0.8, breakpoints=(0.8,))
    out = g.check()
    assert out["outer_dev"] == 0.0
    assert out["fd_grad_err"] < 1e-6
