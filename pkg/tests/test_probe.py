import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from calderon import forward as F
from calderon import probe as P
from calderon import sphere
from calderon.errors import EllipticityError, ResolutionError

X = np.array([0.0, 0.6, 0.8])
NU, T1, T2 = P.tangent_frame(X)
PROFILE = F.gaussian_profile(0.3, 0.2, 0.5)


@pytest.fixture(scope="module")
def ladder():
    return P.probe_ladder(X, T1, [16, 32, 64])


@pytest.fixture(scope="module")
def radial_dtn(ladder):
    g = F.ConductivityField.radial(*PROFILE, R=1.0)
    return F.dtn_radial(g, ladder[-1].L)


def test_probe_normalized(ladder):
    for p in ladder:
        assert_allclose(P._harmonic_energy(p.field.coeffs, 1.0), 1.0, rtol=1e-12)


def test_probe_support(ladder):
    for p in ladder:
        g = p.grid
        v = np.abs(g.synthesize(p.field.coeffs)) ** 2
        far = np.linalg.norm(g.nodes() - X, axis=-1) > 3 / math.sqrt(p.N)
        assert g.integrate(np.where(far, v, 0)).real <= 1e-6 * g.integrate(v).real


@pytest.mark.parametrize("s", [0.5, 1.0])
def test_norm_profile(ladder, s):
    ratio = [sphere.hs_norm(p.field, s) / sphere.hs_norm(p.field, 0) for p in ladder]
    Ns = np.array([p.N for p in ladder])
    scaled = np.array(ratio) / Ns**s
    assert scaled.max() / scaled.min() <= 3.0


def test_unresolved_probe_refused():
    with pytest.raises(ResolutionError):
        P.make_probe(X, T1, 64, sphere.sphere_grid(80, 1.0))


def test_probe_argument_checks():
    g = sphere.sphere_grid(60, 1.0)
    with pytest.raises(ValueError):
        P.make_probe(X, NU, 16, g)
    with pytest.raises(ValueError):
        P.make_probe(2 * X, T1, 16, g)
    with pytest.raises(ValueError):
        P.make_probe(X, T1, 2, g)


@pytest.mark.parametrize("c", [1.0, 2.5])
def test_constant_recovered_exactly(ladder, c):
    d = F.dtn_radial(F.ConductivityField.constant(c, 1.0), ladder[-1].L)
    est = P.recover_gamma_boundary(d, ladder)
    assert_allclose(est.sequence, c, rtol=1e-12)


def test_radial_boundary_value_converges(ladder, radial_dtn):
    est = P.recover_gamma_boundary(radial_dtn, ladder)
    err = np.abs(est.sequence - PROFILE[0](1.0))
    assert np.all(np.diff(err) <= 0)
    assert err[-1] <= 0.05 * PROFILE[0](1.0)
    ex = P.recover_gamma_boundary(radial_dtn, ladder, extrapolate=True)
    assert ex.extrapolated and abs(ex.estimate - PROFILE[0](1.0)) < err[-1]


def test_gradient_normal_component(ladder, radial_dtn):
    est = P.recover_gradient_boundary(radial_dtn, PROFILE[0](1.0), ladder, NU)
    gp = PROFILE[1](1.0)
    assert abs(est.estimate - gp) <= 0.10 * abs(gp)


@pytest.mark.parametrize("alpha", [T1, T2])
def test_gradient_tangential_vanishes(ladder, radial_dtn, alpha):
    est = P.recover_gradient_boundary(radial_dtn, PROFILE[0](1.0), ladder, alpha)
    assert np.max(np.abs(est.sequence)) <= 1e-4


def test_gradient_zero_for_identity(ladder):
    d = F.harmonic_dtn(ladder[-1].L)
    for alpha in (NU, T1):
        assert np.max(np.abs(P.recover_gradient_boundary(d, 1.0, ladder, alpha).sequence)) <= 1e-10


def test_gradient_rejects_nonpositive_gamma(ladder, radial_dtn):
    with pytest.raises(EllipticityError):
        P.recover_gradient_boundary(radial_dtn, -1.0, ladder[:1], NU)


def test_stability_gap_metric():
    L = 12
    g1 = F.ConductivityField.radial(*F.gaussian_profile(0.3, 0.2, 0.5), R=1.0)
    g2 = F.ConductivityField.radial(*F.gaussian_profile(-0.2, 0.5, 0.3), R=1.0)
    d = [F.dtn_radial(g, L) for g in (g1, g2)] + [F.harmonic_dtn(L)]
    assert P.stability_gap(d[0], d[0]) == 0.0
    assert_allclose(P.stability_gap(d[0], d[1]), P.stability_gap(d[1], d[0]), rtol=1e-14)
    assert P.stability_gap(d[0], d[2]) <= P.stability_gap(d[0], d[1]) + P.stability_gap(d[1], d[2]) + 1e-10
    dense = F.DtNMap(1.0, L, entries=d[0].matrix)
    assert_allclose(P.stability_gap(dense, d[1]), P.stability_gap(d[0], d[1]), rtol=1e-10)


def test_stability_gap_lower_bound():
    f, df = PROFILE
    g = F.ConductivityField.radial(f, df, R=1.0)
    g11 = F.ConductivityField.radial(lambda r: 1.1 * f(r), lambda r: 1.1 * df(r), R=1.0)
    L = 16
    gap = P.stability_gap(F.dtn_radial(g, L), F.dtn_radial(g11, L))
    assert gap >= 0.1 * f(1.0) / 10


def test_energy_weight_identity():
    p = P.probe_ladder(X, T1, [16])[0]
    one = F.ConductivityField.constant(1.0, 1.0)
    assert_allclose(P.energy_weight_check(one, p, lambda y: np.ones(y.shape[:-1])), 1.0, atol=1e-4)
    assert P.energy_weight_check(one, p, lambda y: np.zeros(y.shape[:-1])) == 0.0


def test_energy_weight_localizes():
    g = F.ConductivityField.radial(*PROFILE, R=1.0)
    p = P.probe_ladder(X, T1, [16])[0]
    val = P.energy_weight_check(g, p, lambda y: y[..., 0] + 2)
    assert abs(val - (X[0] + 2)) <= 0.10 * (X[0] + 2)
