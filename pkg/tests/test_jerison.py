import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hpotential import geometry as G
from hpotential import hgroup as hg
from hpotential import jerison as J

TAUS = np.linspace(-0.9, 0.99, 60)


def mp_root(n, alpha):
    a, b, c = -alpha / 2, n + alpha / 2, (n + 1) / 2
    with mp.workdps(50):
        f = lambda s: mp.hyp2f1(a, b, c, 1 - s / 2)
        return float(mp.findroot(f, (mp.mpf("1e-14"), mp.mpf("0.999")), solver="anderson", tol=1e-30))


@pytest.fixture(scope="module")
def sols():
    return {al: J.tau_root(1, al) for al in (0.1, 0.3, 0.5, 1.0)}


def test_series_trivial_and_classical():
    assert J.hyp2f1(0.3, 1.7, 2.1, 0.0) == 1.0
    assert J.hyp2f1(1, 1, 2, 0.5) == pytest.approx(2 * math.log(2), rel=1e-15)
    # brute-force partial sums of the defining series
    z, s, term = 0.3, 0.0, 1.0
    for k in range(200):
        s += term
        term *= (0.4 + k) * (-1.2 + k) / ((1.5 + k) * (k + 1)) * z
    assert J.gauss_series(0.4, -1.2, 1.5, z) == pytest.approx(s, rel=1e-15)


@settings(max_examples=60, deadline=None)
@given(st.sampled_from([1, 2, 3, 4]), st.floats(0.05, 1.0), st.integers(0, 2),
       st.floats(1e-12, 1.0, exclude_max=True))
def test_hyp2f1_matches_mpmath(n, alpha, k, w):
    a, b, c = -alpha / 2 + k, n + alpha / 2 + k, (n + 1) / 2 + k
    with mp.workdps(40):
        # 1 - w must be formed at high precision or the reference loses the digits of w
        ref = float(mp.hyp2f1(a, b, c, 1 - mp.mpf(w)))
    assert J.hyp2f1_w(a, b, c, w) == pytest.approx(ref, rel=1e-12, abs=1e-13)


def test_series_nonconvergence_reported():
    with pytest.raises(J.HypergeometricError) as info:
        J.gauss_series(-0.05, 1.05, 1.0, 1 - 1e-9, max_terms=1000)
    assert math.isfinite(info.value.partial) and info.value.bound > 0


def test_g_at_one(sols):
    for s in sols.values():
        assert s.g(1.0) == 1.0


def test_jacobi_residual_closed_form(sols):
    for al, s in sols.items():
        assert np.max(np.abs(J.jacobi_residual(1, al, s.g, TAUS))) < 1e-6
        assert abs(J.jacobi_residual(1, al, s.g, 0.0)) < 1e-6
        assert abs(J.jacobi_residual(1, al, s.g, 0.9)) < 1e-6


def test_jacobi_residual_five_point_differences(sols):
    for al, s in sols.items():
        r = J.jacobi_residual(1, al, lambda t: s.g(t), TAUS, h=1e-3, stencil=5)
        assert np.max(np.abs(r)) < 1e-6


def test_three_point_difference_is_roundoff_limited(sols):
    g = sols[0.5].g
    r5 = np.max(np.abs(J.jacobi_residual(1, 0.5, lambda t: g(t), TAUS, h=1e-5)))
    r4 = np.max(np.abs(J.jacobi_residual(1, 0.5, lambda t: g(t), TAUS, h=1e-4)))
    # the smaller step is worse: eps / h^2 dominates
    assert r5 > r4


def test_constant_profile_residual():
    for al in (0.3, 1.0):
        assert J.jacobi_residual(1, al, lambda t: np.ones_like(t), 0.2) == pytest.approx(al * (al + 2) / 4, rel=1e-9)


def test_roots_against_mpmath(sols):
    for al, s in sols.items():
        assert -1 < s.tau_alpha < 0
        assert abs(s.g_at_root) < 1e-12
        ref = mp_root(1, al)
        assert s.s_alpha == pytest.approx(ref, rel=1e-10)


def test_root_n2_against_mpmath():
    s = J.tau_root(2, 0.5)
    assert s.s_alpha == pytest.approx(mp_root(2, 0.5), rel=1e-10)


def test_roots_move_toward_minus_one(sols):
    assert sols[0.1].tau_alpha < sols[0.3].tau_alpha < sols[0.5].tau_alpha < sols[1.0].tau_alpha


def test_small_alpha_root_below_narrow_bracket():
    with pytest.raises(J.RootError, match="alpha too large"):
        J.tau_root(1, 0.1, s_min=1e-6)


def test_alpha_range():
    with pytest.raises(ValueError):
        J.tau_root(1, 1.5)


def test_M_consistency(sols):
    for s in sols.values():
        assert s.M < 0
        assert s.consistency() < 1e-10


@settings(max_examples=50, deadline=None)
@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1), st.integers(-3, 3), st.floats(0, 2 * math.pi))
def test_tau_invariances(x, y, t, k, th):
    p = np.array([x, y, t])
    # dilation by 2^k is exact in floating point away from the subnormal range
    if hg.gauge(p) < 1e-3 or np.any((p != 0) & (np.abs(p) < 1e-200)):
        return
    tau = J.tau_of(p)
    lam = 2.0 ** k
    assert J.tau_of(hg.dilate(lam, p)) == tau
    q = np.array([math.cos(th) * x - math.sin(th) * y, math.sin(th) * x + math.cos(th) * y, t])
    assert J.tau_of(q) == pytest.approx(tau, abs=1e-14)


def test_v_vanishes_on_region_boundary(sols):
    for s in sols.values():
        r = np.array([0.05, 0.3, 1.0])
        p = J.ray(s.tau_alpha, r, phi=0.7)
        # the float root carries g(tau) of order cond * eps, about 6e-10 for alpha = 0.1
        floor = abs(s.info["g_at_float_tau"]) * np.asarray(hg.gauge(p)) ** s.alpha
        assert np.all(np.abs(J.v_field(s, p)) <= 2 * floor + 1e-14)
        assert abs(s.g_at_root) < 1e-12


def test_v_on_t_axis(sols):
    s = sols[0.3]
    t = np.logspace(-4, 0, 7)
    p = np.stack([0 * t, 0 * t, t], -1)
    assert np.allclose(J.v_field(s, p), (16 * t * t) ** (0.3 / 4), rtol=1e-14)


def test_v_nonnegative_in_region(sols):
    rng = np.random.default_rng(1)
    for s in sols.values():
        p = rng.uniform(-1, 1, size=(4000, 3)) * [1, 1, 0.5]
        p = p[J.in_region(s, p)]
        assert np.all(J.v_field(s, p) >= -1e-14)


def test_v_domain_error(sols):
    with pytest.raises(ValueError):
        J.v_field(sols[0.5], [0.0, 0.0, -0.2])


def test_identity_for_g(sols):
    s = sols[0.5]
    p = np.array([[0.3, 0.2, 0.05], [0.5, -0.1, -0.02], [-0.2, 0.4, 0.1]])
    fd, formula = J.verify_identity(s, p, h=1e-3)
    assert np.max(np.abs(formula)) < 1e-12
    assert np.max(np.abs(fd)) < 1e-4
    fd2, _ = J.verify_identity(s, p, h=2e-3)
    assert 3 < np.max(np.abs(fd2)) / np.max(np.abs(fd)) < 5


def test_identity_for_other_profiles(sols):
    # a profile that is not a solution checks the identity itself
    s = sols[0.3]
    p = np.array([[0.3, 0.2, 0.05], [-0.2, 0.4, 0.1], [0.6, 0.1, -0.03]])
    errs = []
    for h in (4e-3, 2e-3):
        fd, formula = J.verify_identity(s, p, h, np.cos, lambda t: -np.sin(t), lambda t: -np.cos(t))
        errs.append(np.max(np.abs(fd - formula)))
        assert np.max(np.abs(formula)) > 0.1
    assert 3 < errs[0] / errs[1] < 5


def test_fd_sublaplacian_on_polynomials():
    p = np.array([[0.3, -0.4, 0.2], [1.0, 2.0, -0.5]])
    # X1^2 + X2^2 of t^2 is |z|^2/2
    v = J.fd_sublaplacian(lambda q: q[..., 2] ** 2, p, 1e-3)
    assert np.allclose(v, 0.5 * hg.zsq(p), rtol=1e-6)


def test_holder_exponents(sols):
    r = np.logspace(-3, -1, 12)
    for al, s in sols.items():
        axis = J.ray(1.0, r)
        assert abs(J.holder_exponent(s, axis) - al) < 0.05
        mid = 0.5 * (s.tau_alpha + 1)
        assert abs(J.holder_exponent(s, J.ray(mid, r, 1.1)) - al) < 0.05
    assert abs(J.holder_fit(r, r) - 1) < 0.01
    with pytest.raises(ValueError):
        J.holder_fit(r[:4], r[:4])


def test_outer_tangency_fails_at_cone_vertex(sols):
    s = sols[0.5]
    dom = G.jerison_paraboloid(s.M)
    tb = G.outer_xball_tangent(dom, np.zeros(3), 0.05)
    expected = 0.05 * ((1 + 16 * s.M ** 2) ** -0.25 - 1)
    assert tb.gap < -1e-6 and tb.violated
    assert tb.gap == pytest.approx(expected, rel=0.05)
