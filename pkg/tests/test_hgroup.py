import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from hpotential import hgroup as hg

coord = st.floats(-3, 3, allow_nan=False)
point = st.tuples(coord, coord, coord).map(np.array)


def rand_points(n, count, seed=0, lo=0.1, hi=10.0):
    rng = np.random.default_rng(seed)
    p = rng.normal(size=(count, 2 * n + 1))
    target = np.exp(rng.uniform(np.log(lo), np.log(hi), count))
    return hg.dilate(1.0, np.stack([hg.as_array(hg.dilate(s / hg.gauge(q), q)) for q, s in zip(p, target)]))


@given(point, point, point)
def test_associativity(p, q, r):
    lhs = hg.group_mul(hg.group_mul(p, q), r)
    rhs = hg.group_mul(p, hg.group_mul(q, r))
    assert np.allclose(lhs, rhs, atol=1e-14 * (1 + np.abs(lhs).max()), rtol=0)


@given(point)
def test_identity_and_inverse(p):
    e = np.zeros(3)
    assert np.array_equal(hg.group_mul(p, e), p)
    assert np.array_equal(hg.group_mul(e, p), p)
    assert np.allclose(hg.group_mul(p, hg.group_inv(p)), 0, atol=1e-14)
    assert np.allclose(hg.group_mul(hg.group_inv(p), p), 0, atol=1e-14)


def test_group_law_example():
    out = hg.group_mul(hg.GPoint((1,), (0,), 0), hg.GPoint((0,), (1,), 0))
    assert out == hg.GPoint((1,), (1,), 0.5)


def test_dimension_mismatch():
    with pytest.raises(hg.DimensionError):
        hg.group_mul(np.zeros(3), np.zeros(5))
    with pytest.raises(hg.DimensionError):
        hg.GPoint((0, 1), (0,), 0)


def test_gpoint_rejects_nonfinite():
    with pytest.raises(ValueError):
        hg.GPoint((math.nan,), (0,), 0)


def test_dilation_inverse_examples():
    assert hg.dilate(2, hg.GPoint((1,), (0,), 1)) == hg.GPoint((2,), (0,), 4)
    assert hg.group_inv(hg.GPoint((0,), (0,), 5)) == hg.GPoint((0,), (0,), -5)
    p = hg.GPoint((0.3,), (-1.2,), 0.7)
    assert hg.dilate(1, p) == p
    with pytest.raises(ValueError):
        hg.dilate(0, p)


@given(point, st.floats(0.1, 10), st.floats(0.1, 10))
def test_dilation_composition_and_gauge_homogeneity(p, lam, mu):
    assert np.allclose(hg.dilate(lam, hg.dilate(mu, p)), hg.dilate(lam * mu, p), rtol=1e-14, atol=1e-14)
    assert math.isclose(hg.gauge(hg.dilate(lam, p)), lam * hg.gauge(p), rel_tol=1e-12, abs_tol=1e-300)


def test_dilation_is_automorphism():
    rng = np.random.default_rng(1)
    p, q = rng.normal(size=(2, 3))
    assert np.allclose(hg.dilate(2.5, hg.group_mul(p, q)), hg.group_mul(hg.dilate(2.5, p), hg.dilate(2.5, q)))


def test_gauge_examples():
    assert hg.gauge(hg.GPoint((0.6,), (0.8,), 0)) == pytest.approx(1.0, abs=1e-15)
    assert hg.gauge(hg.GPoint((0,), (0,), 0.09)) == pytest.approx(2 * math.sqrt(0.09), rel=1e-15)
    p = hg.GPoint((0.1,), (2,), -3)
    assert hg.gauge_dist(p, p) == 0


@given(point, point)
def test_gauge_dist_symmetric(p, q):
    assert math.isclose(hg.gauge_dist(p, q), hg.gauge_dist(q, p), rel_tol=1e-12, abs_tol=1e-12)


@settings(max_examples=300)
@given(point, point, point)
def test_gauge_dist_triangle(p, q, r):
    # the Koranyi gauge distance is a genuine metric on H^n
    assert hg.gauge_dist(p, r) <= hg.gauge_dist(p, q) + hg.gauge_dist(q, r) + 1e-9


@given(point)
def test_left_translation_pushes_coordinate_fields_to_frame(p):
    # (L_p)_* d/dx_j at e must equal X_j(p); this pins the sign of Im(z conj z')
    J = hg.left_translation_jacobian(p)
    F = hg.horizontal_frame(p)
    assert np.allclose(J[:, :2].T, F, atol=1e-15)
    # the Jacobian is the derivative of q -> p q
    h = 1e-6
    num = np.stack([(hg.group_mul(p, h * e) - hg.group_mul(p, -h * e)) / (2 * h) for e in np.eye(3)], axis=1)
    assert np.allclose(num, J, atol=1e-8)


def test_frame_is_left_invariant():
    rng = np.random.default_rng(2)
    for _ in range(20):
        a, q = rng.normal(size=(2, 3))
        J = hg.left_translation_jacobian(a)
        assert np.allclose(hg.horizontal_frame(q) @ J.T, hg.horizontal_frame(hg.group_mul(a, q)))


def poly_field(coeffs):
    """Quadratic polynomial ``c0 + b.p + p^T A p`` with exact partials."""
    c0, b, A = coeffs
    A = 0.5 * (A + A.T)
    return hg.ScalarField(
        lambda a: c0 + a @ b + np.einsum("...i,ij,...j->...", a, A, a),
        lambda a: b + 2 * a @ A,
        lambda a: np.broadcast_to(2 * A, a.shape[:-1] + A.shape),
    )


def test_commutator_on_polynomials():
    # [X_1, X_2] f = f_t for f = t, x y, x t, y t, t^2
    rng = np.random.default_rng(3)
    p = rng.normal(size=(50, 3))
    for f, ft in [
        (lambda a: a[..., 2], lambda a: np.ones(len(a))),
        (lambda a: a[..., 0] * a[..., 2], lambda a: a[..., 0]),
        (lambda a: a[..., 2] ** 2, lambda a: 2 * a[..., 2]),
    ]:
        sf = hg.ScalarField(f)
        X = lambda g, j: hg.ScalarField(lambda a: hg.x_gradient(hg.ScalarField(g), a)[..., j])
        x12 = hg.x_gradient(X(f, 1), p)[..., 0]
        x21 = hg.x_gradient(X(f, 0), p)[..., 1]
        assert np.allclose(x12 - x21, ft(p), atol=1e-6)
        del sf


def test_x_gradient_examples():
    rng = np.random.default_rng(4)
    p = rng.normal(size=(10, 3))
    t = poly_field((0.0, np.array([0, 0, 1.0]), np.zeros((3, 3))))
    assert np.allclose(hg.x_gradient(t, p), np.stack([-p[:, 1] / 2, p[:, 0] / 2], axis=1), atol=1e-15)
    x1 = poly_field((0.0, np.array([1.0, 0, 0]), np.zeros((3, 3))))
    assert np.allclose(hg.x_gradient(x1, p), [1, 0])
    g = hg.x_gradient(hg.gauge_field(), hg.GPoint((0.3,), (0.4,), 0.2))
    assert isinstance(g, hg.HorizontalVector) and len(g) == 2


def test_x_gradient_of_gauge_closed_form():
    p = rand_points(1, 1000)
    N = hg.gauge(p)
    XN = hg.x_gradient(hg.gauge_field(), p)
    assert np.allclose(XN, hg.gauge_xgrad(p), rtol=1e-13, atol=1e-15)
    assert np.max(np.abs(np.sum(XN ** 2, axis=-1) - hg.zsq(p) / N ** 2)) < 1e-12


def test_gauge_derivatives_against_differences():
    p = rand_points(2, 50, lo=0.5, hi=2)
    num = hg.ScalarField(hg.gauge)
    assert np.allclose(num.gradient(p), hg.gauge_grad(p), atol=1e-9)
    assert np.allclose(num.hessian(p), hg.gauge_hess(p), atol=1e-6)


@settings(max_examples=100)
@given(st.integers(0, 10 ** 6))
def test_kohn_matches_sum_of_squares_on_quadratics(seed):
    rng = np.random.default_rng(seed)
    f = poly_field((rng.normal(), rng.normal(size=3), rng.normal(size=(3, 3))))
    p = rng.normal(size=(5, 3))
    assert np.allclose(hg.kohn_laplacian(f, p), hg.sum_of_squares(f, p), atol=1e-12)


def test_harmonic_polynomials():
    p = np.random.default_rng(5).normal(size=(100, 3))
    for b in ([0, 0, 1.0], [1.0, 0, 0]):
        f = poly_field((0.25, np.array(b), np.zeros((3, 3))))
        assert np.all(hg.kohn_laplacian(f, p) == 0)
    # x^2 - y^2 and x y are harmonic, t^2 is not
    A = np.diag([1.0, -1.0, 0.0])
    assert np.allclose(hg.kohn_laplacian(poly_field((0, np.zeros(3), A)), p), 0)
    T = np.diag([0, 0, 1.0])
    assert np.allclose(hg.kohn_laplacian(poly_field((0, np.zeros(3), T)), p), 0.5 * hg.zsq(p))


@pytest.mark.parametrize("n", [1, 2])
def test_sub_laplacian_of_gauge(n):
    p = rand_points(n, 1000, seed=n)
    N = hg.gauge(p)
    psi = hg.zsq(p) / N ** 2
    Q = 2 * n + 2
    L = hg.kohn_laplacian(hg.gauge_field(), p)
    assert np.max(np.abs(L - (Q - 1) * psi / N) * N) < 1e-12


def test_sub_laplacian_of_gauge_on_the_plane_t0():
    # psi = 1 on t = 0, where L N = (Q-1)/N
    p = np.random.default_rng(6).normal(size=(100, 3))
    p[:, 2] = 0
    N = hg.gauge(p)
    assert np.allclose(hg.kohn_laplacian(hg.gauge_field(), p), 3 / N, rtol=1e-13)


def test_sub_laplacian_of_gauge_n2():
    assert hg.HModel(2).Q == 6


@pytest.mark.parametrize("k", [1, 2, 3])
def test_radial_functions(k):
    p = rand_points(1, 200, seed=10 + k, lo=0.5, hi=2)
    N = hg.gauge(p)
    psi = hg.zsq(p) / N ** 2
    f = hg.ScalarField(lambda a: hg.gauge(a) ** k)
    rhs = psi * (k * (k - 1) * N ** (k - 2) + 3 * k * N ** (k - 2))
    assert np.max(np.abs(hg.kohn_laplacian(f, p) - rhs)) < 1e-6


def test_radial_square_example():
    # f(s) = s^2 gives L N^2 = psi (2 + 2 (Q-1)) = 8 psi at n = 1
    p = rand_points(1, 50, seed=20)
    psi = hg.zsq(p) / hg.gauge(p) ** 2
    f = hg.radial_field(lambda s: s * s, lambda s: 2 * s, lambda s: 2 + 0 * s)
    assert np.allclose(hg.kohn_laplacian(f, p), 8 * psi, rtol=1e-12)


def test_fundamental_solution_basics():
    m = hg.HModel(1)
    p = hg.GPoint((0.3,), (-0.2,), 0.4)
    assert hg.fundamental_solution(m, p) == pytest.approx(m.c_Q / hg.gauge(p) ** 2, rel=1e-15)
    assert hg.fundamental_solution(m, hg.dilate(3, p)) == pytest.approx(hg.fundamental_solution(m, p) / 9, rel=1e-13)
    with pytest.raises(hg.PoleError):
        hg.fundamental_solution(m, hg.GPoint.identity())
    with pytest.raises(hg.DimensionError):
        hg.fundamental_solution(m, np.zeros(5) + 1)
    g = hg.fundamental_solution_xgrad(m, p)
    num = hg.x_gradient(hg.ScalarField(lambda a: hg.fundamental_solution(m, a)), p)
    assert np.allclose(np.asarray(g), np.asarray(num), rtol=1e-8)


def test_fundamental_solution_harmonic():
    m = hg.HModel(1)
    p = rand_points(1, 100, seed=7, lo=1, hi=1)
    f = hg.ScalarField(lambda a: hg.fundamental_solution(m, a), h2_fd=1e-4)
    assert np.max(np.abs(hg.kohn_laplacian(f, p))) < 1e-6
    exact = hg.fundamental_solution_field(m)
    assert np.max(np.abs(hg.kohn_laplacian(exact, rand_points(1, 100, seed=8)))) < 1e-10


def test_translated_fundamental_solution():
    m = hg.HModel(1)
    pole = np.array([0.2, -0.1, 0.3])
    f = hg.fundamental_solution_field(m, pole)
    q = np.array([0.9, 0.4, -0.5])
    assert f(q) == pytest.approx(m.c_Q / hg.gauge_dist(pole, q) ** 2)
    assert abs(hg.kohn_laplacian(f, q)) < 1e-5


def volume_oracle(n):
    """1/c_Q as ``int_{N<1} (Q-2)^2 |z|^2 / N^4`` in (|z|, t) coordinates.

    The t-integral is done by hand: int dt / (r^4 + 16 t^2) over
    |t| < sqrt(1 - r^4)/4 equals arctan(sqrt(1 - r^4) / r^2) / (2 r^2).
    """
    Q = 2 * n + 2
    area = 2 * math.pi ** n / math.gamma(n)

    def integrand(r):
        return area * (Q - 2) ** 2 * r ** (2 * n - 1) * math.atan(math.sqrt(1 - r ** 4) / r ** 2) / 2

    val, _ = quad(integrand, 0, 1, epsabs=1e-13, epsrel=1e-13, limit=200)
    return 1 / val


def test_cq_closed_forms():
    # by hand: 1/c_4 = 2 pi and 1/c_6 = pi^3
    assert hg.HModel(1).c_Q == pytest.approx(1 / (2 * math.pi), rel=1e-12)
    assert hg.HModel(2).c_Q == pytest.approx(1 / math.pi ** 3, rel=1e-12)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_cq_against_volume_route(n):
    assert hg.HModel(n).c_Q == pytest.approx(volume_oracle(n), rel=1e-8)


def test_mean_value_mass_radius_independent():
    m = hg.HModel(1)
    for R in (1.0, 0.5, 3.0):
        assert abs(hg.mean_value_mass(m, R) - 1) < 1e-10
    assert abs(hg.normalize_cq(m, 32) - hg.normalize_cq(m, 64)) < 1e-4 * m.c_Q


def test_normalize_cq_reports_failure():
    with pytest.raises(hg.QuadratureError) as info:
        hg.normalize_cq(hg.HModel(1), resolution=2)
    assert info.value.residual > 0


def test_unit_ball_volume():
    assert hg.unit_ball_volume(1) == pytest.approx(math.pi ** 2 / 8, rel=1e-12)


def test_hmodel_validation():
    with pytest.raises(ValueError):
        hg.HModel(0)
    with pytest.raises(ValueError):
        hg.HModel(1, c_Q=-1.0)
