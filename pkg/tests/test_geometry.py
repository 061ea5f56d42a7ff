import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hpotential import geometry as G
from hpotential import hgroup as hg
from hpotential import measures as M

MODEL = hg.HModel(1)
PPLUS = np.array([0.0, 0.0, 0.25])
EQ = np.array([1.0, 0.0, 0.0])


def test_volume_function_inverse_and_monotone():
    x = hg.GPoint.identity()
    for r in (0.1, 1.0, 3.0):
        assert G.volume_e_inverse(MODEL, x, G.volume_e(MODEL, x, r)) == pytest.approx(r, rel=1e-14)
    radii = np.linspace(0.05, 5, 50)
    E = [G.volume_e(MODEL, x, r) for r in radii]
    assert np.all(np.diff(E) > 0)
    assert G.volume_e(MODEL, x, 0.7) == pytest.approx(0.49 / MODEL.c_Q)
    with pytest.raises(ValueError):
        G.volume_e(MODEL, x, 0.0)


def test_xball_membership():
    c = hg.GPoint((0.3,), (-0.1,), 0.2)
    ball = G.XBall(c, 0.5)
    assert ball.contains(c)
    w = hg.dilate(1.0 / hg.gauge(np.array([0.4, 0.3, 0.1])), np.array([0.4, 0.3, 0.1]))
    far = hg.group_mul(c, hg.dilate(2 * 0.5, w))
    assert not ball.contains(far)
    edge = hg.group_mul(c, hg.dilate(0.5, np.array([1.0, 0, 0])))
    assert not ball.contains(edge)


@settings(max_examples=200)
@given(st.tuples(*(st.floats(-2, 2),) * 3), st.tuples(*(st.floats(-2, 2),) * 3), st.floats(0.05, 3))
def test_xball_equals_gauge_ball(c, q, r):
    # Gamma level set and gauge ball agree (a = 1 calibration)
    ball = G.XBall(hg.GPoint.from_array(np.array(c)), r)
    assert ball.contains(np.array(q)) == (hg.gauge_dist(np.array(c), np.array(q)) < r)


def test_horizontal_normal_examples():
    ball = G.gauge_ball()
    assert G.horizontal_normal(ball, PPLUS).W < 1e-12
    assert G.horizontal_normal(ball, PPLUS).nu_X is None
    for ph in np.linspace(0, 2 * math.pi, 7):
        y = np.array([math.cos(ph), math.sin(ph), 0.0])
        hn = G.horizontal_normal(ball, y)
        assert hn.W == pytest.approx(1.0, abs=1e-14)
        assert np.allclose(np.asarray(hn.N_X), [math.cos(ph), math.sin(ph)])
    half = G.halfspace()
    z = np.array([0.3, -0.4, 0.0])
    hn = G.horizontal_normal(half, z)
    assert hn.W == pytest.approx(0.25)
    assert np.allclose(np.asarray(hn.N_X), [0.2, 0.15])
    with pytest.raises(G.NotOnBoundaryError):
        G.horizontal_normal(ball, np.array([0.1, 0, 0]))


def test_degenerate_normal_error():
    dom = G.ImplicitDomain(lambda q: hg.zsq(q) ** 2 - 0 * q[..., 2], lambda q: 0 * q, (np.zeros(3), np.ones(3)), "flat")
    with pytest.raises(G.DegenerateNormalError):
        G.horizontal_normal(dom, np.zeros(3))


def test_w_continuous_and_vanishes_on_characteristic_set():
    q = M.build_quadrature(G.gauge_ball(), 16)
    near = np.minimum(np.asarray(hg.gauge_dist(PPLUS, q.points)), np.asarray(hg.gauge_dist(-PPLUS, q.points)))
    # W grows linearly in the gauge distance to the poles
    assert np.all(q.W <= 1.0 + 1e-12)
    assert np.all(q.W[near < 0.02] < 0.05)
    assert np.all(q.W[near > 0.5] > 0.1)


def test_characteristic_set_gauge_ball():
    rep = G.characteristic_set(G.gauge_ball(), 16)
    pts = sorted(rep.refined.tolist(), key=lambda p: p[2])
    assert len(pts) == 2
    assert np.allclose(pts[0], [0, 0, -0.25], atol=1e-6)
    assert np.allclose(pts[1], [0, 0, 0.25], atol=1e-6)
    for p in rep.refined:
        assert abs(G.gauge_ball().rho(p)) < 1e-10


def test_characteristic_set_translated():
    a = np.array([1.0, 0.0, 0.0])
    rep = G.characteristic_set(G.gauge_ball(center=a), 16)
    expect = [hg.group_mul(a, PPLUS), hg.group_mul(a, -PPLUS)]
    assert len(rep.refined) == 2
    for p in expect:
        assert min(np.linalg.norm(r - p) for r in rep.refined) < 1e-6


def test_characteristic_set_patches():
    assert len(G.characteristic_set(G.cylinder_patch(), 16).refined) == 0
    plane = G.characteristic_set(G.plane_patch(), 16).refined
    assert len(plane) == 1 and np.allclose(plane[0], 0, atol=1e-8)
    par = G.characteristic_set(G.jerison_paraboloid(-0.5), 16).refined
    assert len(par) == 1 and np.allclose(par[0], 0, atol=1e-8)


def test_cylinder_w_is_one():
    cyl = G.cylinder_patch(1.0, 0.5)
    q = M.build_quadrature(cyl, 8)
    assert np.allclose(q.W, 1.0)


def test_registry():
    assert G.make_domain("gauge_ball", R=2.0).params["R"] == 2.0
    with pytest.raises(ValueError):
        G.make_domain("torus")
    for name in G.DOMAINS:
        kw = {"M": -0.3} if name == "jerison_paraboloid" else {}
        assert G.make_domain(name, **kw).validate()


def test_gauge_ball_gradient_and_hessian():
    dom = G.gauge_ball(0.8, center=np.array([0.2, -0.3, 0.1]))
    p = np.random.default_rng(0).normal(size=(20, 3))
    f = hg.ScalarField(dom.rho)
    assert np.allclose(dom.rho_grad(p), f.gradient(p), rtol=1e-7, atol=1e-7)
    assert np.allclose(dom.rho_hess(p), f.hessian(p), rtol=1e-5, atol=1e-5)


@pytest.mark.parametrize("y,r", [(EQ, 0.2), (PPLUS, 0.1), (-PPLUS, 0.3), (np.array([0, 1.0, 0]), 0.05)])
def test_outer_tangency_on_gauge_ball(y, r):
    tb = G.outer_xball_tangent(G.gauge_ball(), y, r, resolution=32)
    assert tb.gap >= -1e-8
    assert not tb.violated
    assert hg.gauge_dist(tb.center, y) == pytest.approx(r, rel=1e-12)


def test_outer_tangency_at_pole_is_vertical():
    tb = G.outer_xball_tangent(G.gauge_ball(), PPLUS, 0.1, resolution=16)
    assert np.allclose(np.asarray(tb.center), [0, 0, 0.25 + 0.01 / 4], atol=1e-14)


def test_outer_tangency_fails_on_paraboloid():
    M_ = -0.8
    dom = G.jerison_paraboloid(M_, zmax=0.5)
    r = 0.05
    tb = G.outer_xball_tangent(dom, np.zeros(3), r, resolution=32)
    assert tb.violated and tb.gap < -1e-6
    # the worst overlap is the gauge sphere's reach below the paraboloid
    expect = r * ((1 + 16 * M_ ** 2) ** -0.25 - 1)
    assert tb.gap == pytest.approx(expect, rel=2e-2)
