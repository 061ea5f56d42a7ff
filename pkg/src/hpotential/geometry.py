"""X-balls, implicit domains, horizontal normals and outer-ball tangency.

X-balls are calibrated to coincide with gauge balls: ``E(x, r) = r^(Q-2)/c_Q``
so that ``{Gamma(x, .) > 1/E(x, r)} = {gauge_dist(x, .) < r}``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import hgroup as hg
from .hgroup import GPoint, HModel, as_array


class DegenerateNormalError(ValueError):
    pass


class NotOnBoundaryError(ValueError):
    pass


class SolverError(RuntimeError):
    def __init__(self, message, residual):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


# ---------------------------------------------------------------------------
# volume function and X-balls


def volume_e(model: HModel, x, r: float) -> float:
    """``E(x, r) = r^(Q-2) / c_Q`` (independent of x by left invariance)."""
    if not r > 0:
        raise ValueError("radius must be positive")
    return r ** (model.Q - 2) / model.c_Q


def volume_e_inverse(model: HModel, x, s: float) -> float:
    """``F(x, s) = (c_Q s)^(1/(Q-2))``, the inverse of ``r -> E(x, r)``."""
    if not s > 0:
        raise ValueError("level must be positive")
    return (model.c_Q * s) ** (1.0 / (model.Q - 2))


@dataclass(frozen=True)
class XBall:
    center: GPoint
    radius: float
    model: HModel = field(default_factory=HModel)

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("radius must be positive")

    def contains(self, q) -> bool:
        return xball_contains(self, q)


def xball_contains(ball: XBall, q) -> bool:
    """Membership via the level set of Gamma, cross-checked against the gauge."""
    d = hg.gauge_dist(ball.center, q)
    by_gauge = d < ball.radius
    if d == 0:
        by_gamma = True
    else:
        gam = hg.fundamental_solution(ball.model, hg.group_mul(hg.group_inv(as_array(ball.center)), as_array(q)))
        by_gamma = gam > 1.0 / volume_e(ball.model, ball.center, ball.radius)
    if by_gamma != by_gauge and abs(d - ball.radius) > 1e-12 * ball.radius:
        raise AssertionError("X-ball and gauge-ball membership disagree")
    return bool(by_gauge)


# ---------------------------------------------------------------------------
# parametric patches (n = 1)


@dataclass
class Atlas:
    """A single parametric patch ``(u, v) -> point`` covering a surface.

    ``area_vector`` returns the outward vector ``P_u x P_v`` (or its negative)
    whose length is the area element. ``breaks(resolution)`` gives the cell
    breakpoints used by composite quadrature.
    """

    point: Callable[[np.ndarray, np.ndarray], np.ndarray]
    area_vector: Callable[[np.ndarray, np.ndarray], np.ndarray]
    breaks: Callable[[int], tuple]
    u_range: tuple
    v_range: tuple
    periodic_v: bool = True
    band_variable: Optional[Callable[[np.ndarray], np.ndarray]] = None


def _graded(lo, hi, resolution, grade_lo=False, grade_hi=False, ratio=0.6, depth=None):
    """Uniform breakpoints, optionally with geometric refinement at the ends."""
    b = list(np.linspace(lo, hi, resolution + 1))
    width = (hi - lo) / resolution
    depth = depth if depth is not None else 14
    if grade_lo:
        b += [lo + width * ratio ** k for k in range(1, depth)]
    if grade_hi:
        b += [hi - width * ratio ** k for k in range(1, depth)]
    return np.unique(np.array(b))


def _shear_cotransform(center, vec):
    """Area vectors transform by ``J^-T`` under left translation (det J = 1)."""
    c = as_array(center)
    a = np.array([-0.5 * c[1], 0.5 * c[0]])
    out = np.array(vec, dtype=float, copy=True)
    out[..., 0] -= a[0] * vec[..., 2]
    out[..., 1] -= a[1] * vec[..., 2]
    return out


def _gauge_ball_atlas(R, center):
    c = as_array(center)

    def base(th, ph):
        r = R * np.sqrt(np.maximum(np.cos(th), 0.0))
        return np.stack([r * np.cos(ph), r * np.sin(ph), 0.25 * R * R * np.sin(th)], axis=-1)

    def point(th, ph):
        return hg.group_mul(c, base(th, ph))

    def area_vector(th, ph):
        cth = np.maximum(np.cos(th), 0.0)
        tprime = 0.25 * R * R * cth
        r = R * np.sqrt(cth)
        v = np.stack([tprime * r * np.cos(ph), tprime * r * np.sin(ph), 0.5 * R * R * np.sin(th) + 0 * ph], axis=-1)
        return _shear_cotransform(c, v)

    def breaks(resolution):
        res = max(8, 8 * int(math.ceil(resolution / 8)))
        # grade in theta so |z| ~ sqrt(cos theta) is resolved near the poles
        u = np.linspace(-0.5 * math.pi, 0.5 * math.pi, res + 1)
        s = 0.5 * 0.55 ** np.arange(0, 26)
        pole = np.arccos(s * s)
        u = np.unique(np.concatenate([u, pole, -pole]))
        v = np.linspace(0.0, 2 * math.pi, 2 * res + 1)
        return u, v

    def band_variable(p):
        # sin(theta) of the centered copy; equals tau = 4t/N^2 on the sphere
        w = hg.group_mul(hg.group_inv(c), p)
        N = hg.gauge(w)
        return 4.0 * w[..., 2] / np.asarray(N) ** 2

    return Atlas(point, area_vector, breaks, (-0.5 * math.pi, 0.5 * math.pi), (0.0, 2 * math.pi), True, band_variable)


def _graph_disk_atlas(height, dheight, zmax):
    """Graph ``t = h(|z|)`` over the disk ``|z| < zmax`` in polar coordinates."""

    def point(s, ph):
        return np.stack([s * np.cos(ph), s * np.sin(ph), height(s) + 0 * ph], axis=-1)

    def area_vector(s, ph):
        hp = dheight(s)
        return np.stack([s * hp * np.cos(ph), s * hp * np.sin(ph), -s + 0 * ph], axis=-1)

    def breaks(resolution):
        res = max(4, int(resolution))
        return _graded(0.0, zmax, res, grade_lo=True, ratio=0.5, depth=20), np.linspace(0, 2 * math.pi, 2 * res + 1)

    return Atlas(point, area_vector, breaks, (0.0, zmax), (0.0, 2 * math.pi), True)


def _cylinder_atlas(radius, height):
    def point(t, ph):
        return np.stack([radius * np.cos(ph) + 0 * t, radius * np.sin(ph) + 0 * t, t + 0 * ph], axis=-1)

    def area_vector(t, ph):
        return np.stack([radius * np.cos(ph) + 0 * t, radius * np.sin(ph) + 0 * t, 0 * t + 0 * ph], axis=-1)

    def breaks(resolution):
        res = max(4, int(resolution))
        return np.linspace(-height, height, res + 1), np.linspace(0, 2 * math.pi, 2 * res + 1)

    return Atlas(point, area_vector, breaks, (-height, height), (0.0, 2 * math.pi), True)


# ---------------------------------------------------------------------------
# domains


@dataclass
class ImplicitDomain:
    """``D = {rho < 0}`` with Euclidean gradient (and optionally Hessian).

    ``surface_only`` marks patches (cylinder, plane) that are studied as
    surfaces rather than as bounded open sets.
    """

    rho: Callable[[np.ndarray], np.ndarray]
    rho_grad: Callable[[np.ndarray], np.ndarray]
    bbox: tuple
    name: str
    n: int = 1
    rho_hess: Optional[Callable[[np.ndarray], np.ndarray]] = None
    atlas: Optional[Atlas] = None
    params: dict = field(default_factory=dict)
    surface_only: bool = False

    def contains(self, p) -> np.ndarray:
        return np.asarray(self.rho(as_array(p))) < 0

    def normal(self, p) -> np.ndarray:
        g = np.asarray(self.rho_grad(as_array(p)), dtype=float)
        nrm = np.linalg.norm(g, axis=-1, keepdims=True)
        if np.any(nrm == 0):
            raise DegenerateNormalError("defining function has vanishing gradient")
        return g / nrm

    def hessian(self, p) -> np.ndarray:
        a = as_array(p)
        if self.rho_hess is not None:
            return np.asarray(self.rho_hess(a), dtype=float)
        return hg.fd_gradient(lambda q: self.rho_grad(q), a, 1e-5).swapaxes(-1, -2)

    def project(self, p, tol=1e-12, max_iter=50) -> np.ndarray:
        """Newton steps along the gradient onto ``{rho = 0}``."""
        q = np.array(as_array(p), dtype=float, copy=True)
        for _ in range(max_iter):
            r = np.asarray(self.rho(q))
            if np.all(np.abs(r) < tol):
                break
            g = np.asarray(self.rho_grad(q))
            q = q - (r / np.sum(g * g, axis=-1))[..., None] * g
        return q

    def validate(self, samples=2000, seed=0):
        """Sample checks: nonempty interior, nonvanishing gradient on the boundary."""
        rng = np.random.default_rng(seed)
        lo, hi = (np.asarray(b, dtype=float) for b in self.bbox)
        p = lo + (hi - lo) * rng.random((samples, lo.size))
        inside = self.contains(p)
        if not self.surface_only and not inside.any():
            raise ValueError(f"{self.name}: no interior sample points")
        if self.atlas is not None:
            u = rng.uniform(*self.atlas.u_range, samples)
            v = rng.uniform(*self.atlas.v_range, samples)
            b = self.atlas.point(u, v)
            g = np.linalg.norm(self.rho_grad(b), axis=-1)
            if np.mean(g > 0) < 0.999:
                raise ValueError(f"{self.name}: gradient vanishes on the boundary")
        return True


def _bbox_from_atlas(atlas, pad=0.02):
    u = np.linspace(*atlas.u_range, 201)
    v = np.linspace(*atlas.v_range, 201)
    U, V = np.meshgrid(u, v, indexing="ij")
    P = atlas.point(U, V).reshape(-1, 3)
    lo, hi = P.min(axis=0), P.max(axis=0)
    span = hi - lo
    return lo - pad * span, hi + pad * span


def gauge_ball(R: float = 1.0, center=None, n: int = 1) -> ImplicitDomain:
    """``{N(c^-1 q) < R}`` with ``rho = N^4(c^-1 q) - R^4``."""
    if not R > 0:
        raise ValueError("radius must be positive")
    c = np.zeros(2 * n + 1) if center is None else as_array(center)
    cinv = hg.group_inv(c)
    J = hg.left_translation_jacobian(cinv)

    def rho(q):
        w = hg.group_mul(cinv, q)
        r2 = hg.zsq(w)
        return r2 * r2 + 16.0 * w[..., -1] ** 2 - R ** 4

    def grad_w(w):
        g = np.empty(w.shape)
        g[..., :-1] = 4.0 * hg.zsq(w)[..., None] * w[..., :-1]
        g[..., -1] = 32.0 * w[..., -1]
        return g

    def grad(q):
        return grad_w(hg.group_mul(cinv, q)) @ J

    def hess(q):
        w = hg.group_mul(cinv, q)
        d = w.shape[-1]
        zw = w[..., :-1]
        H = np.zeros(w.shape[:-1] + (d, d))
        H[..., :-1, :-1] = 4.0 * (hg.zsq(w)[..., None, None] * np.eye(d - 1) + 2.0 * zw[..., :, None] * zw[..., None, :])
        H[..., -1, -1] = 32.0
        return J.T @ H @ J

    atlas = _gauge_ball_atlas(R, c) if n == 1 else None
    if atlas is not None:
        bbox = _bbox_from_atlas(atlas)
    else:
        # |x_j|, |y_j| <= R; |t| <= R^2/4 before translation
        half = np.concatenate([np.full(2 * n, R), [0.25 * R * R + 0.5 * R * np.abs(c[:2 * n]).sum()]])
        bbox = (c - 1.02 * half, c + 1.02 * half)
    return ImplicitDomain(rho, grad, bbox, "gauge_ball", n, hess, atlas, {"R": R, "center": tuple(c)})


def jerison_paraboloid(M: float, zmax: float = 0.5) -> ImplicitDomain:
    """``{t > M |z|^2}`` (M < 0), truncated to ``|z| < zmax`` for sampling."""
    if not M < 0:
        raise ValueError("the paraboloid parameter M must be negative")

    def rho(q):
        return M * hg.zsq(q) - q[..., -1]

    def grad(q):
        g = np.empty(q.shape)
        g[..., :-1] = 2.0 * M * q[..., :-1]
        g[..., -1] = -1.0
        return g

    def hess(q):
        d = q.shape[-1]
        H = np.zeros(q.shape[:-1] + (d, d))
        H[..., :-1, :-1] = 2.0 * M * np.eye(d - 1)
        return H

    atlas = _graph_disk_atlas(lambda s: M * s * s, lambda s: 2 * M * s, zmax)
    bbox = (np.array([-zmax, -zmax, M * zmax * zmax]), np.array([zmax, zmax, zmax * zmax]))
    return ImplicitDomain(rho, grad, bbox, "jerison_paraboloid", 1, hess, atlas, {"M": M, "zmax": zmax})


def halfspace(zmax: float = 1.0) -> ImplicitDomain:
    """``{t < 0}``; the atlas covers the disk ``|z| < zmax`` of its boundary."""
    dom = plane_patch(zmax)
    dom.name = "halfspace"
    dom.surface_only = False
    return dom


def plane_patch(zmax: float = 1.0) -> ImplicitDomain:
    def rho(q):
        return q[..., -1] + 0.0

    def grad(q):
        g = np.zeros(q.shape)
        g[..., -1] = 1.0
        return g

    def hess(q):
        d = q.shape[-1]
        return np.zeros(q.shape[:-1] + (d, d))

    atlas = _graph_disk_atlas(lambda s: 0 * s, lambda s: 0 * s, zmax)
    # outward normal of {t < 0} is +t
    inner = atlas.area_vector
    atlas.area_vector = lambda s, ph: -inner(s, ph)
    bbox = (np.array([-zmax, -zmax, -zmax]), np.array([zmax, zmax, zmax]))
    return ImplicitDomain(rho, grad, bbox, "plane_patch", 1, hess, atlas, {"zmax": zmax}, surface_only=True)


def cylinder_patch(radius: float = 1.0, height: float = 0.5) -> ImplicitDomain:
    """The vertical cylinder ``{|z| = radius}``, ``|t| < height``, as a surface."""

    def rho(q):
        return hg.zsq(q) - radius * radius

    def grad(q):
        g = np.zeros(q.shape)
        g[..., :-1] = 2.0 * q[..., :-1]
        return g

    def hess(q):
        d = q.shape[-1]
        H = np.zeros(q.shape[:-1] + (d, d))
        H[..., :-1, :-1] = 2.0 * np.eye(d - 1)
        return H

    atlas = _cylinder_atlas(radius, height)
    bbox = (np.array([-radius, -radius, -height]) * 1.02, np.array([radius, radius, height]) * 1.02)
    return ImplicitDomain(rho, grad, bbox, "cylinder_patch", 1, hess, atlas, {"radius": radius, "height": height},
                          surface_only=True)


def euclidean_ball(R: float = 1.0) -> ImplicitDomain:
    """Round ball; has no atlas, so quadrature goes through level-set extraction."""

    def rho(q):
        return np.sum(q * q, axis=-1) - R * R

    def grad(q):
        return 2.0 * q

    def hess(q):
        d = q.shape[-1]
        return np.broadcast_to(2.0 * np.eye(d), q.shape[:-1] + (d, d))

    bbox = (np.full(3, -1.05 * R), np.full(3, 1.05 * R))
    return ImplicitDomain(rho, grad, bbox, "euclidean_ball", 1, hess, None, {"R": R})


DOMAINS = {
    "gauge_ball": gauge_ball,
    "jerison_paraboloid": jerison_paraboloid,
    "halfspace": halfspace,
    "plane_patch": plane_patch,
    "cylinder_patch": cylinder_patch,
    "euclidean_ball": euclidean_ball,
}


def make_domain(name: str, **params) -> ImplicitDomain:
    try:
        factory = DOMAINS[name]
    except KeyError:
        raise ValueError(f"unknown domain {name!r}; known: {sorted(DOMAINS)}") from None
    return factory(**params)


# ---------------------------------------------------------------------------
# horizontal normal and characteristic set


def horizontal_normal_arrays(domain: ImplicitDomain, y):
    """Vectorized ``(N^X, W)`` from the unit Euclidean normal."""
    a = as_array(y)
    nu = domain.normal(a)
    NX = hg.frame_components(a, nu)
    return NX, np.linalg.norm(NX, axis=-1)


@dataclass(frozen=True)
class HorizontalNormal:
    N_X: hg.HorizontalVector
    W: float
    nu_X: Optional[hg.HorizontalVector]

    def __iter__(self):
        return iter((self.N_X, self.W, self.nu_X))


def horizontal_normal(domain: ImplicitDomain, y, tol: float = 1e-6, boundary_tol: float = 1e-8) -> HorizontalNormal:
    a = as_array(y)
    if abs(float(domain.rho(a))) >= boundary_tol:
        raise NotOnBoundaryError(f"|rho| = {abs(float(domain.rho(a))):.3e} exceeds {boundary_tol}")
    NX, W = horizontal_normal_arrays(domain, a)
    W = float(W)
    nuX = hg.HorizontalVector(NX / W) if W > tol else None
    return HorizontalNormal(hg.HorizontalVector(NX), W, nuX)


@dataclass
class CharacteristicReport:
    nodes: np.ndarray
    refined: np.ndarray
    tol: float
    failures: list = field(default_factory=list)

    def clusters(self):
        return len(self.refined)


def _char_system(domain, p):
    g = np.asarray(domain.rho_grad(p))
    return np.concatenate([[float(domain.rho(p))], hg.frame_components(p, g)])


def _refine_characteristic(domain, p0, max_iter=60, tol=1e-13):
    p = np.array(p0, dtype=float)
    d = p.size
    h = 1e-7
    for it in range(max_iter):
        F = _char_system(domain, p)
        if np.max(np.abs(F)) < tol:
            return p, float(np.max(np.abs(F)))
        Jm = np.empty((d, d))
        for k in range(d):
            e = np.zeros(d)
            e[k] = h
            Jm[:, k] = (_char_system(domain, p + e) - _char_system(domain, p - e)) / (2 * h)
        try:
            step = np.linalg.solve(Jm, F)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(Jm, F, rcond=None)[0]
        p = p - step
    F = _char_system(domain, p)
    return p, float(np.max(np.abs(F)))


def characteristic_set(domain: ImplicitDomain, resolution=32, tol: float = 1e-6, candidate_w: float = 0.05,
                       quadrature=None) -> CharacteristicReport:
    """Locate boundary points with ``W = 0``.

    Quadrature nodes with ``W < candidate_w`` seed a square Newton system
    (``rho = 0`` and ``<grad rho, X_j> = 0``); converged roots are merged.
    """
    if quadrature is None:
        from .measures import build_quadrature

        quadrature = build_quadrature(domain, resolution)
    pts, W = quadrature.points, quadrature.W
    order = np.argsort(W)
    cand = order[W[order] < candidate_w]
    refined, failures = [], []
    seeds = []
    for i in cand:
        p = pts[i]
        if any(np.linalg.norm(p - s) < 1e-2 for s in seeds):
            continue
        seeds.append(p)
        if len(seeds) > 50:
            break
    for s in seeds:
        p, res = _refine_characteristic(domain, s)
        _, Wp = horizontal_normal_arrays(domain, p)
        if res < 1e-10 and abs(float(domain.rho(p))) < 1e-10 and float(Wp) < 1e-8:
            if not any(np.linalg.norm(p - q) < 1e-6 for q in refined):
                refined.append(p)
        else:
            failures.append({"seed": s.tolist(), "residual": res})
    refined = np.array(refined).reshape(-1, pts.shape[-1])
    return CharacteristicReport(pts[W < tol] if np.any(W < tol) else pts[cand], refined, tol, failures)


# ---------------------------------------------------------------------------
# outer X-ball tangency


@dataclass(frozen=True)
class TangentBall:
    center: GPoint
    gap: float
    residual: float
    violated: bool

    def __iter__(self):
        return iter((self.center, self.gap))


def _frame_covector(p, g):
    """Frame components ``(X_1..X_2n, T)`` of a Euclidean covector ``g`` at p."""
    n = (p.size - 1) // 2
    return hg.frame_components(p, g), g[2 * n]


def tangent_center(domain: ImplicitDomain, y, r: float):
    """Center ``c`` of the gauge sphere of radius r touching ``{rho = 0}`` at y from outside.

    Requires ``(X N^4, T N^4)(c^-1 y) = -k (X rho, T rho)(y)`` with k > 0 and
    ``N(c^-1 y) = r``. With ``A = a_j + i a_{n+j}`` and ``K = k^2`` this is a
    quadratic in K, solved in closed form.
    """
    if not r > 0:
        raise ValueError("radius must be positive")
    yv = as_array(y)
    n = (yv.size - 1) // 2
    g = np.asarray(domain.rho_grad(yv), dtype=float)
    if not np.linalg.norm(g) > 0:
        raise DegenerateNormalError("defining function has vanishing gradient")
    g = g / np.linalg.norm(g)
    a, aT = _frame_covector(yv, g)
    A = a[:n] + 1j * a[n:]
    A2 = float(np.sum(np.abs(A) ** 2))
    qa = A2 * A2 / (256.0 * r ** 8)
    qb = aT * aT / 64.0
    K = 2.0 * r ** 4 / (qb + math.sqrt(qb * qb + 4.0 * qa * r ** 4))
    k = math.sqrt(K)
    s = K * A2 / (16.0 * r ** 4)
    t = -k * aT / 32.0
    z = -k * A / (4.0 * s + 16j * t)
    w = np.concatenate([z.real, z.imag, [t]])
    c = hg.group_mul(yv, hg.group_inv(w))
    return c


def outer_xball_tangent(domain: ImplicitDomain, y, r: float, nodes=None, resolution: int = 64,
                        violation_tol: float = 1e-6) -> TangentBall:
    """Tangent outer gauge ball at ``y`` and its worst overlap with the boundary.

    ``gap = min(gauge_dist(c, node) - r)`` over boundary nodes; negative
    values mean the ball pokes into the domain.
    """
    yv = as_array(y)
    c = tangent_center(domain, yv, r)
    # residuals: on the sphere, normals aligned and outward
    w = hg.group_mul(hg.group_inv(c), yv)
    res_sphere = abs(hg.gauge(w) - r) / r
    gN4 = 4.0 * hg.gauge(w) ** 3 * hg.gauge_grad(w) @ hg.left_translation_jacobian(hg.group_inv(c))
    g = np.asarray(domain.rho_grad(yv))
    cosang = float(-gN4 @ g / (np.linalg.norm(gN4) * np.linalg.norm(g)))
    residual = max(res_sphere, 1.0 - cosang)
    if residual > 1e-9:
        raise SolverError("tangent-ball construction failed", residual)
    if nodes is None:
        from .measures import build_quadrature

        nodes = build_quadrature(domain, resolution).points
    nodes = as_array(nodes)
    gap = float(np.min(np.asarray(hg.gauge_dist(c, nodes)) - r))
    return TangentBall(GPoint.from_array(c), gap, residual, gap < -violation_tol)


def local_boundary_nodes(domain: ImplicitDomain, y, radius: float, count: int = 400):
    """Dense atlas nodes in a Euclidean neighbourhood of y, for gap checks."""
    atlas = domain.atlas
    if atlas is None:
        raise ValueError("domain has no atlas")
    u = np.linspace(*atlas.u_range, count)
    v = np.linspace(*atlas.v_range, count, endpoint=not atlas.periodic_v)
    U, V = np.meshgrid(u, v, indexing="ij")
    P = atlas.point(U, V).reshape(-1, as_array(y).size)
    keep = np.linalg.norm(P - as_array(y), axis=-1) < radius
    return P[keep]
