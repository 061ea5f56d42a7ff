"""Boundary quadrature, surface measure, horizontal perimeter and scans.

Parametric patches (n = 1) are integrated with composite Gauss rules on the
atlas cells; domains without an atlas go through marching cubes. Surface
balls ``Delta(x0, r)`` use gauge distance and node-center inclusion, on an
adaptively refined local quadrature when an atlas is available.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import stats

from . import hgroup as hg
from .geometry import ImplicitDomain, horizontal_normal_arrays
from .hgroup import HModel, as_array


class ConvergenceError(RuntimeError):
    pass


class EmptyReportError(ValueError):
    pass


@dataclass
class SurfaceQuadrature:
    """Nodes on the boundary with sigma-weights, unit normals and W."""

    points: np.ndarray
    weights: np.ndarray
    normals: np.ndarray
    W: np.ndarray
    resolution: int
    domain: Optional[ImplicitDomain] = None
    uv: Optional[np.ndarray] = None

    @property
    def total_area(self) -> float:
        return float(np.sum(self.weights))

    @property
    def total_sigma_x(self) -> float:
        return float(np.sum(self.weights * self.W))

    def __len__(self):
        return len(self.weights)

    @property
    def nodes(self):
        return [
            {"point": hg.GPoint.from_array(p), "weight": float(w), "nu": nu, "W": float(v)}
            for p, w, nu, v in zip(self.points, self.weights, self.normals, self.W)
        ]

    def subset(self, idx) -> "SurfaceQuadrature":
        return SurfaceQuadrature(self.points[idx], self.weights[idx], self.normals[idx], self.W[idx], self.resolution,
                                 self.domain, None if self.uv is None else self.uv[idx])


def _cell_nodes(u0, u1, v0, v1, order):
    """Tensor Gauss nodes for a batch of rectangular cells."""
    x, w = np.polynomial.legendre.leggauss(order)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    du = (u1 - u0)[:, None, None]
    dv = (v1 - v0)[:, None, None]
    U = u0[:, None, None] + du * x[None, :, None]
    V = v0[:, None, None] + dv * x[None, None, :]
    Wt = du * dv * (w[:, None] * w[None, :])[None]
    U, V = np.broadcast_arrays(U, V)
    return U.reshape(-1), V.reshape(-1), np.broadcast_to(Wt, U.shape).reshape(-1)


def _atlas_quadrature(domain, U, V, w, resolution):
    atlas = domain.atlas
    P = atlas.point(U, V)
    A = atlas.area_vector(U, V)
    dA = np.linalg.norm(A, axis=-1)
    keep = dA > 0
    P, A, dA, w, U, V = P[keep], A[keep], dA[keep], w[keep], U[keep], V[keep]
    # the Euclidean normal comes from grad rho so W matches horizontal_normal
    NX, Wv = horizontal_normal_arrays(domain, P)
    return SurfaceQuadrature(P, dA * w, domain.normal(P), Wv, resolution, domain, np.stack([U, V], axis=-1))


def _cells_from_breaks(ub, vb):
    U0, V0 = np.meshgrid(ub[:-1], vb[:-1], indexing="ij")
    U1, V1 = np.meshgrid(ub[1:], vb[1:], indexing="ij")
    return U0.ravel(), U1.ravel(), V0.ravel(), V1.ravel()


def atlas_quadrature(domain: ImplicitDomain, resolution: int, order: int = 4) -> SurfaceQuadrature:
    ub, vb = domain.atlas.breaks(resolution)
    u0, u1, v0, v1 = _cells_from_breaks(ub, vb)
    U, V, w = _cell_nodes(u0, u1, v0, v1, order)
    return _atlas_quadrature(domain, U, V, w, resolution)


def marching_quadrature(domain: ImplicitDomain, resolution: int) -> SurfaceQuadrature:
    """Triangulated level set with centroid nodes projected onto ``rho = 0``."""
    from skimage.measure import marching_cubes

    lo, hi = (np.asarray(b, dtype=float) for b in domain.bbox)
    axes = [np.linspace(lo[k], hi[k], resolution) for k in range(3)]
    X = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    vals = domain.rho(X)
    h = (hi - lo) / (resolution - 1)
    verts, faces, _, _ = marching_cubes(vals, level=0.0, spacing=tuple(h))
    verts = verts + lo
    # project vertices first so triangles are inscribed in the surface
    verts = domain.project(verts)
    tri = verts[faces]
    area = 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=-1)
    cent = domain.project(tri.mean(axis=1))
    NX, Wv = horizontal_normal_arrays(domain, cent)
    return SurfaceQuadrature(cent, area, domain.normal(cent), Wv, resolution, domain)


def build_quadrature(domain: ImplicitDomain, resolution: int = 32, order: int = 4, check: bool = True,
                     rel_tol: float = 5e-3) -> SurfaceQuadrature:
    """Boundary quadrature; area self-convergence is checked against half resolution."""
    if domain.atlas is not None:
        quad = atlas_quadrature(domain, resolution, order)
        coarse = atlas_quadrature(domain, max(4, resolution // 2), order) if check else None
    else:
        quad = marching_quadrature(domain, resolution)
        coarse = marching_quadrature(domain, max(8, resolution // 2)) if check else None
    if coarse is not None:
        rel = abs(quad.total_area - coarse.total_area) / quad.total_area
        if rel > rel_tol:
            raise ConvergenceError(f"area changed by {rel:.3%} under refinement")
    bad = np.max(np.abs(domain.rho(quad.points)))
    if bad >= 1e-8:
        quad = SurfaceQuadrature(domain.project(quad.points), quad.weights, quad.normals, quad.W, quad.resolution,
                                 domain, quad.uv)
    return quad


# ---------------------------------------------------------------------------
# surface balls


@dataclass
class SurfaceBall:
    center: np.ndarray
    radius: float
    node_indices: np.ndarray
    quadrature: SurfaceQuadrature

    def __post_init__(self):
        self.center = as_array(self.center)

    @property
    def empty(self) -> bool:
        return len(self.node_indices) == 0

    def nodes(self) -> SurfaceQuadrature:
        return self.quadrature.subset(self.node_indices)


def surface_ball(quadrature: SurfaceQuadrature, center, r: float) -> SurfaceBall:
    """``Delta(center, r)`` on an existing quadrature (node-center inclusion)."""
    d = np.asarray(hg.gauge_dist(as_array(center), quadrature.points))
    return SurfaceBall(center, r, np.flatnonzero(d < r), quadrature)


def _cell_radius(atlas, u0, u1, v0, v1):
    """Gauge distance from each cell center to the farthest of 8 edge samples."""
    uc, vc = 0.5 * (u0 + u1), 0.5 * (v0 + v1)
    pc = atlas.point(uc, vc)
    us = np.stack([u0, u1, u0, u1, uc, uc, u0, u1], axis=-1)
    vs = np.stack([v0, v0, v1, v1, v0, v1, vc, vc], axis=-1)
    ps = atlas.point(us, vs)
    d = np.asarray(hg.gauge_dist(pc[:, None, :], ps))
    return pc, d.max(axis=-1)


def ball_quadrature(domain: ImplicitDomain, center, r: float, base_resolution: int = 32, order: int = 3,
                    min_nodes: int = 200, max_depth: int = 16, safety: float = 1.5,
                    rel_band: float = 1e-4, max_cells: int = 40000) -> SurfaceBall:
    """Adaptive local quadrature of ``Delta(center, r)`` on an atlas.

    Atlas cells are classified by the triangle inequality for the gauge
    distance, using a sampled cell radius inflated by ``safety``. Cells
    straddling the sphere are split until their total area is below
    ``rel_band`` of the ball's area or ``max_depth`` is reached; the
    remaining straddling cells contribute their nodes that lie inside.
    """
    atlas = domain.atlas
    if atlas is None:
        raise ValueError("adaptive ball quadrature needs an atlas")
    x0 = as_array(center)
    ub, vb = atlas.breaks(base_resolution)
    u0, u1, v0, v1 = _cells_from_breaks(ub, vb)
    inside = []
    straddle = (u0, u1, v0, v1)
    for depth in range(max_depth + 1):
        u0, u1, v0, v1 = straddle
        if u0.size == 0:
            break
        pc, rad = _cell_radius(atlas, u0, u1, v0, v1)
        d0 = np.asarray(hg.gauge_dist(x0, pc))
        rad = safety * rad
        is_in = d0 + rad < r
        is_out = d0 - rad > r
        und = ~(is_in | is_out)
        inside.append(tuple(a[is_in] for a in straddle))
        straddle = tuple(a[und] for a in straddle)
        if depth == max_depth or straddle[0].size * 4 > max_cells:
            break
        # stop once the undecided band is negligible
        area_in = _cells_area(atlas, *_concat(inside), order)
        area_und = _cells_area(atlas, *straddle, order)
        if area_in > 0 and area_und < rel_band * area_in:
            break
        straddle = _split(*straddle)
    cells_in = _concat(inside)
    U, V, w = _cell_nodes(*cells_in, order)
    count = U.size
    Ub, Vb, wb = _cell_nodes(*straddle, order)
    if Ub.size:
        pb = atlas.point(Ub, Vb)
        keep = np.asarray(hg.gauge_dist(x0, pb)) < r
        count += int(keep.sum())
    # refine the interior cells until the ball holds enough nodes
    while count < min_nodes and cells_in[0].size:
        cells_in = _split(*cells_in)
        U, V, w = _cell_nodes(*cells_in, order)
        count = U.size + (int(keep.sum()) if Ub.size else 0)
    if Ub.size:
        U = np.concatenate([U, Ub[keep]])
        V = np.concatenate([V, Vb[keep]])
        w = np.concatenate([w, wb[keep]])
    if U.size == 0:
        quad = SurfaceQuadrature(np.zeros((0, 3)), np.zeros(0), np.zeros((0, 3)), np.zeros(0), base_resolution, domain)
        return SurfaceBall(x0, r, np.zeros(0, dtype=int), quad)
    quad = _atlas_quadrature(domain, U, V, w, base_resolution)
    # node-center inclusion on the final nodes (guards the interior classification)
    d = np.asarray(hg.gauge_dist(x0, quad.points))
    return SurfaceBall(x0, r, np.flatnonzero(d < r), quad)


def _split(u0, u1, v0, v1):
    um, vm = 0.5 * (u0 + u1), 0.5 * (v0 + v1)
    return (
        np.concatenate([u0, um, u0, um]),
        np.concatenate([um, u1, um, u1]),
        np.concatenate([v0, v0, vm, vm]),
        np.concatenate([vm, vm, v1, v1]),
    )


def _concat(parts):
    if not parts:
        return tuple(np.zeros(0) for _ in range(4))
    return tuple(np.concatenate([p[k] for p in parts]) for k in range(4))


def _cells_area(atlas, u0, u1, v0, v1, order):
    if u0.size == 0:
        return 0.0
    U, V, w = _cell_nodes(u0, u1, v0, v1, 2)
    return float(np.sum(np.linalg.norm(atlas.area_vector(U, V), axis=-1) * w))


def make_ball(quadrature: SurfaceQuadrature, center, r: float, adaptive: bool = True, min_nodes: int = 200,
              **kwargs) -> SurfaceBall:
    dom = quadrature.domain
    if adaptive and dom is not None and dom.atlas is not None:
        return ball_quadrature(dom, center, r, base_resolution=quadrature.resolution, min_nodes=min_nodes, **kwargs)
    return surface_ball(quadrature, center, r)


@dataclass(frozen=True)
class SurfaceMeasures:
    sigma: float
    sigma_X: float
    maxW: float
    empty: bool

    def __iter__(self):
        return iter((self.sigma, self.sigma_X, self.maxW))


def sigma_measures(quadrature: SurfaceQuadrature, ball: SurfaceBall) -> SurfaceMeasures:
    """``sigma(Delta)``, ``sigma_X(Delta) = int W dsigma`` and ``max W`` over Delta."""
    q = ball.quadrature if quadrature is None else quadrature
    if ball.quadrature is not q:
        raise ValueError("ball was built from a different quadrature")
    idx = ball.node_indices
    if len(idx) == 0:
        return SurfaceMeasures(0.0, 0.0, 0.0, True)
    w, W = q.weights[idx], q.W[idx]
    return SurfaceMeasures(float(w.sum()), float((w * W).sum()), float(W.max()), False)


# ---------------------------------------------------------------------------
# scans


@dataclass
class ScanReport:
    """Values against radii with an OLS log-log power fit."""

    name: str
    radii: np.ndarray
    values: np.ndarray
    exponent: float = float("nan")
    stderr: float = float("nan")
    intercept: float = float("nan")
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.radii = np.asarray(self.radii, dtype=float)
        self.values = np.asarray(self.values, dtype=float)

    def fit(self) -> "ScanReport":
        ok = (self.values > 0) & np.isfinite(self.values)
        if ok.sum() >= 3:
            self.exponent, self.intercept, self.stderr = power_fit(self.radii[ok], self.values[ok])
        return self

    @property
    def sup(self) -> float:
        return float(np.max(self.values)) if self.values.size else float("nan")

    def rows(self):
        return [(float(r), float(v), self.exponent, self.stderr) for r, v in zip(self.radii, self.values)]

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["r", "value", "fit_exponent", "fit_stderr"])
            for row in self.rows():
                w.writerow([repr(x) for x in row])


def power_fit(r, v):
    """Slope, intercept and slope stderr of ``log v`` against ``log r``."""
    r, v = np.asarray(r, dtype=float), np.asarray(v, dtype=float)
    if r.size < 3:
        raise EmptyReportError("power fit needs at least 3 points")
    res = stats.linregress(np.log(r), np.log(v))
    return float(res.slope), float(res.intercept), float(res.stderr)


@dataclass
class AhlforsScan:
    sigma: ScanReport
    sigma_X: ScanReport
    ahlfors_ratio: ScanReport
    node_counts: list

    def __iter__(self):
        return iter((self.sigma, self.sigma_X))


def metric_ball_volume(model: HModel, r):
    """``|B_d(x, r)| = |B(e, 1)| r^Q`` (homogeneity shortcut)."""
    return hg.unit_ball_volume(model.n) * np.asarray(r, dtype=float) ** model.Q


def _check_radii(radii):
    radii = np.asarray(radii, dtype=float)
    if radii.size < 3:
        raise ValueError("a scan needs at least 3 radii")
    if np.any(radii <= 0):
        raise ValueError("radii must be positive")
    return radii


def ahlfors_scan(quadrature: SurfaceQuadrature, x0, radii, min_nodes: int = 200, model: Optional[HModel] = None,
                 adaptive: bool = True) -> AhlforsScan:
    radii = _check_radii(radii)
    model = model or HModel(quadrature.domain.n if quadrature.domain else 1)
    sig, sx, counts = [], [], []
    for r in radii:
        ball = make_ball(quadrature, x0, r, adaptive=adaptive, min_nodes=min_nodes)
        m = sigma_measures(ball.quadrature, ball)
        if len(ball.node_indices) < min_nodes:
            raise ConvergenceError(f"only {len(ball.node_indices)} nodes in the ball of radius {r}")
        sig.append(m.sigma)
        sx.append(m.sigma_X)
        counts.append(len(ball.node_indices))
    sig, sx = np.array(sig), np.array(sx)
    vol = metric_ball_volume(model, radii)
    return AhlforsScan(
        ScanReport("sigma", radii, sig).fit(),
        ScanReport("sigma_X", radii, sx).fit(),
        ScanReport("sigma_X*r/|B|", radii, sx * radii / vol).fit(),
        counts,
    )


def balanced_degeneracy_check(quadrature: SurfaceQuadrature, x0, radii, min_nodes: int = 200,
                              model: Optional[HModel] = None, adaptive: bool = True) -> ScanReport:
    """``max W(Delta) sigma(Delta) r / |B_d(x0, r)|`` across radii."""
    radii = _check_radii(radii)
    model = model or HModel(1)
    vals = []
    for r in radii:
        ball = make_ball(quadrature, x0, r, adaptive=adaptive, min_nodes=min_nodes)
        m = sigma_measures(ball.quadrature, ball)
        vals.append(m.maxW * m.sigma * r / float(metric_ball_volume(model, r)))
    return ScanReport("balanced_degeneracy", radii, vals).fit()


def ball_volume(model: HModel, x, r: float, mc_samples: int = 200000, seed: int = 0, return_error: bool = False):
    """Lebesgue volume of the gauge ball ``B(x, r)`` by Monte Carlo over its bounding box."""
    if not r > 0:
        raise ValueError("radius must be positive")
    c = as_array(x)
    n = model.n
    # q = c w with w in B(e, r): |x|, |y| <= r and |t| <= r^2/4 + shear
    shear = 0.5 * r * float(np.sum(np.abs(c[:2 * n])))
    half = np.concatenate([np.full(2 * n, r), [0.25 * r * r + shear]])
    rng = np.random.default_rng(seed)
    q = c + half * (2.0 * rng.random((mc_samples, 2 * n + 1)) - 1.0)
    hit = np.asarray(hg.gauge_dist(c, q)) < r
    box = float(np.prod(2.0 * half))
    p = hit.mean()
    vol = box * p
    err = box * math.sqrt(p * (1 - p) / mc_samples)
    return (vol, err) if return_error else vol


# ---------------------------------------------------------------------------
# doubling of sigma_X and band partitions


@dataclass
class DoublingReport:
    """Ratios ``mu(Delta(y, 2r)) / mu(Delta(y, r))`` over a grid of centers and radii."""

    centers: np.ndarray
    radii: np.ndarray
    ratios: np.ndarray
    errors: Optional[np.ndarray] = None
    flags: list = field(default_factory=list)

    @property
    def constant(self) -> float:
        r = self.ratios[np.isfinite(self.ratios)]
        return float(r.max()) if r.size else float("inf")

    @property
    def finite(self) -> bool:
        return bool(np.all(np.isfinite(self.ratios)))


def gauge_sphere_centers(R: float, count: int, seed: int = 0):
    """Boundary points of the centered gauge ball spread in latitude, including both poles."""
    rng = np.random.default_rng(seed)
    th = np.linspace(-0.5 * math.pi, 0.5 * math.pi, count)
    ph = rng.uniform(0, 2 * math.pi, count)
    r = R * np.sqrt(np.maximum(np.cos(th), 0))
    return np.stack([r * np.cos(ph), r * np.sin(ph), 0.25 * R * R * np.sin(th)], axis=-1)


def sigma_x_doubling(quadrature: SurfaceQuadrature, centers, radii, min_nodes: int = 200,
                     max_cells: int = 10000) -> DoublingReport:
    centers = as_array(centers)
    radii = np.asarray(radii, dtype=float)
    ratios = np.empty((len(centers), len(radii)))
    for i, c in enumerate(centers):
        for j, r in enumerate(radii):
            a = sigma_measures(None, make_ball(quadrature, c, r, min_nodes=min_nodes, max_cells=max_cells)).sigma_X
            b = sigma_measures(None, make_ball(quadrature, c, 2 * r, min_nodes=min_nodes, max_cells=max_cells)).sigma_X
            ratios[i, j] = b / a if a > 0 else float("inf")
    return DoublingReport(centers, radii, ratios)


def band_index(domain: ImplicitDomain, points, nbands: int) -> np.ndarray:
    """Latitude band of each point of a gauge sphere (equal widths in theta)."""
    if domain.atlas is None or domain.atlas.band_variable is None:
        raise ValueError("domain has no latitude bands")
    s = np.clip(domain.atlas.band_variable(as_array(points)), -1.0, 1.0)
    th = np.arcsin(s)
    k = np.floor((th + 0.5 * math.pi) / (math.pi / nbands)).astype(int)
    return np.clip(k, 0, nbands - 1)


def band_edges(nbands: int) -> np.ndarray:
    return np.linspace(-0.5 * math.pi, 0.5 * math.pi, nbands + 1)
