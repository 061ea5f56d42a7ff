"""Finite differences for the sub-Laplacian on a box lattice (n = 1).

The operator is assembled in divergence form, ``L = -sum_j X_j^T X_j`` with
centered first differences ``X_1 = D_x - (y/2) D_t`` and
``X_2 = D_y + (x/2) D_t``. The centered differences are antisymmetric on
the box, so ``X_j^T = -X_j`` and ``L`` is symmetric negative semidefinite.

Unknowns are the lattice nodes inside the domain. Ghost nodes are the
outside nodes reached by the stencil. They receive boundary data either by
injection of ``phi`` at the gradient foot point (first order, symmetric
system), or by linear extrapolation along the normal through the closest
boundary point (second order, nonsymmetric system).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import ndimage
from scipy.integrate import quad

from . import hgroup as hg
from .geometry import ImplicitDomain, gauge_ball, volume_e, volume_e_inverse
from .hgroup import HModel, ScalarField, as_array


class SolverError(RuntimeError):
    def __init__(self, message, residual=float("nan")):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


class DomainExitError(ValueError):
    pass


@dataclass
class Grid:
    """Uniform lattice covering a domain's bounding box plus ghost layers."""

    lo: np.ndarray
    h: np.ndarray
    dims: tuple
    inside_mask: np.ndarray
    domain: ImplicitDomain
    interior: np.ndarray = field(default=None)
    ghosts: np.ndarray = field(default=None)
    foot: np.ndarray = field(default=None)

    @property
    def size(self) -> int:
        return int(np.prod(self.dims))

    @property
    def hmax(self) -> float:
        return float(np.max(self.h))

    def axes(self):
        return [self.lo[k] + self.h[k] * np.arange(self.dims[k]) for k in range(3)]

    def points(self, idx=None) -> np.ndarray:
        ijk = np.unravel_index(np.arange(self.size) if idx is None else idx, self.dims)
        return self.lo + self.h * np.stack(ijk, axis=-1)

    def nearest_node(self, p) -> int:
        ijk = np.clip(np.rint((as_array(p) - self.lo) / self.h).astype(int), 0, np.array(self.dims) - 1)
        return int(np.ravel_multi_index(tuple(ijk), self.dims))

    @property
    def boundary_band(self):
        return self.ghosts


def make_grid(domain: ImplicitDomain, nodes: int = 41, ghost_layers: int = 3) -> Grid:
    """``nodes`` lattice points span each bounding-box axis.

    Equal node counts give the t axis a spacing scaled like ``r^2``, which
    matches the anisotropic dilations.
    """
    if nodes < 20:
        raise ValueError("at least 20 nodes must span each axis")
    lo, hi = (np.asarray(b, dtype=float) for b in domain.bbox)
    h = (hi - lo) / (nodes - 1)
    lo = lo - ghost_layers * h
    dims = tuple(int(nodes + 2 * ghost_layers) for _ in range(3))
    g = Grid(lo, h, dims, None, domain)
    P = g.points()
    g.inside_mask = np.asarray(domain.rho(P)) < 0
    return g


def _difference(dims, h, axis):
    n = int(np.prod(dims))
    k = np.arange(n).reshape(dims)
    sp_ = [slice(None)] * 3
    sm = [slice(None)] * 3
    sp_[axis] = slice(1, None)
    sm[axis] = slice(None, -1)
    rows = k[tuple(sm)].ravel()
    cols = k[tuple(sp_)].ravel()
    M = sp.csr_matrix((np.full(rows.size, 0.5 / h[axis]), (rows, cols)), shape=(n, n))
    return (M - M.T).tocsr()


def frame_differences(grid: Grid):
    """Centered ``X_1^h, X_2^h`` on the full box; both are exactly antisymmetric."""
    P = grid.points()
    Dx, Dy, Dt = (_difference(grid.dims, grid.h, a) for a in range(3))
    X1 = (Dx - sp.diags(0.5 * P[:, 1]) @ Dt).tocsr()
    X2 = (Dy + sp.diags(0.5 * P[:, 0]) @ Dt).tocsr()
    return X1, X2


def assemble_operator(grid: Grid, rows=None):
    """``L = -(X_1^T X_1 + X_2^T X_2)``, optionally restricted to some rows."""
    X1, X2 = frame_differences(grid)
    if rows is None:
        return -(X1.T @ X1 + X2.T @ X2).tocsr()
    return -(X1.T[rows] @ X1 + X2.T[rows] @ X2).tocsr()


def kohn_stencil_operator(grid: Grid):
    """Direct discretization of ``Delta_z + |z|^2/4 D_tt + x D_yt - y D_xt``."""
    P = grid.points()
    n = grid.size
    k = np.arange(n).reshape(grid.dims)

    def second(axis):
        sp_ = [slice(None)] * 3
        sm = [slice(None)] * 3
        sp_[axis] = slice(1, None)
        sm[axis] = slice(None, -1)
        rows, cols = k[tuple(sm)].ravel(), k[tuple(sp_)].ravel()
        off = sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(n, n))
        return (off + off.T - 2 * sp.identity(n)) / grid.h[axis] ** 2

    Dx, Dy, Dt = (_difference(grid.dims, grid.h, a) for a in range(3))
    x, y = P[:, 0], P[:, 1]
    return (second(0) + second(1) + sp.diags(0.25 * (x * x + y * y)) @ second(2)
            + sp.diags(x) @ (Dy @ Dt) - sp.diags(y) @ (Dx @ Dt)).tocsr()


def closest_points(domain: ImplicitDomain, g: np.ndarray, iters: int = 30):
    """Closest boundary points by Newton on the Lagrange system, foot points as start."""
    q = domain.project(g)
    lam = np.zeros(len(g))
    d = g.shape[-1]
    for _ in range(iters):
        gr = np.asarray(domain.rho_grad(q))
        H = domain.hessian(q)
        F = np.concatenate([q - g + lam[:, None] * gr, np.asarray(domain.rho(q))[:, None]], axis=1)
        if np.max(np.abs(F)) < 1e-13:
            break
        J = np.zeros((len(g), d + 1, d + 1))
        J[:, :d, :d] = np.eye(d) + lam[:, None, None] * H
        J[:, :d, d] = gr
        J[:, d, :d] = gr
        step = np.linalg.solve(J, -F[..., None])[..., 0]
        q = q + step[:, :d]
        lam = lam + step[:, d]
    res = np.max(np.abs(np.concatenate([q - g + lam[:, None] * np.asarray(domain.rho_grad(q)),
                                        np.asarray(domain.rho(q))[:, None]], axis=1)), axis=1)
    return q, res


@dataclass
class DirichletSystem:
    """Assembled linear system for one domain, lattice and boundary closure."""

    grid: Grid
    A: sp.csr_matrix
    LIG: sp.csr_matrix
    boundary: str
    foot: np.ndarray
    coef: np.ndarray
    injected: int
    symmetric: bool
    probe: Optional[np.ndarray] = None

    def rhs(self, phi_b: np.ndarray) -> np.ndarray:
        return self.LIG @ ((1.0 + self.coef) * phi_b)


def build_system(domain: ImplicitDomain, nodes: int = 41, boundary: str = "extrapolate") -> DirichletSystem:
    if boundary not in ("extrapolate", "inject"):
        raise ValueError("boundary must be 'extrapolate' or 'inject'")
    grid = make_grid(domain, nodes)
    labels, count = ndimage.label(grid.inside_mask.reshape(grid.dims))
    if count != 1:
        raise SolverError(f"interior mask has {count} connected components")
    I = np.flatnonzero(grid.inside_mask)
    L_I = assemble_operator(grid, I)
    touched = np.unique(L_I.indices)
    G = np.setdiff1d(touched, I)
    grid.interior, grid.ghosts = I, G
    LII = L_I[:, I]
    LIG = L_I[:, G]
    P = grid.points(G)
    n_inject = 0
    if boundary == "inject":
        foot = domain.project(P)
        grid.foot = foot
        return DirichletSystem(grid, (-LII).tocsr(), LIG.tocsr(), boundary, foot, np.zeros(G.size), G.size, True)
    foot, res = closest_points(domain, P)
    bad = res > 1e-9
    if bad.any():
        foot[bad] = domain.project(P[bad])
    grid.foot = foot
    dist = np.linalg.norm(P - foot, axis=-1)
    nu = domain.normal(foot)
    idx = -np.ones(grid.size, dtype=int)
    idx[I] = np.arange(I.size)
    ell = np.full(G.size, 2.0 * grid.hmax)
    corners = [np.array([(c >> k) & 1 for k in range(3)]) for c in range(8)]
    ok = np.zeros(G.size, dtype=bool)
    for _ in range(12):
        p = foot - ell[:, None] * nu
        f = (p - grid.lo) / grid.h
        i0 = np.floor(f).astype(int)
        wfrac = f - i0
        ok = np.ones(G.size, dtype=bool)
        for o in corners:
            ii = np.clip(i0 + o, 0, np.array(grid.dims) - 1)
            ok &= idx[np.ravel_multi_index(tuple(ii.T), grid.dims)] >= 0
        if ok.all():
            break
        ell[~ok] *= 1.25
    rows, cols, vals = [], [], []
    for o in corners:
        ii = np.clip(i0 + o, 0, np.array(grid.dims) - 1)
        lin = idx[np.ravel_multi_index(tuple(ii.T), grid.dims)]
        wt = np.prod(np.where(o == 1, wfrac, 1.0 - wfrac), axis=1)
        m = ok
        rows.append(np.flatnonzero(m))
        cols.append(lin[m])
        vals.append(wt[m])
    E = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(G.size, I.size))
    # ghosts without an interior stencil fall back to injection
    coef = np.where(ok, dist / ell, 0.0)
    n_inject = int((~ok).sum())
    A = (-LII + LIG @ sp.diags(coef) @ E).tocsr()
    return DirichletSystem(grid, A, LIG.tocsr(), boundary, foot, coef, n_inject, False, np.where(ok[:, None], p, foot))


@dataclass
class GridField:
    """Values on lattice nodes; NaN where undefined."""

    grid: Grid
    values: np.ndarray
    info: dict = field(default_factory=dict)

    def interior_values(self) -> np.ndarray:
        return self.values[self.grid.interior]

    def as_box(self) -> np.ndarray:
        return self.values.reshape(self.grid.dims)

    def interpolate(self, points) -> np.ndarray:
        """Trilinear interpolation; NaN unless all eight corners are defined."""
        p = as_array(points)
        f = (p - self.grid.lo) / self.grid.h
        i0 = np.floor(f).astype(int)
        w = f - i0
        dims = np.array(self.grid.dims)
        valid = np.all((i0 >= 0) & (i0 + 1 < dims), axis=-1)
        i0 = np.clip(i0, 0, dims - 2)
        out = np.zeros(p.shape[:-1])
        for c in range(8):
            o = np.array([(c >> k) & 1 for k in range(3)])
            lin = np.ravel_multi_index(tuple(np.moveaxis(i0 + o, -1, 0)), self.grid.dims)
            out = out + np.prod(np.where(o == 1, w, 1 - w), axis=-1) * self.values[lin]
        return np.where(valid, out, np.nan)

    def x_gradient_nodes(self) -> np.ndarray:
        """``(X_1 u, X_2 u)`` at every node by centered differences (NaN near gaps)."""
        U = self.as_box()
        h = self.grid.h
        d = []
        for a in range(3):
            D = np.full(U.shape, np.nan)
            sl_c = [slice(1, -1) if k == a else slice(None) for k in range(3)]
            sl_p = [slice(2, None) if k == a else slice(None) for k in range(3)]
            sl_m = [slice(None, -2) if k == a else slice(None) for k in range(3)]
            D[tuple(sl_c)] = (U[tuple(sl_p)] - U[tuple(sl_m)]) / (2 * h[a])
            d.append(D.ravel())
        P = self.grid.points()
        return np.stack([d[0] - 0.5 * P[:, 1] * d[2], d[1] + 0.5 * P[:, 0] * d[2]], axis=-1)

    def to_csv(self, path):
        idx = np.flatnonzero(np.isfinite(self.values))
        P = self.grid.points(idx)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("index,x,y,t,value\n")
            for i, p, v in zip(idx, P, self.values[idx]):
                fh.write(f"{i},{p[0]!r},{p[1]!r},{p[2]!r},{v!r}\n")

    def to_binary(self, path):
        """Raw little-endian float64 values plus a JSON sidecar describing the lattice."""
        self.values.astype("<f8").tofile(path)
        meta = {"dims": list(self.grid.dims), "lo": self.grid.lo.tolist(), "h": self.grid.h.tolist(), "dtype": "<f8"}
        with open(str(path) + ".json", "w", encoding="utf-8") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)


def _sor(A, b, omega, tol, max_iter, x0=None):
    """Successive over-relaxation via sparse triangular solves."""
    D = A.diagonal()
    Lo = sp.tril(A, k=-1, format="csr")
    Up = sp.triu(A, k=1, format="csr")
    M = (sp.diags(D / omega) + Lo).tocsr()
    N = (sp.diags((1.0 / omega - 1.0) * D) - Up).tocsr()
    x = np.zeros_like(b) if x0 is None else x0.copy()
    nb = np.linalg.norm(b) or 1.0
    for it in range(max_iter):
        x = spla.spsolve_triangular(M, N @ x + b, lower=True)
        r = np.linalg.norm(b - A @ x) / nb
        if r < tol:
            return x, it + 1, r
    return x, max_iter, r


def solve_system(system: DirichletSystem, rhs: np.ndarray, solver: str = "auto", tol: float = 1e-13,
                 max_iter: int = 20000, omega: float = 1.8):
    if solver == "auto":
        solver = "cg" if system.symmetric else "bicgstab"
    nb = np.linalg.norm(rhs)
    if nb == 0:
        return np.zeros_like(rhs), 0, 0.0
    count = [0]

    def cb(_):
        count[0] += 1

    if solver == "cg":
        if not system.symmetric:
            raise ValueError("conjugate gradients needs the symmetric (inject) closure")
        u, info = spla.cg(system.A, rhs, rtol=tol, atol=0.0, maxiter=max_iter, callback=cb)
    elif solver == "bicgstab":
        u, info = spla.bicgstab(system.A, rhs, rtol=tol, atol=0.0, maxiter=max_iter, callback=cb)
    elif solver == "sor":
        u, its, res = _sor(system.A, rhs, omega, tol, max_iter)
        count[0], info = its, 0 if res < tol else 1
    else:
        raise ValueError(f"unknown solver {solver!r}")
    res = float(np.linalg.norm(rhs - system.A @ u) / nb)
    if info != 0 or res > 10 * tol:
        raise SolverError(f"{solver} did not converge in {max_iter} iterations", res)
    return u, count[0], res


def solve_dirichlet(domain: ImplicitDomain, phi: Callable, nodes: int = 41, boundary: str = "extrapolate",
                    solver: str = "auto", tol: float = 1e-13, max_iter: int = 20000, omega: float = 1.8,
                    system: Optional[DirichletSystem] = None) -> GridField:
    """Discrete harmonic extension of ``phi`` from the boundary.

    ``phi`` maps point arrays ``(..., 3)`` to values. Pass a prebuilt
    ``system`` to reuse the factorized geometry across boundary data.
    """
    system = system or build_system(domain, nodes, boundary)
    grid = system.grid
    phi_b = np.asarray(phi(system.foot), dtype=float)
    u, its, res = solve_system(system, system.rhs(phi_b), solver, tol, max_iter, omega)
    vals = np.full(grid.size, np.nan)
    vals[grid.interior] = u
    if system.boundary == "inject":
        vals[grid.ghosts] = phi_b
    else:
        # ghost values from the closure, so gradients are defined up to the boundary
        interp = GridField(grid, vals).interpolate(system.probe)
        vals[grid.ghosts] = (1 + system.coef) * phi_b - system.coef * np.nan_to_num(interp)
    info = {"iterations": its, "residual": res, "boundary": system.boundary, "unknowns": int(grid.interior.size),
            "ghosts": int(grid.ghosts.size), "injected_fallback": int(system.injected), "phi_min": float(phi_b.min()),
            "phi_max": float(phi_b.max()), "h": grid.h.tolist()}
    return GridField(grid, vals, info)


def max_principle_violation(field: GridField) -> float:
    """Largest excursion of interior values outside ``[min phi, max phi]`` (0 if none)."""
    u = field.interior_values()
    lo, hi = field.info["phi_min"], field.info["phi_max"]
    return float(max(0.0, lo - u.min(), u.max() - hi))


# ---------------------------------------------------------------------------
# Green function


def green_function(domain: ImplicitDomain, pole, nodes: int = 41, model: Optional[HModel] = None,
                   system: Optional[DirichletSystem] = None, **kwargs) -> GridField:
    """``G(pole, .) = Gamma(pole, .) - H[Gamma(pole, .)]`` on the lattice."""
    model = model or HModel(1)
    pole = as_array(pole)
    system = system or build_system(domain, nodes, kwargs.pop("boundary", "extrapolate"))
    grid = system.grid
    dmin = float(np.min(np.asarray(hg.gauge_dist(pole, system.foot))))
    if dmin < 5 * grid.hmax:
        raise ValueError(f"pole is within {dmin:.3g} of the boundary; need at least 5h = {5 * grid.hmax:.3g}")
    gam = hg.fundamental_solution_field(model, pole)
    h = solve_dirichlet(domain, gam, system=system, **kwargs)
    P = grid.points()
    d = np.asarray(hg.gauge_dist(pole, P))
    with np.errstate(divide="ignore"):
        G = np.where(d > 0, model.c_Q * np.where(d > 0, d, 1.0) ** (2 - model.Q), np.inf) - h.values
    info = dict(h.info, pole=pole.tolist())
    return GridField(grid, G, info)


# ---------------------------------------------------------------------------
# mollifier and mean value


def _bump(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    m = (s > 1) & (s < 2)
    out[m] = np.exp(-1.0 / ((s[m] - 1.0) * (2.0 - s[m])))
    return out


def _bump_mass():
    val, err = quad(lambda s: float(_bump(s)), 1.0, 2.0, epsabs=1e-14, epsrel=1e-13, limit=200)
    if err > 1e-10 * val:
        raise SolverError("bump normalization did not converge", err)
    return val


_BUMP_MASS = None


def bump(s):
    """Smooth bump supported in [1, 2] with unit integral."""
    global _BUMP_MASS
    if _BUMP_MASS is None:
        _BUMP_MASS = _bump_mass()
    return _bump(s) / _BUMP_MASS


def _field_values(u, pts):
    if isinstance(u, GridField):
        v = u.interpolate(pts)
        if np.any(np.isnan(v)):
            raise DomainExitError("grid field undefined on part of the support")
        return v
    return np.asarray(u(pts), dtype=float)


def mollify(u, x, R: float, model: Optional[HModel] = None, points: int = 64,
            domain: Optional[ImplicitDomain] = None) -> float:
    """``J_R u(x) = int u(y) f_R(1/Gamma(x,y)) |X_y Gamma|^2 / Gamma^2 dy``.

    ``R`` is a level of ``1/Gamma``; the kernel lives on the shell
    ``B(x, F(2R)) \\ B(x, F(R))``. Midpoint rule on a lattice in
    ``w = x^-1 y``; the integrand is smooth and compactly supported.
    """
    model = model or HModel(1)
    if model.n != 1:
        raise NotImplementedError("the lattice rule is implemented for n = 1")
    x = as_array(x)
    r2 = volume_e_inverse(model, x, 2 * R)
    r1 = volume_e_inverse(model, x, R)
    if domain is not None:
        _check_ball_inside(domain, x, r2)
    half = np.array([r2, r2, 0.25 * r2 * r2])
    ax = [(-half[k] + (2 * half[k]) * (np.arange(points) + 0.5) / points) for k in range(3)]
    W = np.stack(np.meshgrid(*ax, indexing="ij"), axis=-1).reshape(-1, 3)
    N = np.asarray(hg.gauge(W))
    keep = (N > r1) & (N < r2)
    W, N = W[keep], N[keep]
    Q, c = model.Q, model.c_Q
    inv_gamma = N ** (Q - 2) / c
    # |X Gamma|^2 / Gamma^2 = (Q-2)^2 |z|^2 / N^4
    dens = (Q - 2) ** 2 * hg.zsq(W) / N ** 4
    fR = bump(inv_gamma / R) / R
    cell = float(np.prod(2 * half / points))
    vals = _field_values(u, hg.group_mul(x, W))
    return float(np.sum(vals * fR * dens) * cell)


def _check_ball_inside(domain, x, r):
    q = gauge_ball(r, center=x)
    from .measures import build_quadrature

    pts = build_quadrature(q, 16, check=False).points
    if np.any(np.asarray(domain.rho(pts)) >= 0):
        raise DomainExitError(f"gauge ball of radius {r:.4g} leaves the domain")


def mean_value(u, x, t_level: float, model: Optional[HModel] = None, resolution: int = 32,
               domain: Optional[ImplicitDomain] = None) -> float:
    """``int u |X Gamma|^2 / |D Gamma| dH`` over ``dOmega(x, t) = dB(x, F(x, t))``."""
    model = model or HModel(1)
    from .measures import build_quadrature

    x = as_array(x)
    r = volume_e_inverse(model, x, t_level)
    if domain is not None:
        _check_ball_inside(domain, x, r)
    sph = build_quadrature(gauge_ball(r, center=x), resolution, check=False)
    w = hg.group_mul(hg.group_inv(x), sph.points)
    J = hg.left_translation_jacobian(hg.group_inv(x))
    N = np.asarray(hg.gauge(w))
    XN = hg.gauge_xgrad(w)
    DN = hg.gauge_grad(w) @ J
    amp = model.c_Q * (model.Q - 2) * N ** (1 - model.Q)
    kern = amp * np.sum(XN * XN, axis=-1) / np.linalg.norm(DN, axis=-1)
    return float(np.sum(_field_values(u, sph.points) * kern * sph.weights))


def mean_value_radius(model: HModel, x, r: float) -> float:
    """Level ``t`` with ``F(x, t) = r``."""
    return volume_e(model, x, r)


# ---------------------------------------------------------------------------
# interior estimates, barrier and growth


@dataclass
class SchauderReport:
    samples: np.ndarray
    r: float
    constants: np.ndarray
    constants_half: np.ndarray
    skipped: list

    @property
    def sup(self) -> float:
        c = self.constants[np.isfinite(self.constants)]
        return float(c.max()) if c.size else 0.0

    @property
    def sup_half(self) -> float:
        c = self.constants_half[np.isfinite(self.constants_half)]
        return float(c.max()) if c.size else 0.0

    @property
    def stable(self) -> bool:
        a, b = self.sup, self.sup_half
        if a == 0 and b == 0:
            return True
        return a > 0 and b > 0 and 0.25 <= a / b <= 4.0


def schauder_check(u: GridField, samples, r: float) -> SchauderReport:
    """Empirical ``C(x, r) = |Xu(x)| r / max_{B(x,r)} |u|`` at lattice nodes near the samples."""
    grid = u.grid
    dom = grid.domain
    samples = np.atleast_2d(as_array(samples))
    I = grid.interior
    pts, vals = grid.points(I), u.values[I]
    grad = u.x_gradient_nodes()
    from .measures import build_quadrature

    bq = build_quadrature(dom, 16, check=False).points if dom.atlas is not None else grid.foot
    C, Ch, skipped = [], [], []
    for k, s in enumerate(samples):
        node = grid.nearest_node(s)
        xg = grid.points(np.array([node]))[0]
        dist_bdry = float(np.min(np.asarray(hg.gauge_dist(xg, bq))))
        if dist_bdry <= r or not np.isfinite(grad[node]).all():
            C.append(np.nan)
            Ch.append(np.nan)
            skipped.append(k)
            continue
        gnorm = float(np.linalg.norm(grad[node]))
        vals_out = []
        for rr in (r, 0.5 * r):
            m = np.asarray(hg.gauge_dist(xg, pts)) <= rr
            mx = float(np.max(np.abs(vals[m])))
            # gradients at roundoff level of the solve count as zero
            if gnorm * rr <= 1e-9 * mx:
                vals_out.append(0.0)
            else:
                vals_out.append(gnorm * rr / mx if mx > 0 else float("inf"))
        C.append(vals_out[0])
        Ch.append(vals_out[1])
    return SchauderReport(samples, r, np.array(C), np.array(Ch), skipped)


def barrier(model: HModel, x1, r: float) -> ScalarField:
    """``f = (1/E(r) - Gamma(x1, .)) / (1/E(r) - 1/E(2r))``: 0 on dB(x1, r), 1 on dB(x1, 2r)."""
    a = 1.0 / volume_e(model, x1, r)
    b = 1.0 / volume_e(model, x1, 2 * r)
    gam = hg.fundamental_solution_field(model, x1)
    scale = 1.0 / (a - b)
    return ScalarField(
        lambda q: (a - gam.value(q)) * scale,
        lambda q: -gam.gradient(q) * scale,
        lambda q: -gam.hessian(q) * scale,
    )


def fd_kohn(f: Callable, p, h: float) -> np.ndarray:
    """Plain second-order centered-difference ``L_o f`` at p (no extrapolation)."""
    a = as_array(p)
    return hg.kohn_from_hessian(a, hg.fd_hessian(f, a, h, richardson=False))


@dataclass
class GrowthReport:
    x0: np.ndarray
    x1: np.ndarray
    r: float
    sup_ratio: float
    max_abs: float
    field: GridField

    @property
    def finite(self) -> bool:
        return bool(np.isfinite(self.sup_ratio))


def growth_check(domain: ImplicitDomain, x0, r: float, phi: Callable, nodes: int = 41, model=None,
                 system: Optional[DirichletSystem] = None, **kwargs) -> GrowthReport:
    """``sup |H phi(x)| r / d(x, x0)`` for data vanishing near the tangent outer ball."""
    from .geometry import outer_xball_tangent
    from .measures import build_quadrature

    model = model or HModel(1)
    x0 = as_array(x0)
    bq = build_quadrature(domain, 32, check=False).points
    tb = outer_xball_tangent(domain, x0, r, nodes=bq)
    if tb.violated:
        raise ValueError("no tangent outer X-ball at x0")
    x1 = as_array(tb.center)
    vals = np.asarray(phi(bq))
    near = np.asarray(hg.gauge_dist(x1, bq)) < 2 * r
    if np.max(np.abs(vals)) > 1 + 1e-12 or np.max(np.abs(vals[near]), initial=0.0) > 1e-12:
        raise ValueError("boundary data must satisfy |phi| <= 1 and vanish on B(x1, 2r)")
    u = solve_dirichlet(domain, phi, nodes=nodes, system=system, **kwargs)
    I = u.grid.interior
    d = np.asarray(hg.gauge_dist(x0, u.grid.points(I)))
    ratio = np.abs(u.values[I]) * r / d
    return GrowthReport(x0, x1, r, float(np.max(ratio)), float(np.max(np.abs(u.values[I]))), u)


# ---------------------------------------------------------------------------
# Green function bounds with the closed form on a gauge ball


def closed_form_green(model: HModel, y, R: float = 1.0):
    """``G(e, y) = Gamma(y) - c_Q R^(2-Q)`` on ``B(e, R)``."""
    return model.c_Q * (np.asarray(hg.gauge(as_array(y))) ** (2 - model.Q) - R ** (2 - model.Q))


def boundary_distance(domain: ImplicitDomain, points, resolution: int = 24) -> np.ndarray:
    """Gauge distance from interior points to ``{rho = 0}``.

    Nearest node of an atlas quadrature, then a bounded local minimization
    over the atlas parameters.
    """
    from scipy.optimize import minimize

    from .measures import atlas_quadrature

    atlas = domain.atlas
    if atlas is None:
        raise ValueError("boundary distance needs an atlas")
    q = atlas_quadrature(domain, resolution, order=2)
    pts = as_array(points)
    out = np.empty(len(pts))
    bounds = [atlas.u_range, atlas.v_range]
    for i, p in enumerate(pts):
        d = np.asarray(hg.gauge_dist(p, q.points))
        k = int(np.argmin(d))

        def f(uv, p=p):
            return float(hg.gauge_dist(p, atlas.point(np.array(uv[0]), np.array(uv[1]))))

        res = minimize(f, q.uv[k], method="L-BFGS-B", bounds=bounds)
        out[i] = min(d[k], res.fun)
    return out


@dataclass
class GreenBounds:
    samples: np.ndarray
    C_green: float
    C_lu: float
    C_xg: float

    @property
    def finite(self) -> bool:
        return bool(np.isfinite([self.C_green, self.C_lu, self.C_xg]).all())


def green_bound_constants(model: Optional[HModel] = None, count: int = 1000, seed: int = 0) -> GreenBounds:
    """Empirical constants in the Green and ``|XG|`` upper bounds on the unit gauge ball, pole ``e``.

    ``G <= C d(e,y) d(y,dD) / |B(e, d)|``, ``G <= C d(e,dD) d(y,dD) / |B(e, d)|``
    and ``|XG| <= C d / |B(e, d)|``, with ``d = d(e, y)`` and ``d(e, dD) = 1``.
    """
    model = model or HModel(1)
    if model.n != 1:
        raise NotImplementedError("sampling uses the n = 1 atlas")
    dom = gauge_ball()
    rng = np.random.default_rng(seed)
    lo, hi = (np.asarray(b) for b in dom.bbox)
    pts = []
    while sum(len(p) for p in pts) < count:
        p = lo + (hi - lo) * rng.random((4 * count, 3))
        pts.append(p[dom.contains(p)])
    y = np.concatenate(pts)[:count]
    d = np.asarray(hg.gauge(y))
    vol = hg.unit_ball_volume(model.n) * d ** model.Q
    G = closed_form_green(model, y)
    XG = np.linalg.norm(np.asarray(hg.fundamental_solution_xgrad(model, y)), axis=-1)
    dy = boundary_distance(dom, y)
    return GreenBounds(y, float(np.max(G * vol / (d * dy))), float(np.max(G * vol / dy)),
                       float(np.max(XG * vol / d)))
