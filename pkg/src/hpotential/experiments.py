"""Named experiments: each maps a resolved config to metrics, assertions and a results table.

Tolerances are fixed in code; only the numerical setup is configurable.
"""

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import geometry as G
from . import hgroup as hg
from . import jerison as J
from . import kernels as Kn
from . import measures as Ms
from . import pde
from . import stochastic as S
from .config import ConfigError, ExperimentConfig, Key
from .plotdata import RatioTable

PPLUS = (0.0, 0.0, 0.25)
EQUATOR = (1.0, 0.0, 0.0)
E = (0.0, 0.0, 0.0)


@dataclass
class Assertion:
    name: str
    value: float
    tolerance: str
    passed: bool

    def as_dict(self):
        return {"name": self.name, "value": self.value, "tolerance": self.tolerance, "pass": bool(self.passed)}


def check(name, value, op, bound) -> Assertion:
    """``value op bound``; ``op = "within"`` takes ``bound = (target, tol)``."""
    v = float(value)
    if op == "within":
        target, tol = bound
        return Assertion(name, v, f"|value - {target!r}| <= {tol!r}", bool(abs(v - target) <= tol))
    ok = {"<": v < bound, "<=": v <= bound, ">": v > bound, ">=": v >= bound, "==": v == bound}[op]
    return Assertion(name, v, f"{op} {bound!r}", bool(ok))


def check_true(name, flag, value=None, what="true") -> Assertion:
    return Assertion(name, float(flag if value is None else value), what, bool(flag))


@dataclass
class Outcome:
    metrics: dict = field(default_factory=dict)
    assertions: list = field(default_factory=list)
    header: list = field(default_factory=list)
    rows: list = field(default_factory=list)
    censored_warnings: list = field(default_factory=list)
    plots: list = field(default_factory=list)
    files: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(a.passed for a in self.assertions)

    def assertion(self, name) -> Assertion:
        for a in self.assertions:
            if a.name == name:
                return a
        raise KeyError(name)


@dataclass(frozen=True)
class Experiment:
    name: str
    run: Callable
    keys: dict
    uses_domain: bool
    doc: str


REGISTRY = {}


def experiment(name, keys=(), uses_domain=False):
    def deco(fn):
        REGISTRY[name] = Experiment(name, fn, {k.name: k for k in keys}, uses_domain, (fn.__doc__ or "").strip())
        return fn

    return deco


MC_KEYS = (
    Key("mc.dt", "float", 1e-3, 1e-6, 1e-2),
    Key("mc.max_steps", "int", 20000, 1, 10 ** 8),
    Key("mc.seed", "int", 12345, 0, 2 ** 63 - 1),
)


def walk_config(cfg: ExperimentConfig) -> S.WalkConfig:
    return S.WalkConfig(dt=cfg["mc.dt"], max_steps=cfg["mc.max_steps"], seed=cfg["mc.seed"])


def build_domain(cfg: ExperimentConfig):
    name = cfg.domain or "gauge_ball"
    params = dict(cfg.domain_params)
    if "center" in params:
        params["center"] = np.asarray(params["center"], dtype=float)
    try:
        return G.make_domain(name, **params)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"domain {name}: {exc}") from None


def _require_interior(domain, x, key):
    if not float(domain.rho(np.asarray(x, dtype=float))) < 0:
        raise ConfigError(f"{key} must lie inside the domain")


def _require_boundary(domain, x, key, tol=1e-8):
    if abs(float(domain.rho(np.asarray(x, dtype=float)))) > tol:
        raise ConfigError(f"{key} must lie on the boundary")


def _affine_field(c, b):
    b = np.asarray(b, dtype=float)
    return hg.ScalarField(lambda q: c + q @ b, lambda q: np.broadcast_to(b, q.shape).copy(),
                          lambda q: np.zeros(q.shape + (q.shape[-1],)))


def t_quarter(q):
    return q[..., 2] + 0.25


def x_one(q):
    return q[..., 0] + 1.0


def one(q):
    return np.ones(q.shape[:-1])


def saddle(q):
    return q[..., 0] ** 2 - q[..., 1] ** 2


HARMONIC = {"t+1/4": t_quarter, "x1+1": x_one}


def _gauge_shell_points(n, count, seed, lo=0.5, hi=2.0):
    rng = np.random.default_rng(seed)
    p = rng.normal(size=(count, 2 * n + 1))
    s = np.exp(rng.uniform(math.log(lo), math.log(hi), count))
    return np.stack([hg.dilate(r / float(hg.gauge(v)), v) for v, r in zip(p, s)])


# ---------------------------------------------------------------------------


@experiment("verify-core", [Key("points", "int", 1000, 10, 10 ** 6), Key("seed", "int", 0, 0, 2 ** 63 - 1),
                            Key("n", "int", 1, 1, 4), Key("slr.points", "int", 200, 3, 10 ** 5)])
def verify_core(cfg):
    """Gauge identities, radial formula, harmonic polynomials and vanishing rates."""
    n = cfg["n"]
    Q = 2 * n + 2
    p = _gauge_shell_points(n, cfg["points"], cfg["seed"])
    N = np.asarray(hg.gauge(p))
    zs = hg.zsq(p)
    psi = zs / N ** 2
    XN = np.asarray(hg.gauge_xgrad(p))
    LN = np.asarray(hg.kohn_laplacian(hg.gauge_field(), p))
    res_grad = float(np.max(np.abs(np.sum(XN * XN, axis=-1) - zs / N ** 2)))
    res_literal = float(np.max(np.abs(LN - (Q - 1) / N)))
    res_psi = float(np.max(np.abs(LN - (Q - 1) * psi / N)))
    ps = p[: cfg["slr.points"]]
    Ns, psis = np.asarray(hg.gauge(ps)), hg.zsq(ps) / np.asarray(hg.gauge(ps)) ** 2
    res_slr = []
    for k in (1, 2, 3):
        f = hg.ScalarField(lambda a, k=k: np.asarray(hg.gauge(a)) ** k)
        rhs = psis * (k * (k - 1) * Ns ** (k - 2) + (Q - 1) * k * Ns ** (k - 2))
        res_slr.append(float(np.max(np.abs(np.asarray(hg.kohn_laplacian(f, ps)) - rhs))))
    # harmonic polynomials with exact derivatives
    e3 = np.zeros(2 * n + 1)
    e3[-1] = 1.0
    e1 = np.zeros(2 * n + 1)
    e1[0] = 1.0
    L_t = float(np.max(np.abs(hg.kohn_laplacian(_affine_field(0.25, e3), p))))
    L_x = float(np.max(np.abs(hg.kohn_laplacian(_affine_field(1.0, e1), p))))
    # vanishing rates at the boundary points of the unit gauge ball
    s = np.geomspace(1e-4, 1e-1, 8)
    pm = np.zeros(2 * n + 1)
    pm[-1] = -0.25
    along_t = pm + s[:, None] * e3
    exp_t = Ms.power_fit(np.asarray(hg.gauge_dist(pm, along_t)), along_t[:, -1] + 0.25)[0]
    xm = -e1
    along_x = xm + s[:, None] * e1
    exp_x = Ms.power_fit(np.asarray(hg.gauge_dist(xm, along_x)), along_x[:, 0] + 1.0)[0]
    out = Outcome()
    out.metrics = {"n": n, "Q": Q, "points": int(len(p)), "residual_xgrad_gauge": res_grad,
                   "residual_laplacian_literal": res_literal, "residual_laplacian_psi": res_psi,
                   "residual_radial_k": res_slr, "L_t_quarter": L_t, "L_x_one": L_x,
                   "vanishing_exponent_t_at_Pminus": exp_t, "vanishing_exponent_x_at_minus_e1": exp_x}
    out.assertions = [
        check("xgrad_gauge_identity", res_grad, "<", 1e-8),
        check("sublaplacian_gauge_literal", res_literal, "<", 1e-8),
        check("sublaplacian_gauge_psi_form", res_psi, "<", 1e-8),
        check("radial_formula", max(res_slr), "<", 1e-6),
        check("L_t_quarter_zero", L_t, "==", 0.0),
        check("L_x_one_zero", L_x, "==", 0.0),
        check("vanishing_exponent_t", exp_t, "within", (2.0, 0.1)),
        check("vanishing_exponent_x", exp_x, "within", (1.0, 0.1)),
    ]
    out.header = ["check", "value"]
    out.rows = [[a.name, a.value] for a in out.assertions]
    return out


def _scan_centers(domain, quad, count):
    if count == 0:
        return np.zeros((0, 3))
    if domain.name.startswith("gauge_ball"):
        c = np.asarray(domain.params.get("center", np.zeros(3)), dtype=float)
        R = float(domain.params.get("R", 1.0))
        return np.asarray(hg.group_mul(c, Ms.gauge_sphere_centers(R, count)))
    idx = np.linspace(0, len(quad.points) - 1, count).astype(int)
    return quad.points[idx]


@experiment("ahlfors-scan", [
    Key("x0", "point", PPLUS), Key("radii", "floats", tuple(np.geomspace(0.02, 0.3, 6).tolist()), 1e-4, 10.0),
    Key("quad.resolution", "int", 32, 8, 512), Key("min_nodes", "int", 200, 10, 10 ** 6),
    Key("doubling.centers", "int", 20, 0, 1000),
    Key("doubling.radii", "floats", tuple(np.geomspace(0.02, 0.2, 5).tolist()), 1e-4, 10.0),
    Key("doubling.max_cells", "int", 10000, 100, 10 ** 6)], uses_domain=True)
def ahlfors_scan(cfg):
    """sigma and sigma_X power laws at a boundary point and the sigma_X doubling scan."""
    dom = build_domain(cfg)
    x0 = np.asarray(cfg["x0"], dtype=float)
    _require_boundary(dom, x0, "x0")
    if len(cfg["radii"]) < 3:
        raise ConfigError("radii: at least 3 radii are needed for a fit")
    Q = hg.HModel(dom.n).Q
    quad = Ms.build_quadrature(dom, cfg["quad.resolution"])
    scan = Ms.ahlfors_scan(quad, x0, cfg["radii"], min_nodes=cfg["min_nodes"])
    W0 = float(G.horizontal_normal_arrays(dom, x0[None])[1][0])
    characteristic = W0 <= 1e-6
    want_sigma = Q - 2 if characteristic else Q - 1
    centers = _scan_centers(dom, quad, cfg["doubling.centers"])
    out = Outcome()
    out.assertions = [
        check("sigma_exponent", scan.sigma.exponent, "within", (float(want_sigma), 0.15)),
        check("sigma_x_exponent", scan.sigma_X.exponent, "within", (float(Q - 1), 0.15)),
    ]
    dbl = None
    if len(centers):
        dbl = Ms.sigma_x_doubling(quad, centers, cfg["doubling.radii"], min_nodes=cfg["min_nodes"],
                                  max_cells=cfg["doubling.max_cells"])
        out.assertions.append(check_true("sigma_x_doubling_finite", dbl.finite, dbl.constant, "finite"))
    out.metrics = {"Q": Q, "x0_W": W0, "x0_characteristic": characteristic,
                   "sigma_exponent": scan.sigma.exponent, "sigma_exponent_stderr": scan.sigma.stderr,
                   "sigma_x_exponent": scan.sigma_X.exponent, "sigma_x_exponent_stderr": scan.sigma_X.stderr,
                   "ahlfors_ratio_sup": scan.ahlfors_ratio.sup, "ahlfors_ratio_min": float(np.min(scan.ahlfors_ratio.values)),
                   "node_counts": [int(c) for c in scan.node_counts]}
    if dbl is not None:
        out.metrics.update({"doubling_constant": dbl.constant, "doubling_grid": [len(centers), len(cfg["doubling.radii"])],
                            "doubling_flags": list(dbl.flags)})
        out.plots.append(("sigma_x_doubling", RatioTable("sigma_x_doubling", centers, dbl.radii, dbl.ratios)))
    out.header = ["r", "sigma", "sigma_x", "ahlfors_ratio", "nodes"]
    out.rows = [[float(r), float(a), float(b), float(c), int(k)] for r, a, b, c, k in
                zip(scan.sigma.radii, scan.sigma.values, scan.sigma_X.values, scan.ahlfors_ratio.values, scan.node_counts)]
    out.plots += [("sigma", scan.sigma), ("sigma_x", scan.sigma_X), ("ahlfors_ratio", scan.ahlfors_ratio)]
    return out


def tangency_samples(domain, resolution):
    """Atlas nodes plus characteristic points, where the condition is most delicate."""
    pts = Ms.atlas_quadrature(domain, resolution, order=1).points
    char = G.characteristic_set(domain, resolution=16).refined
    return np.concatenate([pts, np.asarray(char).reshape(-1, pts.shape[-1])])


def tangency_sweep(domain, samples, radii, resolution=64):
    nodes = Ms.build_quadrature(domain, resolution, check=False).points
    gaps = np.empty((len(samples), len(radii)))
    for i, y in enumerate(samples):
        for j, r in enumerate(radii):
            gaps[i, j] = G.outer_xball_tangent(domain, y, r, nodes=nodes).gap
    return gaps


def omega_gap(alpha, r, n=1):
    sol = J.tau_root(n, alpha)
    tb = G.outer_xball_tangent(G.jerison_paraboloid(sol.M), np.zeros(3), r)
    return sol, tb


@experiment("tangency", [Key("radii", "floats", (0.05, 0.1, 0.2), 1e-4, 1.0),
                         Key("sample.resolution", "int", 8, 2, 64), Key("nodes.resolution", "int", 64, 8, 512),
                         Key("omega.alpha", "float", 0.5, 0.01, 1.0), Key("omega.r", "float", 0.05, 1e-4, 0.5)],
            uses_domain=True)
def tangency(cfg):
    """Outer tangent X-balls everywhere on the domain, and their failure for the cone at e."""
    dom = build_domain(cfg)
    if dom.atlas is None:
        raise ConfigError(f"domain {dom.name} has no surface atlas to sample")
    samples = tangency_samples(dom, cfg["sample.resolution"])
    gaps = tangency_sweep(dom, samples, cfg["radii"], cfg["nodes.resolution"])
    sol, tb = omega_gap(cfg["omega.alpha"], cfg["omega.r"])
    out = Outcome()
    out.metrics = {"samples": int(len(samples)), "min_gap": float(gaps.min()), "min_gap_per_radius": gaps.min(axis=0).tolist(),
                   "omega_M": sol.M, "omega_gap": tb.gap,
                   "omega_gap_expected": cfg["omega.r"] * ((1 + 16 * sol.M ** 2) ** -0.25 - 1)}
    out.assertions = [check(f"{dom.name}_outer_tangency_min_gap", gaps.min(), ">=", -1e-6),
                      check("omega_M_gap_at_e", tb.gap, "<", -1e-6)]
    out.header = ["x", "y", "t", "r", "gap"]
    out.rows = [[*map(float, y), float(r), float(gaps[i, j])] for i, y in enumerate(samples)
                for j, r in enumerate(cfg["radii"])]
    return out


def interior_error(u, f):
    I = u.grid.interior
    return float(np.max(np.abs(u.values[I] - f(u.grid.points(I)))))


@experiment("dirichlet-convergence", [Key("grids", "ints", (41, 81), 11, 301),
                                      Key("boundary", "str", "extrapolate", choices=("extrapolate", "inject")),
                                      Key("tol", "float", 1e-13, 1e-16, 1e-6)], uses_domain=True)
def dirichlet_convergence(cfg):
    """Max-node errors on exact harmonic data under grid refinement, and the discrete maximum principle."""
    dom = build_domain(cfg)
    grids = list(cfg["grids"])
    if len(grids) < 2:
        raise ConfigError("grids: at least two grids are needed")
    funcs = {"t+1/4": t_quarter, "x1+1": x_one, "x^2-y^2": saddle}
    err = {k: [] for k in funcs}
    dmp = {k: [] for k in funcs}
    hs = []
    out = Outcome()
    for n in grids:
        system = pde.build_system(dom, n, cfg["boundary"])
        hs.append(float(system.grid.hmax))
        for k, f in funcs.items():
            u = pde.solve_dirichlet(dom, f, system=system, tol=cfg["tol"])
            err[k].append(interior_error(u, f))
            dmp[k].append(pde.max_principle_violation(u))
            out.rows.append([n, hs[-1], k, err[k][-1], dmp[k][-1], int(u.info.get("iterations", -1))])
    for i in range(len(grids) - 1):
        tag = f"{grids[i]}_{grids[i + 1]}"
        for k in ("t+1/4", "x1+1"):
            a, b = err[k][i], err[k][i + 1]
            ratio = a / b if b > 0 else math.inf
            exact = max(a, b) <= 1e-8
            out.assertions.append(Assertion(f"convergence_{k}_{tag}", ratio, "ratio >= 3 or both errors <= 1e-08",
                                            bool(ratio >= 3 or exact)))
        a, b = err["x^2-y^2"][i], err["x^2-y^2"][i + 1]
        out.assertions.append(check(f"convergence_x^2-y^2_{tag}", a / b if b > 0 else math.inf, ">=", 3.0))
    for k in ("t+1/4", "x1+1"):
        out.assertions.append(check(f"max_principle_{k}", max(dmp[k]), "<=", 1e-10))
    out.metrics = {"grids": grids, "h": hs, "errors": err, "max_principle_violation": dmp,
                   "boundary": cfg["boundary"]}
    out.header = ["nodes", "h", "data", "max_error", "max_principle_violation", "iterations"]
    return out


@experiment("green-bounds", [Key("grids", "ints", (41, 81), 11, 301), Key("constant.nodes", "int", 41, 11, 301),
                             Key("sym.p", "point", (0.3, 0.0, 0.0)), Key("sym.q", "point", (-0.2, 0.1, 0.05)),
                             Key("sym.nodes", "int", 41, 11, 301), Key("bounds.count", "int", 1000, 10, 10 ** 6),
                             Key("bounds.seed", "int", 0, 0, 2 ** 63 - 1)])
def green_bounds(cfg):
    """Closed-form Green function with pole e, Green symmetry, and the G, |XG| bound constants."""
    model = hg.HModel(1)
    ball = G.gauge_ball()
    out = Outcome()
    # error constant of the scheme on smooth harmonic data at the reference grid
    n0 = cfg["constant.nodes"]
    s0 = pde.build_system(ball, n0)
    C = interior_error(pde.solve_dirichlet(ball, saddle, system=s0), saddle) / s0.grid.hmax ** 2
    errs = {}
    for n in cfg["grids"]:
        g = pde.green_function(ball, np.zeros(3), nodes=n, model=model)
        I = g.grid.interior
        P = g.grid.points(I)
        v = g.values[I]
        ok = np.isfinite(v) & (np.asarray(hg.gauge(P)) > 0)
        e = float(np.max(np.abs(v[ok] - pde.closed_form_green(model, P[ok]))))
        errs[n] = e
        bound = 5 * C * g.grid.hmax ** 2
        out.assertions.append(check(f"green_closed_form_{n}", e, "<", bound))
        out.rows.append(["green_closed_form_error", n, e])
    sysn = pde.build_system(ball, cfg["sym.nodes"])
    grid = sysn.grid
    p = grid.points(np.array([grid.nearest_node(cfg["sym.p"])]))[0]
    q = grid.points(np.array([grid.nearest_node(cfg["sym.q"])]))[0]
    gp = pde.green_function(ball, p, system=sysn, model=model)
    gq = pde.green_function(ball, q, system=sysn, model=model)
    a, b = float(gp.values[grid.nearest_node(q)]), float(gq.values[grid.nearest_node(p)])
    sym = abs(a - b) / max(abs(a), abs(b))
    out.assertions.append(check("green_symmetry", sym, "<", 5 * grid.hmax))
    gb = pde.green_bound_constants(model, cfg["bounds.count"], cfg["bounds.seed"])
    out.assertions.append(check_true("green_bound_constants_finite", gb.finite, max(gb.C_green, gb.C_lu, gb.C_xg), "finite"))
    out.metrics = {"error_constant_41": C, "green_errors": {str(k): v for k, v in errs.items()},
                   "symmetry": {"p": p.tolist(), "q": q.tolist(), "G_pq": a, "G_qp": b, "relative": sym},
                   "C_green": gb.C_green, "C_lu": gb.C_lu, "C_xg": gb.C_xg, "bound_samples": int(len(gb.samples))}
    out.rows += [["symmetry_relative", cfg["sym.nodes"], sym], ["C_green", 0, gb.C_green], ["C_lu", 0, gb.C_lu],
                 ["C_xg", 0, gb.C_xg], ["error_constant", n0, C]]
    out.header = ["quantity", "nodes", "value"]
    return out


@experiment("mollifier-check", [Key("center", "point", E), Key("levels", "floats", (0.02, 0.05), 1e-6, 10.0),
                                Key("radii", "floats", (0.02, 0.05), 1e-6, 10.0),
                                Key("points", "int", 64, 8, 512)], uses_domain=True)
def mollifier_check(cfg):
    """Mean-value formula and mollifier on harmonic functions."""
    dom = build_domain(cfg)
    x = np.asarray(cfg["center"], dtype=float)
    _require_interior(dom, x, "center")
    funcs = {"1": one, "t+1/4": t_quarter, "x1+1": x_one}
    out = Outcome()
    worst = {"mean_value": 0.0, "mollifier": 0.0}
    for name, f in funcs.items():
        exact = float(f(x[None])[0])
        for lev in cfg["levels"]:
            v = pde.mean_value(f, x, lev, domain=dom)
            worst["mean_value"] = max(worst["mean_value"], abs(v - exact))
            out.rows.append([name, "mean_value", lev, v, exact, abs(v - exact)])
        for R in cfg["radii"]:
            v = pde.mollify(f, x, R, points=cfg["points"], domain=dom)
            worst["mollifier"] = max(worst["mollifier"], abs(v - exact))
            out.rows.append([name, "mollifier", R, v, exact, abs(v - exact)])
    out.assertions = [check("mean_value_error", worst["mean_value"], "<", 1e-3),
                      check("mollifier_error", worst["mollifier"], "<", 1e-3)]
    out.metrics = {"max_error_mean_value": worst["mean_value"], "max_error_mollifier": worst["mollifier"]}
    out.header = ["function", "operator", "level", "value", "exact", "error"]
    return out


@experiment("schauder", [Key("nodes", "int", 41, 11, 301), Key("r", "float", 0.3, 1e-3, 10.0),
                         Key("samples", "points", ((0.0, 0.0, 0.0), (0.2, 0.1, 0.05), (-0.3, 0.2, -0.02)))],
            uses_domain=True)
def schauder(cfg):
    """Empirical Schauder constants of discrete harmonic functions, checked for stability under r -> r/2."""
    dom = build_domain(cfg)
    samples = np.asarray(cfg["samples"], dtype=float)
    for s in samples:
        _require_interior(dom, s, "samples")
    system = pde.build_system(dom, cfg["nodes"])
    out = Outcome()
    for name, f in {"t+1/4": t_quarter, "x1+1": x_one, "x^2-y^2": saddle}.items():
        u = pde.solve_dirichlet(dom, f, system=system)
        rep = pde.schauder_check(u, samples, cfg["r"])
        out.metrics[name] = {"sup": rep.sup, "sup_half": rep.sup_half, "skipped": list(rep.skipped)}
        out.assertions.append(check_true(f"schauder_{name}_finite_stable", math.isfinite(rep.sup) and rep.stable,
                                         rep.sup, "finite and 1/4 <= C(r)/C(r/2) <= 4"))
        for s, c, ch in zip(samples, rep.constants, rep.constants_half):
            out.rows.append([name, *map(float, s), float(c), float(ch)])
    out.header = ["function", "x", "y", "t", "C_r", "C_half_r"]
    return out


@experiment("growth", [Key("barrier.x1", "point", (0.1, -0.2, 0.3)), Key("barrier.r", "float", 0.1, 1e-3, 10.0),
                       Key("barrier.h", "floats", (2.5e-3, 1.25e-3), 1e-6, 0.1),
                       Key("barrier.samples", "int", 20, 3, 10 ** 5), Key("barrier.distance", "float", 3.0, 1.0, 100.0),
                       Key("seed", "int", 0, 0, 2 ** 63 - 1),
                       Key("growth.x0", "point", PPLUS), Key("growth.r", "float", 0.1, 1e-3, 1.0),
                       Key("nodes", "int", 41, 11, 301)], uses_domain=True)
def growth(cfg):
    """Barrier boundary values and FD residual order; boundary growth of a harmonic function."""
    model = hg.HModel(1)
    x1, r = np.asarray(cfg["barrier.x1"], dtype=float), cfg["barrier.r"]
    f = pde.barrier(model, x1, r)
    rng = np.random.default_rng(cfg["seed"])
    w = rng.normal(size=(cfg["barrier.samples"], 3))
    w = np.stack([hg.dilate(1.0 / float(hg.gauge(v)), v) for v in w])
    inner = float(np.max(np.abs(f(hg.group_mul(x1, hg.dilate(r, w))))))
    outer = float(np.max(np.abs(f(hg.group_mul(x1, hg.dilate(2 * r, w))) - 1)))
    # residual samples at gauge distance barrier.distance * r; closer to the pole the
    # centered stencil is not yet asymptotic at these steps
    p = hg.group_mul(x1, hg.dilate(cfg["barrier.distance"] * r, w))
    hs = list(cfg["barrier.h"])
    if len(hs) != 2 or not hs[1] < hs[0]:
        raise ConfigError("barrier.h: two decreasing steps")
    res = [float(np.max(np.abs(pde.fd_kohn(f, p, h)))) for h in hs]
    order = math.log(res[0] / res[1]) / math.log(hs[0] / hs[1])
    dom = build_domain(cfg)
    x0 = np.asarray(cfg["growth.x0"], dtype=float)
    _require_boundary(dom, x0, "growth.x0")
    rr = cfg["growth.r"]
    tb = G.outer_xball_tangent(dom, x0, rr)
    c = np.asarray(tb.center)

    def phi(q):
        return np.clip((np.asarray(hg.gauge_dist(c, q)) - 2 * rr) / (2 * rr), 0, 1)

    rep = pde.growth_check(dom, x0, rr, phi, nodes=cfg["nodes"])
    out = Outcome()
    out.assertions = [check("barrier_zero_on_inner_sphere", inner, "<=", 1e-12),
                      check("barrier_one_on_outer_sphere", outer, "<=", 1e-12),
                      check("barrier_fd_residual_order", order, "within", (2.0, 0.25)),
                      check_true("growth_ratio_finite", rep.finite, rep.sup_ratio, "finite")]
    out.metrics = {"barrier_inner_error": inner, "barrier_outer_error": outer, "barrier_fd_residual": res,
                   "barrier_fd_h": hs, "barrier_fd_order": order, "growth_sup_ratio": rep.sup_ratio,
                   "growth_max_abs": rep.max_abs, "tangent_gap": tb.gap}
    out.header = ["quantity", "value"]
    out.rows = [["barrier_inner_error", inner], ["barrier_outer_error", outer],
                *[[f"barrier_fd_residual_h={h!r}", v] for h, v in zip(hs, res)],
                ["barrier_fd_order", order], ["growth_sup_ratio", rep.sup_ratio]]
    return out


def _kernel_reference(domain, x, resolution):
    if not Kn._is_centered_gauge_ball(domain, x):
        raise ConfigError("the closed-form kernel needs a gauge ball centered at the start point")
    q = Ms.build_quadrature(domain, resolution, check=False)
    return q, Kn.poisson_kernels(domain, x, q)


@experiment("harmonic-measure", [Key("x", "point", E), Key("mc.walks", "int", 100000, 10000, 10 ** 8),
                                 *MC_KEYS, Key("bands", "int", 8, 2, 64), Key("quad.resolution", "int", 32, 8, 512)],
            uses_domain=True)
def harmonic_measure(cfg, threads=None):
    """Monte Carlo harmonic measure of latitude bands against the kernel integral, and martingale checks."""
    dom = build_domain(cfg)
    x = np.asarray(cfg["x"], dtype=float)
    _require_interior(dom, x, "x")
    q, ks = _kernel_reference(dom, x, cfg["quad.resolution"])
    nb = cfg["bands"]
    walks = S.sample_exit(dom, x, walk_config(cfg), cfg["mc.walks"], threads=threads)
    est = S.band_measure(dom, x, nb, walks=walks)
    exact = Kn.band_kernel_mass(ks, q, Ms.band_index(dom, q.points, nb), nb)
    edges = Ms.band_edges(nb)
    out = Outcome(censored_warnings=walks.warnings())
    zs = []
    for k, (e, m) in enumerate(zip(est, exact)):
        z = abs(e.mass - m) / e.stderr if e.stderr > 0 else math.inf
        zs.append(z)
        out.rows.append([k, float(edges[k]), float(edges[k + 1]), e.count, e.mass, e.stderr, float(m), z])
    counts = sum(e.count for e in est)
    total = math.fsum(e.mass for e in est)
    mart = {}
    for name, f in HARMONIC.items():
        v = f(walks.exits)
        se = float(v.std(ddof=1) / math.sqrt(v.size))
        exact_v = float(f(x[None])[0])
        mart[name] = {"mean": float(v.mean()), "stderr": se, "exact": exact_v, "z": abs(float(v.mean()) - exact_v) / se}
    out.assertions = [check(f"band{k}_z", z, "<", 3.0) for k, z in enumerate(zs)]
    out.assertions += [check(f"martingale_{k}_z", m["z"], "<", 3.0) for k, m in mart.items()]
    out.assertions += [check("band_counts_partition", counts, "==", walks.n_walks - walks.n_censored),
                       check("band_mass_sum_error", abs(total - 1.0), "<=", 8 * np.finfo(float).eps),
                       check("censored_fraction", walks.censored_fraction, "<=", S.CENSOR_LIMIT)]
    out.metrics = {"n_walks": walks.n_walks, "n_censored": walks.n_censored, "mean_steps": float(walks.steps.mean()),
                   "band_mass": [e.mass for e in est], "band_stderr": [e.stderr for e in est],
                   "kernel_band_mass": exact.tolist(), "band_z": zs, "martingale": mart, "mass_sum": total}
    out.header = ["band", "theta_lo", "theta_hi", "n", "mass", "stderr", "kernel_mass", "z"]
    return out


@experiment("doubling", [Key("x", "point", E), Key("centers", "points", (PPLUS, EQUATOR)),
                         Key("radii", "floats", (0.1, 0.2, 0.4), 1e-4, 10.0), Key("separation", "float", 2.0, 1.0, 10.0),
                         Key("mc.walks", "int", 100000, 100, 10 ** 8), *MC_KEYS,
                         Key("quad.max_cells", "int", 10000, 100, 10 ** 6)], uses_domain=True)
def doubling(cfg, threads=None):
    """Doubling ratios of Monte Carlo harmonic measure on surface balls, with exact kernel ratios when available."""
    dom = build_domain(cfg)
    x = np.asarray(cfg["x"], dtype=float)
    _require_interior(dom, x, "x")
    centers = np.asarray(cfg["centers"], dtype=float)
    for c in centers:
        _require_boundary(dom, c, "centers")
    radii = np.asarray(cfg["radii"], dtype=float)
    for c in centers:
        if float(hg.gauge_dist(c, x)) < cfg["separation"] * radii.max():
            raise ConfigError("x is too close to a center for these radii")
    walks = S.sample_exit(dom, x, walk_config(cfg), cfg["mc.walks"], threads=threads)
    closed = Kn._is_centered_gauge_ball(dom, x)
    out = Outcome(censored_warnings=walks.warnings())
    sups, flagged = [], []
    for ci, c in enumerate(centers):
        rep = S.doubling_check(dom, x, c, radii, walks=walks, separation=cfg["separation"])
        d = np.asarray(hg.gauge_dist(c, walks.exits))
        n = d.size
        ok = np.isfinite(rep.values)
        flagged += [f for f in rep.extra["flags"] if f]
        exact = []
        for r, ratio, err in zip(radii, rep.values, rep.extra["errors"]):
            row_exact = math.nan
            if closed:
                mass = []
                for rr in (r, 2 * r):
                    b = Ms.ball_quadrature(dom, c, rr, max_cells=cfg["quad.max_cells"])
                    mass.append(Kn.ball_kernel_mass(Kn.poisson_kernels(dom, x, b.quadrature), b.quadrature, b))
                row_exact = mass[1] / mass[0] if mass[0] > 0 else math.inf
            exact.append(row_exact)
            for rr in (r, 2 * r):
                k = int(np.count_nonzero(d < rr))
                m = k / n
                out.rows.append([ci, *map(float, c), float(rr), m, math.sqrt(m * (1 - m) / n), n, float(ratio),
                                 float(err), row_exact])
        sup = float(np.max(rep.values[ok])) if ok.any() else math.inf
        sups.append(sup)
        out.assertions.append(check_true(f"center{ci}_ratios_at_least_one", bool(np.all(rep.values[ok] >= 1)),
                                         float(np.min(rep.values[ok])) if ok.any() else math.nan, ">= 1"))
        out.assertions.append(check_true(f"center{ci}_sup_finite", math.isfinite(sup), sup, "finite"))
        fit = Ms.ScanReport(f"doubling_center{ci}", radii[ok], rep.values[ok])
        out.plots.append((f"doubling_center{ci}", fit))
        out.metrics[f"center{ci}"] = {"center": c.tolist(), "ratios": rep.values.tolist(), "errors": rep.extra["errors"],
                                      "exact_ratios": exact}
    out.metrics.update({"n_walks": walks.n_walks, "flags": flagged, "sup": max(sups)})
    out.header = ["center", "x", "y", "t", "r", "mass", "stderr", "n", "ratio", "ratio_error", "exact_ratio"]
    return out


@experiment("kernel-mass", [Key("quad.resolution", "int", 32, 8, 512), Key("grid.nodes", "int", 41, 21, 301),
                            Key("grid.pole", "point", (0.3, 0.0, 0.0))])
def kernel_mass(cfg):
    """Total mass of P and K in closed form (pole e) and from the lattice Green function (off-center pole)."""
    ball = G.gauge_ball()
    q = Ms.build_quadrature(ball, cfg["quad.resolution"])
    ks = Kn.poisson_kernels(ball, np.zeros(3), q)
    mP, mK = Kn.total_mass(ks, q)
    pole = np.asarray(cfg["grid.pole"], dtype=float)
    _require_interior(ball, pole, "grid.pole")
    g = pde.green_function(ball, pole, nodes=cfg["grid.nodes"])
    kg = Kn.poisson_kernels(ball, pole, q, mode="grid", green=g)
    gP, gK = Kn.total_mass(kg, q)
    out = Outcome()
    out.assertions = [check("closed_form_mass_K", mK, "within", (1.0, 0.02)),
                      check("closed_form_mass_P", mP, "within", (1.0, 0.02)),
                      check("grid_mass_K", gK, "within", (1.0, 0.05)),
                      check("grid_mass_P", gP, "within", (1.0, 0.05)),
                      check("closed_form_min_K_noncharacteristic", ks.min_K, ">", 0.0)]
    out.metrics = {"closed_form": {"mass_P": mP, "mass_K": mK, "min_K": ks.min_K, "n_characteristic": int(ks.characteristic.sum()),
                                   "upper_constant": Kn.kernel_upper_constant(ks)},
                   "grid": {"pole": pole.tolist(), "nodes": cfg["grid.nodes"], "mass_P": gP, "mass_K": gK, "min_K": kg.min_K},
                   "quadrature_nodes": int(len(q))}
    out.header = ["mode", "pole_x", "pole_y", "pole_t", "mass_P", "mass_K", "min_K", "n_characteristic"]
    out.rows = [["closed_form", 0.0, 0.0, 0.0, mP, mK, ks.min_K, int(ks.characteristic.sum())],
                ["grid", *map(float, pole), gP, gK, kg.min_K, int(kg.characteristic.sum())]]
    out.files["kernels.csv"] = ks.to_csv
    return out


@experiment("reverse-holder", [Key("centers", "points", (PPLUS, EQUATOR)), Key("radii", "floats", (0.1, 0.2, 0.4), 1e-3, 1.0),
                               Key("p", "floats", (2.0, 3.0), 1.0001, 100.0), Key("base_resolution", "int", 32, 8, 256),
                               Key("max_cells", "int", 20000, 100, 10 ** 6)])
def reverse_holder(cfg):
    """Reverse Hoelder ratios of K and P on surface balls, stable under quadrature doubling."""
    ball = G.gauge_ball()
    centers = np.asarray(cfg["centers"], dtype=float)
    for c in centers:
        _require_boundary(ball, c, "centers")
    radii, ps = list(cfg["radii"]), list(cfg["p"])
    levels = [(cfg["base_resolution"], cfg["max_cells"]), (2 * cfg["base_resolution"], 2 * cfg["max_cells"])]
    ratio = {}
    minK = math.inf
    for ci, c in enumerate(centers):
        for r in radii:
            for li, (res, cells) in enumerate(levels):
                b = Ms.ball_quadrature(ball, c, r, base_resolution=res, max_cells=cells)
                ks = Kn.poisson_kernels(ball, np.zeros(3), b.quadrature)
                idx = b.node_indices[~ks.characteristic[b.node_indices]]
                minK = min(minK, float(ks.K[idx].min()))
                for p in ps:
                    for kern in "KP":
                        ratio[(ci, r, p, kern, li)] = Kn.reverse_holder(ks, b.quadrature, b, p, kern)
    out = Outcome()
    worst_change, all_ok = 0.0, True
    for ci, c in enumerate(centers):
        for r in radii:
            for p in ps:
                for kern in "KP":
                    a, b = ratio[(ci, r, p, kern, 0)], ratio[(ci, r, p, kern, 1)]
                    ch = abs(b.ratio - a.ratio) / a.ratio
                    worst_change = max(worst_change, ch)
                    all_ok &= math.isfinite(a.ratio) and math.isfinite(b.ratio) and a.ratio >= 1 and b.ratio >= 1
                    out.rows.append([ci, *map(float, c), r, p, kern, a.lhs, a.rhs, a.ratio, b.ratio, ch])
    for p in ps:
        for kern in "KP":
            mat = np.array([[ratio[(ci, r, p, kern, 0)].ratio for r in radii] for ci in range(len(centers))])
            out.plots.append((f"rh_{kern}_p{p:g}", RatioTable(f"rh_{kern}_p{p:g}", centers, radii, mat)))
    out.assertions = [check_true("ratios_finite_at_least_one", all_ok, value=float(all_ok), what="finite and >= 1"),
                      check("max_relative_change_under_doubling", worst_change, "<", 0.10),
                      check("min_K_noncharacteristic", minK, ">", 0.0)]
    out.metrics = {"max_relative_change": worst_change, "min_K": minK,
                   "levels": [list(v) for v in levels],
                   "max_ratio": max(v.ratio for v in ratio.values())}
    out.header = ["center", "x", "y", "t", "r", "p", "kernel", "lhs", "rhs", "ratio", "ratio_doubled", "relative_change"]
    return out


@experiment("represent", [Key("grid.nodes", "int", 41, 11, 301), Key("quad.resolution", "int", 32, 8, 512),
                          Key("mc.walks", "int", 20000, 100, 10 ** 8), *MC_KEYS])
def represent(cfg, threads=None):
    """Kernel representation of the Dirichlet solution at e against the lattice solver and Monte Carlo exits."""
    ball = G.gauge_ball()
    q = Ms.build_quadrature(ball, cfg["quad.resolution"])
    ks = Kn.poisson_kernels(ball, np.zeros(3), q)
    system = pde.build_system(ball, cfg["grid.nodes"])
    walks = S.sample_exit(ball, np.zeros(3), walk_config(cfg), cfg["mc.walks"], threads=threads)
    funcs = {"x^2-y^2+t/2": lambda p: saddle(p) + 0.5 * p[..., 2], "t+1/4": t_quarter, "x1+1": x_one}
    out = Outcome(censored_warnings=walks.warnings())
    for name, f in funcs.items():
        kv = Kn.represent_solution(f, ks, q)
        u = pde.solve_dirichlet(ball, f, system=system)
        dv = float(u.values[u.grid.nearest_node(np.zeros(3))])
        vals = f(q.points)
        rng_f = float(vals.max() - vals.min())
        tol = max(0.02 * rng_f, system.grid.hmax ** 2)
        m = f(walks.exits)
        se = float(m.std(ddof=1) / math.sqrt(m.size))
        z = abs(float(m.mean()) - kv) / se if se > 0 else math.inf
        out.assertions.append(check(f"{name}_kernel_vs_solver", abs(kv - dv), "<=", tol))
        out.assertions.append(check(f"{name}_kernel_vs_mc_z", z, "<", 3.0))
        out.rows.append([name, kv, dv, float(m.mean()), se, rng_f])
        out.metrics[name] = {"kernel": kv, "solver": dv, "mc_mean": float(m.mean()), "mc_stderr": se, "mc_z": z}
    out.metrics["n_walks"] = walks.n_walks
    out.header = ["function", "kernel_value", "solver_value", "mc_mean", "mc_stderr", "boundary_range"]
    return out


@experiment("jerison", [Key("n", "int", 1, 1, 4), Key("alphas", "floats", (0.1, 0.3, 0.5), 1e-3, 1.0),
                        Key("tangency.r", "float", 0.05, 1e-4, 0.5), Key("tangency.resolution", "int", 8, 2, 64),
                        Key("identity.h", "float", 1e-3, 1e-5, 1e-1)])
def jerison(cfg):
    """Hypergeometric profile, root, cone, Hoelder-sharp v, and the outer tangency contrast."""
    n = cfg["n"]
    alphas = sorted(cfg["alphas"])
    taus = np.linspace(-0.9, 0.99, 200)
    radii = np.logspace(-3, -1, 12)
    pts = np.array([[0.3, 0.2, 0.05], [0.5, -0.1, -0.02], [-0.2, 0.4, 0.1]])
    h = cfg["identity.h"]
    out = Outcome()
    sols = []
    for al in alphas:
        sol = J.tau_root(n, al)
        sols.append(sol)
        res = float(np.max(np.abs(J.jacobi_residual(n, al, sol.g, taus))))
        res5 = float(np.max(np.abs(J.jacobi_residual(n, al, lambda t: sol.g(t), taus, h=1e-3, stencil=5))))
        res3 = float(np.max(np.abs(J.jacobi_residual(n, al, lambda t: sol.g(t), taus, h=1e-5))))
        tag = f"alpha={al:g}"
        metrics = {"tau": sol.tau_alpha, "s": sol.s_alpha, "M": sol.M, "g_at_root": sol.g_at_root,
                   "g_at_float_tau": sol.info.get("g_at_float_tau"), "consistency": sol.consistency(),
                   "jacobi_residual": res, "jacobi_residual_5pt": res5, "jacobi_residual_3pt_h1e-5": res3}
        out.assertions += [check(f"{tag}_g_at_one", abs(float(sol.g(1.0)) - 1.0), "==", 0.0),
                           check(f"{tag}_jacobi_residual", res, "<", 1e-6),
                           check_true(f"{tag}_tau_in_open_interval", -1 < sol.tau_alpha < 0, sol.tau_alpha, "in (-1, 0)"),
                           check(f"{tag}_g_at_root", abs(sol.g_at_root), "<", 1e-12),
                           check(f"{tag}_consistency", sol.consistency(), "<", 1e-10)]
        if n == 1:
            # the region lives in H^1 here
            hol_axis = J.holder_exponent(sol, J.ray(1.0, radii))
            hol_mid = J.holder_exponent(sol, J.ray(0.5 * (sol.tau_alpha + 1), radii, 1.1))
            orders = []
            for u in (None, "cos"):
                errs = []
                for hh in (2 * h, h):
                    if u is None:
                        fd, formula = J.verify_identity(sol, pts, hh)
                    else:
                        fd, formula = J.verify_identity(sol, pts, hh, np.cos, lambda t: -np.sin(t), lambda t: -np.cos(t))
                    errs.append(float(np.max(np.abs(fd - formula))))
                orders.append(math.log2(errs[0] / errs[1]))
            _, tb = omega_gap(al, cfg["tangency.r"], n)
            metrics.update({"holder_axis": hol_axis, "holder_mid": hol_mid, "identity_fd_order_g": orders[0],
                            "identity_fd_order_cos": orders[1], "omega_gap": tb.gap})
            out.assertions += [check(f"{tag}_holder_axis", hol_axis, "within", (al, 0.05)),
                               check(f"{tag}_holder_interior_ray", hol_mid, "within", (al, 0.05)),
                               check(f"{tag}_identity_fd_order_g", orders[0], "within", (2.0, 0.25)),
                               check(f"{tag}_identity_fd_order_cos", orders[1], "within", (2.0, 0.25)),
                               check(f"{tag}_omega_gap_at_e", tb.gap, "<", -1e-6)]
        out.metrics[tag] = metrics
        out.rows.append([al, sol.tau_alpha, sol.s_alpha, sol.M, sol.consistency(), res,
                         metrics.get("holder_axis", math.nan), metrics.get("omega_gap", math.nan)])
    ordered = all(a.tau_alpha < b.tau_alpha for a, b in zip(sols, sols[1:]))
    out.assertions.append(check_true("tau_monotone_in_alpha", ordered, what="tau increasing with alpha"))
    if n == 1:
        ball = G.gauge_ball()
        gaps = tangency_sweep(ball, tangency_samples(ball, cfg["tangency.resolution"]), [cfg["tangency.r"]])
        out.assertions.append(check("gauge_ball_outer_tangency_min_gap", gaps.min(), ">=", -1e-6))
        out.metrics["gauge_ball_min_gap"] = float(gaps.min())
    out.header = ["alpha", "tau", "s", "M", "consistency", "jacobi_residual", "holder_axis", "omega_gap"]
    return out
