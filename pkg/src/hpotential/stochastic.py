"""Horizontal Brownian motion, exit sampling and Monte Carlo harmonic measure.

Walks simulate the diffusion generated by ``1/2 sum X_j^2``. Its harmonic
functions are those of the sub-Laplacian, so exit laws do not see the factor
1/2; only exit times do. Noise comes from Philox streams keyed by
``(seed, walk index, step)``, so results do not depend on batching or on the
number of threads.
"""

import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import hgroup as hg
from .geometry import ImplicitDomain
from .hgroup import as_array
from .measures import ScanReport, SurfaceBall, band_index
from .rng import standard_normals

BLOCK = 4096
CENSOR_LIMIT = 1e-3


class CensoringWarning(UserWarning):
    pass


@dataclass(frozen=True)
class WalkConfig:
    dt: float = 1e-3
    max_steps: int = 20000
    seed: int = 0
    snap_tol: float = 1e-10

    def __post_init__(self):
        if not 0 < self.dt <= 1e-2:
            raise ValueError("dt must lie in (0, 1e-2]")
        if self.max_steps < 1:
            raise ValueError("max_steps must be positive")
        if not self.snap_tol > 0:
            raise ValueError("snap_tol must be positive")

    def halved(self) -> "WalkConfig":
        return WalkConfig(0.5 * self.dt, 2 * self.max_steps, self.seed, self.snap_tol)


@dataclass
class WalkResult:
    start: np.ndarray
    points: np.ndarray
    steps: np.ndarray
    censored: np.ndarray
    config: WalkConfig
    residual: np.ndarray = None
    outside: np.ndarray = None

    @property
    def n_walks(self) -> int:
        return len(self.steps)

    @property
    def n_censored(self) -> int:
        return int(self.censored.sum())

    @property
    def censored_fraction(self) -> float:
        return self.n_censored / max(self.n_walks, 1)

    @property
    def exits(self) -> np.ndarray:
        return self.points[~self.censored]

    @property
    def overshoots(self) -> np.ndarray:
        return self.outside[~self.censored]

    @property
    def exit_times(self) -> np.ndarray:
        return self.steps[~self.censored] * self.config.dt

    def warnings(self) -> list:
        if self.censored_fraction > CENSOR_LIMIT:
            return [f"{self.n_censored} of {self.n_walks} walks censored at max_steps={self.config.max_steps}"]
        return []


def thread_count(threads: Optional[int] = None) -> int:
    if threads is not None:
        return max(1, int(threads))
    env = os.environ.get("TOOL_THREADS")
    if env:
        return max(1, int(env))
    return min(8, os.cpu_count() or 1)


def horizontal_increment(p, eta, s):
    """Euler-Maruyama increment ``s * sum_j eta_j X_j(p)``.

    ``p`` has shape ``(m, 2n+1)``, ``eta`` shape ``(2n, m)``.
    """
    n = (p.shape[-1] - 1) // 2
    d = np.empty_like(p)
    d[:, :-1] = s * eta.T
    x, y = p[:, :n], p[:, n:2 * n]
    d[:, -1] = 0.5 * s * np.sum(x * eta[n:].T - y * eta[:n].T, axis=-1)
    return d


def _snap(domain, p, tol):
    q = domain.project(p, tol=tol)
    return q, np.abs(np.asarray(domain.rho(q)))


def _walk_block(domain, x, cfg, first, count):
    dim = x.size
    n = (dim - 1) // 2
    s = math.sqrt(cfg.dt)
    out = np.empty((count, dim))
    over = np.empty((count, dim))
    steps = np.full(count, cfg.max_steps, dtype=np.int64)
    censored = np.ones(count, dtype=bool)
    resid = np.zeros(count)
    alive = np.arange(count)
    p = np.tile(x, (count, 1))
    r = np.asarray(domain.rho(p), dtype=float)
    for k in range(cfg.max_steps):
        eta = standard_normals(cfg.seed, first + alive, k, 2 * n)
        q = p + horizontal_increment(p, eta, s)
        rq = np.asarray(domain.rho(q), dtype=float)
        hit = rq >= 0
        if hit.any():
            lam = (r[hit] / (r[hit] - rq[hit]))[:, None]
            e = p[hit] + lam * (q[hit] - p[hit])
            e, res = _snap(domain, e, cfg.snap_tol)
            idx = alive[hit]
            out[idx] = e
            over[idx] = q[hit]
            resid[idx] = res
            steps[idx] = k + 1
            censored[idx] = False
            keep = ~hit
            alive, q, rq = alive[keep], q[keep], rq[keep]
            if alive.size == 0:
                break
        p, r = q, rq
    out[alive] = p
    over[alive] = p
    return out, steps, censored, resid, over


def sample_exit(domain: ImplicitDomain, x, cfg: WalkConfig = WalkConfig(), n_walks: int = 10000,
                threads: Optional[int] = None) -> WalkResult:
    """Exit points of horizontal Brownian motion started at ``x``.

    Each step is ``xi <- xi + sqrt(dt) sum_j eta_j X_j(xi)``. At the first
    sign change of ``rho`` the exit point is the linear root on the last
    segment, projected onto ``|rho| < snap_tol`` along the gradient.
    Walks still inside after ``max_steps`` are flagged as censored.
    ``outside`` keeps the first lattice point past the boundary; for affine
    harmonic functions its value is an exact discrete martingale, which
    isolates the O(sqrt(dt)) bias of the interpolated exit.
    """
    x = as_array(x)
    if not np.asarray(domain.rho(x)) < 0:
        raise ValueError("start point must be interior")
    if n_walks < 1:
        raise ValueError("n_walks must be positive")
    blocks = [(b, min(BLOCK, n_walks - b)) for b in range(0, n_walks, BLOCK)]
    with ThreadPoolExecutor(thread_count(threads)) as pool:
        parts = list(pool.map(lambda bc: _walk_block(domain, x, cfg, *bc), blocks))
    res = WalkResult(x, np.concatenate([a[0] for a in parts]), np.concatenate([a[1] for a in parts]),
                     np.concatenate([a[2] for a in parts]), cfg, np.concatenate([a[3] for a in parts]),
                     np.concatenate([a[4] for a in parts]))
    for msg in res.warnings():
        warnings.warn(msg, CensoringWarning)
    return res


def simulate_free(x, T: float, dt: float, n_walks: int, seed: int = 0, scheme: str = "euler") -> np.ndarray:
    """Endpoints at time ``T`` of the unkilled walk; ``scheme`` is ``euler`` or ``heun``.

    Heun is the Stratonovich midpoint-trapezoid scheme. The two agree in
    law as ``dt -> 0`` exactly when the Ito correction vanishes.
    """
    x = as_array(x)
    n = (x.size - 1) // 2
    s = math.sqrt(dt)
    steps = int(round(T / dt))
    idx = np.arange(n_walks)
    p = np.tile(x, (n_walks, 1))
    for k in range(steps):
        eta = standard_normals(seed, idx, k, 2 * n)
        d = horizontal_increment(p, eta, s)
        if scheme == "heun":
            d = 0.5 * (d + horizontal_increment(p + d, eta, s))
        elif scheme != "euler":
            raise ValueError(f"unknown scheme {scheme!r}")
        p = p + d
    return p


# ---------------------------------------------------------------------------
# harmonic measure


@dataclass
class MeasureEstimate:
    ball: Optional[SurfaceBall]
    mass: float
    stderr: float
    n_walks: int
    count: int = 0
    label: str = ""
    warnings: list = field(default_factory=list)


def _binomial(count, n):
    m = count / n
    return m, math.sqrt(max(m * (1.0 - m), 0.0) / n)


def harmonic_measure(domain: ImplicitDomain, x, balls: Sequence[SurfaceBall], n_walks: int = 10000,
                     cfg: WalkConfig = WalkConfig(), walks: Optional[WalkResult] = None,
                     threads: Optional[int] = None) -> list:
    """``omega^x(Delta)`` for each surface ball, binning exits by gauge distance to its center.

    Masses are fractions of the walks that exited; censored walks are
    excluded from the denominator and reported as a warning.
    """
    if n_walks < 10000 and walks is None:
        raise ValueError("harmonic_measure needs at least 1e4 walks")
    if len({id(b.quadrature) for b in balls}) > 1:
        raise ValueError("balls must come from a shared quadrature")
    walks = walks if walks is not None else sample_exit(domain, x, cfg, n_walks, threads)
    ex = walks.exits
    total = len(ex)
    out = []
    for b in balls:
        c = int(np.count_nonzero(np.asarray(hg.gauge_dist(b.center, ex)) < b.radius))
        m, se = _binomial(c, total)
        out.append(MeasureEstimate(b, m, se, total, c, warnings=walks.warnings()))
    return out


def band_measure(domain: ImplicitDomain, x, nbands: int = 8, n_walks: int = 10000,
                 cfg: WalkConfig = WalkConfig(), walks: Optional[WalkResult] = None,
                 threads: Optional[int] = None) -> list:
    """Harmonic measure of a partition of a gauge sphere into latitude bands."""
    walks = walks if walks is not None else sample_exit(domain, x, cfg, n_walks, threads)
    ex = walks.exits
    counts = np.bincount(band_index(domain, ex, nbands), minlength=nbands)
    total = int(counts.sum())
    out = []
    for k, c in enumerate(counts):
        m, se = _binomial(int(c), total)
        out.append(MeasureEstimate(None, m, se, total, int(c), label=f"band{k}", warnings=walks.warnings()))
    return out


@dataclass
class MartingaleRow:
    start: np.ndarray
    name: str
    mean: float
    stderr: float
    exact: float

    @property
    def z(self) -> float:
        return abs(self.mean - self.exact) / self.stderr if self.stderr > 0 else (0.0 if self.mean == self.exact else math.inf)


def martingale_check(domain: ImplicitDomain, starts, functions: dict, n_walks: int = 10000,
                     cfg: WalkConfig = WalkConfig(), threads: Optional[int] = None) -> list:
    """MC mean of ``f`` over exits against ``f(start)`` for harmonic ``f``."""
    rows = []
    for x in as_array(starts).reshape(-1, as_array(starts).shape[-1]):
        walks = sample_exit(domain, x, cfg, n_walks, threads)
        for name, f in functions.items():
            v = np.asarray(f(walks.exits), dtype=float)
            rows.append(MartingaleRow(x, name, float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size)),
                                      float(f(x[None])[0])))
    return rows


def dt_consistency(domain: ImplicitDomain, x, cfg: WalkConfig, n_walks: int, nbands: int = 8,
                   threads: Optional[int] = None):
    """Band masses at ``dt`` and ``dt/2``; returns ``(coarse, fine, z-scores)``."""
    a = band_measure(domain, x, nbands, n_walks, cfg, threads=threads)
    half = cfg.halved()
    fine_cfg = WalkConfig(half.dt, half.max_steps, cfg.seed + 1, cfg.snap_tol)
    b = band_measure(domain, x, nbands, n_walks, fine_cfg, threads=threads)
    z = np.array([abs(p.mass - q.mass) / max(math.hypot(p.stderr, q.stderr), 1e-300) for p, q in zip(a, b)])
    return a, b, z


def doubling_check(domain: ImplicitDomain, x, x0, radii, n_walks: int = 10000, cfg: WalkConfig = WalkConfig(),
                   separation: float = 2.0, walks: Optional[WalkResult] = None,
                   threads: Optional[int] = None) -> ScanReport:
    """Ratios ``omega^x(Delta(x0, 2r)) / omega^x(Delta(x0, r))`` with delta-method errors.

    The two counts are nested, so the error uses multinomial covariances.
    Radii whose inner ball catches no walk are skipped and flagged.
    """
    x, x0 = as_array(x), as_array(x0)
    radii = np.asarray(radii, dtype=float)
    if float(hg.gauge_dist(x0, x)) < separation * radii.max():
        raise ValueError("pole too close to the boundary point for these radii")
    walks = walks if walks is not None else sample_exit(domain, x, cfg, n_walks, threads)
    d = np.asarray(hg.gauge_dist(x0, walks.exits))
    n = d.size
    ratios, errors, flags = [], [], []
    for r in radii:
        a = int(np.count_nonzero(d < r))
        b = int(np.count_nonzero(d < 2 * r))
        if a == 0:
            ratios.append(math.inf)
            errors.append(math.nan)
            flags.append(f"r={r!r}: no walks in the inner ball")
            continue
        pa, pc = a / n, (b - a) / n
        q = pc / pa
        # R = 1 + c/a with cov(a, c) = -n pa pc
        var = q * q * ((1 - pc) / (n * pc) + (1 - pa) / (n * pa) + 2.0 / n) if pc > 0 else 0.0
        ratios.append(b / a)
        errors.append(math.sqrt(var))
        flags.append("")
    rep = ScanReport("omega_doubling", radii, ratios, extra={"errors": errors, "flags": flags, "n_walks": n,
                                                             "warnings": walks.warnings()})
    return rep


def harmonic_functions() -> dict:
    """The two explicit harmonic functions used by the martingale checks."""
    return {"t+1/4": lambda q: q[..., -1] + 0.25, "x1+1": lambda q: q[..., 0] + 1.0}
