"""Subelliptic Poisson kernels, total mass, reverse Hoelder ratios and representation.

With ``XG`` the horizontal gradient of the Green function in its second
variable, ``P(x, y) = -<XG(x, y), N^X(y)>`` and ``K(x, y) = -<XG(x, y), nu^X(y)>``,
so ``P = K W``. Both are set to zero at characteristic nodes.
"""

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import hgroup as hg
from .geometry import ImplicitDomain, horizontal_normal_arrays
from .hgroup import HModel, as_array
from .measures import SurfaceBall, SurfaceQuadrature, metric_ball_volume
from .pde import GridField

CHAR_TOL = 1e-10


class KernelError(ValueError):
    pass


@dataclass(frozen=True)
class KernelSample:
    pole: np.ndarray
    node: np.ndarray
    P: float
    K: float
    W: float
    characteristic: bool = False


@dataclass
class KernelSet:
    """Kernels at every node of one quadrature, stored as arrays."""

    pole: np.ndarray
    nodes: np.ndarray
    P: np.ndarray
    K: np.ndarray
    W: np.ndarray
    XG: np.ndarray
    characteristic: np.ndarray
    mode: str
    quadrature: Optional[SurfaceQuadrature] = None
    info: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.K)

    def __getitem__(self, i) -> KernelSample:
        return KernelSample(self.pole, self.nodes[i], float(self.P[i]), float(self.K[i]), float(self.W[i]),
                            bool(self.characteristic[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def min_K(self) -> float:
        ok = ~self.characteristic
        return float(self.K[ok].min()) if ok.any() else float("nan")

    @property
    def max_cauchy_schwarz_excess(self) -> float:
        """``max(|K| - |XG|)``; nonpositive up to roundoff."""
        return float(np.max(np.abs(self.K) - np.linalg.norm(self.XG, axis=-1)))

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x", "y", "t", "W", "P", "K"])
            for p, W, P, K in zip(self.nodes, self.W, self.P, self.K):
                w.writerow([repr(float(p[0])), repr(float(p[1])), repr(float(p[2])), repr(float(W)), repr(float(P)),
                            repr(float(K))])


def _is_centered_gauge_ball(domain, pole):
    if not domain.name.startswith("gauge_ball"):
        return False
    c = as_array(domain.params.get("center", np.zeros(as_array(pole).size)))
    return np.allclose(c, pole, atol=1e-14, rtol=0)


def closed_form_xg(model: HModel, pole, y) -> np.ndarray:
    """``X_y G(pole, y) = X Gamma(pole^-1 y)`` for a gauge ball centered at the pole."""
    return np.asarray(hg.fundamental_solution_xgrad(model, hg.group_mul(hg.group_inv(as_array(pole)), as_array(y))))


def _offset_gradient(field: GridField, domain: ImplicitDomain, y, offsets):
    comp = field.x_gradient_nodes()
    nu = domain.normal(y)
    h = 1.0 / np.linalg.norm(nu / field.grid.h, axis=-1)
    vals = []
    for k in offsets:
        p = y - (k * h)[:, None] * nu
        vals.append(np.stack([GridField(field.grid, comp[:, j]).interpolate(p) for j in range(comp.shape[1])], -1))
    a, b = offsets
    # linear Richardson through the two offsets
    return (b * vals[0] - a * vals[1]) / (b - a)


def grid_xg(green: GridField, domain: ImplicitDomain, y, model: Optional[HModel] = None,
            offsets=(2.0, 4.0)) -> np.ndarray:
    """``XG`` at boundary nodes from a lattice Green function.

    ``G = Gamma - h`` with ``X Gamma`` in closed form; only the regular part
    ``h`` is differenced. Its nodal centered differences are interpolated
    at ``y - eps nu`` for ``eps = 2h, 4h`` and extrapolated linearly to
    ``eps = 0``. On an anisotropic lattice ``h`` is the cell size along
    ``nu``, so the offset points sit two and four cells inside.
    """
    y = as_array(y)
    model = model or HModel(domain.n)
    pole = as_array(green.info["pole"])
    P = green.grid.points()
    d = np.asarray(hg.gauge_dist(pole, P))
    ok = np.isfinite(green.values) & (d > 0)
    reg = np.full(green.values.shape, np.nan)
    reg[ok] = model.c_Q * d[ok] ** (2 - model.Q) - green.values[ok]
    Xh = _offset_gradient(GridField(green.grid, reg), domain, y, offsets)
    return closed_form_xg(model, pole, y) - Xh


def poisson_kernels(domain: ImplicitDomain, pole, quadrature: SurfaceQuadrature, mode: str = "closed_form",
                    green: Optional[GridField] = None, model: Optional[HModel] = None,
                    char_tol: float = CHAR_TOL) -> KernelSet:
    """``P`` and ``K`` at every quadrature node, with ``P = K = 0`` on characteristic nodes."""
    model = model or HModel(domain.n)
    pole = as_array(pole)
    if not np.asarray(domain.rho(pole)) < 0:
        raise KernelError("pole must be interior")
    y = quadrature.points
    if mode == "closed_form":
        if not _is_centered_gauge_ball(domain, pole):
            raise KernelError("closed_form mode needs a gauge ball centered at the pole")
        XG = closed_form_xg(model, pole, y)
    elif mode == "grid":
        if green is None:
            raise KernelError("grid mode needs a Green field")
        if "pole" not in green.info or not np.allclose(as_array(green.info["pole"]), pole):
            raise KernelError("Green field has a different pole")
        XG = grid_xg(green, domain, y, model)
        if not np.all(np.isfinite(XG)):
            raise KernelError("XG offsets left the lattice; use a finer grid")
    else:
        raise KernelError(f"unknown mode {mode!r}")
    NX, W = horizontal_normal_arrays(domain, y)
    char = W <= char_tol
    P = -np.sum(XG * NX, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        K = np.where(char, 0.0, P / np.where(char, 1.0, W))
    P = np.where(char, 0.0, P)
    return KernelSet(pole, y, P, K, W, XG, char, mode, quadrature, {"n_characteristic": int(char.sum())})


def total_mass(samples: KernelSet, quadrature: Optional[SurfaceQuadrature] = None):
    """``(int P dsigma, int K dsigma_X)`` by the quadrature sums."""
    q = quadrature or samples.quadrature
    if len(q) != len(samples):
        raise KernelError("samples do not cover the quadrature")
    return float(np.sum(samples.P * q.weights)), float(np.sum(samples.K * q.W * q.weights))


@dataclass(frozen=True)
class ReverseHolder:
    lhs: float
    rhs: float
    ratio: float

    def __iter__(self):
        return iter((self.lhs, self.rhs, self.ratio))


def power_means(values, weights, p: float) -> ReverseHolder:
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if not p > 1:
        raise ValueError("p must exceed 1")
    tot = weights.sum()
    if not tot > 0:
        raise KernelError("empty surface ball")
    rhs = float(np.sum(weights * values) / tot)
    if not rhs > 0:
        raise KernelError("kernel mean vanishes on the ball")
    m = values.max()
    # scale by the max to keep K^p finite
    lhs = float(m * (np.sum(weights * (values / m) ** p) / tot) ** (1.0 / p))
    return ReverseHolder(lhs, rhs, lhs / rhs)


def reverse_holder(samples: KernelSet, quadrature: SurfaceQuadrature, ball: SurfaceBall, p: float,
                   kernel: str = "K") -> ReverseHolder:
    """p-mean over the mean of ``K`` against ``sigma_X`` (or ``P`` against ``sigma``) on ``Delta``.

    Characteristic nodes are excluded from both means.
    """
    if ball.quadrature is not quadrature or len(samples) != len(quadrature):
        raise KernelError("samples and ball must come from the same quadrature")
    idx = ball.node_indices
    idx = idx[~samples.characteristic[idx]]
    if idx.size == 0:
        raise KernelError("empty surface ball")
    w = quadrature.weights[idx]
    if kernel == "K":
        return power_means(samples.K[idx], w * quadrature.W[idx], p)
    if kernel == "P":
        return power_means(samples.P[idx], w, p)
    raise ValueError("kernel is 'K' or 'P'")


def represent_solution(f: Callable, samples: KernelSet, quadrature: Optional[SurfaceQuadrature] = None) -> float:
    """``int f K dsigma_X``, the harmonic extension of ``f`` evaluated at the pole."""
    q = quadrature or samples.quadrature
    vals = np.asarray(f(q.points), dtype=float)
    return float(np.sum(vals * samples.K * q.W * q.weights))


def kernel_upper_constant(samples: KernelSet, model: Optional[HModel] = None) -> float:
    """Smallest ``C`` with ``K(x, y) <= C d(x, y) / |B(x, d(x, y))|`` on the nodes."""
    model = model or HModel(samples.nodes.shape[-1] // 2)
    d = np.asarray(hg.gauge_dist(samples.pole, samples.nodes))
    return float(np.max(samples.K * metric_ball_volume(model, d) / d))


def band_kernel_mass(samples: KernelSet, quadrature: SurfaceQuadrature, bands: np.ndarray, nbands: int) -> np.ndarray:
    """``int_band K dsigma_X`` for each latitude band index."""
    mass = samples.K * quadrature.W * quadrature.weights
    return np.bincount(bands, weights=mass, minlength=nbands)


def ball_kernel_mass(samples: KernelSet, quadrature: SurfaceQuadrature, ball: SurfaceBall) -> float:
    idx = ball.node_indices
    return float(np.sum((samples.K * quadrature.W * quadrature.weights)[idx]))
