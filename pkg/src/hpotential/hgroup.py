"""Heisenberg group H^n in exponential coordinates (x, y, t).

Points are handled as numpy arrays whose last axis has length 2n+1, laid
out as ``(x_1..x_n, y_1..y_n, t)``. :class:`GPoint` is a thin wrapper for
single points; every function accepts either form and returns a GPoint
when handed one.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.special import gamma as _gamma


class DimensionError(ValueError):
    pass


class PoleError(ValueError):
    pass


class QuadratureError(RuntimeError):
    def __init__(self, message, residual):
        super().__init__(f"{message} (achieved residual {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True)
class GPoint:
    """A point of H^n; ``x`` and ``y`` have length n."""

    x: tuple
    y: tuple
    t: float

    def __post_init__(self):
        x = tuple(float(v) for v in np.atleast_1d(self.x))
        y = tuple(float(v) for v in np.atleast_1d(self.y))
        if len(x) != len(y) or not x:
            raise DimensionError("x and y must have the same positive length")
        if not all(math.isfinite(v) for v in x + y + (float(self.t),)):
            raise ValueError("coordinates must be finite")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "t", float(self.t))

    @property
    def n(self) -> int:
        return len(self.x)

    @classmethod
    def from_array(cls, a) -> "GPoint":
        a = np.asarray(a, dtype=float)
        n = _dim(a)
        return cls(a[:n], a[n:2 * n], a[2 * n])

    @classmethod
    def identity(cls, n: int = 1) -> "GPoint":
        return cls((0.0,) * n, (0.0,) * n, 0.0)

    def to_array(self) -> np.ndarray:
        return np.array(self.x + self.y + (self.t,))

    def __array__(self, dtype=None, copy=None):
        a = self.to_array()
        return a if dtype is None else a.astype(dtype)


@dataclass(frozen=True)
class HorizontalVector:
    """Coefficients against the frame X_1..X_2n."""

    components: tuple

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(float(v) for v in np.ravel(self.components)))

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.components))

    def __len__(self):
        return len(self.components)

    def __array__(self, dtype=None, copy=None):
        a = np.array(self.components)
        return a if dtype is None else a.astype(dtype)


def _hwrap(template, v):
    return HorizontalVector(v) if isinstance(template, GPoint) else v


def _dim(a: np.ndarray) -> int:
    d = a.shape[-1]
    if d < 3 or d % 2 == 0:
        raise DimensionError(f"last axis must have length 2n+1, got {d}")
    return (d - 1) // 2


def as_array(p) -> np.ndarray:
    return p.to_array() if isinstance(p, GPoint) else np.asarray(p, dtype=float)


def _wrap(template, a):
    return GPoint.from_array(a) if isinstance(template, GPoint) else a


def split(a: np.ndarray):
    """Views ``(x, y, t)`` of an array of points."""
    n = _dim(a)
    return a[..., :n], a[..., n:2 * n], a[..., 2 * n]


def group_mul(p, q):
    """Group law ``(z,t)(z',t') = (z+z', t+t' - Im(z . conj z')/2)``."""
    a, b = as_array(p), as_array(q)
    if a.shape[-1] != b.shape[-1]:
        raise DimensionError("points belong to different H^n")
    xa, ya, ta = split(a)
    xb, yb, tb = split(b)
    # Im(z conj z') = y.x' - x.y'
    im = np.sum(ya * xb - xa * yb, axis=-1)
    x, y = np.broadcast_arrays(xa + xb, ya + yb)
    out = np.concatenate([x, y, (ta + tb - 0.5 * im)[..., None]], axis=-1)
    return _wrap(p, out)


def group_inv(p):
    return _wrap(p, -as_array(p))


def dilate(lam: float, p):
    if not lam > 0:
        raise ValueError("dilation factor must be positive")
    a = as_array(p).copy()
    n = _dim(a)
    a[..., :2 * n] *= lam
    a[..., 2 * n] *= lam * lam
    return _wrap(p, a)


def left_translation_jacobian(a) -> np.ndarray:
    """Jacobian of ``q -> a q`` (a constant shear matrix)."""
    a = as_array(a)
    n = _dim(a)
    xa, ya, _ = split(a)
    J = np.eye(2 * n + 1)
    J[2 * n, :n] = -0.5 * ya
    J[2 * n, n:2 * n] = 0.5 * xa
    return J


def zsq(a: np.ndarray) -> np.ndarray:
    x, y, _ = split(a)
    return np.sum(x * x + y * y, axis=-1)


def gauge(p):
    """Korányi gauge ``N = (|z|^4 + 16 t^2)^(1/4)``."""
    a = as_array(p)
    r2 = zsq(a)
    t = a[..., -1]
    out = np.sqrt(np.sqrt(r2 * r2 + 16.0 * t * t))
    return float(out) if np.ndim(out) == 0 else out


def gauge_dist(p, q):
    return gauge(group_mul(group_inv(as_array(p)), as_array(q)))


# ---------------------------------------------------------------------------
# scalar fields and the horizontal frame


@dataclass
class ScalarField:
    """A callable on point arrays with optional analytic partials.

    ``grad`` returns shape ``(..., d)`` and ``hess`` shape ``(..., d, d)``.
    Missing partials fall back to centered differences with one Richardson
    step; second differences use the larger step ``h2_fd`` to keep roundoff
    below the truncation error.
    """

    value: Callable[[np.ndarray], np.ndarray]
    grad: Optional[Callable[[np.ndarray], np.ndarray]] = None
    hess: Optional[Callable[[np.ndarray], np.ndarray]] = None
    h_fd: float = 1e-5
    h2_fd: float = 1e-3

    def __call__(self, p):
        return self.value(as_array(p))

    def gradient(self, p) -> np.ndarray:
        a = as_array(p)
        if self.grad is not None:
            return np.asarray(self.grad(a), dtype=float)
        return fd_gradient(self.value, a, self.h_fd)

    def hessian(self, p) -> np.ndarray:
        a = as_array(p)
        if self.hess is not None:
            return np.asarray(self.hess(a), dtype=float)
        return fd_hessian(self.value, a, self.h2_fd)


def fd_gradient(f, a, h):
    d = a.shape[-1]
    eye = np.eye(d)

    def central(s):
        return np.stack(
            [(f(a + s * eye[i]) - f(a - s * eye[i])) / (2 * s) for i in range(d)], axis=-1
        )

    return (4.0 * central(h / 2) - central(h)) / 3.0


def fd_hessian(f, a, h, richardson=True):
    d = a.shape[-1]
    eye = np.eye(d)

    def second(s):
        f0 = f(a)
        H = np.empty(a.shape[:-1] + (d, d))
        for i in range(d):
            ei = s * eye[i]
            H[..., i, i] = (f(a + ei) - 2.0 * f0 + f(a - ei)) / (s * s)
            for j in range(i + 1, d):
                ej = s * eye[j]
                v = (f(a + ei + ej) - f(a + ei - ej) - f(a - ei + ej) + f(a - ei - ej)) / (4 * s * s)
                H[..., i, j] = H[..., j, i] = v
        return H

    if not richardson:
        return second(h)
    return (4.0 * second(h / 2) - second(h)) / 3.0


def horizontal_frame(p) -> np.ndarray:
    """Coordinate vectors of X_1..X_2n at ``p``; shape ``(..., 2n, 2n+1)``.

    ``X_j = d/dx_j - (y_j/2) d/dt``, ``X_{n+j} = d/dy_j + (x_j/2) d/dt``.
    """
    a = as_array(p)
    n = _dim(a)
    x, y, _ = split(a)
    F = np.zeros(a.shape[:-1] + (2 * n, 2 * n + 1))
    for j in range(n):
        F[..., j, j] = 1.0
        F[..., j, 2 * n] = -0.5 * y[..., j]
        F[..., n + j, n + j] = 1.0
        F[..., n + j, 2 * n] = 0.5 * x[..., j]
    return F


def frame_components(p, v) -> np.ndarray:
    """Pair a Euclidean covector ``v`` (e.g. a gradient) with each X_j at p."""
    return np.einsum("...jk,...k->...j", horizontal_frame(p), np.asarray(v, dtype=float))


def x_gradient(f: ScalarField, p) -> np.ndarray:
    """Horizontal gradient ``(X_1 f, ..., X_2n f)`` at ``p``."""
    return _hwrap(p, frame_components(as_array(p), f.gradient(p)))


def kohn_from_hessian(a: np.ndarray, H: np.ndarray) -> np.ndarray:
    """``Delta_z f + |z|^2/4 f_tt + sum_j (x_j f_{y_j t} - y_j f_{x_j t})``."""
    n = _dim(a)
    x, y, _ = split(a)
    lap = np.zeros(a.shape[:-1])
    for i in range(2 * n):
        lap = lap + H[..., i, i]
    mixed = np.zeros(a.shape[:-1])
    for j in range(n):
        mixed = mixed + x[..., j] * H[..., n + j, 2 * n] - y[..., j] * H[..., j, 2 * n]
    return lap + 0.25 * zsq(a) * H[..., 2 * n, 2 * n] + mixed


def kohn_laplacian(f: ScalarField, p):
    a = as_array(p)
    out = kohn_from_hessian(a, f.hessian(a))
    return float(out) if np.ndim(out) == 0 else out


def sum_of_squares(f: ScalarField, p):
    """``sum_j X_j^2 f`` assembled term by term from the frame.

    ``X_j^2 f = <F_j, H F_j> + <F_j, D(F_j)> f'``; the frame coefficients of
    X_j never depend on the coordinate X_j differentiates, so the second
    term drops and only the Hessian quadratic form remains.
    """
    a = as_array(p)
    F = horizontal_frame(a)
    H = f.hessian(a)
    return np.einsum("...jk,...kl,...jl->...", F, H, F)


# ---------------------------------------------------------------------------
# gauge and fundamental solution with analytic partials


def _gauge_parts(a):
    n = _dim(a)
    d = 2 * n + 1
    r2 = zsq(a)
    t = a[..., -1]
    N4 = r2 * r2 + 16.0 * t * t
    N = np.sqrt(np.sqrt(N4))
    # N^3 dN = g
    g = np.empty(a.shape)
    g[..., :2 * n] = r2[..., None] * a[..., :2 * n]
    g[..., 2 * n] = 8.0 * t
    dg = np.zeros(a.shape[:-1] + (d, d))
    w = a[..., :2 * n]
    dg[..., :2 * n, :2 * n] = 2.0 * w[..., :, None] * w[..., None, :] + r2[..., None, None] * np.eye(2 * n)
    dg[..., 2 * n, 2 * n] = 8.0
    return N, g, dg


def gauge_grad(a):
    N, g, _ = _gauge_parts(as_array(a))
    return g / (N ** 3)[..., None]


def gauge_hess(a):
    N, g, dg = _gauge_parts(as_array(a))
    N3 = (N ** 3)[..., None, None]
    N7 = (N ** 7)[..., None, None]
    return dg / N3 - 3.0 * g[..., :, None] * g[..., None, :] / N7


def gauge_xgrad(a):
    """Closed form ``XN``: ``(|z|^2 x_j - 4 y_j t, |z|^2 y_j + 4 x_j t) / N^3``."""
    a = as_array(a)
    n = _dim(a)
    x, y, t = split(a)
    r2 = zsq(a)[..., None]
    N3 = (gauge(a) ** 3)
    N3 = np.asarray(N3)[..., None]
    return np.concatenate([r2 * x - 4 * t[..., None] * y, r2 * y + 4 * t[..., None] * x], axis=-1) / N3


def gauge_field() -> ScalarField:
    return ScalarField(lambda a: gauge(a), gauge_grad, gauge_hess)


def radial_field(f, df, d2f) -> ScalarField:
    """``f o N`` with partials from the chain rule."""

    def grad(a):
        return np.asarray(df(np.asarray(gauge(a))))[..., None] * gauge_grad(a)

    def hess(a):
        N = np.asarray(gauge(a))
        gN = gauge_grad(a)
        return (np.asarray(d2f(N))[..., None, None] * gN[..., :, None] * gN[..., None, :]
                + np.asarray(df(N))[..., None, None] * gauge_hess(a))

    return ScalarField(lambda a: f(gauge(a)), grad, hess)


@functools.lru_cache(maxsize=None)
def _cq(n: int, resolution: int) -> float:
    return normalize_cq(HModel(n, c_Q=1.0), resolution)


@dataclass(frozen=True)
class HModel:
    """H^n with its homogeneous dimension and fundamental-solution constant.

    ``c_Q`` is computed from the mean-value normalization unless supplied.
    """

    n: int = 1
    c_Q: Optional[float] = None

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError("n must be a positive integer")
        if self.c_Q is None:
            object.__setattr__(self, "c_Q", _cq(int(self.n), 64))
        if not self.c_Q > 0:
            raise ValueError("c_Q must be positive")

    @property
    def Q(self) -> int:
        return 2 * self.n + 2

    @property
    def dim(self) -> int:
        return 2 * self.n + 1


def _check_model(model: HModel, a: np.ndarray):
    if a.shape[-1] != model.dim:
        raise DimensionError(f"point has dimension {a.shape[-1]}, model expects {model.dim}")


def fundamental_solution(model: HModel, p):
    """``Gamma = c_Q N^(2-Q)`` with pole at the identity."""
    a = as_array(p)
    _check_model(model, a)
    N = np.asarray(gauge(a))
    if np.any(N == 0):
        raise PoleError("fundamental solution evaluated at its pole")
    out = model.c_Q * N ** (2 - model.Q)
    return float(out) if np.ndim(out) == 0 else out


def fundamental_solution_xgrad(model: HModel, p) -> np.ndarray:
    """``X Gamma = c_Q (2-Q) N^(1-Q) XN``."""
    a = as_array(p)
    _check_model(model, a)
    N = np.asarray(gauge(a))
    if np.any(N == 0):
        raise PoleError("fundamental solution evaluated at its pole")
    return _hwrap(p, (model.c_Q * (2 - model.Q) * N ** (1 - model.Q))[..., None] * gauge_xgrad(a))


def fundamental_solution_field(model: HModel, pole=None) -> ScalarField:
    """``q -> Gamma(pole^-1 q)`` with closed-form partials."""
    c, Q = model.c_Q, model.Q
    base = radial_field(
        lambda s: c * s ** (2 - Q),
        lambda s: c * (2 - Q) * s ** (1 - Q),
        lambda s: c * (2 - Q) * (1 - Q) * s ** (-Q),
    )
    return base if pole is None else translated(base, pole)


def translated(f: ScalarField, a) -> ScalarField:
    """``q -> f(a^-1 q)`` with partials pulled back through the constant shear."""
    ainv = group_inv(as_array(a))
    J = left_translation_jacobian(ainv)

    def value(q):
        return f.value(group_mul(ainv, q))

    def grad(q):
        return f.gradient(group_mul(ainv, q)) @ J

    def hess(q):
        return J.T @ f.hessian(group_mul(ainv, q)) @ J

    return ScalarField(value, grad, hess)


def _sphere_area(n: int) -> float:
    # area of the unit sphere S^{2n-1} in R^{2n}
    return 2.0 * math.pi ** n / _gamma(n)


def gauge_sphere_profile(n: int, R: float, m: int):
    """Gauss-Legendre nodes in the latitude ``theta`` on the gauge sphere.

    The sphere ``N = R`` is the surface of revolution ``|z| = R sqrt(cos th)``,
    ``t = R^2 sin(th) / 4``. Returns ``(r, t, w)`` where ``w`` already holds
    the rotational factor ``|S^{2n-1}| r^{2n-1}``.
    """
    u, wg = np.polynomial.legendre.leggauss(m)
    th = 0.5 * math.pi * u
    wth = 0.5 * math.pi * wg
    c, s = np.cos(th), np.sin(th)
    r = R * np.sqrt(c)
    t = 0.25 * R * R * s
    # |d(r, t)/d th| times r: finite at the poles
    arc_r = np.sqrt(0.25 * R ** 4 * s * s + R ** 6 * c ** 3 / 16.0)
    w = _sphere_area(n) * r ** (2 * n - 2) * arc_r * wth
    return r, t, w


def _mean_value_mass(model: HModel, R: float, m: int) -> float:
    r, t, w = gauge_sphere_profile(model.n, R, m)
    N = R
    Q = model.Q
    psi = r * r / (N * N)
    gradN = np.sqrt(r ** 6 + 64.0 * t * t) / N ** 3
    dens = model.c_Q * (Q - 2) * N ** (1 - Q) * psi / gradN
    return float(np.sum(dens * w))


def normalize_cq(model: HModel, resolution: int = 64, tol: float = 1e-12) -> float:
    """The constant making ``int |X Gamma|^2 / |D Gamma| dH = 1`` on gauge spheres."""
    unit = HModel(model.n, c_Q=1.0)
    coarse = _mean_value_mass(unit, 1.0, resolution)
    fine = _mean_value_mass(unit, 1.0, 2 * resolution)
    if abs(fine - coarse) > tol * abs(fine):
        raise QuadratureError("mean-value quadrature not converged", abs(fine - coarse) / abs(fine))
    return 1.0 / fine


def mean_value_mass(model: HModel, R: float = 1.0, resolution: int = 64) -> float:
    return _mean_value_mass(model, R, resolution)


def unit_ball_volume(n: int = 1) -> float:
    """Lebesgue volume of the gauge ball ``B(e, 1)``."""
    from scipy.integrate import quad

    val, _ = quad(lambda r: r ** (2 * n - 1) * 0.5 * math.sqrt(max(1.0 - r ** 4, 0.0)), 0.0, 1.0, epsabs=1e-14)
    return _sphere_area(n) * val
