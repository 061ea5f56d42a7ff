"""Jerison's characteristic-point example: the hypergeometric profile and the cone.

For ``tau = 4t/N^2`` the function ``v = N^alpha u(tau)`` is L-harmonic off the
t-axis exactly when ``u`` solves the Jacobi-type equation
``(1 - tau^2) u'' - (n+1) tau u' + alpha(alpha+2n)/4 u = 0``. The solution
regular at ``tau = 1`` is ``g(tau) = 2F1(-alpha/2, n+alpha/2; (n+1)/2; (1-tau)/2)``.
Its first zero ``tau_alpha`` in ``(-1, 0)`` cuts out the region
``Omega_M = {t > M |z|^2}`` on whose boundary ``v`` vanishes.

Near ``tau = -1`` the argument ``(1-tau)/2`` is within ``1e-9`` of 1 for small
alpha, where the Gauss series is useless, so ``g`` is evaluated through the
``1 - z`` connection formulas and is parametrized by ``s = 1 + tau`` to keep
full relative precision there.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import digamma, rgamma

from . import hgroup as hg
from .hgroup import as_array
from .measures import power_fit

EULER_GAMMA = 0.57721566490153286061


class HypergeometricError(ArithmeticError):
    def __init__(self, message, partial, bound):
        super().__init__(f"{message} (partial sum {partial!r}, tail bound {bound!r})")
        self.partial = partial
        self.bound = bound


class RootError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Gauss hypergeometric function


def gauss_series(a, b, c, z, max_terms: int = 10 ** 6, rtol: float = 1e-16) -> float:
    """``sum (a)_k (b)_k / (c)_k z^k / k!`` truncated once a term drops below ``rtol`` of the sum."""
    if c <= 0 and float(c).is_integer():
        raise ValueError("c must not be a nonpositive integer")
    s, term = 1.0, 1.0
    quiet = 0
    for k in range(max_terms):
        term *= (a + k) * (b + k) / ((c + k) * (k + 1)) * z
        s += term
        if term == 0.0:
            return s
        if abs(term) < rtol * abs(s):
            quiet += 1
            # two quiet terms in a row guard against an accidental small term
            if quiet >= 2:
                return s
        else:
            quiet = 0
    ratio = abs(z)
    bound = abs(term) * ratio / (1.0 - ratio) if ratio < 1 else math.inf
    raise HypergeometricError("Gauss series did not converge", s, bound)


def _series_in(terms, w, max_terms=2000, rtol=1e-17):
    """Sum ``terms(k) w^k``-style generator output until negligible."""
    s = 0.0
    quiet = 0
    for k in range(max_terms):
        t = terms(k)
        s += t
        if abs(t) <= rtol * max(abs(s), 1e-300):
            quiet += 1
            if quiet >= 2:
                return s
        else:
            quiet = 0
    raise HypergeometricError("connection series did not converge", s, abs(t))


def _near_one_noninteger(a, b, c, w):
    """A&S 15.3.6 with ``w = 1 - z`` and ``c - a - b`` not an integer."""
    d = c - a - b
    g = math.gamma
    # reciprocal gammas vanish at poles, which removes the matching term
    A = g(c) * g(d) * rgamma(c - a) * rgamma(c - b)
    B = g(c) * g(-d) * rgamma(a) * rgamma(b)
    return A * gauss_series(a, b, 1 - d, w) + B * w ** d * gauss_series(c - a, c - b, 1 + d, w)


def _near_one_log(a, b, m, w):
    """A&S 15.3.10 (``m = 0``) and 15.3.12 (``c = a + b - m``, ``m >= 1``), ``w = 1 - z``."""
    g = math.gamma
    lw = math.log(w)
    head = 0.0
    if m >= 1:
        # finite part in negative powers of w
        t, acc = 1.0, 1.0
        for k in range(1, m):
            t *= (a - m + k - 1) * (b - m + k - 1) / (k * (1 - m + k - 1)) * w
            acc += t
        head = g(m) * g(a + b - m) * rgamma(a) * rgamma(b) * w ** (-m) * acc
        pref = -((-1) ** m) * g(a + b - m) * rgamma(a - m) * rgamma(b - m)
    else:
        pref = g(a + b) * rgamma(a) * rgamma(b)
    psi_a, psi_b = float(digamma(a)), float(digamma(b))
    state = {"coef": 1.0 / math.factorial(m), "p1": -EULER_GAMMA, "pm": float(digamma(m + 1)),
             "pa": psi_a, "pb": psi_b, "wk": 1.0}

    def term(k):
        if k > 0:
            st = state
            st["coef"] *= (a + k - 1) * (b + k - 1) / (k * (k + m))
            st["p1"] += 1.0 / k
            st["pm"] += 1.0 / (k + m)
            st["pa"] += 1.0 / (a + k - 1)
            st["pb"] += 1.0 / (b + k - 1)
            st["wk"] *= w
        st = state
        if m >= 1:
            bracket = lw - st["p1"] - st["pm"] + st["pa"] + st["pb"]
        else:
            bracket = 2.0 * st["p1"] - st["pa"] - st["pb"] - lw
        return st["coef"] * bracket * st["wk"]

    return head + pref * _series_in(term, w)


def hyp2f1_w(a, b, c, w) -> float:
    """``2F1(a, b; c; 1 - w)`` for ``0 < w <= 1``, accurate for tiny ``w``."""
    if not 0 < w <= 1:
        raise ValueError("w must lie in (0, 1]")
    if w >= 0.5:
        return gauss_series(a, b, c, 1.0 - w)
    d = c - a - b
    if abs(d - round(d)) > 1e-12:
        return _near_one_noninteger(a, b, c, w)
    m = int(round(d))
    if m <= 0:
        return _near_one_log(a, b, -m, w)
    # Euler transformation maps c - a - b = m > 0 to -m
    return w ** m * _near_one_log(c - a, c - b, m, w)


def hyp2f1(a, b, c, z) -> float:
    """Gauss hypergeometric function on ``[0, 1)`` (series, or connection formulas for ``z > 1/2``)."""
    z = float(z)
    if not -1 < z < 1:
        raise ValueError("|z| < 1 required")
    if z <= 0.5:
        return gauss_series(a, b, c, z)
    return hyp2f1_w(a, b, c, 1.0 - z)


# ---------------------------------------------------------------------------
# the profile g and its root


@dataclass(frozen=True)
class Profile:
    """``g(tau) = 2F1(-alpha/2, n + alpha/2; (n+1)/2; (1 - tau)/2)`` with closed-form derivatives."""

    n: int
    alpha: float

    @property
    def abc(self):
        return -0.5 * self.alpha, self.n + 0.5 * self.alpha, 0.5 * (self.n + 1)

    def _eval(self, s, order):
        # s = 1 + tau, so 1 - z = s / 2
        a, b, c = self.abc
        coef = 1.0
        for k in range(order):
            coef *= (a + k) * (b + k) / (c + k) * -0.5
        return coef * hyp2f1_w(a + order, b + order, c + order, 0.5 * s)

    def at_s(self, s, order: int = 0):
        s = np.asarray(s, dtype=float)
        if np.any(s <= 0) or np.any(s > 2):
            raise ValueError("tau must lie in (-1, 1]")
        out = np.vectorize(lambda v: self._eval(float(v), order), otypes=[float])(s)
        return float(out) if out.ndim == 0 else out

    def __call__(self, tau):
        return self.at_s(1.0 + np.asarray(tau, dtype=float))

    def derivative(self, tau, order: int = 1):
        return self.at_s(1.0 + np.asarray(tau, dtype=float), order)


def jacobi_operator(n, alpha, u, du, d2u, tau):
    tau = np.asarray(tau, dtype=float)
    return (1 - tau ** 2) * d2u + -(n + 1) * tau * du + 0.25 * alpha * (alpha + 2 * n) * u


def jacobi_residual(n: int, alpha: float, u: Callable, tau, h: float = 1e-5, stencil: int = 3):
    """Jacobi-type residual at ``tau``.

    Profiles carry closed-form derivatives, which are used directly. Other
    callables are differenced with step ``h``: the 3-point stencil loses
    about ``eps / h^2`` to roundoff, so ``stencil=5`` with ``h ~ 1e-3`` is
    the accurate difference route.
    """
    tau = np.asarray(tau, dtype=float)
    if isinstance(u, Profile):
        v, d1, d2 = u(tau), u.derivative(tau, 1), u.derivative(tau, 2)
    else:
        v = np.asarray(u(tau), dtype=float)
        up, um = np.asarray(u(tau + h), dtype=float), np.asarray(u(tau - h), dtype=float)
        if stencil == 3:
            d1 = (up - um) / (2 * h)
            d2 = (up - 2 * v + um) / (h * h)
        elif stencil == 5:
            upp, umm = np.asarray(u(tau + 2 * h), dtype=float), np.asarray(u(tau - 2 * h), dtype=float)
            d1 = (8 * (up - um) - (upp - umm)) / (12 * h)
            d2 = (16 * (up + um) - (upp + umm) - 30 * v) / (12 * h * h)
        else:
            raise ValueError("stencil is 3 or 5")
    r = jacobi_operator(n, alpha, v, d1, d2, tau)
    return float(r) if np.ndim(r) == 0 else r


@dataclass
class JerisonSolution:
    n: int
    alpha: float
    s_alpha: float
    g: Profile
    info: dict = field(default_factory=dict)

    @property
    def tau_alpha(self) -> float:
        return self.s_alpha - 1.0

    @property
    def M(self) -> float:
        # 1 - tau^2 = s (2 - s) avoids cancellation near tau = -1
        s = self.s_alpha
        return self.tau_alpha / (4.0 * math.sqrt(s * (2.0 - s)))

    @property
    def g_at_root(self) -> float:
        return self.g.at_s(self.s_alpha)

    def consistency(self) -> float:
        """``|4M / sqrt(1 + 16 M^2) - tau_alpha|``."""
        M = self.M
        return abs(4 * M / math.sqrt(1 + 16 * M * M) - self.tau_alpha)


def tau_root(n: int, alpha: float, tol: float = 1e-12, s_min: float = 1e-15) -> JerisonSolution:
    """First zero of ``g`` in ``(-1, 0)``, searched in ``s = 1 + tau``.

    Sign changes are scanned on a logarithmic grid of ``s`` down to
    ``s_min`` (small alpha puts the root within ``1e-8`` of ``-1``), then
    bracketed by bisection in ``log s`` and finished in ``s``.
    """
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    g = Profile(n, alpha)
    grid = np.concatenate([np.logspace(0, math.log10(s_min), 161)])
    vals = g.at_s(grid)
    sign = np.flatnonzero(np.sign(vals[:-1]) != np.sign(vals[1:]))
    if sign.size == 0:
        raise RootError(f"alpha too large for root in (-1,0): g(0) = {vals[0]!r}, g(-1+{s_min:g}) = {vals[-1]!r}")
    # first zero below tau = 0: the largest s where the sign flips
    k = int(sign[0])
    hi, lo = grid[k], grid[k + 1]
    ghi = vals[k]
    steps = 0
    while hi / lo > 1 + 1e-15 and steps < 400:
        mid = math.sqrt(hi * lo) if hi / lo > 4 else 0.5 * (hi + lo)
        gm = g.at_s(mid)
        steps += 1
        if gm == 0:
            lo = hi = mid
            break
        if np.sign(gm) == np.sign(ghi):
            hi, ghi = mid, gm
        else:
            lo = mid
        if abs(gm) < tol * 1e-3:
            lo = hi = mid
            break
    s = hi if abs(g.at_s(hi)) <= abs(g.at_s(lo)) else lo
    sol = JerisonSolution(n, alpha, s, g, {"bisection_steps": steps})
    if abs(sol.g_at_root) >= tol:
        raise RootError(f"bisection stalled with |g| = {abs(sol.g_at_root):.3e}")
    sol.info["g_at_float_tau"] = float(g(sol.tau_alpha))
    return sol


# ---------------------------------------------------------------------------
# the harmonic function v and its region


def tau_of(p):
    """``tau = 4t / N^2``; undefined at the identity."""
    a = as_array(p)
    N = np.asarray(hg.gauge(a))
    if np.any(N == 0):
        raise ValueError("tau is undefined at the identity")
    return 4.0 * a[..., -1] / N ** 2


def s_of(p):
    """``1 + tau = (N^2 + 4t) / N^2`` computed without cancellation on the lower t-axis side."""
    a = as_array(p)
    r2 = hg.zsq(a)
    t = a[..., -1]
    N2 = np.sqrt(r2 * r2 + 16 * t * t)
    # N^2 + 4t = r^4 / (N^2 - 4t) when t < 0
    num = np.where(t >= 0, N2 + 4 * t, r2 * r2 / np.where(t >= 0, 1.0, N2 - 4 * t))
    return num / N2


def v_field(sol: JerisonSolution, p):
    """``v = N^alpha g(tau)``."""
    a = as_array(p)
    s = np.asarray(s_of(a))
    if np.any(s <= 0):
        raise ValueError("v is undefined on the negative t-axis (tau = -1)")
    out = np.asarray(hg.gauge(a)) ** sol.alpha * sol.g.at_s(s)
    return float(out) if np.ndim(out) == 0 else out


def in_region(sol: JerisonSolution, p) -> np.ndarray:
    """Membership in ``Omega_M = {t > M |z|^2}``, equivalently ``tau > tau_alpha``."""
    a = as_array(p)
    return a[..., -1] > sol.M * hg.zsq(a)


def _v_scalar_field(sol, u, du, d2u):
    """``v = N^alpha u(tau)`` with closed-form Euclidean partials for n = 1 style coordinates."""
    alpha = sol.alpha

    def value(a):
        return np.asarray(hg.gauge(a)) ** alpha * u(tau_of(a))

    def grad(a):
        N = np.asarray(hg.gauge(a))[..., None]
        tau = tau_of(a)
        gN = hg.gauge_grad(a)
        # d tau = 4 dt / N^2 - 8 t dN / N^3
        gt = -2.0 * tau[..., None] * gN / N
        gt[..., -1] += 4.0 / N[..., 0] ** 2
        return alpha * N ** (alpha - 1) * u(tau)[..., None] * gN + N ** alpha * du(tau)[..., None] * gt

    return hg.ScalarField(value, grad)


def verify_identity(sol: JerisonSolution, p, h: float = 1e-3, u: Optional[Callable] = None,
                    du: Optional[Callable] = None, d2u: Optional[Callable] = None):
    """``(FD value of L v, 4 psi N^(alpha-2) {Jacobi expression})`` at ``p``.

    ``u`` defaults to the profile ``g``, for which both entries vanish;
    other profiles (with derivatives) exercise the identity itself. The
    difference value uses second-order central differences of step ``h``.
    """
    if u is None:
        u, du, d2u = sol.g, (lambda t: sol.g.derivative(t, 1)), (lambda t: sol.g.derivative(t, 2))
    elif du is None or d2u is None:
        raise ValueError("custom profiles need du and d2u")
    a = as_array(p)
    if np.any(np.asarray(s_of(a)) <= 0):
        raise ValueError("p lies on the negative t-axis")
    f = _v_scalar_field(sol, u, du, d2u)
    fd = fd_sublaplacian(lambda q: f(q), a, h)
    N = np.asarray(hg.gauge(a))
    tau = tau_of(a)
    psi = hg.zsq(a) / N ** 2
    formula = 4 * psi * N ** (sol.alpha - 2) * jacobi_operator(sol.n, sol.alpha, u(tau), du(tau), d2u(tau), tau)
    return fd, formula


def fd_sublaplacian(f: Callable, p, h: float):
    """``sum_j X_j^2 f`` by central differences along the flows ``p exp(s X_j)``.

    ``s -> p exp(s X_j)`` is a straight line in exponential coordinates,
    so ``X_j^2 f(p)`` is the second difference of ``f`` along it.
    """
    a = as_array(p)
    n = (a.shape[-1] - 1) // 2
    f0 = np.asarray(f(a))
    tot = np.zeros(f0.shape)
    for j in range(2 * n):
        e = np.zeros(2 * n + 1)
        e[j] = h
        fp = np.asarray(f(hg.group_mul(a, e)))
        fm = np.asarray(f(hg.group_mul(a, -e)))
        tot = tot + (fp - 2 * f0 + fm) / (h * h)
    return float(tot) if np.ndim(tot) == 0 else tot


def holder_fit(values, distances, min_samples: int = 5) -> float:
    """Log-log slope of ``|v|`` against gauge distance to ``e``."""
    distances = np.asarray(distances, dtype=float)
    values = np.abs(np.asarray(values, dtype=float))
    if distances.size < min_samples:
        raise ValueError(f"need at least {min_samples} samples")
    return power_fit(distances, values)[0]


def holder_exponent(sol: JerisonSolution, points) -> float:
    """Fitted exponent of ``v`` along sample points approaching ``e``."""
    pts = as_array(points)
    return holder_fit(v_field(sol, pts), np.asarray(hg.gauge(pts)))


def ray(tau: float, radii, phi: float = 0.0):
    """Points with fixed ``tau`` and gauge ``N = r`` (n = 1)."""
    radii = np.asarray(radii, dtype=float)
    rz = radii * math.sqrt(math.sqrt(max(1.0 - tau * tau, 0.0)))
    return np.stack([rz * math.cos(phi), rz * math.sin(phi), 0.25 * tau * radii ** 2], axis=-1)
