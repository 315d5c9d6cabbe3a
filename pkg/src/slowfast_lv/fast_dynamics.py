"""Deterministic fast flow and the geometry of its invariant loops.

The flow dx_j/dt = x_j(x_{j-1} - x_{j+1}) conserves z = x1*x2*x3 and is
periodic on every interior level set z in (0, 1/27).  This module computes
the loop roots in closed form, the period T(z) and enclosed (signed) area
A(z) by quadrature, loop time-averages by event-located integration of one
full revolution, and the one-dimensional second-order coefficients
3(a*m(z) - z) and 3*z*m(z) with m(z) = -A(z)/T(z).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import IntegrationWarning, quad, solve_ivp
from scipy.interpolate import CubicSpline
from scipy.special import ellipkm1, roots_legendre

from .core import Z_MAX, SimplexPoint, z_of

# Below/above these levels the root separation underflows; closed-form
# asymptotics take over from quadrature.
Z_ASYMPTOTIC_LO = 1e-12
Z_ASYMPTOTIC_HI = Z_MAX - 1e-12

_TWO_PI_SQRT3 = 2.0 * np.pi * np.sqrt(3.0)


class IntegrationError(RuntimeError):
    """Raised when an integration fails to reach the requested accuracy."""


def _quad_checked(integrand, lo, hi, rel=1e-11) -> float:
    """Adaptive quadrature that trades scipy's roundoff warning for a hard
    check on the returned error estimate."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", IntegrationWarning)
        val, err = quad(integrand, lo, hi, epsabs=1e-14, epsrel=rel, limit=400)
    if err > max(1e-8 * abs(val), 1e-12):
        raise IntegrationError(f"quadrature error estimate {err:.2e} too large")
    return val


# ---------------------------------------------------------------------------
# vector field and flow
# ---------------------------------------------------------------------------

def vector_field(p: SimplexPoint) -> np.ndarray:
    """Velocity (x_j (x_{j-1} - x_{j+1}))_j; the components sum to zero."""
    return _rhs(0.0, p.as_array())


def _rhs(t, y):
    x1, x2, x3 = y[0], y[1], y[2]
    return np.array([x1 * (x3 - x2), x2 * (x1 - x3), x3 * (x2 - x1)])


@dataclass(frozen=True)
class FlowTrajectory:
    """Sampled solution of the fast flow; z is conserved along it."""

    times: np.ndarray
    points: np.ndarray  # shape (len(times), 3)
    z0: float

    def point(self, k: int) -> SimplexPoint:
        return SimplexPoint.from_array(self.points[k])

    def z_values(self) -> np.ndarray:
        return self.points[:, 0] * self.points[:, 1] * self.points[:, 2]


def integrate_flow(p0: SimplexPoint, t_final: float, dt_max: float = 0.05) -> FlowTrajectory:
    """Integrate the flow from p0, sampling every dt_max up to t_final.

    Uses an adaptive high-order explicit pair at local tolerance 1e-12; the
    sampled points conserve z to well below 1e-8.
    """
    if t_final < 0:
        raise ValueError("t_final must be >= 0")
    if dt_max <= 0:
        raise ValueError("dt_max must be > 0")
    y0 = p0.as_array()
    times = np.arange(0.0, t_final + 0.5 * dt_max, dt_max)
    times[-1] = min(times[-1], t_final) if len(times) else t_final
    if t_final == 0.0:
        return FlowTrajectory(np.array([0.0]), y0[None, :], z_of(p0))
    sol = solve_ivp(_rhs, (0.0, t_final), y0, method="DOP853",
                    rtol=1e-12, atol=1e-14, t_eval=times, dense_output=False)
    if not sol.success:
        raise IntegrationError(f"flow integration failed: {sol.message}")
    return FlowTrajectory(sol.t, sol.y.T.copy(), z_of(p0))


def flow_at(p0: SimplexPoint, times) -> np.ndarray:
    """Flow points at the requested times (shape (len(times), 3))."""
    times = np.asarray(times, dtype=float)
    if np.any(times < 0) or np.any(np.diff(times) < 0):
        raise ValueError("times must be nonnegative and nondecreasing")
    if len(times) == 0:
        return np.empty((0, 3))
    t_end = float(times[-1])
    if t_end == 0.0:
        return np.tile(p0.as_array(), (len(times), 1))
    sol = solve_ivp(_rhs, (0.0, t_end), p0.as_array(), method="DOP853",
                    rtol=1e-12, atol=1e-14, t_eval=times)
    if not sol.success:
        raise IntegrationError(f"flow integration failed: {sol.message}")
    return sol.y.T.copy()


# ---------------------------------------------------------------------------
# loop roots and branches
# ---------------------------------------------------------------------------

def theta_angle(y):
    """Angle in (0, pi) with cos(theta) = 2y - 1, for y in (0, 1)."""
    return np.arccos(np.clip(2.0 * np.asarray(y, dtype=float) - 1.0, -1.0, 1.0))


def _check_level(z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if np.any(z <= 0.0) or np.any(z >= Z_MAX):
        raise ValueError(f"level z must lie in (0, {Z_MAX}), got {z}")
    return z


def loop_roots(z):
    """Roots (x_min, x_max, x_add) of x(1-x)^2 = 4z for z in (0, 1/27).

    Closed trigonometric form; satisfies 0 < x_min <= 1/3 <= x_max < 1 < x_add <= 4/3.
    """
    z = _check_level(z)
    phi = theta_angle(27.0 * z) / 3.0
    x_min = (2.0 / 3.0) * (1.0 - np.sin(phi + np.pi / 6.0))
    x_max = (2.0 / 3.0) * (1.0 + np.sin(phi - np.pi / 6.0))
    x_add = (2.0 / 3.0) * (1.0 + np.cos(phi))
    return x_min, x_max, x_add


def _root_gaps(z):
    """(x_max - x_min, x_add - x_max) without cancellation near the endpoints."""
    phi = theta_angle(27.0 * np.asarray(z, dtype=float)) / 3.0
    span = (2.0 / np.sqrt(3.0)) * np.sin(phi)
    gap = (2.0 / np.sqrt(3.0)) * np.cos(phi + np.pi / 6.0)
    return span, gap


def branch_x2(x1: float, z: float, increasing: bool) -> float:
    """x2 on the loop at level z as a function of x1 in [x_min, x_max].

    The lower branch (minus sign) is traversed while x1 increases, the upper
    one on the way back.  A discriminant within -1e-14 of zero is clamped.
    """
    _check_level(z)
    disc = (1.0 - x1) ** 2 - 4.0 * z / x1
    if disc < -1e-14:
        raise ValueError(f"x1={x1} is outside the loop at level z={z} (disc={disc})")
    root = np.sqrt(max(disc, 0.0))
    if increasing:
        return 0.5 * (1.0 - x1 - root)
    return 0.5 * (1.0 - x1 + root)


# ---------------------------------------------------------------------------
# period and action
# ---------------------------------------------------------------------------

def period(z):
    """Period T(z) of the loop at level z.

    The integral 2 * int dx / sqrt(x^2(1-x)^2 - 4zx) between x_min and x_max
    reduces to a complete elliptic integral of the first kind; evaluating it
    through ellipkm1 with a cancellation-free complementary parameter keeps
    full accuracy at both endpoints.  T(1/27^-) = 2*pi*sqrt(3) and
    T(z) ~ -3 ln z as z -> 0+.
    """
    z = _check_level(z)
    scalar = z.ndim == 0
    z = np.atleast_1d(z)
    out = np.empty_like(z)

    lo = z < Z_ASYMPTOTIC_LO
    hi = z > Z_ASYMPTOTIC_HI
    mid = ~(lo | hi)
    out[lo] = -3.0 * np.log(z[lo])
    out[hi] = _TWO_PI_SQRT3
    if np.any(mid):
        zm = z[mid]
        x_min, x_max, x_add = loop_roots(zm)
        span, gap = _root_gaps(zm)
        # complementary parameter 1 - k^2 of the standard quartic reduction
        p = x_min * gap / (x_max * (gap + span))
        out[mid] = 4.0 / np.sqrt(x_max * (x_add - x_min)) * ellipkm1(p)
    return float(out[0]) if scalar else out


def period_quadrature(z: float) -> float:
    """T(z) by adaptive quadrature of the substituted integral (verification path).

    Substituting x = x_min + (x_max - x_min) sin^2(phi) removes both
    inverse-square-root endpoint singularities; the remaining smooth peak is
    resolved adaptively.
    """
    z = float(_check_level(z))
    x_min, x_max, x_add = loop_roots(z)
    d = x_max - x_min

    def integrand(phi):
        x = x_min + d * np.sin(phi) ** 2
        return 2.0 / np.sqrt(x * (x_add - x))

    return 2.0 * _quad_checked(integrand, 0.0, 0.5 * np.pi)


def action(z):
    """Signed area A(z) = -int_{x_min}^{x_max} sqrt((1-x)^2 - 4z/x) dx < 0.

    Same sin^2 substitution as the period; the integrand is bounded, so
    adaptive quadrature reaches ~1e-11 relative accuracy across the level
    range.  A(0+) = -1/2 and A(z) ~ -2*pi*sqrt(3) (1/27 - z) near the top.
    """
    z = _check_level(z)
    if z.ndim > 0:
        return np.array([action(float(v)) for v in z])
    z = float(z)
    if z < Z_ASYMPTOTIC_LO:
        return -0.5
    if z > Z_ASYMPTOTIC_HI:
        return -_TWO_PI_SQRT3 * (Z_MAX - z)
    x_min, x_max, x_add = loop_roots(z)
    d = x_max - x_min

    def integrand(phi):
        s, c = np.sin(phi), np.cos(phi)
        x = x_min + d * s * s
        return 2.0 * d * d * (s * c) ** 2 * np.sqrt((x_add - x) / x)

    return -_quad_checked(integrand, 0.0, 0.5 * np.pi)


def mean_m(z) -> float:
    """Loop mean m(z) = -A(z)/T(z) > 0, extended by 0 at both endpoints."""
    z = np.asarray(z, dtype=float)
    if z.ndim > 0:
        return np.array([mean_m(float(v)) for v in z])
    z = float(z)
    if not (0.0 <= z <= Z_MAX):
        raise ValueError(f"level z must lie in [0, {Z_MAX}], got {z}")
    if z == 0.0 or z == Z_MAX:
        return 0.0
    return -action(z) / period(z)


# ---------------------------------------------------------------------------
# loop time-averages
# ---------------------------------------------------------------------------

def _loop_start(z: float) -> np.ndarray:
    x_min, _, _ = loop_roots(z)
    c = 0.5 * (1.0 - x_min)
    return np.array([x_min, c, c])


def loop_time_averages(fns: Sequence[Callable[[np.ndarray], float]], z: float,
                       rtol: float = 1e-12) -> tuple[float, list[float]]:
    """Averages of several functions over one loop at level z.

    Integrates the flow with one quadrature slot per function, locating one
    full revolution as the time between two successive upward crossings of
    the section x1 = 1/3.  Returns (measured period, averages).
    """
    z = float(_check_level(z))
    nf = len(fns)
    y0 = np.concatenate([_loop_start(z), np.zeros(nf)])

    def rhs(t, y):
        x = y[:3]
        out = np.empty(3 + nf)
        out[:3] = _rhs(t, x)
        for k, f in enumerate(fns):
            out[3 + k] = f(x)
        return out

    def section(t, y):
        return y[0] - 1.0 / 3.0

    section.direction = 1.0
    horizon = 3.0 * period(z)
    sol = solve_ivp(rhs, (0.0, horizon), y0, method="DOP853",
                    rtol=rtol, atol=1e-14, events=section, dense_output=True)
    if not sol.success or len(sol.t_events[0]) < 2:
        raise IntegrationError(f"loop return not located at level z={z}")
    t1, t2 = sol.t_events[0][0], sol.t_events[0][1]
    va, vb = sol.sol(t1), sol.sol(t2)
    T = t2 - t1
    return T, [(vb[3 + k] - va[3 + k]) / T for k in range(nf)]


def time_average(f: Callable[[SimplexPoint], float], z: float) -> float:
    """Time average of f over one loop at level z (relative accuracy ~1e-9)."""
    _, vals = loop_time_averages([lambda x: f(SimplexPoint.from_array(x))], z)
    return vals[0]


def loop_return_time(z: float) -> float:
    """Period measured by event-located return of the integrated flow.

    Independent of the quadrature route; used to cross-check period().
    """
    T, _ = loop_time_averages([], z)
    return T


# ---------------------------------------------------------------------------
# generator pieces
# ---------------------------------------------------------------------------

def slow_generator_coefficients(p: SimplexPoint) -> tuple[float, float, float]:
    """Coefficients (c_a, c_0, c_2) of the drift-order generator on functions of z.

    Applied to g(z(.)), the generator evaluates to
    (a*c_a + c_0) g'(z) + c_2 g''(z), with
    c_a = sum_i (x_i^2 x_{i-1} - z), c_0 = -3z and
    c_2 = (1/2) sum_i z (x_i^2 x_{i-1} + x_{i+1}^2 x_{i-1} - 2z).
    """
    x = (p.x1, p.x2, p.x3)
    z = z_of(p)
    c_a = 0.0
    c_2 = 0.0
    for i in range(3):
        xi, xim, xip = x[i], x[(i - 1) % 3], x[(i + 1) % 3]
        c_a += xi * xi * xim - z
        c_2 += 0.5 * z * (xi * xi * xim + xip * xip * xim - 2.0 * z)
    return c_a, -3.0 * z, c_2


def slow_generator_apply(p: SimplexPoint, a: float,
                         dg: Callable[[float], float],
                         d2g: Callable[[float], float]) -> float:
    """Drift-order generator applied to g(z(.)) at p, given g' and g''.

    Vanishes at the vertices; at the centre it equals -(1/9) g'(1/27).
    """
    c_a, c_0, c_2 = slow_generator_coefficients(p)
    z = z_of(p)
    return (a * c_a + c_0) * dg(z) + c_2 * d2g(z)


# ---------------------------------------------------------------------------
# per-level geometry bundle and the tabulated coefficient m
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LoopGeometry:
    """All per-level loop quantities: roots, period, action and mean."""

    z: float
    theta: float
    x_min: float
    x_max: float
    x_add: float
    period: float
    action: float
    m: float


def loop_geometry(z: float) -> LoopGeometry:
    z = float(_check_level(z))
    x_min, x_max, x_add = loop_roots(z)
    T = period(z)
    A = action(z)
    return LoopGeometry(z=z, theta=float(theta_angle(27.0 * z)),
                        x_min=float(x_min), x_max=float(x_max), x_add=float(x_add),
                        period=T, action=A, m=-A / T)


class LoopTable:
    """m(z) tabulated on a grid uniform in theta(27z), with cubic interpolation.

    The theta grid equidistributes nodes near both endpoints of the level
    interval.  On the table, the action is accumulated from the identity
    A'(z) = T(z) with the closed-form period, which costs a single vectorized
    pass; the definitional quadrature action() remains the reference and the
    two routes are cross-checked in the test suite.  Outside the outermost
    nodes the asymptotic forms take over.
    """

    def __init__(self, size: int = 4096, gl_order: int = 8):
        self.size = size
        h = np.pi / size
        theta = (np.arange(size) + 0.5) * h
        zs = (1.0 + np.cos(theta)) / 54.0  # decreasing in theta
        periods = period(zs)

        # cumulative integral of T dz from z(theta)=1/27 (theta=0) downward
        gl_x, gl_w = roots_legendre(gl_order)
        edges = np.concatenate([[0.0], theta])
        mid = 0.5 * (edges[1:] + edges[:-1])
        half = 0.5 * (edges[1:] - edges[:-1])
        nodes = mid[:, None] + half[:, None] * gl_x[None, :]
        zn = (1.0 + np.cos(nodes)) / 54.0
        g = period(zn.ravel()).reshape(nodes.shape) * np.sin(nodes) / 54.0
        seg = (g * gl_w[None, :]).sum(axis=1) * half
        actions = -np.cumsum(seg)

        self.theta = theta
        self.z = zs
        self.periods = periods
        self.actions = actions
        self.m_values = -actions / periods
        self._spline = CubicSpline(theta, self.m_values)
        # asymptotic handoff at the outermost table nodes
        self.z_lo = zs[-1]
        self.z_hi = zs[0]

    def m(self, z):
        """Interpolated m(z) for z in [0, 1/27] (vectorized)."""
        z = np.asarray(z, dtype=float)
        scalar = z.ndim == 0
        z = np.atleast_1d(z).copy()
        if np.any(z < 0.0) or np.any(z > Z_MAX):
            raise ValueError("level out of [0, 1/27]")
        out = np.empty_like(z)
        lo = z <= self.z_lo
        hi = z >= self.z_hi
        mid = ~(lo | hi)
        with np.errstate(divide="ignore"):
            out[lo] = np.where(z[lo] > 0.0, -1.0 / (6.0 * np.log(z[lo])), 0.0)
        out[hi] = Z_MAX - z[hi]
        if np.any(mid):
            out[mid] = self._spline(theta_angle(27.0 * z[mid]))
        return float(out[0]) if scalar else np.maximum(out, 0.0)

    def spline_coefficients(self) -> tuple[np.ndarray, float, float]:
        """(coefficient array, theta0, step) for compiled-kernel evaluation."""
        return self._spline.c, float(self.theta[0]), float(np.pi / self.size)


@lru_cache(maxsize=4)
def loop_table(size: int = 4096) -> LoopTable:
    """Shared read-only coefficient table (built once per process)."""
    return LoopTable(size=size)
