"""Billiard map on strictly convex domains.

Every boundary is parametrized counterclockwise by an angular parameter t in
[0, 2 pi).  Arc length and the Lazutkin integral are tabulated eagerly with
composite Gauss-Legendre panels.  A phase point is (s, phi), phi being the
angle between the positive unit tangent and the outgoing direction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List

import numpy as np

from .elliptic_geometry import (
    TWO_PI,
    CausticParams,
    EllipseParams,
    PeriodicFunction,
    phi_of_theta,
)
from .errors import DomainError, GeometryError, GlancingError, NumericError

GLANCING = 1e-6
COARSE_NODES = 64
_PANELS = 256
_GL_ORDER = 16
_GL_X, _GL_W = np.polynomial.legendre.leggauss(_GL_ORDER)


def _cross(u, v):
    return u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]


class _CumulativeIntegral:
    """Periodic antiderivative of a smooth integrand g(t), exact up to Gauss-Legendre error."""

    def __init__(self, integrand):
        self._g = integrand
        self._h = TWO_PI / _PANELS
        starts = self._h * np.arange(_PANELS)
        nodes = starts[:, None] + 0.5 * self._h * (_GL_X + 1.0)
        panel = 0.5 * self._h * (integrand(nodes.ravel()).reshape(nodes.shape) @ _GL_W)
        self.knots = np.concatenate([[0.0], np.cumsum(panel)])
        self.total = float(self.knots[-1])

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        turns = np.floor(t / TWO_PI)
        r = t - turns * TWO_PI
        idx = np.minimum((r / self._h).astype(int), _PANELS - 1)
        left = idx * self._h
        half = 0.5 * (r - left)
        nodes = left[..., None] + half[..., None] * (_GL_X + 1.0)
        partial = half * (self._g(nodes.ravel()).reshape(nodes.shape) @ _GL_W)
        return turns * self.total + self.knots[idx] + partial


class DomainBoundary:
    """Closed strictly convex curve; subclasses supply ``_local_eval``."""

    def __init__(self, check_points=4096):
        self._check_convexity(check_points)
        self._arc = _CumulativeIntegral(self.speed)
        self._laz = _CumulativeIntegral(lambda t: self.curvature(t) ** (2.0 / 3.0) * self.speed(t))
        self.perimeter = self._arc.total
        self.lazutkin_constant = self._laz.total

    # subclasses return (position, first derivative, second derivative), each (..., 2)
    def _local_eval(self, t):
        raise NotImplementedError

    def eval(self, t):
        return self._local_eval(np.asarray(t, dtype=float))

    def position(self, t):
        return self.eval(t)[0]

    def derivative(self, t):
        return self.eval(t)[1]

    def speed(self, t):
        d1 = self.eval(t)[1]
        return np.hypot(d1[..., 0], d1[..., 1])

    def unit_tangent(self, t):
        d1 = self.eval(t)[1]
        return d1 / np.hypot(d1[..., 0], d1[..., 1])[..., None]

    def curvature(self, t):
        _, d1, d2 = self.eval(t)
        return _cross(d1, d2) / np.hypot(d1[..., 0], d1[..., 1]) ** 3

    def radius_of_curvature(self, t):
        return 1.0 / self.curvature(t)

    def _check_convexity(self, n):
        t = TWO_PI * np.arange(n) / n
        _, d1, d2 = self.eval(t)
        if not np.all(np.isfinite(d1)) or np.any(_cross(d1, d2) <= 0.0):
            raise GeometryError("boundary is not strictly convex and counterclockwise")
        ang = np.arctan2(d1[:, 1], d1[:, 0])
        turning = np.sum(np.angle(np.exp(1j * np.diff(np.append(ang, ang[0])))))
        if abs(turning - TWO_PI) > 1e-6:
            raise GeometryError("boundary tangent does not turn exactly once")

    def arc_length(self, t):
        return self._arc(t)

    def t_from_s(self, s):
        """Invert the arc-length table by Newton iteration."""
        s = np.asarray(s, dtype=float)
        turns = np.floor(s / self.perimeter)
        r = s - turns * self.perimeter
        knots_t = np.linspace(0.0, TWO_PI, _PANELS + 1)
        t = np.interp(r, self._arc.knots, knots_t)
        for _ in range(30):
            step = (self._arc(t) - r) / self.speed(t)
            t = t - step
            if np.all(np.abs(step) < 1e-15):
                break
        return t + turns * TWO_PI

    def reduce_s(self, s):
        return np.mod(s, self.perimeter)

    def lazutkin_x(self, t):
        return self._laz(t) / self.lazutkin_constant


class EllipseDomain(DomainBoundary):
    def __init__(self, params: EllipseParams):
        self.params = params
        self._rot = params.rotation().T
        self._center = params.center
        self._ab = params.a, params.b
        super().__init__()

    def _local_eval(self, t):
        a, b = self._ab
        c, s = np.cos(t), np.sin(t)
        pos = np.stack([a * c, b * s], axis=-1) @ self._rot
        d1 = np.stack([-a * s, b * c], axis=-1) @ self._rot
        return pos + self._center, d1, -pos


class PerturbedEllipseDomain(DomainBoundary):
    """Boundary mu = mu0 + mu(phi) in the elliptic coordinates of ``base``."""

    def __init__(self, base: EllipseParams, mu: PeriodicFunction):
        self.base = base
        self._rot = base.rotation().T
        self.mu = mu
        self._dmu = mu.derivative()
        self._ddmu = mu.derivative(2)
        super().__init__()

    def _local_eval(self, t):
        e = self.base
        m = e.mu0 + self.mu(t)
        m1, m2 = self._dmu(t), self._ddmu(t)
        c, s = np.cos(t), np.sin(t)
        if e.is_circle:
            r = np.exp(m)
            r1, r2 = r * m1, r * (m2 + m1 * m1)
            pos, d1, d2 = _polar(r, r1, r2, c, s)
        else:
            ch, sh = e.c * np.cosh(m), e.c * np.sinh(m)
            pos = np.stack([ch * c, sh * s], axis=-1)
            d1 = np.stack([sh * m1 * c - ch * s, ch * m1 * s + sh * c], axis=-1)
            d2 = np.stack([
                ch * m1 * m1 * c + sh * m2 * c - 2.0 * sh * m1 * s - ch * c,
                sh * m1 * m1 * s + ch * m2 * s + 2.0 * ch * m1 * c - sh * s,
            ], axis=-1)
        rot = self._rot
        return pos @ rot + e.center, d1 @ rot, d2 @ rot


def _polar(r, r1, r2, c, s):
    pos = np.stack([r * c, r * s], axis=-1)
    d1 = np.stack([r1 * c - r * s, r1 * s + r * c], axis=-1)
    d2 = np.stack([r2 * c - 2.0 * r1 * s - r * c, r2 * s + 2.0 * r1 * c - r * s], axis=-1)
    return pos, d1, d2


class PolarGraphDomain(DomainBoundary):
    """Boundary r = rho(phi) about ``center``."""

    def __init__(self, rho: PeriodicFunction, center=(0.0, 0.0)):
        self.rho = rho
        self.center = np.asarray(center, dtype=float)
        self._d1 = rho.derivative()
        self._d2 = rho.derivative(2)
        super().__init__()

    def _local_eval(self, t):
        pos, d1, d2 = _polar(self.rho(t), self._d1(t), self._d2(t), np.cos(t), np.sin(t))
        return pos + self.center, d1, d2


class SampledCurveDomain(DomainBoundary):
    """Trigonometric interpolant of a closed curve sampled at equally spaced parameters."""

    def __init__(self, points=None, x: PeriodicFunction = None, y: PeriodicFunction = None, degree=None):
        if points is not None:
            pts = np.asarray(points, dtype=float)
            if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 8:
                raise DomainError("points must be an (n, 2) array with n >= 8")
            x = PeriodicFunction.from_samples(pts[:, 0], degree)
            y = PeriodicFunction.from_samples(pts[:, 1], degree)
        if x is None or y is None:
            raise DomainError("need either points or both coordinate series")
        self.x, self.y = x, y
        self._x1, self._x2 = x.derivative(), x.derivative(2)
        self._y1, self._y2 = y.derivative(), y.derivative(2)
        super().__init__()

    def _local_eval(self, t):
        pos = np.stack([self.x(t), self.y(t)], axis=-1)
        d1 = np.stack([self._x1(t), self._y1(t)], axis=-1)
        d2 = np.stack([self._x2(t), self._y2(t)], axis=-1)
        return pos, d1, d2


@dataclass(frozen=True)
class PhasePoint:
    s: float
    phi: float

    def twist(self):
        return self.s, -math.cos(self.phi)


@dataclass
class OrbitRecord:
    points: List[PhasePoint]
    chord_lengths: List[float]
    rotation_estimate: float
    total_length: float
    params: List[float] = field(default_factory=list, repr=False)
    diagnostics: dict = field(default_factory=dict, repr=False)


def _direction(d: DomainBoundary, t, phi):
    tan = d.unit_tangent(t)
    nor = np.array([-tan[1], tan[0]])
    return math.cos(phi) * tan + math.sin(phi) * nor


def _next_hit(d: DomainBoundary, t, phi):
    """Parameter advance tau in (0, 2 pi) of the next intersection of the ray with the boundary."""
    if not (GLANCING <= phi <= math.pi - GLANCING):
        raise GlancingError(f"reflection angle {phi} is within {GLANCING} of the boundary circles")
    p0, d10, _ = d.eval(t)
    tan = d10 / math.hypot(d10[0], d10[1])
    v = math.cos(phi) * tan + math.sin(phi) * np.array([-tan[1], tan[0]])

    def f(tau):
        return _cross(v, d.eval(t + tau)[0] - p0)

    taus = TWO_PI * np.arange(1, COARSE_NODES) / COARSE_NODES
    fs = f(taus)
    positive = np.nonzero(fs > 0.0)[0]
    if positive.size == 0:
        lo, hi = taus[-1], TWO_PI
    else:
        i = positive[0]
        lo, hi = (0.0 if i == 0 else taus[i - 1]), taus[i]
    if lo > 0.0 and positive.size:
        f_lo, f_hi = fs[i - 1], fs[i]
        tau = lo + (hi - lo) * f_lo / (f_lo - f_hi)
    else:
        tau = min(0.5 * hi, 2.0 * math.sin(phi) / max(d.curvature(t) * math.hypot(*d10), 1e-300))
    prev = math.inf
    for _ in range(100):
        pos, d1, _ = d.eval(t + tau)
        val = _cross(v, pos - p0)
        if val > 0.0:
            hi = tau
        elif val < 0.0:
            lo = tau
        else:
            break
        slope = _cross(v, d1)
        step = val / slope if slope != 0.0 else math.inf
        # quadratic convergence, or a step that stopped shrinking (rounding floor)
        if abs(step) <= 1e-12 * min(1.0, tau) or abs(step) >= 0.5 * prev:
            if lo <= tau - step <= hi:
                tau -= step
            break
        cand = tau - step
        if lo < cand < hi:
            prev = abs(step)
        else:
            cand, prev = 0.5 * (lo + hi), math.inf
        tau = cand
    else:
        raise NumericError("next-intersection solver did not converge", t=t, phi=phi, bracket=(lo, hi))
    return tau, v


def _step_param(d: DomainBoundary, t, phi):
    tau, v = _next_hit(d, t, phi)
    t1 = t + tau
    p0 = d.position(t)
    p1, d1, _ = d.eval(t1)
    tan = d1 / math.hypot(d1[0], d1[1])
    nor = np.array([-tan[1], tan[0]])
    phi1 = math.atan2(-float(v @ nor), float(v @ tan))
    return t1, phi1, float(math.hypot(*(p1 - p0))), tau


def billiard_step(d: DomainBoundary, p: PhasePoint) -> PhasePoint:
    t = float(d.t_from_s(p.s))
    t1, phi1, _, _ = _step_param(d, t, p.phi)
    return PhasePoint(float(d.reduce_s(d.arc_length(t1 % TWO_PI))), phi1)


def iterate(d: DomainBoundary, p: PhasePoint, n: int) -> OrbitRecord:
    if n < 1:
        raise DomainError("n must be at least 1")
    t = float(d.t_from_s(p.s))
    phi = p.phi
    params, phis, chords = [t], [phi], []
    winding = 0.0
    for _ in range(n):
        t, phi, chord, tau = _step_param(d, t, phi)
        t = t % TWO_PI
        winding += tau
        params.append(t)
        phis.append(phi)
        chords.append(chord)
    svals = d.reduce_s(d.arc_length(np.array(params)))
    points = [PhasePoint(float(s), float(f)) for s, f in zip(svals, phis)]
    return OrbitRecord(points, chords, winding / (n * TWO_PI), float(math.fsum(chords)), params)


def generating_ell(d: DomainBoundary, s, s2) -> float:
    t1, t2 = d.t_from_s(np.array([s, s2], dtype=float))
    gap = math.hypot(*(d.position(t1) - d.position(t2)))
    if gap == 0.0 or abs(((s - s2) / d.perimeter) - round((s - s2) / d.perimeter)) < 1e-15:
        raise GeometryError("coincident chord endpoints")
    return gap


def lazutkin_coords(d: DomainBoundary, p: PhasePoint):
    t = float(d.t_from_s(p.s))
    x = float(d.lazutkin_x(t)) % 1.0
    y = 4.0 / d.lazutkin_constant * float(d.radius_of_curvature(t)) ** (1.0 / 3.0) * math.sin(p.phi / 2.0)
    return x, y


def caustic_phase_point(d: EllipseDomain, caustic: CausticParams, theta: float) -> PhasePoint:
    """Phase point at S_lambda(theta) whose ray touches the caustic, winding counterclockwise.

    The tangent direction comes from plane geometry (tangent from an exterior
    point to the caustic ellipse), independently of the action-angle chart.
    """
    e = d.params
    t = float(phi_of_theta(caustic, theta))
    local = e.to_local(d.position(t))
    ax, bx = caustic.semi_axes
    u = np.array([local[0] / ax, local[1] / bx])
    r = math.hypot(*u)
    ang = math.atan2(u[1], u[0]) + math.acos(1.0 / r)
    touch = e.to_global(np.array([ax * math.cos(ang), bx * math.sin(ang)]))
    v = touch - d.position(t)
    tan = d.unit_tangent(t)
    phi = math.atan2(_cross(tan, v), float(tan @ v))
    return PhasePoint(float(d.reduce_s(d.arc_length(t % TWO_PI))), phi)
