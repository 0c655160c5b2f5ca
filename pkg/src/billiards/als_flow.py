"""Affine length shortening flow of convex curves.

A strictly convex curve is carried by its support function h(theta) on a uniform grid of
normal angles, C(theta) = h n + h' t with n = (cos, sin) and t = n'.  The radius of
curvature is r = h + h'' and the affine normal flow moves every point with inward normal
speed r^(-1/3).  Points of fixed normal angle are exactly the material points of the flow
C_t = C_ss (s the affine arc length), so no tangential correction is needed.

Affine quantities in this chart: ds = r^(2/3) dtheta and, with u = r^(-1/3), the affine
curvature is nu = u^3 (u + u'').
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .elliptic_geometry import TWO_PI, PeriodicFunction
from .errors import DomainError, GeometryError

EIGHT_PI2 = 8.0 * math.pi ** 2
CFL = 0.25

# ARS(2,2,2) IMEX Runge-Kutta coefficients
_G = 1.0 - 1.0 / math.sqrt(2.0)
_D = 1.0 - 1.0 / (2.0 * _G)


# ---------------------------------------------------------------- spectral helpers


def _wavenumbers(n):
    return np.fft.rfftfreq(n, 1.0 / n)


def _diff(values, order=1):
    n = values.shape[-1]
    k = _wavenumbers(n)
    spec = np.fft.rfft(values) * (1j * k) ** order
    if n % 2 == 0 and order % 2:
        spec[..., -1] = 0.0
    return np.fft.irfft(spec, n)


def _eval_series(values, theta):
    """Trigonometric interpolant of grid values evaluated at arbitrary angles."""
    n = values.shape[-1]
    c = np.fft.rfft(values) / n
    k = _wavenumbers(n)
    w = np.full(k.size, 2.0)
    w[0] = 1.0
    if n % 2 == 0:
        w[-1] = 1.0
    phase = np.exp(1j * np.multiply.outer(np.asarray(theta, dtype=float), k))
    return np.real(phase @ (w * c))


def _grid(n):
    return TWO_PI * np.arange(n) / n


def _affine_from_support(h):
    r = h + _diff(h, 2)
    if np.min(r) <= 0.0:
        raise GeometryError("curve lost strict convexity", min_radius=float(np.min(r)))
    u = r ** (-1.0 / 3.0)
    nu = u ** 3 * (u + _diff(u, 2))
    return r, nu


def _area(h):
    return 0.5 * TWO_PI * np.mean(h * h - _diff(h) ** 2)


def _points(h, theta=None):
    n = h.size
    th = _grid(n) if theta is None else np.asarray(theta, dtype=float)
    hv = h if theta is None else _eval_series(h, th)
    h1 = _diff(h) if theta is None else _eval_series(_diff(h), th)
    c, s = np.cos(th), np.sin(th)
    return np.stack([hv * c - h1 * s, hv * s + h1 * c], axis=-1)


def _centroid(h):
    th = _grid(h.size)
    pts = _points(h)
    r = h + _diff(h, 2)
    dx, dy = -r * np.sin(th), r * np.cos(th)
    a = _area(h)
    cx = TWO_PI * np.mean(0.5 * pts[:, 0] ** 2 * dy) / a
    cy = -TWO_PI * np.mean(0.5 * pts[:, 1] ** 2 * dx) / a
    return np.array([cx, cy])


def _rescale(h, area0):
    """Homothety about the area centroid restoring the area to area0."""
    th = _grid(h.size)
    c = _centroid(h)
    cn = c[0] * np.cos(th) + c[1] * np.sin(th)
    return cn + math.sqrt(area0 / _area(h)) * (h - cn)


def _uniform_angles(g, n_out):
    """Parameters at which the integral of the speed g takes the values L i / n_out; returns (angles, L)."""
    n = g.size
    total = TWO_PI * np.mean(g)
    c = np.fft.rfft(g) / n
    k = _wavenumbers(n)[1:]
    w = np.where(k == n / 2, 1.0, 2.0)

    def s_of(th):
        ph = np.multiply.outer(th, k)
        return c[0].real * th + np.real((np.exp(1j * ph) - 1.0) / (1j * k) @ (w * c[1:]))

    def g_of(th):
        return _eval_series(g, th)

    target = total * np.arange(n_out) / n_out
    fine = TWO_PI * np.arange(8 * n + 1) / (8 * n)
    th = np.interp(target, s_of(fine), fine)
    for _ in range(50):
        step = (s_of(th) - target) / g_of(th)
        th = th - step
        if np.max(np.abs(step)) < 1e-15:
            break
    return th, total


# ---------------------------------------------------------------- states


@dataclass(frozen=True)
class FlowState:
    """Snapshot of the flow; ``curve`` holds points uniform in affine arc length."""

    support: np.ndarray = field(repr=False)
    time: float = 0.0
    curve: np.ndarray = field(default=None, repr=False)
    area: float = math.nan
    affine_perimeter: float = math.nan
    iso_ratio: float = math.nan
    nu_samples: np.ndarray = field(default=None, repr=False)

    @classmethod
    def from_support(cls, h, time=0.0, n_curve: Optional[int] = None):
        h = np.asarray(h, dtype=float)
        if h.size < 16:
            raise DomainError("support function needs at least 16 samples")
        r, nu = _affine_from_support(h)
        th, length = _uniform_angles(r ** (2.0 / 3.0), n_curve or h.size)
        area = _area(h)
        h.setflags(write=False)
        curve = _points(h, th)
        nus = _eval_series(nu, th)
        return cls(h, float(time), curve, float(area), float(length), float(length ** 3 / area), nus)

    @classmethod
    def ellipse(cls, a, b, n=128, center=(0.0, 0.0), angle=0.0):
        th = _grid(n) - angle
        h = np.sqrt((a * np.cos(th)) ** 2 + (b * np.sin(th)) ** 2)
        h = h + center[0] * np.cos(_grid(n)) + center[1] * np.sin(_grid(n))
        return cls.from_support(h)

    @classmethod
    def circle(cls, radius=1.0, n=128):
        return cls.from_support(np.full(n, float(radius)))

    @classmethod
    def from_parametric(cls, x: PeriodicFunction, y: PeriodicFunction, n=128):
        """Support function of a smooth strictly convex closed curve given as Fourier series in any parameter."""
        x1, y1, x2, y2 = x.derivative(), y.derivative(), x.derivative(2), y.derivative(2)
        probe = _grid(4096)
        if np.min(x1(probe) * y2(probe) - y1(probe) * x2(probe)) <= 0.0:
            raise GeometryError("parametric curve is not strictly convex and counter-clockwise")

        def normal_angle(p):
            return np.arctan2(-x1(p), y1(p))

        theta = _grid(n)
        p0 = normal_angle(0.0)
        p = np.mod(theta - p0, TWO_PI)
        # normal angle increases by 2 pi over the curve; invert it by Newton
        for _ in range(60):
            ang = normal_angle(p)
            err = np.mod(ang - theta + np.pi, TWO_PI) - np.pi
            speed2 = x1(p) ** 2 + y1(p) ** 2
            rate = (x1(p) * y2(p) - y1(p) * x2(p)) / speed2
            step = err / rate
            p = p - step
            if np.max(np.abs(step)) < 1e-15:
                break
        h = x(p) * np.cos(theta) + y(p) * np.sin(theta)
        return cls.from_support(h)

    @classmethod
    def polar(cls, rho: PeriodicFunction, n=128):
        c, s = PeriodicFunction(0.0, [1.0]), PeriodicFunction(0.0, [0.0], [1.0])
        x = _product(rho, c)
        y = _product(rho, s)
        return cls.from_parametric(x, y, n)

    @property
    def radius_of_curvature(self):
        return self.support + _diff(self.support, 2)

    def nu_grid(self):
        return _affine_from_support(self.support)[1]

    def coordinate_series(self):
        """x(theta), y(theta) as exact Fourier series of the normal angle."""
        h = _trimmed(PeriodicFunction.from_samples(self.support))
        hp = h.derivative()
        c, s = PeriodicFunction(0.0, [1.0]), PeriodicFunction(0.0, [0.0], [1.0])
        return _product(h, c) - _product(hp, s), _product(h, s) + _product(hp, c)

    def domain(self):
        from .billiard_core import SampledCurveDomain

        x, y = self.coordinate_series()
        return SampledCurveDomain(x=x, y=y)


def _trimmed(f: PeriodicFunction, tol=1e-17) -> PeriodicFunction:
    big = np.nonzero((np.abs(f.a) > tol) | (np.abs(f.b) > tol))[0]
    n = big[-1] + 1 if big.size else 0
    return PeriodicFunction(f.a0, f.a[:n], f.b[:n])


def _product(f: PeriodicFunction, g: PeriodicFunction) -> PeriodicFunction:
    n = 4 * (f.degree + g.degree) + 4
    grid = _grid(n)
    return PeriodicFunction.from_samples(f(grid) * g(grid), f.degree + g.degree)


# ---------------------------------------------------------------- affine geometry of sampled curves


def _check_curve(points):
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise DomainError("curve must be an (N, 2) array")
    if pts.shape[0] < 64:
        raise DomainError("affine curvature needs at least 64 samples")
    return pts


def _affine_speed(pts):
    x1, y1 = _diff(pts[:, 0]), _diff(pts[:, 1])
    x2, y2 = _diff(pts[:, 0], 2), _diff(pts[:, 1], 2)
    det = x1 * y2 - y1 * x2
    if np.min(det) <= 0.0:
        raise GeometryError("sampled curve is not strictly convex and counter-clockwise")
    return np.cbrt(det)


def affine_reparametrize(points):
    """Resample a closed curve (equally spaced parameter) at equal affine arc length.

    Returns (points, L) where L is the affine perimeter.
    """
    pts = _check_curve(points)
    g = _affine_speed(pts)
    th, total = _uniform_angles(g, pts.shape[0])
    return np.stack([_eval_series(pts[:, 0], th), _eval_series(pts[:, 1], th)], axis=-1), total


def affine_curvature(points):
    """nu = [C_ss, C_sss] at the nodes of the affine-arc-length resampling."""
    pts, total = affine_reparametrize(points)
    scale = TWO_PI / total
    x, y = pts[:, 0], pts[:, 1]
    x2, y2 = _diff(x, 2) * scale ** 2, _diff(y, 2) * scale ** 2
    x3, y3 = _diff(x, 3) * scale ** 3, _diff(y, 3) * scale ** 3
    return x2 * y3 - y2 * x3


def affine_normalization_defect(points):
    """max |[C_s, C_ss] - 1| after reparametrization to affine arc length."""
    pts, total = affine_reparametrize(points)
    scale = TWO_PI / total
    x, y = pts[:, 0], pts[:, 1]
    det = (_diff(x) * _diff(y, 2) - _diff(y) * _diff(x, 2)) * scale ** 3
    return float(np.max(np.abs(det - 1.0)))


def affine_perimeter(points) -> float:
    pts = _check_curve(points)
    return float(TWO_PI * np.mean(_affine_speed(pts)))


def enclosed_area(points) -> float:
    pts = _check_curve(points)
    x, y = pts[:, 0], pts[:, 1]
    return float(0.5 * TWO_PI * np.mean(x * _diff(y) - y * _diff(x)))


def iso_ratio(curve) -> float:
    """L^3 / A, equal to 8 pi^2 exactly for ellipses and smaller otherwise."""
    if isinstance(curve, FlowState):
        return curve.iso_ratio
    return affine_perimeter(curve) ** 3 / enclosed_area(curve)


# ---------------------------------------------------------------- evolution


def _dealias(h):
    n = h.size
    spec = np.fft.rfft(h)
    spec[_wavenumbers(n) > n // 3] = 0.0
    return np.fft.irfft(spec, n)


def _imex_step(h, dt):
    """One ARS(2,2,2) step of h_t = -(h + h'')^(-1/3), linear part frozen at alpha (1 + d^2)."""
    n = h.size
    k = _wavenumbers(n)
    r = h + _diff(h, 2)
    alpha = (np.mean(r) ** (-4.0 / 3.0)) / 3.0
    sym = alpha * (1.0 - k * k)

    def explicit(v):
        rv = v + _diff(v, 2)
        if np.min(rv) <= 0.0:
            raise GeometryError("curve lost strict convexity", min_radius=float(np.min(rv)))
        return np.fft.rfft(-rv ** (-1.0 / 3.0)) - sym * np.fft.rfft(v)

    solve = 1.0 / (1.0 - _G * dt * sym)
    y0 = np.fft.rfft(h)
    n0 = explicit(h)
    y1 = solve * (y0 + _G * dt * n0)
    h1 = np.fft.irfft(y1, n)
    n1 = explicit(h1)
    l1 = sym * y1
    y2 = solve * (y0 + dt * (_D * n0 + (1.0 - _D) * n1) + (1.0 - _G) * dt * l1)
    return np.fft.irfft(y2, n)


def stable_dt(h) -> float:
    """0.25 / (max|nu| k_max^2)."""
    r, nu = _affine_from_support(h)
    kmax = h.size // 3
    return CFL / (np.max(np.abs(nu)) * kmax * kmax)


@dataclass
class Trajectory:
    states: List[FlowState]
    status: str = "ok"
    substeps: int = 0

    def __iter__(self):
        return iter(self.states)

    def __len__(self):
        return len(self.states)

    def __getitem__(self, i):
        return self.states[i]

    @property
    def times(self):
        return np.array([s.time for s in self.states])

    def column(self, name):
        return np.array([getattr(s, name) for s in self.states])


def evolve(state: FlowState, dt: float, steps: int, normalize: str = "none",
           max_substep: Optional[float] = None, blowup_area: float = 1e-6) -> Trajectory:
    """Advance by ``steps`` output intervals of length dt; the trajectory includes the initial state.

    With normalize="fixed_area" the curve is rescaled about its area centroid after every
    substep.  Loss of convexity or collapse of the area below blowup_area times the initial
    area truncates the trajectory with a status message.
    """
    if normalize not in ("none", "fixed_area"):
        raise DomainError(f"normalize must be 'none' or 'fixed_area', got {normalize!r}")
    if dt <= 0 or steps < 0:
        raise DomainError("need dt > 0 and steps >= 0")
    h = np.array(state.support, dtype=float)
    area0 = _area(h)
    t = state.time
    out = [state]
    total = 0
    n_curve = state.curve.shape[0] if state.curve is not None else None
    for _ in range(steps):
        t_next = t + dt
        try:
            while t < t_next - 1e-15 * max(1.0, abs(t_next)):
                sub = min(stable_dt(h), t_next - t)
                if max_substep:
                    sub = min(sub, max_substep)
                h = _dealias(_imex_step(h, sub))
                if normalize == "fixed_area":
                    h = _rescale(h, area0)
                t += sub
                total += 1
                if _area(h) < blowup_area * area0:
                    return Trajectory(out, f"stopped near blow-up at t={t:.17g}", total)
            t = t_next
            out.append(FlowState.from_support(h, t, n_curve))
        except GeometryError as exc:
            return Trajectory(out, f"stopped at t={t:.17g}: {exc}", total)
    return Trajectory(out, "ok", total)


def pde_residual(a: FlowState, b: FlowState, band: Optional[int] = None) -> float:
    """max |(nu_b - nu_a)/dt - (4/3) nu^2 - (1/3) nu_ss| at fixed normal angle, right side at the midpoint.

    Only wavenumbers below ``band`` (default N/6) are compared: the top of the spectrum is
    shaped by the 2/3-rule filter rather than by the equation.
    """
    dt = b.time - a.time
    nu_a, nu_b = a.nu_grid(), b.nu_grid()
    h = 0.5 * (np.asarray(a.support) + np.asarray(b.support))
    r, nu = _affine_from_support(h)
    w = r ** (-2.0 / 3.0)
    nu_ss = w * _diff(w * _diff(nu))
    rhs = 4.0 / 3.0 * nu ** 2 + nu_ss / 3.0
    spec = np.fft.rfft((nu_b - nu_a) / dt - rhs)
    spec[(band or h.size // 6):] = 0.0
    return float(np.max(np.abs(np.fft.irfft(spec, h.size))))


def circle_nu(chi0: float, t):
    """Affine curvature 3 / (3 chi0 - 4 t) of a shrinking circle, chi0 = 1/nu(0)."""
    return 3.0 / (3.0 * chi0 - 4.0 * np.asarray(t, dtype=float))


def ellipse_mu0_from_nu(nu0: float, c: float) -> float:
    """Elliptic radius of the ellipse of affine curvature nu0 and semi-focal distance c."""
    return 0.5 * math.asinh(2.0 * nu0 ** -1.5 / (c * c))


# ---------------------------------------------------------------- monotonicity experiment


@dataclass
class MonotonicityResult:
    times: np.ndarray
    delta: np.ndarray
    resonant: np.ndarray
    iso: np.ndarray
    trajectory: Trajectory = field(repr=False)

    @property
    def strictly_decreasing(self) -> bool:
        return bool(np.all(np.diff(self.delta) < 0.0))


def _delta_job(args):
    from .spectrum import delta_profile

    h, q, n_grid, seed = args
    d = FlowState.from_support(np.asarray(h)).domain()
    return delta_profile(d, 1, q, n_grid, seed).delta


def default_workers() -> int:
    env = os.environ.get("BILLIARD_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise DomainError(f"BILLIARD_WORKERS must be an integer, got {env!r}")
    return os.cpu_count() or 1


def resonant_magnitudes(state: FlowState, q: int, harmonics: int = 3, center=None):
    """|rho^(jq)| for j = 1..harmonics: Fourier magnitudes of the polar radius about the centroid."""
    h = np.asarray(state.support)
    c = _centroid(h) if center is None else np.asarray(center)
    pts = state.domain()
    n = 1024
    p = _grid(n)
    xy = np.stack([pts.x(p), pts.y(p)], axis=-1) - c
    ang = np.arctan2(xy[:, 1], xy[:, 0])
    rad = np.hypot(xy[:, 0], xy[:, 1])
    radius = PeriodicFunction.fit(ang, rad, max(harmonics * q + 4, 16))
    return np.array([math.hypot(*radius.coefficient(j * q)) for j in range(1, harmonics + 1)])


def nu_mode(state: FlowState, q: int) -> float:
    """Amplitude of the q-th Fourier mode of nu as a function of the normal angle."""
    return math.hypot(*PeriodicFunction.from_samples(state.nu_grid()).coefficient(q))


def monotonicity_experiment(q: int, epsilon: float, t_end: float, samples: int = 20, n: int = 128,
                            normalize: str = "fixed_area", n_grid: int = 32, seed: int = 0,
                            workers: Optional[int] = None) -> MonotonicityResult:
    """Evolve the polar graph 1 + epsilon cos(q phi) and record Delta_{1/q} along the way.

    Output times are t_end * i / samples for i = 0..samples.
    """
    if q <= 2:
        raise DomainError("q must exceed 2")
    if samples < 1 or t_end <= 0:
        raise DomainError("need samples >= 1 and t_end > 0")
    rho = PeriodicFunction(1.0, np.eye(q)[q - 1] * epsilon)
    start = FlowState.polar(rho, n)
    traj = evolve(start, t_end / samples, samples, normalize)
    jobs = [(s.support.tolist(), q, n_grid, seed) for s in traj.states]
    workers = default_workers() if workers is None else workers
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            deltas = list(pool.map(_delta_job, jobs))
    else:
        deltas = [_delta_job(j) for j in jobs]
    res = np.array([resonant_magnitudes(s, q) for s in traj.states])
    scale = epsilon if epsilon else 1.0
    return MonotonicityResult(traj.times, np.array(deltas), res / scale, traj.column("iso_ratio"), traj)
