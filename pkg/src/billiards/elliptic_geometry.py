"""Ellipses in elliptic polar coordinates, confocal caustics and action-angle charts.

Conventions
-----------
A point with elliptic coordinates (mu, phi) relative to an ellipse frame is
``center + R(theta) @ (c cosh(mu) cos(phi), c sinh(mu) sin(phi))``.  The boundary
is mu = mu0, traversed counterclockwise as phi increases.

A circle uses c = 0, and mu is then the logarithm of the radius, so that
``x = exp(mu) cos(phi)``.  This is the c -> 0 limit of ``c cosh(mu)`` and
keeps radial perturbations mu0 + eps*mu1 meaningful for circles.

The action-angle chart of a caustic is written in the same cosine frame:
theta = 0 and theta = pi sit at the major-axis vertices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy import optimize

from .errors import DomainError, NumericError
from .special_functions import (
    complete_E,
    complete_K,
    incomplete_E,
    incomplete_F,
    jacobi_am,
    rho_of_modulus,
)

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class EllipseParams:
    x0: float
    y0: float
    c: float
    mu0: float
    theta: float = 0.0

    def __post_init__(self):
        if self.c < 0.0:
            raise DomainError("semi-focal distance c must be non-negative")
        if self.c > 0.0 and self.mu0 <= 0.0:
            raise DomainError("elliptic radius mu0 must be positive")

    @classmethod
    def from_axes(cls, a, b, x0=0.0, y0=0.0, theta=0.0):
        if not (a >= b > 0.0):
            raise DomainError(f"need a >= b > 0, got a={a}, b={b}")
        if a == b:
            return cls.circle(a, x0, y0)
        c = math.sqrt((a - b) * (a + b))
        return cls(float(x0), float(y0), c, math.atanh(b / a), float(theta) % math.pi)

    @classmethod
    def circle(cls, radius, x0=0.0, y0=0.0):
        if radius <= 0.0:
            raise DomainError("radius must be positive")
        return cls(float(x0), float(y0), 0.0, math.log(radius), 0.0)

    @classmethod
    def from_eccentricity(cls, e0, a=1.0):
        return cls.from_axes(a, a * math.sqrt(1.0 - e0 * e0))

    @property
    def is_circle(self) -> bool:
        return self.c == 0.0

    @property
    def a(self) -> float:
        return math.exp(self.mu0) if self.is_circle else self.c * math.cosh(self.mu0)

    @property
    def b(self) -> float:
        return math.exp(self.mu0) if self.is_circle else self.c * math.sinh(self.mu0)

    @property
    def e0(self) -> float:
        return 0.0 if self.is_circle else 1.0 / math.cosh(self.mu0)

    @property
    def center(self) -> np.ndarray:
        return np.array([self.x0, self.y0])

    def rotation(self) -> np.ndarray:
        ct, st = math.cos(self.theta), math.sin(self.theta)
        return np.array([[ct, -st], [st, ct]])

    def to_local(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float) - self.center
        return p @ self.rotation()

    def to_global(self, local) -> np.ndarray:
        return np.asarray(local, dtype=float) @ self.rotation().T + self.center


def elliptic_to_cartesian(e: EllipseParams, mu, phi) -> np.ndarray:
    """Map elliptic polar coordinates to the plane; returns shape (..., 2)."""
    mu, phi = np.broadcast_arrays(np.asarray(mu, dtype=float), np.asarray(phi, dtype=float))
    if e.is_circle:
        r = np.exp(mu)
        local = np.stack([r * np.cos(phi), r * np.sin(phi)], axis=-1)
    else:
        if np.any(mu < 0.0):
            raise DomainError("mu must be non-negative")
        local = np.stack([e.c * np.cosh(mu) * np.cos(phi), e.c * np.sinh(mu) * np.sin(phi)], axis=-1)
    return e.to_global(local)


def cartesian_to_elliptic(e: EllipseParams, points):
    """Inverse of elliptic_to_cartesian, returning (mu, phi) arrays.

    cosh(mu) is half the sum of focal distances over c, which stays
    well conditioned away from the focal segment.
    """
    local = e.to_local(points)
    x, y = local[..., 0], local[..., 1]
    if e.is_circle:
        return np.log(np.hypot(x, y)), np.arctan2(y, x)
    d1 = np.hypot(x - e.c, y)
    d2 = np.hypot(x + e.c, y)
    ch = np.maximum((d1 + d2) / (2.0 * e.c), 1.0)
    mu = np.arccosh(ch)
    sh = np.sinh(mu)
    with np.errstate(divide="ignore", invalid="ignore"):
        ys = np.where(sh > 0.0, y / sh, 0.0)
    return mu, np.arctan2(ys, x / ch)


@dataclass(frozen=True)
class CausticParams:
    lam: float
    k_lambda: float
    delta_lambda: float
    omega_lambda: float
    rho_k: float
    a: float = field(default=1.0, repr=False)
    b: float = field(default=1.0, repr=False)

    @property
    def K(self) -> float:
        return complete_K(self.k_lambda)

    @property
    def semi_axes(self):
        """Semi-axes (sqrt(a^2 - lam^2), sqrt(b^2 - lam^2)) of the confocal caustic ellipse."""
        return (math.sqrt((self.a - self.lam) * (self.a + self.lam)),
                math.sqrt((self.b - self.lam) * (self.b + self.lam)))


def _caustic_modulus(a, b, lam):
    return math.sqrt((a - b) * (a + b) / ((a - lam) * (a + lam)))


def caustic_from_lambda(e: EllipseParams, lam: float) -> CausticParams:
    a, b = e.a, e.b
    if not (0.0 < lam < b):
        raise DomainError(f"caustic parameter must lie in (0, b={b}), got {lam}")
    k = 0.0 if e.is_circle else _caustic_modulus(a, b, lam)
    f = incomplete_F(math.asin(lam / b), k)
    omega = f / (2.0 * complete_K(k))
    return CausticParams(lam, k, 2.0 * f, omega, rho_of_modulus(k), a, b)


def rotation_number(e: EllipseParams, lam: float) -> float:
    return caustic_from_lambda(e, lam).omega_lambda


def lambda_from_rotation(e: EllipseParams, p: int, q: int) -> CausticParams:
    """Caustic with rotation number p/q; omega is increasing in lambda on (0, b)."""
    if q <= 0 or not (0 < Fraction(p, q) < Fraction(1, 2)):
        raise DomainError(f"rotation number must lie in (0, 1/2), got {p}/{q}")
    target = p / q
    b = e.b
    if e.is_circle:
        return caustic_from_lambda(e, b * math.sin(math.pi * target))
    # coarse bisection to an interior bracket, then Brent; the bracket ends are kept
    # apart from 0 and b where the chart modulus degenerates
    f = lambda x: rotation_number(e, x) - target
    lo, hi = 0.0, b
    while hi - lo > 1e-13 * b:
        if lo > 0.0 and hi < b and hi - lo < 1e-3 * b:
            lam = optimize.brentq(f, lo, hi, xtol=1e-16 * b, rtol=4.0 * np.finfo(float).eps, maxiter=200)
            break
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            lam = mid
            break
        if f(mid) < 0.0:
            lo = mid
        else:
            hi = mid
    else:
        lam = 0.5 * (lo + hi)
    caustic = caustic_from_lambda(e, lam)
    if abs(caustic.omega_lambda - target) > 1e-12:
        # omega approaches 1/2 only logarithmically as lambda -> b
        raise NumericError("rotation number not resolvable in double precision",
                           target=target, reached=caustic.omega_lambda, lam=lam)
    return caustic


def _u_shift(caustic: CausticParams, theta):
    kk = complete_K(caustic.k_lambda)
    return 4.0 * kk * np.asarray(theta, dtype=float) / TWO_PI + kk


def phi_of_theta(caustic: CausticParams, theta):
    """Elliptic angle phi of the action-angle point S_lambda(theta)."""
    if caustic.k_lambda == 0.0:
        return np.asarray(theta, dtype=float) * 1.0
    return jacobi_am(_u_shift(caustic, theta), caustic.k_lambda) - np.pi / 2.0


def theta_of_phi(caustic: CausticParams, phi):
    """Inverse chart: theta = (2 pi / 4K) (F(phi + pi/2) - K)."""
    if caustic.k_lambda == 0.0:
        return np.asarray(phi, dtype=float) * 1.0
    kk = complete_K(caustic.k_lambda)
    return TWO_PI / (4.0 * kk) * (incomplete_F(np.asarray(phi) + np.pi / 2.0, caustic.k_lambda) - kk)


def dtheta_dphi(caustic: CausticParams, phi):
    k = caustic.k_lambda
    return TWO_PI / (4.0 * complete_K(k)) / np.sqrt(1.0 - (k * np.cos(phi)) ** 2)


def action_angle_boundary(e: EllipseParams, caustic: CausticParams, theta):
    """Boundary point S_lambda(theta) as (mu0, phi)."""
    return e.mu0, phi_of_theta(caustic, theta)


def speed(e: EllipseParams, phi):
    """|d gamma / d phi| = a sqrt(1 - e0^2 cos^2 phi)."""
    return e.a * np.sqrt(1.0 - (e.e0 * np.cos(phi)) ** 2)


def arc_length(e: EllipseParams, phi):
    """s(phi) = a (E(phi + pi/2; e0) - E(e0)), measured from the vertex phi = 0."""
    if e.is_circle:
        return e.a * np.asarray(phi, dtype=float)
    return e.a * (incomplete_E(np.asarray(phi) + np.pi / 2.0, e.e0) - complete_E(e.e0))


def perimeter(e: EllipseParams) -> float:
    return 4.0 * e.a * complete_E(e.e0)


def radius_of_curvature(e: EllipseParams, phi):
    a, b = e.a, e.b
    return (a * a * np.sin(phi) ** 2 + b * b * np.cos(phi) ** 2) ** 1.5 / (a * b)


def lazutkin_constant(e: EllipseParams) -> float:
    """C = integral of rho^(-2/3) ds over the boundary."""
    return (e.a * e.b) ** (2.0 / 3.0) / e.a * 4.0 * complete_K(e.e0)


def lazutkin_x(e: EllipseParams, phi):
    """Lazutkin coordinate, normalized so that lazutkin_x(2 pi) = 1."""
    if e.is_circle:
        return np.asarray(phi, dtype=float) / TWO_PI
    kk = complete_K(e.e0)
    return (incomplete_F(np.asarray(phi) + np.pi / 2.0, e.e0) - kk) / (4.0 * kk)


def caustic_tangency(caustic: CausticParams, e: EllipseParams, point, direction) -> float:
    """| |d| - H(n) | for the line through point along direction, H the caustic support function.

    Zero exactly when the line touches the confocal caustic.
    """
    ax, bx = caustic.semi_axes
    p = e.to_local(point)
    v = np.asarray(direction, dtype=float) @ e.rotation()
    n = np.array([-v[1], v[0]]) / math.hypot(v[0], v[1])
    d = abs(float(n @ p))
    return abs(d - math.hypot(ax * n[0], bx * n[1]))


class PeriodicFunction:
    """Finite real Fourier series f = a0 + sum a_j cos(j phi) + b_j sin(j phi)."""

    __slots__ = ("a0", "a", "b")

    def __init__(self, a0=0.0, a=(), b=()):
        a = np.atleast_1d(np.asarray(a, dtype=float))
        b = np.atleast_1d(np.asarray(b, dtype=float))
        n = max(a.size, b.size)
        self.a0 = float(a0)
        self.a = np.pad(a, (0, n - a.size))
        self.b = np.pad(b, (0, n - b.size))

    @property
    def degree(self) -> int:
        return self.a.size

    @classmethod
    def constant(cls, value):
        return cls(value)

    @classmethod
    def mode(cls, j, amplitude=1.0, kind="cos"):
        coef = np.zeros(j)
        coef[j - 1] = amplitude
        return cls(0.0, coef, np.zeros(j)) if kind == "cos" else cls(0.0, np.zeros(j), coef)

    @classmethod
    def from_samples(cls, values, degree=None):
        """Trigonometric interpolant of values at phi_i = 2 pi i / n."""
        values = np.asarray(values, dtype=float)
        n = values.size
        c = np.fft.rfft(values) / n
        jmax = (n - 1) // 2 if degree is None else min(degree, (n - 1) // 2)
        return cls(c[0].real, 2.0 * c[1:jmax + 1].real, -2.0 * c[1:jmax + 1].imag)

    @classmethod
    def fit(cls, phi, values, degree):
        """Least-squares trigonometric fit on arbitrary nodes (needs >= 4*degree + 1 nodes)."""
        phi = np.asarray(phi, dtype=float)
        if phi.size < 4 * degree + 1:
            raise DomainError("trigonometric fit needs at least 4*degree + 1 nodes")
        j = np.arange(1, degree + 1)
        design = np.hstack([np.ones((phi.size, 1)), np.cos(np.outer(phi, j)), np.sin(np.outer(phi, j))])
        coef = np.linalg.lstsq(design, np.asarray(values, dtype=float), rcond=None)[0]
        return cls(coef[0], coef[1:degree + 1], coef[degree + 1:])

    @classmethod
    def from_callable(cls, func, degree, n=None):
        n = n or max(4 * degree + 1, 2 * degree + 2)
        phi = TWO_PI * np.arange(n) / n
        return cls.from_samples(func(phi), degree)

    def __call__(self, phi):
        phi = np.asarray(phi, dtype=float)
        if self.degree == 0:
            return np.full(phi.shape, self.a0) if phi.ndim else self.a0
        j = np.arange(1, self.degree + 1)
        arg = np.multiply.outer(phi, j)
        out = self.a0 + np.cos(arg) @ self.a + np.sin(arg) @ self.b
        return float(out) if out.ndim == 0 else out

    def derivative(self, order=1):
        j = np.arange(1, self.degree + 1, dtype=float)
        a, b = self.a.copy(), self.b.copy()
        for _ in range(order):
            a, b = j * b, -j * a
        return PeriodicFunction(0.0, a, b)

    def coefficient(self, j):
        """(a_j, b_j) with a_0 returned as (a0, 0)."""
        if j == 0:
            return self.a0, 0.0
        if j > self.degree:
            return 0.0, 0.0
        return float(self.a[j - 1]), float(self.b[j - 1])

    def c1_norm(self, n=4096):
        phi = TWO_PI * np.arange(n) / n
        return float(np.max(np.abs(self(phi)) + np.abs(self.derivative()(phi))))

    def _aligned(self, other):
        n = max(self.degree, other.degree)
        pad = lambda v: np.pad(v, (0, n - v.size))
        return pad(self.a), pad(self.b), pad(other.a), pad(other.b)

    def __add__(self, other):
        if not isinstance(other, PeriodicFunction):
            return PeriodicFunction(self.a0 + other, self.a, self.b)
        a1, b1, a2, b2 = self._aligned(other)
        return PeriodicFunction(self.a0 + other.a0, a1 + a2, b1 + b2)

    __radd__ = __add__

    def __neg__(self):
        return PeriodicFunction(-self.a0, -self.a, -self.b)

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, scalar):
        return PeriodicFunction(self.a0 * scalar, self.a * scalar, self.b * scalar)

    __rmul__ = __mul__

    def __eq__(self, other):
        if not isinstance(other, PeriodicFunction):
            return NotImplemented
        a1, b1, a2, b2 = self._aligned(other)
        return self.a0 == other.a0 and np.array_equal(a1, a2) and np.array_equal(b1, b2)

    def __repr__(self):
        return f"PeriodicFunction(a0={self.a0!r}, degree={self.degree})"

    def to_dict(self):
        return {"a0": self.a0, "cos": self.a.tolist(), "sin": self.b.tolist()}

    @classmethod
    def from_dict(cls, data):
        return cls(data.get("a0", 0.0), data.get("cos", ()), data.get("sin", ()))

    def __getstate__(self):
        return self.a0, self.a, self.b

    def __setstate__(self, state):
        self.a0, self.a, self.b = state
