"""Dynamical modes, elliptic-motion generators and the weighted L^2 geometry around an ellipse.

Boundary perturbations are functions of the elliptic angle phi.  The weight of the inner
product is w(phi)^2 with w = 1 - e0^2 cos^2 phi.  Integrals against a mode c_q or s_q are done
in the action-angle variable of the 1/q caustic, where they become plain Fourier
coefficients and the trapezoid rule converges geometrically.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Iterable, NamedTuple, Optional

import numpy as np
from scipy import integrate

from .elliptic_geometry import (
    TWO_PI,
    CausticParams,
    EllipseParams,
    PeriodicFunction,
    cartesian_to_elliptic,
    elliptic_to_cartesian,
    lambda_from_rotation,
    phi_of_theta,
    theta_of_phi,
)
from .errors import DomainError, GeometryError, NumericError
from .special_functions import complete_K, incomplete_F, jacobi_am, rho_of_modulus

GENERATORS = ("homothety", "trans1", "trans2", "rotation", "hyprotation")
MODES = ("cos", "sin")
QUAD_TOL = 1e-10
_TRAP_TOL = 1e-14
_TRAP_MAX = 2 ** 18


def _check_e0(e0):
    e0 = float(e0)
    if not (0.0 <= e0 < 1.0):
        raise DomainError(f"eccentricity must lie in [0, 1), got {e0}")
    return e0


def weight(phi, e0):
    """w(phi) = 1 - e0^2 cos^2(phi); the inner-product weight is w^2."""
    return 1.0 - (e0 * np.cos(phi)) ** 2


@lru_cache(maxsize=4096)
def mode_caustic(e0: float, q: int) -> CausticParams:
    """The 1/q caustic of the unit-major-axis ellipse of eccentricity e0 (k_q is scale free)."""
    if q < 3:
        raise DomainError(f"modes need q >= 3, got {q}")
    return lambda_from_rotation(EllipseParams.from_eccentricity(_check_e0(e0)), 1, q)


@dataclass(frozen=True)
class BasisFunction:
    kind: str
    e0: float
    q: int = 0
    caustic: Optional[CausticParams] = field(default=None, repr=False, compare=False)
    normalization: float = 1.0

    def __post_init__(self):
        _check_e0(self.e0)
        if self.kind in MODES:
            if self.q < 3:
                raise DomainError(f"modes need q >= 3, got {self.q}")
            if self.caustic is None:
                object.__setattr__(self, "caustic", mode_caustic(float(self.e0), int(self.q)))
        elif self.kind not in GENERATORS:
            raise DomainError(f"unknown basis kind {self.kind!r}")

    @property
    def is_mode(self) -> bool:
        return self.kind in MODES

    @property
    def k(self) -> float:
        return self.caustic.k_lambda if self.is_mode else self.e0

    def __call__(self, phi):
        return eval_mode(self, phi)

    def scaled(self, factor) -> "BasisFunction":
        return BasisFunction(self.kind, self.e0, self.q, self.caustic, self.normalization * factor)

    def normalized(self) -> "BasisFunction":
        """Unit vector in the weighted space."""
        return BasisFunction(self.kind, self.e0, self.q, self.caustic, 1.0 / raw_weighted_norm(self.kind, self.e0, self.q))


def generator(kind: str, e0: float) -> BasisFunction:
    return BasisFunction(kind, float(e0))


def mode(kind: str, q: int, e0: float) -> BasisFunction:
    return BasisFunction(kind, float(e0), int(q))


def eval_mode(b: BasisFunction, phi):
    phi = np.asarray(phi, dtype=float)
    if b.is_mode:
        k = b.caustic.k_lambda
        theta = theta_of_phi(b.caustic, phi)
        trig = np.cos if b.kind == "cos" else np.sin
        out = trig(b.q * theta) / np.sqrt(1.0 - (k * np.cos(phi)) ** 2)
    else:
        numer = {
            "homothety": lambda p: np.ones_like(p),
            "trans1": np.cos,
            "trans2": np.sin,
            "rotation": lambda p: np.sin(2.0 * p),
            "hyprotation": lambda p: np.cos(2.0 * p),
        }[b.kind]
        out = numer(phi) / weight(phi, b.e0)
    out = b.normalization * out
    return float(out) if out.ndim == 0 else out


# index k of the normalized family: 0..4 are the generators, 2j is c_j and 2j - 1 is s_j
_LOW = ("homothety", "trans2", "trans1", "rotation", "hyprotation")


def basis_element(index: int, e0: float) -> BasisFunction:
    if index < 0:
        raise DomainError("basis index must be non-negative")
    if index < 5:
        return generator(_LOW[index], e0).normalized()
    if index % 2:
        return mode("sin", (index + 1) // 2, e0).normalized()
    return mode("cos", index // 2, e0).normalized()


def basis_label(index: int) -> str:
    if index < 5:
        return _LOW[index]
    return f"s{(index + 1) // 2}" if index % 2 else f"c{index // 2}"


# ---------------------------------------------------------------- quadrature


def _trapezoid(func: Callable, n0=64, tol=_TRAP_TOL, nmax=_TRAP_MAX):
    """Periodic trapezoid rule on [0, 2 pi) with node doubling until successive values agree."""
    n = n0
    total = np.sum(func(TWO_PI * np.arange(n) / n), axis=-1)
    value = TWO_PI * total / n
    while n < nmax:
        odd = TWO_PI * (np.arange(n) + 0.5) / n
        total = total + np.sum(func(odd), axis=-1)
        n *= 2
        new = TWO_PI * total / n
        if np.all(np.abs(new - value) <= tol * np.maximum(1.0, np.abs(new))):
            return new
        value = new
    raise NumericError("periodic trapezoid rule did not converge", nodes=n, change=float(np.max(np.abs(new - value))))


def _theta_integral(f: Callable, b: BasisFunction, e0: Optional[float] = None):
    """int f(phi) b(phi) W dphi written as (4K/2pi) int f(phi(theta)) trig(q theta) W dtheta.

    W is the weight of eccentricity e0, or 1 when e0 is None.
    """
    caustic = b.caustic
    trig = np.cos if b.kind == "cos" else np.sin
    scale = 4.0 * caustic.K / TWO_PI if caustic.k_lambda > 0.0 else 1.0

    def integrand(theta):
        phi = phi_of_theta(caustic, theta)
        vals = np.asarray(f(phi), dtype=float) * trig(b.q * theta)
        if e0 is not None:
            vals = vals * weight(phi, e0) ** 2
        return vals

    return b.normalization * scale * _trapezoid(integrand, n0=max(64, 1 << int(math.ceil(math.log2(4 * b.q + 8)))))


def _degree_hint(*funcs):
    q = 2
    for f in funcs:
        if isinstance(f, BasisFunction) and f.is_mode:
            q = max(q, f.q)
        elif isinstance(f, PeriodicFunction):
            q = max(q, f.degree)
    return q


def weighted_inner(f, g, e0: float, weighted: bool = True, method: str = "quad") -> float:
    """<f, g> = int_0^{2 pi} f g (1 - e0^2 cos^2 phi)^2 dphi, or the plain L^2 product.

    ``method="quad"`` is adaptive Gauss-Kronrod at relative tolerance 1e-10 on panels
    sized to the oscillation; ``method="spectral"`` uses the action-angle substitution when
    either factor is a mode and the doubling trapezoid rule otherwise.
    """
    e0 = _check_e0(e0)
    if method == "spectral":
        if isinstance(g, BasisFunction) and g.is_mode:
            return float(_theta_integral(f, g, e0 if weighted else None))
        if isinstance(f, BasisFunction) and f.is_mode:
            return weighted_inner(g, f, e0, weighted, method)
        return _plain(f, g, e0, weighted)
    if method != "quad":
        raise DomainError(f"unknown quadrature method {method!r}")
    panels = max(8, 2 * _degree_hint(f, g))
    edges = np.linspace(0.0, TWO_PI, panels + 1)

    def integrand(phi):
        out = f(phi) * g(phi)
        return out * weight(phi, e0) ** 2 if weighted else out

    total, err = 0.0, 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            for lo, hi in zip(edges[:-1], edges[1:]):
                val, est = integrate.quad(integrand, lo, hi, epsabs=QUAD_TOL * 1e-3, epsrel=QUAD_TOL, limit=200)
                total += val
                err += est
        except integrate.IntegrationWarning as exc:
            raise NumericError(f"adaptive quadrature failed: {exc}") from exc
    return total


def _plain(f, g, e0, weighted):
    def integrand(phi):
        out = np.asarray(f(phi), dtype=float) * np.asarray(g(phi), dtype=float)
        return out * weight(phi, e0) ** 2 if weighted else out

    n0 = max(64, 1 << int(math.ceil(math.log2(4 * _degree_hint(f, g) + 8))))
    return float(_trapezoid(integrand, n0=n0))


def inner(f, g, method: str = "quad") -> float:
    """Unweighted L^2 product on the circle."""
    return weighted_inner(f, g, 0.0, weighted=False, method=method)


@lru_cache(maxsize=4096)
def raw_weighted_norm(kind: str, e0: float, q: int = 0) -> float:
    if kind == "homothety":
        return math.sqrt(TWO_PI)
    if kind in GENERATORS:
        return math.sqrt(math.pi)
    b = mode(kind, q, e0)
    return math.sqrt(weighted_inner(b, b, e0, method="spectral"))


def norm_bounds(e0: float):
    """Uniform bounds (1 - e0^2)^2 2K(e0) <= ||c_q||^2 <= 2K(k_3)/sqrt(1 - k_3^2)."""
    e0 = _check_e0(e0)
    k3 = mode_caustic(e0, 3).k_lambda
    return (1.0 - e0 * e0) ** 2 * 2.0 * complete_K(e0), 2.0 * complete_K(k3) / math.sqrt(1.0 - k3 * k3)


def gram_matrix(e0: float, size: int, nodes: Optional[int] = None) -> np.ndarray:
    """Weighted Gram matrix of the normalized family e_0 .. e_{size-1}."""
    e0 = _check_e0(e0)
    qmax = max(3, size // 2 + 1)
    n = nodes or max(512, 1 << int(math.ceil(math.log2(16 * qmax))))

    def build(n):
        phi = TWO_PI * np.arange(n) / n
        vals = np.array([basis_element(k, e0)(phi) for k in range(size)])
        return (vals * weight(phi, e0) ** 2) @ vals.T * (TWO_PI / n)

    g, g2 = build(n), build(2 * n)
    if np.max(np.abs(g2 - g)) > 1e-12:
        raise NumericError("Gram matrix quadrature not converged", nodes=2 * n, change=float(np.max(np.abs(g2 - g))))
    return g2


# ---------------------------------------------------------------- integrability


def _as_callable(mu):
    return mu if callable(mu) else PeriodicFunction(*mu)


def integrability_residuals(e: EllipseParams, mu1, q_range: Iterable[int]):
    """(q, <mu1, c_q>, <mu1, s_q>) in plain L^2; all vanish for first-order integrable deformations."""
    mu1 = _as_callable(mu1)
    out = []
    for q in q_range:
        c, s = mode("cos", q, e.e0), mode("sin", q, e.e0)
        out.append((int(q), float(_theta_integral(mu1, c)), float(_theta_integral(mu1, s))))
    return out


# ---------------------------------------------------------------- correlation matrix


@dataclass(frozen=True)
class CorrelationMatrix:
    """Rows 2q / 2q+1 are cos(q phi) / sin(q phi); columns 2j / 2j+1 are c_j / s_j (j >= 3).

    Columns with j < 3 are not defined and hold zeros.  ``gram`` is the weighted Gram
    matrix of the normalized family e_0 .. e_{2 q_max}.
    """

    q_max: int
    e0: float
    entries: np.ndarray
    gram: np.ndarray = field(repr=False)
    weight_convention: str = "L2/phi"

    def diagonal(self, j: int) -> float:
        return float(self.entries[j, j])

    def offdiagonal(self, lo: int = 6, hi: Optional[int] = None, floor: float = 1e-13):
        """(row, col, |entry|) for lo <= i != h <= hi, dropping entries that vanish by symmetry."""
        hi = 2 * self.q_max + 1 if hi is None else hi
        rows = []
        scale = np.max(np.abs(self.entries))
        for i in range(lo, hi + 1):
            for h in range(lo, hi + 1):
                v = abs(self.entries[i, h])
                if i != h and v > floor * scale:
                    rows.append((i, h, v))
        return rows


def boundary_angle(phi, e0: float):
    """Action-angle variable of the boundary itself (the k -> e0 limit of the mode charts)."""
    if e0 == 0.0:
        return np.asarray(phi, dtype=float) * 1.0
    kk = complete_K(e0)
    return TWO_PI / (4.0 * kk) * (incomplete_F(np.asarray(phi, dtype=float) + np.pi / 2.0, e0) - kk)


def correlation_matrix(e0: float, q_max: int, rows: str = "phi") -> CorrelationMatrix:
    """Plain-L^2 correlations of trigonometric rows against the modes.

    ``rows="phi"`` takes cos(q phi), sin(q phi) in the elliptic angle.  ``rows="xi"`` takes
    cos(q xi), sin(q xi) with xi the boundary action-angle variable; the two coincide at e0 = 0.
    """
    if q_max < 6:
        raise DomainError(f"correlation matrix needs q_max >= 6, got {q_max}")
    if rows not in ("phi", "xi"):
        raise DomainError(f"unknown row convention {rows!r}")
    e0 = _check_e0(e0)
    size = 2 * q_max + 2
    entries = np.zeros((size, size))
    qs = np.arange(q_max + 1)
    for j in range(3, q_max + 1):
        caustic = mode_caustic(e0, j)
        scale = 4.0 * caustic.K / TWO_PI if caustic.k_lambda > 0.0 else 1.0

        def block(n):
            theta = TWO_PI * np.arange(n) / n
            phi = phi_of_theta(caustic, theta)
            arg = np.outer(qs, phi if rows == "phi" else boundary_angle(phi, e0))
            trig = np.empty((size, n))
            trig[0::2], trig[1::2] = np.cos(arg), np.sin(arg)
            cols = np.stack([np.cos(j * theta), np.sin(j * theta)], axis=1)
            return scale * trig @ cols * (TWO_PI / n)

        n = max(256, 1 << int(math.ceil(math.log2(8 * (q_max + j)))))
        b1, b2 = block(n), block(2 * n)
        if np.max(np.abs(b2 - b1)) > 1e-12:
            raise NumericError("correlation quadrature not converged", j=j)
        entries[:, 2 * j:2 * j + 2] = b2
    return CorrelationMatrix(q_max, e0, entries, gram_matrix(e0, 2 * q_max + 1), f"L2/{rows}")


class Inversion(NamedTuple):
    D: np.ndarray
    A: np.ndarray
    B: np.ndarray
    offdiagonal_mass: float
    condition: float
    decay_slopes: np.ndarray


def truncated_inversion(m: CorrelationMatrix, q0: int, size: Optional[int] = None):
    """Solve D A = B for the truncation of the Gram system to indices 2 q0 < k < size.

    Returns (D, diagnostics): D has one row per j <= 2 q0 and one column per k.
    """
    if q0 < 3:
        raise DomainError("q0 must be at least 3")
    n = m.gram.shape[0] if size is None else size
    if n > m.gram.shape[0] or n <= 2 * q0 + 1:
        raise DomainError(f"truncation size must lie in ({2 * q0 + 1}, {m.gram.shape[0]}]")
    lo = 2 * q0 + 1
    A = m.gram[lo:n, lo:n]
    B = m.gram[:lo, lo:n]
    cond = float(np.linalg.cond(A))
    if not np.isfinite(cond) or cond > 1e14:
        raise NumericError("truncated Gram block is singular", condition=cond)
    D = np.linalg.solve(A.T, B.T).T
    off = A - np.diag(np.diag(A))
    slopes = np.array([_decay_slope(np.arange(lo, n), row) for row in D])
    return D, {"offdiagonal_mass": float(np.sqrt(np.sum(off ** 2))), "condition": cond,
               "decay_slopes": slopes, "A": A, "B": B}


def _decay_slope(k, row, floor=1e-15):
    keep = np.abs(row) > floor
    if np.count_nonzero(keep) < 3:
        return -math.inf
    return float(np.polyfit(k[keep], np.log(np.abs(row[keep])), 1)[0])


def loglinear_fit(x, y):
    """Least-squares line through (x, y); returns (slope, intercept, R^2)."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    slope, icpt = np.polyfit(x, y, 1)
    resid = y - (slope * x + icpt)
    ss = np.sum((y - y.mean()) ** 2)
    return float(slope), float(icpt), float(1.0 - np.sum(resid ** 2) / ss) if ss > 0 else 1.0


def decay_fit(m: CorrelationMatrix, lo: int = 6, hi: int = 40, envelope: bool = True):
    """Fit log|a_{i,h}| = alpha - rho |i - h| over the off-diagonal entries.

    With ``envelope`` the fit uses the largest entry at each offset, which is what an upper
    bound of the form C exp(-rho |i - h|) constrains; otherwise every entry is a data point.
    Returns (rho, alpha, R^2, number of points).
    """
    rows = m.offdiagonal(lo, hi)
    off = np.array([abs(i - h) for i, h, _ in rows], dtype=float)
    logv = np.log([v for _, _, v in rows])
    if envelope:
        keys = np.unique(off)
        logv = np.array([logv[off == d].max() for d in keys])
        off = keys
    slope, icpt, r2 = loglinear_fit(off, logv)
    return -slope, icpt, r2, off.size


# ---------------------------------------------------------------- analyticity strips


def strip_integral(x: float, T: float) -> float:
    """I(x, T) = int_0^T (1 - x^2 cosh^2 t)^(-1/2) dt, for x cosh T <= 1."""
    if x == 0.0:
        return float(T)
    ch = math.cosh(T)
    if x * ch > 1.0 + 1e-15:
        raise DomainError("strip integral needs x cosh T <= 1")
    gap = max(0.0, (1.0 - x * ch) * (1.0 + x * ch))

    # t = T - u^2 removes the square-root endpoint singularity; the denominator below is
    # 1 - x^2 cosh^2 t written without cancellation
    def integrand(u):
        t = T - u * u
        diff = 2.0 * np.sinh(0.5 * (T + t)) * np.sinh(0.5 * u * u)
        den = gap + x * x * diff * (ch + np.cosh(t))
        return np.where(u > 0.0, 2.0 * u / np.sqrt(np.where(den > 0.0, den, 1.0)),
                        0.0 if gap > 0.0 else 2.0 / math.sqrt(x * x * math.sinh(2.0 * T)))

    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, _ = integrate.quad(integrand, 0.0, math.sqrt(T), epsabs=1e-15, epsrel=1e-13, limit=400)
        except integrate.IntegrationWarning as exc:
            raise NumericError(f"strip integral failed: {exc}") from exc
    return float(val)


def endpoint_identity(y: float) -> float:
    """I(y, arcosh(1/y)); equals K(sqrt(1 - y^2))."""
    return strip_integral(y, math.acosh(1.0 / y))


def kappa(k: float) -> float:
    """kappa(k) = pi (1/sqrt(1-k^2) - 1/sqrt(1-k^2/2)) / (4 K(k))."""
    return math.pi * (1.0 / math.sqrt(1.0 - k * k) - 1.0 / math.sqrt(1.0 - 0.5 * k * k)) / (4.0 * complete_K(k))


class Widths(NamedTuple):
    rho_kj: float
    sigma_m: float
    sigma_inf: float
    kappa_m: float
    kappa_star: float

    @property
    def margin_m(self) -> float:
        """sigma_m - rho kappa_m - rho, positive when the strip inequality holds."""
        return self.sigma_m - self.rho_kj * self.kappa_m - self.rho_kj

    @property
    def margin_inf(self) -> float:
        return self.sigma_inf - self.rho_kj * self.kappa_star - self.rho_kj


def analyticity_widths(e0: float, j: int, m: int) -> Widths:
    e0 = _check_e0(e0)
    if not (3 <= j < m):
        raise DomainError(f"need 3 <= j < m, got j={j}, m={m}")
    if e0 == 0.0:
        return Widths(math.inf, math.inf, math.inf, 0.0, 0.0)
    kj, km = mode_caustic(e0, j).k_lambda, mode_caustic(e0, m).k_lambda
    rho = rho_of_modulus(kj)
    sigma_m = TWO_PI / (4.0 * complete_K(km)) * strip_integral(km, rho)
    sigma_inf = TWO_PI / (4.0 * complete_K(e0)) * strip_integral(e0, rho)
    return Widths(rho, sigma_m, sigma_inf, kappa(km), kappa(e0))


# ---------------------------------------------------------------- deviation of the charts


def lambda_q_bound(e: EllipseParams, q: int):
    """(lambda_q, b sin(pi / (q sqrt(1 - k_3^2))), threshold 2 / sqrt(1 - k_3^2))."""
    k3 = lambda_from_rotation(e, 1, 3).k_lambda
    root = math.sqrt(1.0 - k3 * k3)
    lam = lambda_from_rotation(e, 1, q).lam
    arg = math.pi / (q * root)
    bound = e.a * math.sqrt(1.0 - e.e0 ** 2) * (math.sin(arg) if arg < math.pi / 2 else 1.0)
    return lam, bound, 2.0 / root


def deviation_check(e: EllipseParams, q_range: Iterable[int], nodes: int = 2048):
    """(q, q^2 (k_q - e0), q^2 sup |xi_q(xi_inf) - xi_inf|) with xi the action-angle charts."""
    e0 = e.e0
    xi = TWO_PI * np.arange(nodes) / nodes
    if e0 > 0.0:
        k0 = complete_K(e0)
        phi_inf = jacobi_am(4.0 * k0 * xi / TWO_PI + k0, e0) - math.pi / 2.0
    out = []
    for q in q_range:
        if e0 == 0.0:
            out.append((int(q), 0.0, 0.0))
            continue
        caustic = lambda_from_rotation(e, 1, q)
        kq = caustic.k_lambda
        dev = np.max(np.abs(theta_of_phi(caustic, phi_inf) - xi))
        out.append((int(q), q * q * (kq - e0), q * q * float(dev)))
    return out


# ---------------------------------------------------------------- elliptic motions and fitting


def series(f: Callable, tol: float = 1e-15, max_degree: int = 4096) -> PeriodicFunction:
    """Truncated Fourier series of a smooth periodic callable, degree doubled until the tail is below tol."""
    degree = 16
    while True:
        p = PeriodicFunction.from_callable(f, degree, n=4 * degree)
        tail = np.max(np.abs(np.concatenate([p.a[degree // 2:], p.b[degree // 2:]])))
        if tail < tol or degree >= max_degree:
            keep = np.nonzero((np.abs(p.a) > tol * 1e-2) | (np.abs(p.b) > tol * 1e-2))[0]
            n = keep[-1] + 1 if keep.size else 0
            return PeriodicFunction(p.a0, p.a[:n], p.b[:n])
        degree *= 2


_COEFF_KINDS = ("homothety", "trans1", "trans2", "hyprotation", "rotation")  # a0, a1, b1, a2, b2


@dataclass(frozen=True)
class Projection:
    """Raw-generator coefficients (a0, a1, b1, a2, b2): mu_V = a0 e_h + a1 e_t1 + b1 e_t2 + a2 e_hr + b2 e_r."""

    coeffs: tuple
    normalized: tuple
    residual: PeriodicFunction
    component: PeriodicFunction

    def __iter__(self):
        yield from (*self.coeffs, self.residual)


def project_elliptic_motions(e: EllipseParams, mu) -> Projection:
    """Weighted-orthogonal projection of mu onto the span of the five generators."""
    e0 = e.e0
    mu = mu if isinstance(mu, PeriodicFunction) else series(mu)
    coeffs, normed, comp = [], [], PeriodicFunction()
    for kind in _COEFF_KINDS:
        g = generator(kind, e0)
        nrm = raw_weighted_norm(kind, e0)
        ip = weighted_inner(mu, g, e0, method="spectral")
        coeffs.append(ip / nrm ** 2)
        normed.append(ip / nrm)
        comp = comp + series(g) * (ip / nrm ** 2)
    return Projection(tuple(coeffs), tuple(normed), mu - comp, comp)


def generator_combination(e0: float, a0=0.0, a1=0.0, b1=0.0, a2=0.0, b2=0.0) -> PeriodicFunction:
    out = PeriodicFunction()
    for kind, c in zip(_COEFF_KINDS, (a0, a1, b1, a2, b2)):
        if c:
            out = out + series(generator(kind, e0)) * c
    return out


@dataclass(frozen=True)
class FitReport:
    coeffs: tuple
    translation: tuple
    homothety: float
    rotation: float
    hyperbolic: float
    projection_residual_c1: float
    input_c1: float
    residual_c1: float


def _motion(e: EllipseParams, coeffs):
    """Linear map and translation (in the local frame of e) realizing the generator coefficients."""
    a0, a1, b1, a2, b2 = coeffs
    e0 = e.e0
    if e.is_circle:
        r = e.a
        t = (a1 * r, b1 * r)
        hom = a0
        m = math.hypot(a2, b2)
        psi = 0.5 * math.atan2(b2, a2)
        rot = np.array([[math.cos(psi), -math.sin(psi)], [math.sin(psi), math.cos(psi)]])
        lin = math.exp(hom) * rot @ np.diag([math.exp(m), math.exp(-m)]) @ rot.T
        return lin, np.array(t), hom, 0.0, m
    root = math.sqrt(1.0 - e0 * e0)
    t = (a1 * e.c / (e0 * root), b1 * e.c / e0)
    hom = a0 / root
    alpha = 2.0 * b2 / (e0 * e0)
    hyp = a2 / root
    rot = np.array([[math.cos(alpha), -math.sin(alpha)], [math.sin(alpha), math.cos(alpha)]])
    lin = math.exp(hom) * rot @ np.diag([math.exp(hyp), math.exp(-hyp)])
    return lin, np.array(t), hom, alpha, hyp


def _image_ellipse(e: EllipseParams, lin, t) -> EllipseParams:
    u, s, _ = np.linalg.svd(lin @ np.diag([e.a, e.b]))
    center = e.to_global(t)
    if s[0] - s[1] <= 1e-15 * s[0]:
        return EllipseParams.circle(float(s[0]), *center)
    angle = e.theta + math.atan2(u[1, 0], u[0, 0])
    return EllipseParams.from_axes(float(s[0]), float(s[1]), center[0], center[1], angle)


def boundary_points(e: EllipseParams, mu, n: int = 1024):
    phi = TWO_PI * np.arange(n) / n
    return elliptic_to_cartesian(e, e.mu0 + np.asarray(mu(phi)), phi)


def perturbation_in_frame(e: EllipseParams, points, degree: int = 48) -> PeriodicFunction:
    """mu(phi) such that the closed curve through ``points`` is {mu = mu0 + mu(phi)} in e's coordinates."""
    m, phi = cartesian_to_elliptic(e, points)
    if np.any(~np.isfinite(m)):
        raise GeometryError("curve meets the focal segment of the reference ellipse")
    order = np.argsort(np.mod(phi, TWO_PI))
    phi_s = np.mod(phi, TWO_PI)[order]
    gaps = np.diff(np.concatenate([phi_s, [phi_s[0] + TWO_PI]]))
    if np.max(gaps) > 8.0 * TWO_PI / len(phi_s):
        raise GeometryError("curve is not a graph over the elliptic angle of the reference ellipse")
    return PeriodicFunction.fit(phi, m - e.mu0, degree)


def best_ellipse_fit(e: EllipseParams, mu: PeriodicFunction, passes: int = 1, degree: Optional[int] = None):
    """Move e by the elliptic motions read off the projection of mu, then re-express the domain.

    Each pass uses the linearized coefficient maps, so the new perturbation is quadratically
    smaller than the part of mu lying in the generator span.
    """
    from .billiard_core import PerturbedEllipseDomain

    degree = degree or max(48, 2 * mu.degree)
    try:
        PerturbedEllipseDomain(e, mu)
    except GeometryError as exc:
        raise GeometryError(f"input domain rejected: {exc}") from exc
    pts = boundary_points(e, mu, max(1024, 8 * degree))
    current, cur_mu = e, mu
    report = None
    for _ in range(max(1, passes)):
        proj = project_elliptic_motions(current, cur_mu)
        lin, t, hom, alpha, hyp = _motion(current, proj.coeffs)
        fitted = current if not any(proj.coeffs) else _image_ellipse(current, lin, t)
        new_mu = perturbation_in_frame(fitted, pts, degree)
        report = FitReport(proj.coeffs, tuple(float(v) for v in t), hom, alpha, hyp,
                           proj.residual.c1_norm(), mu.c1_norm(), new_mu.c1_norm())
        current, cur_mu = fitted, new_mu
    return current, cur_mu, report
