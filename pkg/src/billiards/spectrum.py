"""Maximal periodic orbits, beta function and the non-integrability functional Delta_{p/q}.

Vertices are handled in the lifted angular parameter: t_0 < t_1 < ... < t_{q-1}
with t_q = t_0 + 2 pi p closing the polygon.  Maximization runs red-black
coordinate ascent (each vertex moved to its exact reflection position while its
neighbours are frozen) and finishes with a Newton polish on the full gradient,
using the exact tridiagonal-cyclic Hessian of the perimeter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from math import gcd
from typing import List, Sequence

import numpy as np

from .billiard_core import TWO_PI, DomainBoundary, OrbitRecord, PhasePoint, _cross
from .elliptic_geometry import EllipseParams, PeriodicFunction, lambda_from_rotation, phi_of_theta, theta_of_phi
from .errors import DomainError, NumericError

SEEDS = 8
SWEEP_GAIN = 1e-13
HANDOFF = 1e-9
CRITICALITY = 1e-8


def _check_fraction(p, q):
    if q < 3 or p < 1 or 2 * p >= q or gcd(p, q) != 1:
        raise DomainError(f"need coprime p/q with 0 < p/q < 1/2, got {p}/{q}")


def _closed(t, p):
    return np.append(t, t[0] + TWO_PI * p)


def _perimeter(d: DomainBoundary, t, p):
    pts = d.position(_closed(t, p))
    return float(math.fsum(np.hypot(*np.diff(pts, axis=0).T)))


def _ordered(t, p):
    gaps = np.diff(_closed(t, p))
    return bool(np.all(gaps > 0.0) and np.all(gaps < TWO_PI))


def _derivatives(d: DomainBoundary, t, p):
    """Perimeter, gradient and Hessian with respect to the q vertex parameters."""
    q = t.size
    pos, d1, d2 = d.eval(t)
    delta = np.roll(pos, -1, axis=0) - pos
    ell = np.hypot(delta[:, 0], delta[:, 1])
    u = delta / ell[:, None]  # chord i runs from vertex i to i+1
    u_prev = np.roll(u, 1, axis=0)
    ell_prev = np.roll(ell, 1)
    inc = np.einsum("ij,ij->i", u_prev, d1)
    out = np.einsum("ij,ij->i", u, d1)
    grad = inc - out
    sp2 = np.einsum("ij,ij->i", d1, d1)
    diag = (np.einsum("ij,ij->i", u_prev, d2) + (sp2 - inc * inc) / ell_prev
            - np.einsum("ij,ij->i", u, d2) + (sp2 - out * out) / ell)
    d1_next = np.roll(d1, -1, axis=0)
    off = -(np.einsum("ij,ij->i", d1, d1_next) - out * np.einsum("ij,ij->i", u, d1_next)) / ell
    hess = np.diag(diag)
    for i in range(q):
        j = (i + 1) % q
        hess[i, j] += off[i]
        hess[j, i] += off[i]
    return float(math.fsum(ell)), grad, hess


def _newton(d, t, p, free, maxit=60):
    t = t.copy()
    scale = d.perimeter
    for _ in range(maxit):
        length, grad, hess = _derivatives(d, t, p)
        g = grad[free]
        if np.max(np.abs(g)) < 1e-14 * scale:
            break
        w, vec = np.linalg.eigh(hess[np.ix_(free, free)])
        floor = 1e-12 * max(np.max(np.abs(w)), 1.0)
        step = vec @ ((vec.T @ g) / np.maximum(np.abs(w), floor))
        alpha = 1.0
        while alpha > 1e-12:
            trial = t.copy()
            trial[free] += alpha * step
            if _ordered(trial, p) and _perimeter(d, trial, p) >= length - 1e-15 * scale:
                break
            alpha *= 0.5
        else:
            break
        t = trial
        if np.max(np.abs(alpha * step)) < 1e-15:
            break
    return t


def _vertex_update(d, t, p, idx):
    """Move each vertex in idx to the critical point between its (frozen) neighbours."""
    ext = _closed(t, p)
    full = np.concatenate([[t[-1] - TWO_PI * p], ext])  # full[i] = t_{i-1}
    lo, hi = full[idx].copy(), full[idx + 2].copy()
    a_pts, b_pts = d.position(lo), d.position(hi)
    x = t[idx].copy()

    def deriv(x):
        pos, d1, d2 = d.eval(x)
        ra, rb = pos - a_pts, b_pts - pos
        la, lb = np.hypot(*ra.T), np.hypot(*rb.T)
        ua, ub = ra / la[:, None], rb / lb[:, None]
        g = np.einsum("ij,ij->i", ua - ub, d1)
        sp2 = np.einsum("ij,ij->i", d1, d1)
        ca, cb = np.einsum("ij,ij->i", ua, d1), np.einsum("ij,ij->i", ub, d1)
        h = np.einsum("ij,ij->i", ua - ub, d2) + (sp2 - ca * ca) / la + (sp2 - cb * cb) / lb
        return g, h

    for _ in range(40):
        g, h = deriv(x)
        lo = np.where(g > 0.0, x, lo)
        hi = np.where(g < 0.0, x, hi)
        cand = np.where(h < 0.0, x - g / np.where(h < 0.0, h, -1.0), 0.5 * (lo + hi))
        cand = np.where((cand > lo) & (cand < hi), cand, 0.5 * (lo + hi))
        done = np.abs(cand - x) < 1e-13
        x = cand
        if np.all(done):
            break
    out = t.copy()
    out[idx] = x
    return out


def _colors(q, free):
    free = np.asarray(free)
    if q % 2 == 0:
        groups = [free[free % 2 == 0], free[free % 2 == 1]]
    else:
        groups = [free[(free % 2 == 0) & (free < q - 1)], free[free % 2 == 1], free[free == q - 1]]
    return [g for g in groups if g.size]


def _coordinate_ascent(d, t, p, free, until=SWEEP_GAIN, max_sweeps=500):
    groups = _colors(t.size, free)
    length = _perimeter(d, t, p)
    gain = math.inf
    for _ in range(max_sweeps):
        for g in groups:
            t = _vertex_update(d, t, p, g)
        new = _perimeter(d, t, p)
        gain, length = new - length, new
        if gain < until:
            break
    return t, gain


def _maximize(d, t, p, free):
    """Coordinate ascent hands over to Newton once sweeps gain < HANDOFF; a final sweep
    certifies convergence (gain < SWEEP_GAIN)."""
    for _ in range(5):
        t, _ = _coordinate_ascent(d, t, p, free, until=HANDOFF * d.perimeter)
        t = _newton(d, t, p, free)
        t, gain = _coordinate_ascent(d, t, p, free, max_sweeps=1)
        if gain < SWEEP_GAIN:
            break
    return t


def _seeds(d, p, q, rng, restarts):
    regular = d.t_from_s(d.perimeter * p * np.arange(q) / q)
    yield np.asarray(regular, dtype=float)
    for _ in range(restarts):
        gaps = rng.dirichlet(np.ones(q)) * TWO_PI * p
        gaps = np.clip(gaps, 1e-3, None)
        gaps *= TWO_PI * p / gaps.sum()
        yield rng.uniform(0.0, TWO_PI) + np.concatenate([[0.0], np.cumsum(gaps)[:-1]])


def reflection_residuals(d: DomainBoundary, t, p):
    """|angle_in - angle_out| at each vertex, angles measured from the tangent."""
    pos, d1, _ = d.eval(t)
    tan = d1 / np.hypot(d1[:, 0], d1[:, 1])[:, None]
    delta = np.roll(pos, -1, axis=0) - pos
    u = delta / np.hypot(delta[:, 0], delta[:, 1])[:, None]
    u_prev = np.roll(u, 1, axis=0)
    ang_out = np.arctan2(_cross(tan, u), np.einsum("ij,ij->i", tan, u))
    ang_in = np.arctan2(-_cross(tan, u_prev), np.einsum("ij,ij->i", tan, u_prev))
    return np.abs(ang_in - ang_out)


def _orbit_record(d, t, p, q):
    pos, d1, _ = d.eval(t)
    tan = d1 / np.hypot(d1[:, 0], d1[:, 1])[:, None]
    delta = np.roll(pos, -1, axis=0) - pos
    chords = np.hypot(delta[:, 0], delta[:, 1])
    u = delta / chords[:, None]
    phis = np.arctan2(_cross(tan, u), np.einsum("ij,ij->i", tan, u))
    s = d.reduce_s(d.arc_length(np.mod(t, TWO_PI)))
    resid = reflection_residuals(d, t, p)
    return OrbitRecord(
        [PhasePoint(float(a), float(b)) for a, b in zip(s, phis)],
        chords.tolist(),
        p / q,
        float(math.fsum(chords)),
        t.tolist(),
        {"max_reflection_residual": float(np.max(resid))},
    )


def birkhoff_orbit(d: DomainBoundary, p: int, q: int, seed: int = 0, restarts: int = SEEDS):
    """Maximal-perimeter periodic orbit of rotation number p/q.

    The equidistributed start is always tried, followed by ``restarts`` random starts.
    """
    _check_fraction(p, q)
    rng = np.random.default_rng(seed)
    free = np.arange(q)
    best, best_len = None, -math.inf
    for start in _seeds(d, p, q, rng, restarts):
        t = _maximize(d, start, p, free)
        length = _perimeter(d, t, p)
        if length > best_len:
            best, best_len = t, length
    best = best - TWO_PI * math.floor(best[0] / TWO_PI)
    record = _orbit_record(d, best, p, q)
    resid = record.diagnostics["max_reflection_residual"]
    if resid > CRITICALITY:
        raise NumericError("maximizer stagnated", best_length=best_len, residual=resid)
    return record.total_length, record


def _pinned_profile(d, p, q, t_pins, seed, restarts):
    _, orbit = birkhoff_orbit(d, p, q, seed, restarts)
    free_t = np.array(orbit.params)
    out = []
    prev = None
    free = np.arange(1, q)
    for pin in t_pins:
        if prev is None:
            gaps = np.diff(_closed(free_t, p))
            k = int(np.argmin(np.abs(np.mod(free_t - pin + np.pi, TWO_PI) - np.pi)))
            start = pin + np.concatenate([[0.0], np.cumsum(np.roll(gaps, -k))[:-1]])
        else:
            start = prev + (pin - prev[0])
        start[0] = pin
        if not _ordered(start, p):
            start = pin + (np.asarray(d.t_from_s(d.arc_length(pin) + d.perimeter * p * np.arange(q) / q)) - pin)
        t = _newton(d, start, p, free)
        if np.max(reflection_residuals(d, t, p)[1:]) > 1e-6:
            t = _maximize(d, start, p, free)
        out.append(_perimeter(d, t, p))
        prev = t
    return np.array(out)


def L_profile(d: DomainBoundary, p: int, q: int, s_grid: Sequence[float], seed: int = 0,
              restarts: int = 0) -> np.ndarray:
    """Maximal q-gon perimeter with the first vertex pinned at each arc length in s_grid.

    The pins are visited in order by continuation from a free maximizer; ``restarts``
    random starts go into that free maximizer.
    """
    _check_fraction(p, q)
    t_pins = np.atleast_1d(d.t_from_s(np.asarray(s_grid, dtype=float)))
    return _pinned_profile(d, p, q, t_pins, seed, restarts)


@dataclass
class DeltaResult:
    delta: float
    mean: float
    profile: np.ndarray
    s_grid: np.ndarray
    delta_unnormalized_mean: float = field(default=math.nan)


def delta_profile(d: DomainBoundary, p: int, q: int, n_grid: int = 64, seed: int = 0,
                  restarts: int = 0) -> DeltaResult:
    """Delta_{p/q} with the arc-length mean, plus the variant using the un-normalized integral."""
    if n_grid < 32:
        raise DomainError("n_grid must be at least 32")
    s = d.perimeter * np.arange(n_grid) / n_grid
    prof = L_profile(d, p, q, s, seed, restarts)
    ds = d.perimeter / n_grid
    mean = float(np.mean(prof))
    delta = float(ds * np.sum((prof - mean) ** 2))
    raw_mean = float(ds * np.sum(prof))
    raw = float(ds * np.sum((prof - raw_mean) ** 2))
    return DeltaResult(delta, mean, prof, s, raw)


def delta_pq(d: DomainBoundary, p: int, q: int, n_grid: int = 64, seed: int = 0, restarts: int = 0) -> float:
    return delta_profile(d, p, q, n_grid, seed, restarts).delta


@dataclass
class SpectrumEntry:
    p: int
    q: int
    L_max: float
    beta: float
    delta: float
    witness: OrbitRecord


def beta_table(d: DomainBoundary, fractions, n_grid: int = 32, seed: int = 0, with_delta=True) -> List[SpectrumEntry]:
    entries = []
    for p, q in fractions:
        length, orbit = birkhoff_orbit(d, p, q, seed)
        delta = delta_pq(d, p, q, n_grid, seed) if with_delta else math.nan
        entries.append(SpectrumEntry(p, q, length, -length / q, delta, orbit))
    return entries


def beta_convexity_violations(entries: List[SpectrumEntry], tol=1e-12):
    """Triples of consecutive sampled rotation numbers where beta rises above its chord.

    beta = -L_max/q is convex in the rotation number (L_max/q is concave).
    """
    pts = sorted((e.p / e.q, e.beta) for e in entries)
    bad = []
    for (x0, y0), (x1, y1), (x2, y2) in zip(pts, pts[1:], pts[2:]):
        chord = y0 + (y2 - y0) * (x1 - x0) / (x2 - x0)
        if y1 > chord + tol:
            bad.append((x0, x1, x2))
    return bad


def first_variation_length(e: EllipseParams, mu1: PeriodicFunction, p: int, q: int, phi) -> float:
    """2 lambda_{p/q} sum_k mu1(phi^k) over the elliptic (p, q) orbit through phi."""
    _check_fraction(p, q)
    caustic = lambda_from_rotation(e, p, q)
    theta0 = theta_of_phi(caustic, np.asarray(phi, dtype=float))
    thetas = np.multiply.outer(theta0, np.ones(q)) + TWO_PI * p * np.arange(q) / q
    total = np.sum(mu1(phi_of_theta(caustic, thetas)), axis=-1)
    out = 2.0 * caustic.lam * total
    return float(out) if np.ndim(out) == 0 else out
