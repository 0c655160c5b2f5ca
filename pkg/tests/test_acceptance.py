"""Acceptance suite: one PASS/FAIL line per criterion, each at its stated tolerance and time budget.

The lines are collected in RESULTS and printed in the terminal summary (see conftest.py);
running this file directly prints them as well.
"""

import math
import subprocess
import sys
import time

import numpy as np
import pytest

from billiards import adapted_basis as ab
from billiards import als_flow as af
from billiards import billiard_core as bc
from billiards import elliptic_geometry as eg
from billiards import special_functions as sf
from billiards import spectrum as sp
from billiards.elliptic_geometry import EllipseParams, PeriodicFunction
from billiards.special_functions import complete_K

RESULTS = []


def report(n, title, checks, elapsed, budget):
    """checks: list of (label, measured, ok). Records the line and fails the test if anything failed."""
    timely = budget is None or elapsed < budget
    ok = all(c[2] for c in checks) and timely
    parts = "; ".join(f"{label}={value}{'' if good else ' [FAIL]'}" for label, value, good in checks)
    limit = f" (< {budget:g} s)" if budget else ""
    line = f"{'PASS' if ok else 'FAIL'}  criterion {n:>2} {title}: {parts}; runtime {elapsed:.2f} s{limit}"
    RESULTS.append(line)
    print(line)
    assert ok, line


def fmt(x):
    return f"{x:.3e}"


def test_criterion_01_special_functions():
    t0 = time.perf_counter()
    u = np.linspace(-10.0, 10.0, 100)
    err_f, err_p = 0.0, 0.0
    for k in np.round(np.arange(0.0, 1.0, 0.1), 1):
        err_f = max(err_f, float(np.max(np.abs(sf.incomplete_F(sf.jacobi_am(u, k), k) - u))))
        err_p = max(err_p, float(np.max(np.abs(sf.jacobi_sn(u, k) ** 2 + sf.jacobi_cn(u, k) ** 2 - 1))))
    err_k = abs(sf.complete_K(0.0) - math.pi / 2)
    report(1, "special functions", [
        ("max|F(am u)-u|", fmt(err_f), err_f <= 1e-10),
        ("max|sn^2+cn^2-1|", fmt(err_p), err_p <= 1e-12),
        ("|K(0)-pi/2|", fmt(err_k), err_k <= 1e-12),
    ], time.perf_counter() - t0, 5)


def test_criterion_02_tangency():
    t0 = time.perf_counter()
    e = EllipseParams.from_eccentricity(0.5)
    d = bc.EllipseDomain(e)
    worst = 0.0
    for frac in np.arange(1, 10) / 10:
        c = eg.caustic_from_lambda(e, frac * e.b)
        rec = bc.iterate(d, bc.caustic_phase_point(d, c, 0.1), 200)
        pos = d.position(np.array(rec.params))
        worst = max(worst, max(eg.caustic_tangency(c, e, pos[i], pos[i + 1] - pos[i]) for i in range(200)))
    report(2, "caustic tangency", [("max line-caustic distance", fmt(worst), worst <= 1e-8)],
           time.perf_counter() - t0, 10)


def test_criterion_03_rotation_number():
    t0 = time.perf_counter()
    e = EllipseParams.from_eccentricity(0.5)
    d = bc.EllipseDomain(e)
    worst = 0.0
    for frac in (0.15, 0.35, 0.55, 0.75, 0.95):
        c = eg.caustic_from_lambda(e, frac * e.b)
        rec = bc.iterate(d, bc.caustic_phase_point(d, c, 0.0), 10_000)
        worst = max(worst, abs(rec.rotation_estimate - c.omega_lambda))
    report(3, "rotation number", [("max|omega_emp - omega|", fmt(worst), worst <= 1e-5)],
           time.perf_counter() - t0, 30)


def test_criterion_04_integrable_constancy():
    t0 = time.perf_counter()
    worst_delta = 0.0
    for e0 in (0.3, 0.6):
        d = bc.EllipseDomain(EllipseParams.from_eccentricity(e0))
        for q in range(3, 9):
            worst_delta = max(worst_delta, sp.delta_pq(d, 1, q))
    circle = bc.EllipseDomain(EllipseParams.circle(1.0))
    worst_beta = max(abs(-sp.birkhoff_orbit(circle, 1, q)[0] / q + 2 * math.sin(math.pi / q)) for q in range(3, 13))
    report(4, "integrable caustic constancy", [
        ("max Delta_1/q(ellipse)", fmt(worst_delta), worst_delta <= 1e-10),
        ("max|beta(1/q)+2 sin(pi/q)|", fmt(worst_beta), worst_beta <= 1e-9),
    ], time.perf_counter() - t0, 120)


def test_criterion_05_resonance_law():
    t0 = time.perf_counter()
    scaled = {}
    for eps in (1e-3, 1e-4):
        d = bc.PolarGraphDomain(PeriodicFunction(1.0, np.eye(5)[4] * eps))
        scaled[eps] = (sp.delta_pq(d, 1, 5) / eps ** 2, sp.delta_pq(d, 1, 4) / eps ** 2)
    agree = abs(scaled[1e-3][0] / scaled[1e-4][0] - 1.0)
    drop = scaled[1e-3][1] / scaled[1e-4][1]
    report(5, "resonance law", [
        ("Delta_1/5/eps^2 relative spread", f"{agree:.4f} ({scaled[1e-3][0]:.4f} vs {scaled[1e-4][0]:.4f})", agree <= 0.05),
        ("Delta_1/4/eps^2 drop factor", f"{drop:.3e}", drop >= 5.0),
    ], time.perf_counter() - t0, 120)


def test_criterion_06_generator_residuals():
    t0 = time.perf_counter()
    worst_q, worst_s = 0.0, 0.0
    for kind in ab.GENERATORS:
        g = ab.generator(kind, 0.5)
        for q in range(3, 11):
            for m in ab.MODES:
                b = ab.mode(m, q, 0.5)
                worst_q = max(worst_q, abs(ab.weighted_inner(g, b, 0.5, weighted=False)))
                worst_s = max(worst_s, abs(ab.weighted_inner(g, b, 0.5, weighted=False, method="spectral")))
    report(6, "generator residuals", [
        ("max|<e_g,c_q>| adaptive quadrature", fmt(worst_q), worst_q <= 1e-9),
        ("max|<e_g,c_q>| action-angle trapezoid", fmt(worst_s), worst_s <= 1e-9),
    ], time.perf_counter() - t0, 30)


def test_criterion_07_correlation_decay():
    t0 = time.perf_counter()
    m = ab.correlation_matrix(0.5, 20)
    rho, _, r2, npts = ab.decay_fit(m, 6, 40, envelope=True)
    rho_pt, _, r2_pt, _ = ab.decay_fit(m, 6, 40, envelope=False)
    diag_err = max(abs(m.diagonal(j) / (2 * complete_K(ab.mode_caustic(0.5, j // 2).k_lambda)) - 1) for j in range(12, 41))
    xi = ab.correlation_matrix(0.5, 20, rows="xi")
    diag_xi = max(abs(xi.diagonal(j) / (2 * complete_K(ab.mode_caustic(0.5, j // 2).k_lambda)) - 1) for j in range(12, 41))
    elapsed = time.perf_counter() - t0
    print(f"info  criterion  7: pointwise fit rho={rho_pt:.3f} R^2={r2_pt:.3f}; "
          f"diagonal error with boundary action-angle rows {diag_xi:.4f}")
    report(7, "correlation decay", [
        ("rho (offset envelope)", f"{rho:.4f}", rho > 0),
        ("R^2", f"{r2:.5f} over {npts} offsets", r2 >= 0.9),
        ("max diagonal error vs 2K(k_[j/2]), j>=12", f"{diag_err:.4f}", diag_err <= 0.15),
    ], elapsed, 180)


def test_criterion_08_strip_widths():
    t0 = time.perf_counter()
    ident = max(abs(ab.endpoint_identity(y) - complete_K(math.sqrt(1 - y * y))) for y in (0.2, 0.4, 0.6, 0.8))
    margins = [ab.analyticity_widths(0.5, j, m) for m in range(4, 61) for j in range(3, m)]
    worst = min(w.margin_m for w in margins)
    report(8, "strip integral and widths", [
        ("max|I(y,y)-K(sqrt(1-y^2))|", fmt(ident), ident <= 1e-10),
        (f"min margin over {len(margins)} pairs (j<m<=60)", fmt(worst), worst > 0),
    ], time.perf_counter() - t0, 10)


def test_criterion_09_modulus_decay():
    t0 = time.perf_counter()
    e = EllipseParams.from_eccentricity(0.5)
    vals = np.array([r[1] for r in ab.deviation_check(e, range(50, 201))])
    spread = vals.max() / vals.min() - 1
    report(9, "modulus convergence", [
        ("q^2(k_q-e0) range", f"[{vals.min():.5f}, {vals.max():.5f}]", True),
        ("relative variation", f"{spread:.5f}", spread < 0.10),
    ], time.perf_counter() - t0, 10)


def test_criterion_10_fit_quadraticity():
    t0 = time.perf_counter()
    checks = []
    for e0 in (0.3, 0.6):
        e = EllipseParams.from_eccentricity(e0)
        res = []
        for h in (1e-2, 5e-3):
            mu = ab.generator_combination(e0, *(h * np.array([0.7, -0.5, 0.4, 0.6, -0.8])))
            res.append(ab.best_ellipse_fit(e, mu)[2].residual_c1)
        ratio = res[0] / res[1]
        checks.append((f"residual ratio e0={e0}", f"{ratio:.4f}", 3.0 <= ratio <= 5.5))
    report(10, "fit quadraticity", checks, time.perf_counter() - t0, 60)


def test_criterion_11_als():
    t0 = time.perf_counter()
    chi0 = 1.0
    half = 0.5 * 0.75 * chi0
    tr = af.evolve(af.FlowState.circle(1.0, 64), half / 20, 20)
    circ = max(abs(s.nu_samples.mean() / float(af.circle_nu(chi0, s.time)) - 1) for s in tr)
    ell = af.evolve(af.FlowState.ellipse(1.25, 0.8, 128), 0.02, 10, "fixed_area")
    ell_err = float(np.max(np.abs(ell.column("iso_ratio") - af.EIGHT_PI2)))
    blob = af.FlowState.polar(PeriodicFunction(1.0, [0.0, 0.0, 0.05]), 256)
    iso = af.evolve(blob, 0.025, 20, "fixed_area").column("iso_ratio")
    steps = np.diff(iso)
    direction = "increasing" if np.all(steps > 0) else "decreasing" if np.all(steps < 0) else "mixed"
    print(f"info  criterion 11: non-ellipse L^3/A - 8 pi^2 from {iso[0] - af.EIGHT_PI2:.4f} "
          f"to {iso[-1] - af.EIGHT_PI2:.4f}, {direction} at every step")
    report(11, "ALS flow", [
        ("circle max rel err in nu0(t) to T/2", fmt(circ), circ <= 1e-4),
        ("ellipse max|L^3/A-8pi^2|", fmt(ell_err), ell_err <= 1e-6),
        ("non-ellipse L^3/A strictly decreasing", f"{int(np.sum(steps < 0))}/{steps.size} steps decrease",
         bool(np.all(steps < 0))),
    ], time.perf_counter() - t0, 120)


def test_criterion_12_delta_monotone():
    t0 = time.perf_counter()
    r = af.monotonicity_experiment(5, 1e-3, 1e-3, 20)
    n_dec = int(np.sum(np.diff(r.delta) < 0))
    report(12, "Delta_5 along normalized flow", [
        ("samples", str(r.delta.size), r.delta.size >= 20),
        ("strictly decreasing steps", f"{n_dec}/{r.delta.size - 1} (Delta {r.delta[0]:.6e} -> {r.delta[-1]:.6e})",
         r.strictly_decreasing),
    ], time.perf_counter() - t0, 120)


CLI_CASES = {
    "orbit": ["orbit.n=50", "orbit.caustic_lambda=0.4"],
    "spectrum": ["spectrum.q_max=6", "spectrum.with_delta=true"],
    "delta": ["domain.type=polar", 'domain.perturbation={"cos":[0,0,0.01]}', "delta.q_max=5"],
    "modes": ["modes.q_max=8"],
    "fit": ["domain.type=perturbed_ellipse", 'domain.perturbation={"cos":[0.001,0.002],"sin":[0,0.001]}',
            "fit.passes=2"],
    "als": ["domain.type=polar", 'domain.perturbation={"cos":[0,0,0,0,0.001]}', "als.steps=4"],
}


def test_criterion_13_determinism(tmp_path):
    t0 = time.perf_counter()
    checks = []
    for command, overrides in CLI_CASES.items():
        payloads = []
        for run in range(2):
            out = tmp_path / f"{command}{run}.csv"
            args = [sys.executable, "-m", "billiards.cli_io", command, "--out", str(out)]
            for o in overrides:
                args += ["--set", o]
            proc = subprocess.run(args, capture_output=True, text=True)
            payloads.append(out.read_bytes() if proc.returncode == 0 else None)
        same = payloads[0] is not None and payloads[0] == payloads[1]
        checks.append((command, "identical" if same else "differs", same))
    report(13, "CLI determinism", checks, time.perf_counter() - t0, None)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
