"""Command line front end: JSON configs in, CSV tables plus a JSON sidecar out.

    billiard <orbit|spectrum|delta|modes|fit|als> --config run.json [--out table.csv] [--set key=value ...]

Exit status is 0 on success, 2 for configuration errors and 3 for numerical failures.
The worker pool used by sweep commands is sized by BILLIARD_WORKERS (default: all cores).
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import io
import json
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from . import adapted_basis, als_flow, billiard_core, spectrum
from .elliptic_geometry import EllipseParams, PeriodicFunction, caustic_from_lambda, caustic_tangency
from .errors import BilliardError, ConfigError, DomainError, GeometryError, NumericError

COMMANDS = ("orbit", "spectrum", "delta", "modes", "fit", "als")

# every key a config may carry, with its default
DEFAULTS: Dict[str, Any] = {
    "domain": {
        "type": "ellipse",  # circle | ellipse | perturbed_ellipse | polar
        "a": 1.0,
        "b": None,  # None: derived from e0
        "e0": 0.5,
        "radius": 1.0,
        "x0": 0.0,
        "y0": 0.0,
        "theta": 0.0,
        "perturbation": {"a0": 0.0, "cos": [], "sin": []},
    },
    "seed": 0,
    "orbit": {"n": 100, "s": 0.0, "phi": None, "caustic_lambda": None, "caustic_theta": 0.0},
    "spectrum": {"fractions": None, "q_min": 3, "q_max": 8, "n_grid": 32, "with_delta": False, "restarts": 8},
    "delta": {"p": 1, "q_min": 3, "q_max": 8, "n_grid": 32},
    "modes": {"e0": None, "q_max": 12, "rows": "phi"},
    "fit": {"passes": 1, "degree": None},
    "als": {"n": 128, "dt": 5e-5, "steps": 20, "normalize": "fixed_area", "q": 5, "with_delta": True,
            "n_grid": 32},
}

@dataclass
class ResultRecord:
    command: str
    config_hash: str
    columns: List[str]
    rows: List[List[Any]]
    metadata: Dict[str, Any] = field(default_factory=dict)

    def csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.columns)
        for row in self.rows:
            writer.writerow([_fmt(v) for v in row])
        return buf.getvalue()

    def sidecar(self, config) -> Dict[str, Any]:
        return {"command": self.command, "config_hash": self.config_hash, "columns": self.columns,
                "config": config, "metadata": self.metadata}


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    return v


# ---------------------------------------------------------------- configuration


def _merge(base, over, path=""):
    out = copy.deepcopy(base)
    for key, value in over.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict) and key != "perturbation":
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where!r} must be an object")
            out[key] = _merge(base[key], value, where + ".")
        else:
            out[key] = value
    return out


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(config, assignment: str):
    if "=" not in assignment:
        raise ConfigError(f"--set expects key=value, got {assignment!r}")
    key, raw = assignment.split("=", 1)
    parts = key.strip().split(".")
    node = config
    for part in parts[:-1]:
        if not isinstance(node, dict) or part not in node:
            raise ConfigError(f"unknown config key {key!r}")
        node = node[part]
    if not isinstance(node, dict) or parts[-1] not in node:
        raise ConfigError(f"unknown config key {key!r}")
    node[parts[-1]] = _parse_value(raw)
    return config


def load_config(path: Optional[str], overrides: Sequence[str] = ()) -> Dict[str, Any]:
    raw: Dict[str, Any] = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed JSON config: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
    config = _merge(DEFAULTS, raw)
    for item in overrides:
        apply_override(config, item)
    return config


def canonical(config) -> bytes:
    return json.dumps(config, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def config_hash(config) -> str:
    return hashlib.sha256(canonical(config)).hexdigest()


def _number(section, key, kind=float, minimum=None):
    value = section[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{key!r} must be a number, got {value!r}")
    if kind is int and (not float(value).is_integer()):
        raise ConfigError(f"{key!r} must be an integer, got {value!r}")
    value = kind(value)
    if not math.isfinite(value):
        raise ConfigError(f"{key!r} must be finite")
    if minimum is not None and value < minimum:
        raise ConfigError(f"{key!r} must be at least {minimum}, got {value}")
    return value


def _perturbation(spec) -> PeriodicFunction:
    if not isinstance(spec, dict) or set(spec) - {"a0", "cos", "sin"}:
        raise ConfigError("perturbation must be an object with keys a0, cos, sin")
    try:
        return PeriodicFunction.from_dict(spec)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad perturbation coefficients: {exc}") from exc


def ellipse_params(dom) -> EllipseParams:
    a = _number(dom, "a", minimum=0.0)
    if dom["b"] is None:
        e0 = _number(dom, "e0")
        if not 0.0 <= e0 < 1.0:
            raise ConfigError("e0 must lie in [0, 1)")
        b = a * math.sqrt(1.0 - e0 * e0)
    else:
        b = _number(dom, "b", minimum=0.0)
    try:
        return EllipseParams.from_axes(a, b, _number(dom, "x0"), _number(dom, "y0"), _number(dom, "theta"))
    except DomainError as exc:
        raise ConfigError(str(exc)) from exc


def build_domain(dom) -> billiard_core.DomainBoundary:
    kind = dom["type"]
    try:
        if kind == "circle":
            return billiard_core.EllipseDomain(EllipseParams.circle(_number(dom, "radius"), dom["x0"], dom["y0"]))
        if kind == "ellipse":
            return billiard_core.EllipseDomain(ellipse_params(dom))
        if kind == "perturbed_ellipse":
            return billiard_core.PerturbedEllipseDomain(ellipse_params(dom), _perturbation(dom["perturbation"]))
        if kind == "polar":
            rho = PeriodicFunction(_number(dom, "radius"), ()) + _perturbation(dom["perturbation"])
            return billiard_core.PolarGraphDomain(rho, (dom["x0"], dom["y0"]))
    except GeometryError as exc:
        raise ConfigError(f"domain rejected: {exc}") from exc
    raise ConfigError(f"unknown domain type {kind!r}")


def _fractions(sec):
    if sec.get("fractions") is not None:
        try:
            return [(int(p), int(q)) for p, q in sec["fractions"]]
        except (TypeError, ValueError) as exc:
            raise ConfigError("fractions must be a list of [p, q] pairs") from exc
    lo, hi = _number(sec, "q_min", int, 3), _number(sec, "q_max", int, 3)
    p = int(sec.get("p", 1))
    return [(p, q) for q in range(lo, hi + 1) if math.gcd(p, q) == 1 and 2 * p < q]


def workers() -> int:
    try:
        return als_flow.default_workers()
    except DomainError as exc:
        raise ConfigError(str(exc)) from exc


def _ordered_map(func, jobs):
    n = min(workers(), len(jobs))
    if n <= 1:
        return [func(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(func, jobs))


# ---------------------------------------------------------------- commands


def cmd_orbit(config) -> ResultRecord:
    d = build_domain(config["domain"])
    sec = config["orbit"]
    n = _number(sec, "n", int, 1)
    caustic = None
    if sec["caustic_lambda"] is not None:
        if not isinstance(d, billiard_core.EllipseDomain):
            raise ConfigError("caustic starts need an ellipse or circle domain")
        try:
            caustic = caustic_from_lambda(d.params, _number(sec, "caustic_lambda"))
        except DomainError as exc:
            raise ConfigError(str(exc)) from exc
        start = billiard_core.caustic_phase_point(d, caustic, _number(sec, "caustic_theta"))
    else:
        if sec["phi"] is None:
            raise ConfigError("orbit needs either phi or caustic_lambda")
        start = billiard_core.PhasePoint(_number(sec, "s"), _number(sec, "phi"))
    rec = billiard_core.iterate(d, start, n)
    pts = rec.points
    cols = ["i", "s[length]", "phi[rad]", "chord[length]", "winding[1]"]
    rows = []
    winding = 0.0
    for i in range(n):
        a, b = pts[i], pts[i + 1]
        winding += d.reduce_s(b.s - a.s) / d.perimeter
        rows.append([i, a.s, a.phi, rec.chord_lengths[i], winding / (i + 1)])
    meta = {"rotation_estimate": rec.rotation_estimate, "total_length": rec.total_length,
            "closure_error": _closure(d, pts[0], pts[n])}
    if caustic is not None:
        e = d.params
        pos = d.position(np.array(rec.params))
        tang = [caustic_tangency(caustic, e, pos[i], pos[i + 1] - pos[i]) for i in range(n)]
        cols.append("tangency[length]")
        for row, t in zip(rows, tang):
            row.append(t)
        meta["max_tangency"] = float(max(tang))
        meta["rotation_number"] = caustic.omega_lambda
    return ResultRecord("orbit", config_hash(config), cols, rows, meta)


def _closure(d, a, b):
    ds = abs(d.reduce_s(b.s - a.s + 0.5 * d.perimeter) - 0.5 * d.perimeter)
    return float(max(ds, abs(b.phi - a.phi)))


def _spectrum_job(args):
    dom, p, q, n_grid, seed, restarts, with_delta = args
    d = build_domain(dom)
    try:
        length, orbit = spectrum.birkhoff_orbit(d, p, q, seed, restarts)
        delta = spectrum.delta_pq(d, p, q, n_grid, seed) if with_delta else math.nan
        return p, q, length, -length / q, delta, orbit.diagnostics["max_reflection_residual"], "ok"
    except (NumericError, GeometryError) as exc:
        return p, q, math.nan, math.nan, math.nan, math.nan, f"failed: {exc}"


def cmd_spectrum(config) -> ResultRecord:
    sec = config["spectrum"]
    build_domain(config["domain"])
    with_delta = bool(sec["with_delta"])
    jobs = [(config["domain"], p, q, _number(sec, "n_grid", int, 32), int(config["seed"]),
             _number(sec, "restarts", int, 0), with_delta) for p, q in _fractions(sec)]
    out = _ordered_map(_spectrum_job, jobs)
    cols = ["p", "q", "L_max[length]", "beta[length]"] + (["delta[length^3]"] if with_delta else []) + \
           ["reflection_residual[rad]", "status"]
    rows = [[p, q, L, beta] + ([delta] if with_delta else []) + [res, status]
            for p, q, L, beta, delta, res, status in out]
    entries = [spectrum.SpectrumEntry(r[0], r[1], r[2], r[3], math.nan, None) for r in out if r[-1] == "ok"]
    meta = {"failures": sum(r[-1] != "ok" for r in out),
            "convexity_violations": len(spectrum.beta_convexity_violations(entries)),
            "sweep_gain": spectrum.SWEEP_GAIN, "criticality": spectrum.CRITICALITY}
    return ResultRecord("spectrum", config_hash(config), cols, rows, meta)


def _delta_job(args):
    dom, p, q, n_grid, seed = args
    d = build_domain(dom)
    try:
        r = spectrum.delta_profile(d, p, q, n_grid, seed)
        return p, q, r.delta, r.delta_unnormalized_mean, r.mean, float(np.ptp(r.profile)), "ok"
    except (NumericError, GeometryError) as exc:
        return p, q, math.nan, math.nan, math.nan, math.nan, f"failed: {exc}"


def cmd_delta(config) -> ResultRecord:
    sec = config["delta"]
    build_domain(config["domain"])
    jobs = [(config["domain"], p, q, _number(sec, "n_grid", int, 32), int(config["seed"]))
            for p, q in _fractions(sec)]
    out = _ordered_map(_delta_job, jobs)
    # delta centres on the arc-length mean of L; the raw variant centres on its plain integral
    cols = ["p", "q", "delta[length^3]", "delta_raw_mean[length^3]", "mean_L[length]", "spread_L[length]",
            "status"]
    meta = {"failures": sum(r[-1] != "ok" for r in out), "n_grid": jobs[0][3] if jobs else None}
    return ResultRecord("delta", config_hash(config), cols, [list(r) for r in out], meta)


def cmd_modes(config) -> ResultRecord:
    sec = config["modes"]
    e0 = sec["e0"]
    if e0 is None:
        e0 = ellipse_params(config["domain"]).e0
    elif isinstance(e0, bool) or not isinstance(e0, (int, float)) or not 0.0 <= e0 < 1.0:
        raise ConfigError("modes.e0 must be a number in [0, 1)")
    q_max = _number(sec, "q_max", int, 6)
    try:
        m = adapted_basis.correlation_matrix(float(e0), q_max, sec["rows"])
    except DomainError as exc:
        raise ConfigError(str(exc)) from exc
    rows = []
    size = m.entries.shape[0]
    for i in range(size):
        for h in range(6, size):
            rows.append([i, h, m.entries[i, h]])
    off = m.entries[6:, 6:] - np.diag(np.diag(m.entries[6:, 6:]))
    meta = {"e0": float(e0), "q_max": q_max, "rows": sec["rows"],
            "max_offdiagonal": float(np.max(np.abs(off))),
            "gram_min_eigenvalue": float(np.linalg.eigvalsh(m.gram).min())}
    return ResultRecord("modes", config_hash(config), ["i", "h", "a_tilde[1]"], rows, meta)


def cmd_fit(config) -> ResultRecord:
    dom = config["domain"]
    if dom["type"] not in ("perturbed_ellipse", "ellipse", "circle"):
        raise ConfigError("fit needs an ellipse-based domain")
    e = EllipseParams.circle(_number(dom, "radius")) if dom["type"] == "circle" else ellipse_params(dom)
    mu = _perturbation(dom["perturbation"]) if dom["type"] == "perturbed_ellipse" else PeriodicFunction()
    sec = config["fit"]
    passes = _number(sec, "passes", int, 1)
    cols = ["pass", "x0[length]", "y0[length]", "a[length]", "b[length]", "theta[rad]",
            "a0[1]", "a1[1]", "b1[1]", "a2[1]", "b2[1]", "input_c1[1]", "residual_c1[1]"]
    rows = []
    current, cur = e, mu
    for k in range(passes):
        fitted, cur_new, rep = adapted_basis.best_ellipse_fit(current, cur, 1, sec["degree"])
        rows.append([k + 1, fitted.x0, fitted.y0, fitted.a, fitted.b, fitted.theta, *rep.coeffs,
                     rep.input_c1, rep.residual_c1])
        current, cur = fitted, cur_new
    meta = {"c1_grid": 4096, "final_residual_c1": rows[-1][-1]}
    return ResultRecord("fit", config_hash(config), cols, rows, meta)


def _initial_flow(dom, n):
    kind = dom["type"]
    if kind == "circle":
        return als_flow.FlowState.circle(_number(dom, "radius"), n)
    if kind == "ellipse":
        e = ellipse_params(dom)
        return als_flow.FlowState.ellipse(e.a, e.b, n, (e.x0, e.y0), e.theta)
    if kind == "polar":
        rho = PeriodicFunction(_number(dom, "radius"), ()) + _perturbation(dom["perturbation"])
        return als_flow.FlowState.polar(rho, n)
    raise ConfigError("als needs a circle, ellipse or polar domain")


def cmd_als(config) -> ResultRecord:
    sec = config["als"]
    if sec["normalize"] not in ("none", "fixed_area"):
        raise ConfigError("als.normalize must be 'none' or 'fixed_area'")
    state = _initial_flow(config["domain"], _number(sec, "n", int, 16))
    traj = als_flow.evolve(state, _number(sec, "dt"), _number(sec, "steps", int, 0), sec["normalize"])
    cols = ["t[time]", "L[length^(2/3)]", "A[length^2]", "L3_over_A[1]"]
    rows = [[s.time, s.affine_perimeter, s.area, s.iso_ratio] for s in traj]
    if sec["with_delta"]:
        q = _number(sec, "q", int, 3)
        jobs = [(s.support.tolist(), q, _number(sec, "n_grid", int, 32), int(config["seed"])) for s in traj]
        deltas = _ordered_map(als_flow._delta_job, jobs)
        cols.append(f"delta_{q}[length^3]")
        for row, v in zip(rows, deltas):
            row.append(v)
    meta = {"status": traj.status, "substeps": traj.substeps, "cfl": als_flow.CFL}
    if sec["with_delta"]:
        meta["delta_strictly_decreasing"] = bool(np.all(np.diff([r[-1] for r in rows]) < 0))
    return ResultRecord("als", config_hash(config), cols, rows, meta)


HANDLERS = {"orbit": cmd_orbit, "spectrum": cmd_spectrum, "delta": cmd_delta,
            "modes": cmd_modes, "fit": cmd_fit, "als": cmd_als}


# ---------------------------------------------------------------- entry point


def run(command: str, config) -> ResultRecord:
    t0 = time.perf_counter()
    record = HANDLERS[command](config)
    record.metadata["wall_time_s"] = time.perf_counter() - t0
    record.metadata["workers"] = workers()
    return record


def write(record: ResultRecord, config, out: Path):
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(record.csv_text(), encoding="utf-8", newline="")
    side = out.with_suffix(out.suffix + ".json")
    side.write_text(json.dumps(record.sidecar(config), indent=2, sort_keys=True, default=_jsonable), encoding="utf-8")
    return side


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"cannot serialize {type(v).__name__}")


def _parser():
    ap = argparse.ArgumentParser(prog="billiard", description="Billiard length-spectrum and flow experiments.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="JSON config file (defaults apply to missing keys)")
    ap.add_argument("--out", help="CSV output path (default: <command>.csv)")
    ap.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                    help="override a config field, dotted keys, JSON values")
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    out = Path(args.out or f"{args.command}.csv")
    try:
        config = load_config(args.config, args.overrides)
        record = run(args.command, config)
    except ConfigError as exc:
        print(f"billiard: config error: {exc}", file=sys.stderr)
        return 2
    except (NumericError, GeometryError) as exc:
        diag = getattr(exc, "diagnostics", None)
        print(f"billiard: numerical failure: {exc}" + (f" {diag}" if diag else ""), file=sys.stderr)
        return 3
    except DomainError as exc:
        print(f"billiard: config error: {exc}", file=sys.stderr)
        return 2
    except BilliardError as exc:
        print(f"billiard: failure: {exc}", file=sys.stderr)
        return 3
    write(record, config, out)
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
