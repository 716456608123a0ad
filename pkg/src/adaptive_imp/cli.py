"""Command-line front end.

    adaptive-imp identify|track|bode|verify|fit [--config PATH] [--out DIR] [--filter NAME] [--data CSV]

Outputs are CSV and JSON files in the output directory, numbers printed
with 12 significant digits.  Exit codes: 0 success, 1 a check, frequency or
fit failed, 2 configuration or input-data error, 3 the integration
diverged, 4 the ideal loop is not Hurwitz.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import checks
from .analysis import (
    SweepError,
    analytic_bode,
    fit_dataset,
    fmt,
    parallel_map,
    point_loss,
    read_bode_csv,
    simulate_frequency_point,
)
from .config import RunConfig, load_config
from .errors import (
    ConfigError,
    DataFormatError,
    IntegrationDiverged,
    NotHurwitz,
    TooFewSamples,
)
from .identifier import settling_time, simulate_identifier
from .loop import simulate_coupled
from .numcore import fit_exponential_rate, RATE_FLOOR

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_DIVERGED, EXIT_NOT_HURWITZ = 0, 1, 2, 3, 4

IDENTIFY_COLUMNS = ("t", "r1", "r2", "r1_hat", "r2_hat", "omega_hat", "V", "norm_err")
TRACK_COLUMNS = ("t", "r1", "r1_hat", "y", "y_c", "e", "e_c", "l_norm", "omega_hat")


def _num(x):
    """JSON-ready number rounded to 12 significant digits; non-finite values become strings."""
    if x is None:
        return None
    x = float(x)
    return float(fmt(x)) if math.isfinite(x) else str(x)


def _matrix(m):
    return [[_num(v) for v in row] for row in np.asarray(m)]


def write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8", newline="\n")


def write_csv(path: Path, header, columns):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in zip(*columns):
        w.writerow([fmt(v) for v in row])
    path.write_text(buf.getvalue(), encoding="utf-8", newline="\n")


def _reference_json(spec):
    return {"amplitude": _num(spec.amplitude), "omega0": _num(spec.omega0), "freq_hz": _num(spec.freq_hz), "phase": _num(spec.phase)}


def _identifier_json(ic):
    return {"A_m": _matrix(ic.A_m), "Q": _matrix(ic.Q), "P": _matrix(ic.P), "gamma": _num(ic.gamma), "theta_cap": _num(ic.theta_cap)}


def _params_json(p):
    return {k: _num(getattr(p, k)) for k in ("k1", "k2", "k3", "k4", "zeta", "tau")}


def _rate_fit(t, values, t_start):
    """``(rate, r2, note)``; a signal already at the floor has no rate to report."""
    if np.all(np.asarray(values) <= RATE_FLOOR):
        return None, None, "not-applicable: error is identically below the fit floor"
    try:
        rate, r2 = fit_exponential_rate(t, values, t_start)
    except TooFewSamples as exc:
        return None, None, f"not-applicable: {exc}"
    return rate, r2, None


def cmd_identify(cfg: RunConfig, out: Path) -> int:
    spec = cfg.reference
    init = cfg.initial_state()
    tr = simulate_identifier(spec, cfg.identifier, init, cfg.t_end_identify, cfg.h)
    write_csv(
        out / "identify.csv",
        IDENTIFY_COLUMNS,
        [tr.t, tr["r1"], tr["r2"], tr["r1_hat"], tr["r2_hat"], tr["omega_hat"], tr["V"], tr["err_norm"]],
    )
    notes = []
    if cfg.t_end_identify < spec.period:
        notes.append(f"WindowTooShort: t_end {cfg.t_end_identify:.6g} s is shorter than one period {spec.period:.6g} s")
        rate = r2 = None
    else:
        rate, r2, note = _rate_fit(tr.t, tr["err_norm"], spec.period)
        if note:
            notes.append(note)
    settle = settling_time(tr.t, tr["omega_hat"], spec.omega0)
    summary = {
        "command": "identify",
        "reference": _reference_json(spec),
        "identifier": _identifier_json(cfg.identifier),
        "initial_omega_hat": _num(init.omega_hat),
        "h": _num(cfg.h),
        "t_end": _num(cfg.t_end_identify),
        "convergence_rate": _num(rate),
        "r_squared": _num(r2),
        "settling_time": _num(settle),
        "settling_tolerance": 0.01,
        "projection_events": len(tr.meta["projection_events"]),
        "final_omega_hat": _num(tr.final("omega_hat")),
        "final_relative_omega_error": _num(abs(tr.final("omega_hat") - spec.omega0) / spec.omega0),
        "warnings": notes,
    }
    write_json(out / "identify_summary.json", summary)
    print(f"identify: settling time {summary['settling_time']} s, rate {summary['convergence_rate']} 1/s")
    return EXIT_OK


def cmd_track(cfg: RunConfig, out: Path) -> int:
    spec = cfg.reference
    params = cfg.track_params()
    tr = simulate_coupled(spec, cfg.identifier, cfg.initial_state(), params, cfg.x0, cfg.xc0, cfg.t_end, cfg.h)
    write_csv(out / "track.csv", TRACK_COLUMNS, [tr.t] + [tr[c] for c in TRACK_COLUMNS[1:]])
    notes = []
    if cfg.t_end < spec.period:
        notes.append("WindowTooShort: t_end is shorter than one period")
        rate = r2 = None
    else:
        rate, r2, note = _rate_fit(tr.t, tr["l_norm"], spec.period)
        if note:
            notes.append(note)
    gap = abs(tr.final("e") - tr.final("e_c"))
    summary = {
        "command": "track",
        "reference": _reference_json(spec),
        "identifier": _identifier_json(cfg.identifier),
        "loop": _params_json(params),
        "h": _num(cfg.h),
        "t_end": _num(cfg.t_end),
        "hurwitz_margin": _num(tr.meta["hurwitz_margin"]),
        "l_decay_rate": _num(rate),
        "l_r_squared": _num(r2),
        "terminal_e_gap": _num(gap),
        "max_l_norm": _num(np.max(tr["l_norm"])),
        "projection_events": len(tr.meta["projection_events"]),
        "warnings": notes,
    }
    write_json(out / "track_summary.json", summary)
    print(f"track: margin {summary['hurwitz_margin']}, l decay rate {summary['l_decay_rate']}, |e - e_c| {summary['terminal_e_gap']}")
    return EXIT_OK


def _bode_rows(cfg: RunConfig, freqs):
    """One ``(freq, point or None, status)`` per frequency, in ascending order."""
    freqs = sorted(freqs)
    if cfg.bode_mode == "analytic":

        def one(f):
            try:
                return analytic_bode([f], cfg.table).points[0], "ok"
            except SweepError as exc:
                return None, f"failed: {type(exc.cause).__name__}: {exc.cause}"

    else:

        def one(f):
            try:
                params = cfg.table.lookup(f)
                pt, _ = simulate_frequency_point(f, cfg.reference, cfg.identifier, params, cfg.settings, cfg.bode_channel)
                return pt, "ok"
            except Exception as exc:
                return None, f"failed: {type(exc).__name__}: {exc}"

    return [(f, *res) for f, res in zip(freqs, parallel_map(one, freqs))]


def cmd_bode(cfg: RunConfig, out: Path) -> int:
    exp = read_bode_csv(cfg.data_path) if cfg.data_path else None
    freqs = list(exp.freqs) if exp is not None else list(cfg.bode_freqs)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rows = _bode_rows(cfg, freqs)
    header = ["freq_hz", "gain", "phase_rad", "gain_db", "phase_deg", "status"]
    if exp is not None:
        header.append("residual")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for i, (f, pt, status) in enumerate(rows):
        if pt is None:
            row = [fmt(f), "", "", "", "", status]
            if exp is not None:
                row.append("")
        else:
            row = [fmt(f), fmt(pt.gain), fmt(pt.phase), fmt(pt.gain_db), fmt(pt.phase_deg), status]
            if exp is not None:
                row.append(fmt(point_loss(pt, exp.points[i])))
        w.writerow(row)
    (out / "bode.csv").write_text(buf.getvalue(), encoding="utf-8", newline="\n")
    failed = [f for f, pt, _ in rows if pt is None]
    for f, pt, status in rows:
        shown = f"gain {pt.gain:.4f}, phase {pt.phase_deg:.2f} deg" if pt is not None else status
        print(f"bode {f:g} Hz: {shown}")
    return EXIT_FAIL if failed else EXIT_OK


def cmd_fit(cfg: RunConfig, out: Path) -> int:
    if not cfg.data_path:
        raise ConfigError("bode.data", "fit needs experimental data (--data CSV)")
    data = read_bode_csv(cfg.data_path)
    entries, failures = fit_dataset(data, cfg.table.base, cfg.k4_grid, cfg.zeta_grid, cfg.min_decay)
    base = cfg.table.base
    result = {
        "command": "fit",
        "global": {k: _num(getattr(base, k)) for k in ("k1", "k2", "k3", "tau")},
        "min_decay": _num(cfg.min_decay),
        "table": {fmt(f): {"k4": _num(k4), "zeta": _num(z), "loss": _num(loss)} for f, (k4, z, loss) in sorted(entries.items())},
        "failures": {fmt(f): msg for f, msg in sorted(failures.items())},
    }
    write_json(out / "fit.json", result)
    print(f"fit: {len(entries)} fitted, {len(failures)} failed")
    return EXIT_FAIL if failures else EXIT_OK


def cmd_verify(cfg: RunConfig, out: Path, filter_name=None) -> int:
    if not checks.select(filter_name):
        raise ConfigError("--filter", f"no checks match {filter_name!r}")
    results = checks.run_checks(cfg, filter_name)
    write_json(out / "verify.json", checks.report_dict(results))
    (out / "verify.xml").write_text(checks.junit_xml(results), encoding="utf-8", newline="\n")
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.suite}.{r.name}" + (f"  {r.message}" if r.message else ""))
    n_fail = sum(not r.passed for r in results)
    print(f"verify: {len(results) - n_fail}/{len(results)} passed")
    return EXIT_FAIL if n_fail else EXIT_OK


COMMANDS = ("identify", "track", "bode", "verify", "fit")


def build_parser():
    p = argparse.ArgumentParser(prog="adaptive-imp", description="Adaptive internal-model tracking simulations.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="TOML or JSON run configuration")
    p.add_argument("--out", help="output directory (overrides output.dir)")
    p.add_argument("--filter", help="verify: suite or check name to run")
    p.add_argument("--data", help="experimental Bode CSV (freq_hz,gain,phase_rad)")
    return p


def _diagnostic(out: Path, obj):
    try:
        out.mkdir(parents=True, exist_ok=True)
        write_json(out / "diagnostic.json", obj)
    except OSError:
        pass
    print(json.dumps(obj), file=sys.stderr)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = Path(args.out) if args.out else None
    try:
        cfg = load_config(args.config)
        if args.data:
            cfg = replace(cfg, data_path=args.data)
        out = out or Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with np.errstate(over="ignore", invalid="ignore"):
            if args.command == "identify":
                return cmd_identify(cfg, out)
            if args.command == "track":
                return cmd_track(cfg, out)
            if args.command == "bode":
                return cmd_bode(cfg, out)
            if args.command == "fit":
                return cmd_fit(cfg, out)
            return cmd_verify(cfg, out, args.filter)
    except (ConfigError, DataFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IntegrationDiverged as exc:
        _diagnostic(out or Path("."), {"error": "IntegrationDiverged", "t": _num(exc.t), "message": str(exc)})
        return EXIT_DIVERGED
    except NotHurwitz as exc:
        ev = exc.eigenvalue
        _diagnostic(
            out or Path("."),
            {
                "error": "NotHurwitz",
                "max_real_part": _num(exc.margin),
                "eigenvalue": None if ev is None else [_num(ev.real), _num(ev.imag)],
                "message": str(exc),
            },
        )
        return EXIT_NOT_HURWITZ


if __name__ == "__main__":
    sys.exit(main())
