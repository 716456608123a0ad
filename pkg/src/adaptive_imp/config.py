"""Run configuration: a TOML (or JSON) file validated into typed objects.

Every section is optional; omitted keys take the frozen defaults.  Errors
carry the dotted path of the offending field, e.g. ``identifier.Q``.

    [reference]
    freq_hz = 0.55          # or omega0 (rad/s)
    amplitude = 1.0
    phase = 0.0

    [identifier]
    A_m = [[0.0, 1.0], [-9.0, -10.0]]
    Q = [[1.0, 0.0], [0.0, 1.0]]
    gamma = 450.0
    theta_cap = 1e-4
    init_omega_hz = 0.30    # or init_ratio; init_r_hat defaults to r(0)

    [loop]
    k1 = 3.0
    k2 = 3.0
    k3 = 1.0
    tau = 0.08
    # k4, zeta: resonator for `track`; otherwise looked up in the table
    [[loop.resonators]]
    freq_hz = 0.55
    k4 = 10.0
    zeta = 0.4125

    [simulation]
    h = 1e-3
    t_end = 40.0

    [bode]
    freqs_hz = [0.1, 0.55, 2.05]
    mode = "simulated"      # or "analytic"

    [fit]
    min_decay = 0.0

    [output]
    dir = "out"
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import defaults
from .analysis import DEFAULT_K4_GRID, DEFAULT_ZETA_GRID, ResonatorTable, SimSettings
from .errors import AdaptiveImpError, ConfigError
from .identifier import IdentifierConfig, IdentifierState
from .loop import LoopParams
from .reference import ReferenceSpec, reference_state

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

SECTIONS = ("reference", "identifier", "loop", "simulation", "bode", "fit", "output", "seed")


@dataclass(frozen=True)
class RunConfig:
    reference: ReferenceSpec = field(default_factory=lambda: ReferenceSpec.from_hz(defaults.LOCK_IN_FREQ_HZ))
    identifier: IdentifierConfig = field(default_factory=defaults.default_identifier_config)
    init_omega: Optional[float] = None
    init_ratio: Optional[float] = None
    init_r_hat: Optional[tuple] = None
    table: ResonatorTable = field(default_factory=defaults.default_table)
    track_resonator: Optional[tuple] = None
    x0: Optional[tuple] = None
    xc0: Optional[tuple] = None
    h: float = 1e-3
    t_end_identify: float = 20.0
    t_end: float = 40.0
    settings: SimSettings = field(default_factory=SimSettings)
    bode_freqs: tuple = defaults.DEFAULT_FREQS_HZ
    bode_mode: str = "simulated"
    bode_channel: str = "y"
    data_path: Optional[str] = None
    k4_grid: tuple = DEFAULT_K4_GRID
    zeta_grid: tuple = DEFAULT_ZETA_GRID
    min_decay: float = 0.0
    out_dir: str = "out"
    seed: int = 0

    def initial_state(self) -> IdentifierState:
        """Identifier initial state; the default frequency estimate is 0.30 Hz when the stimulus is 0.55 Hz."""
        spec = self.reference
        if self.init_omega is not None:
            w = self.init_omega
        elif self.init_ratio is not None:
            w = self.init_ratio * spec.omega0
        else:
            w = spec.omega0 * defaults.LOCK_IN_INIT_HZ / defaults.LOCK_IN_FREQ_HZ
        r0 = reference_state(spec, 0.0) if self.init_r_hat is None else self.init_r_hat
        return IdentifierState.from_omega(r0, w)

    def track_params(self) -> LoopParams:
        if self.track_resonator is not None:
            return self.table.base.with_resonator(*self.track_resonator)
        return self.table.lookup(self.reference.freq_hz)


def _get(d: dict, key: str, path: str, kind, default=None, required=False):
    if key not in d:
        if required:
            raise ConfigError(f"{path}.{key}", "missing")
        return default
    v = d[key]
    p = f"{path}.{key}" if path else key
    if kind is float:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(p, f"expected a number, got {v!r}")
        if not math.isfinite(v):
            raise ConfigError(p, "must be finite")
        return float(v)
    if kind is int:
        if isinstance(v, bool) or not isinstance(v, int):
            raise ConfigError(p, f"expected an integer, got {v!r}")
        return v
    if kind is str:
        if not isinstance(v, str):
            raise ConfigError(p, f"expected a string, got {v!r}")
        return v
    if kind == "matrix":
        try:
            m = np.array(v, dtype=float)
        except (TypeError, ValueError):
            raise ConfigError(p, "expected a 2x2 array of numbers") from None
        if m.shape != (2, 2) or not np.isfinite(m).all():
            raise ConfigError(p, "expected a finite 2x2 array")
        return m
    if kind == "vector":
        try:
            x = tuple(float(a) for a in v)
        except (TypeError, ValueError):
            raise ConfigError(p, "expected a list of numbers") from None
        if not all(math.isfinite(a) for a in x):
            raise ConfigError(p, "entries must be finite")
        return x
    raise TypeError(kind)


def _section(raw: dict, name: str) -> dict:
    sec = raw.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(name, "expected a table")
    return sec


def _check_keys(sec: dict, name: str, allowed):
    for k in sec:
        if k not in allowed:
            raise ConfigError(f"{name}.{k}", "unknown key")


def _wrap(path: str, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except ConfigError:
        raise
    except (AdaptiveImpError, ValueError) as exc:
        raise ConfigError(path, str(exc)) from None


def parse_config(raw: dict, base_dir: Optional[Path] = None) -> RunConfig:
    """Validate a decoded configuration mapping into a :class:`RunConfig`."""
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "expected a table")
    for k in raw:
        if k not in SECTIONS:
            raise ConfigError(k, "unknown section")
    kw = {}

    sec = _section(raw, "reference")
    _check_keys(sec, "reference", ("freq_hz", "omega0", "amplitude", "phase"))
    if "freq_hz" in sec and "omega0" in sec:
        raise ConfigError("reference", "give freq_hz or omega0, not both")
    amp = _get(sec, "amplitude", "reference", float, 1.0)
    phase = _get(sec, "phase", "reference", float, 0.0)
    if "omega0" in sec:
        w0 = _get(sec, "omega0", "reference", float)
    else:
        w0 = 2 * math.pi * _get(sec, "freq_hz", "reference", float, defaults.LOCK_IN_FREQ_HZ)
    kw["reference"] = _wrap("reference", ReferenceSpec, amp, w0, phase)

    sec = _section(raw, "identifier")
    _check_keys(
        sec, "identifier", ("A_m", "Q", "gamma", "theta_cap", "init_omega_hz", "init_omega", "init_ratio", "init_r_hat")
    )
    d = defaults.default_identifier_config()
    A_m = _get(sec, "A_m", "identifier", "matrix", d.A_m)
    Q = _get(sec, "Q", "identifier", "matrix", d.Q)
    gamma = _get(sec, "gamma", "identifier", float, d.gamma)
    cap = _get(sec, "theta_cap", "identifier", float, d.theta_cap)
    if not np.allclose(Q, Q.T, rtol=1e-12, atol=0.0):
        raise ConfigError("identifier.Q", "must be symmetric")
    if np.min(np.linalg.eigvalsh(Q)) <= 0:
        raise ConfigError("identifier.Q", "must be positive definite")
    if gamma <= 0:
        raise ConfigError("identifier.gamma", "must be positive")
    if cap <= 0:
        raise ConfigError("identifier.theta_cap", "must be positive")
    kw["identifier"] = _wrap("identifier.A_m", IdentifierConfig, A_m=A_m, Q=Q, gamma=gamma, theta_cap=cap)
    given = [k for k in ("init_omega_hz", "init_omega", "init_ratio") if k in sec]
    if len(given) > 1:
        raise ConfigError("identifier", f"give only one of {', '.join(given)}")
    if "init_omega_hz" in sec:
        kw["init_omega"] = 2 * math.pi * _get(sec, "init_omega_hz", "identifier", float)
    if "init_omega" in sec:
        kw["init_omega"] = _get(sec, "init_omega", "identifier", float)
    if "init_ratio" in sec:
        kw["init_ratio"] = _get(sec, "init_ratio", "identifier", float)
    if kw.get("init_omega", 1.0) < 0 or kw.get("init_ratio", 1.0) < 0:
        raise ConfigError(f"identifier.{given[0]}", "must be non-negative")
    if "init_r_hat" in sec:
        r = _get(sec, "init_r_hat", "identifier", "vector")
        if len(r) != 2:
            raise ConfigError("identifier.init_r_hat", "expected 2 entries")
        kw["init_r_hat"] = r

    sec = _section(raw, "loop")
    _check_keys(sec, "loop", ("k1", "k2", "k3", "k4", "zeta", "tau", "resonators", "x0", "xc0"))
    b = defaults.DEFAULT_BASE
    base_kw = {k: _get(sec, k, "loop", float, getattr(b, k)) for k in ("k1", "k2", "k3", "tau")}
    base = _wrap("loop", LoopParams, k4=0.0, zeta=0.0, **base_kw)
    if ("k4" in sec) != ("zeta" in sec):
        raise ConfigError("loop", "k4 and zeta must be given together")
    if "k4" in sec:
        res = (_get(sec, "k4", "loop", float), _get(sec, "zeta", "loop", float))
        _wrap("loop.zeta", base.with_resonator, *res)
        kw["track_resonator"] = res
    if "resonators" in sec:
        rows = sec["resonators"]
        if not isinstance(rows, list) or not rows:
            raise ConfigError("loop.resonators", "expected a non-empty array of tables")
        entries = {}
        for i, row in enumerate(rows):
            p = f"loop.resonators[{i}]"
            if not isinstance(row, dict):
                raise ConfigError(p, "expected a table")
            _check_keys(row, p, ("freq_hz", "k4", "zeta"))
            f = _get(row, "freq_hz", p, float, required=True)
            if f <= 0:
                raise ConfigError(f"{p}.freq_hz", "must be positive")
            if f in entries:
                raise ConfigError(f"{p}.freq_hz", f"duplicate frequency {f}")
            k4 = _get(row, "k4", p, float, required=True)
            zeta = _get(row, "zeta", p, float, required=True)
            _wrap(f"{p}.zeta", base.with_resonator, k4, zeta)
            entries[f] = (k4, zeta)
    else:
        entries = dict(defaults.DEFAULT_RESONATORS)
    kw["table"] = ResonatorTable(base, entries)
    for name in ("x0", "xc0"):
        if name in sec:
            v = _get(sec, name, "loop", "vector")
            if len(v) != 6:
                raise ConfigError(f"loop.{name}", "expected 6 entries")
            kw[name] = v

    sec = _section(raw, "simulation")
    skeys = ("h", "t_end", "t_end_identify", "discard_cycles", "measure_cycles", "settle_factor", "settle_tol",
             "settle_horizon", "loop_decay", "init_ratio")
    _check_keys(sec, "simulation", skeys)
    h = _get(sec, "h", "simulation", float, 1e-3)
    if h <= 0:
        raise ConfigError("simulation.h", "must be positive")
    kw["h"] = h
    for k, dflt in (("t_end", 40.0), ("t_end_identify", 20.0)):
        v = _get(sec, k, "simulation", float, dflt)
        if v <= 0:
            raise ConfigError(f"simulation.{k}", "must be positive")
        kw[k] = v
    s = SimSettings()
    sk = {"h": h}
    for k in ("discard_cycles", "measure_cycles"):
        v = _get(sec, k, "simulation", int, getattr(s, k))
        if v < (1 if k == "measure_cycles" else 0):
            raise ConfigError(f"simulation.{k}", "out of range")
        sk[k] = v
    for k in ("settle_factor", "settle_tol", "settle_horizon", "loop_decay", "init_ratio"):
        v = _get(sec, k, "simulation", float, getattr(s, k))
        if v < 0 or (k in ("settle_tol", "settle_horizon", "init_ratio") and v == 0):
            raise ConfigError(f"simulation.{k}", "out of range")
        sk[k] = v
    kw["settings"] = SimSettings(**sk)

    sec = _section(raw, "bode")
    _check_keys(sec, "bode", ("freqs_hz", "mode", "channel", "data"))
    if "freqs_hz" in sec:
        fr = _get(sec, "freqs_hz", "bode", "vector")
        if not fr or any(f <= 0 for f in fr):
            raise ConfigError("bode.freqs_hz", "expected positive frequencies")
        if len(set(fr)) != len(fr):
            raise ConfigError("bode.freqs_hz", "duplicate frequency")
        kw["bode_freqs"] = tuple(sorted(fr))
    mode = _get(sec, "mode", "bode", str, "simulated")
    if mode not in ("simulated", "analytic"):
        raise ConfigError("bode.mode", "expected 'simulated' or 'analytic'")
    kw["bode_mode"] = mode
    ch = _get(sec, "channel", "bode", str, "y")
    if ch not in ("y", "y_c"):
        raise ConfigError("bode.channel", "expected 'y' or 'y_c'")
    kw["bode_channel"] = ch
    if "data" in sec:
        kw["data_path"] = _resolve(_get(sec, "data", "bode", str), base_dir)

    sec = _section(raw, "fit")
    _check_keys(sec, "fit", ("k4_grid", "zeta_grid", "min_decay"))
    for k in ("k4_grid", "zeta_grid"):
        if k in sec:
            g = _get(sec, k, "fit", "vector")
            if not g:
                raise ConfigError(f"fit.{k}", "must be non-empty")
            kw[k] = g
    md = _get(sec, "min_decay", "fit", float, 0.0)
    if md < 0:
        raise ConfigError("fit.min_decay", "must be non-negative")
    kw["min_decay"] = md

    sec = _section(raw, "output")
    _check_keys(sec, "output", ("dir",))
    if "dir" in sec:
        kw["out_dir"] = _resolve(_get(sec, "dir", "output", str), base_dir)
    if "seed" in raw:
        kw["seed"] = _get(raw, "seed", "", int)
    return RunConfig(**kw)


def _resolve(p: str, base_dir: Optional[Path]) -> str:
    path = Path(p)
    if base_dir is not None and not path.is_absolute():
        path = base_dir / path
    return str(path)


def load_config(path=None) -> RunConfig:
    """Read and validate a configuration file; ``None`` gives the defaults.

    ``.json`` files are decoded as JSON, anything else as TOML.  Relative
    paths inside the file are resolved against the file's directory.
    """
    if path is None:
        return RunConfig()
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(str(p), f"cannot read: {exc.strerror or exc}") from None
    try:
        raw = json.loads(text) if p.suffix.lower() == ".json" else tomllib.loads(text)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(str(p), f"parse error: {exc}") from None
    return parse_config(raw, p.parent)
