"""Frequency-response extraction, Bode sweeps and resonator fitting."""

from __future__ import annotations

import csv
import io
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import (
    DataFormatError,
    NoFeasiblePoint,
    NotHurwitz,
    WindowTooShort,
    ZeroInput,
)
from .identifier import IdentifierConfig, IdentifierState, settling_time, simulate_identifier
from .loop import LoopParams, frequency_response, simulate_coupled, stability_margin
from .numcore import DEFAULT_STEP, Trajectory
from .reference import ReferenceSpec

THREADS_ENV = "ADAPTIVE_IMP_THREADS"


def wrap_phase(phase):
    """Map angles to ``(-pi, pi]``."""
    wrapped = math.pi - np.mod(math.pi - np.asarray(phase, dtype=float), 2 * math.pi)
    return float(wrapped) if np.ndim(wrapped) == 0 else wrapped


@dataclass(frozen=True)
class FrequencyResponsePoint:
    freq_hz: float
    gain: float
    phase: float

    def __post_init__(self):
        if not (math.isfinite(self.freq_hz) and self.freq_hz > 0):
            raise ValueError("freq_hz must be positive")
        if not (math.isfinite(self.gain) and self.gain >= 0):
            raise ValueError("gain must be finite and non-negative")
        if not math.isfinite(self.phase):
            raise ValueError("phase must be finite")
        object.__setattr__(self, "phase", wrap_phase(self.phase))

    @classmethod
    def from_complex(cls, freq_hz: float, G: complex):
        return cls(freq_hz, abs(G), math.atan2(G.imag, G.real))

    @property
    def complex(self) -> complex:
        return self.gain * complex(math.cos(self.phase), math.sin(self.phase))

    @property
    def gain_db(self) -> float:
        return 20 * math.log10(self.gain) if self.gain > 0 else -math.inf

    @property
    def phase_deg(self) -> float:
        return math.degrees(self.phase)


@dataclass(frozen=True)
class BodeDataset:
    points: tuple
    source: str = "simulated"

    def __post_init__(self):
        pts = tuple(self.points)
        f = [p.freq_hz for p in pts]
        if any(b <= a for a, b in zip(f, f[1:])):
            raise ValueError("frequencies must be strictly increasing")
        if self.source not in ("simulated", "experimental-import", "analytic"):
            raise ValueError(f"unknown source tag {self.source!r}")
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return len(self.points)

    def __iter__(self):
        return iter(self.points)

    @property
    def freqs(self) -> np.ndarray:
        return np.array([p.freq_hz for p in self.points])

    @property
    def gains(self) -> np.ndarray:
        return np.array([p.gain for p in self.points])

    @property
    def phases(self) -> np.ndarray:
        return np.array([p.phase for p in self.points])


# -- CSV -------------------------------------------------------------------

BODE_HEADER = ("freq_hz", "gain", "phase_rad")


def parse_bode_csv(text: str, source: str = "experimental-import") -> BodeDataset:
    """Parse ``freq_hz,gain,phase_rad`` rows; ``#`` lines are comments.

    Extra columns (as written by :func:`format_bode_csv`) are ignored, except
    that rows whose ``status`` column is present and not ``ok`` are skipped.
    Rows may come in any order; they are sorted by frequency.
    """
    header = None
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        cells = [c.strip() for c in next(csv.reader([stripped]))]
        if header is None:
            if tuple(cells[:3]) != BODE_HEADER:
                raise DataFormatError(lineno, f"expected header starting with {','.join(BODE_HEADER)}")
            header = cells
            continue
        if len(cells) < 3:
            raise DataFormatError(lineno, "expected at least 3 columns")
        if "status" in header:
            k = header.index("status")
            if k < len(cells) and cells[k] != "ok":
                continue
        try:
            pt = FrequencyResponsePoint(float(cells[0]), float(cells[1]), float(cells[2]))
        except ValueError as exc:
            raise DataFormatError(lineno, str(exc)) from None
        rows.append((lineno, pt))
    if header is None:
        raise DataFormatError(1, "missing header")
    if not rows:
        raise DataFormatError(1, "no data rows")
    rows.sort(key=lambda r: r[1].freq_hz)
    for (_, a), (ln, b) in zip(rows, rows[1:]):
        if b.freq_hz == a.freq_hz:
            raise DataFormatError(ln, f"duplicate frequency {b.freq_hz}")
    return BodeDataset(tuple(p for _, p in rows), source=source)


def read_bode_csv(path, source: str = "experimental-import") -> BodeDataset:
    with open(path, encoding="utf-8") as fh:
        return parse_bode_csv(fh.read(), source)


def fmt(x) -> str:
    """Twelve significant digits, the package-wide numeric output format."""
    return format(float(x), ".12g")


def format_bode_csv(data: BodeDataset, extra: Optional[Mapping[str, Sequence]] = None) -> str:
    """CSV text with columns ``freq_hz,gain,phase_rad,gain_db,phase_deg`` plus any ``extra`` columns."""
    extra = dict(extra or {})
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(BODE_HEADER) + ["gain_db", "phase_deg"] + list(extra))
    for i, p in enumerate(data.points):
        row = [fmt(p.freq_hz), fmt(p.gain), fmt(p.phase), fmt(p.gain_db), fmt(p.phase_deg)]
        for col in extra.values():
            v = col[i]
            row.append(v if isinstance(v, str) else fmt(v))
        w.writerow(row)
    return buf.getvalue()


# -- single-frequency extraction ------------------------------------------


def sinusoid_coefficient(t, x, freq_hz: float) -> complex:
    """Complex amplitude ``X`` with ``x(t) ~ c + Re(X exp(j 2 pi f t))``.

    Computed as a least-squares projection onto ``{1, cos, sin}``; on a
    uniformly sampled whole-period window this is the single-bin Fourier
    coefficient, and it stays exact for sinusoids when the window edges do
    not fall on sample points.
    """
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    arg = 2 * math.pi * freq_hz * t
    basis = np.column_stack([np.ones_like(t), np.cos(arg), np.sin(arg)])
    (_, b, c), *_ = np.linalg.lstsq(basis, x, rcond=None)
    return complex(b, -c)


def extract_response(
    trajectory: Trajectory,
    input_channel: str,
    output_channel: str,
    freq_hz: float,
    discard_cycles: int = 3,
    measure_cycles: int = 2,
) -> FrequencyResponsePoint:
    """Gain and phase from ``input_channel`` to ``output_channel`` at ``freq_hz``.

    The first ``discard_cycles`` periods are dropped and the following
    ``measure_cycles`` periods are used.
    """
    if measure_cycles < 1 or discard_cycles < 0:
        raise ValueError("need measure_cycles >= 1 and discard_cycles >= 0")
    period = 1.0 / freq_hz
    t = trajectory.t
    t0 = t[0] + discard_cycles * period
    t1 = t0 + measure_cycles * period
    slack = 1e-9 * max(1.0, t1)
    if t[-1] < t1 - slack:
        raise WindowTooShort(
            f"trajectory ends at {t[-1]:.6g} s, window needs {t1:.6g} s"
        )
    mask = (t >= t0 - slack) & (t <= t1 + slack)
    if np.count_nonzero(mask) < 8:
        raise WindowTooShort("fewer than 8 samples in the measurement window")
    U = sinusoid_coefficient(t[mask], trajectory[input_channel][mask], freq_hz)
    if abs(U) < 1e-12:
        raise ZeroInput(f"input amplitude {abs(U):.3g} at {freq_hz} Hz")
    Y = sinusoid_coefficient(t[mask], trajectory[output_channel][mask], freq_hz)
    return FrequencyResponsePoint.from_complex(freq_hz, Y / U)


# -- per-frequency resonator table -----------------------------------------


@dataclass(frozen=True)
class ResonatorTable:
    """Per-frequency ``(k4, zeta)`` entries on top of shared ``k1, k2, k3, tau``."""

    base: LoopParams
    entries: Mapping[float, tuple] = field(default_factory=dict)

    def lookup(self, freq_hz: float) -> LoopParams:
        if not self.entries:
            return self.base
        if freq_hz in self.entries:
            k4, zeta = self.entries[freq_hz]
        else:
            nearest = min(self.entries, key=lambda f: (abs(f - freq_hz), f))
            if not math.isclose(nearest, freq_hz, rel_tol=1e-9):
                warnings.warn(
                    f"no resonator entry for {freq_hz} Hz, using nearest entry {nearest} Hz",
                    stacklevel=2,
                )
            k4, zeta = self.entries[nearest]
        return self.base.with_resonator(k4, zeta)

    @property
    def freqs(self):
        return sorted(self.entries)


@dataclass(frozen=True)
class SimSettings:
    """Time-domain settings for Bode sweeps.

    ``init_ratio`` sets the initial frequency estimate relative to the
    stimulus.  The transient discarded before measuring is the largest of
    ``discard_cycles`` periods, ``settle_factor`` times the identifier
    settling time (1 % frequency error) and the time the slowest mode of the
    ideal loop needs to shrink by ``loop_decay``.
    """

    h: float = DEFAULT_STEP
    discard_cycles: int = 3
    measure_cycles: int = 2
    init_ratio: float = 0.5
    settle_factor: float = 3.0
    settle_tol: float = 0.01
    settle_horizon: float = 60.0
    loop_decay: float = 1e-6


def _n_threads(threads: Optional[int]) -> int:
    if threads is not None:
        return max(1, int(threads))
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def parallel_map(fn, items: Iterable, threads: Optional[int] = None) -> list:
    """``[fn(x) for x in items]`` evaluated on a thread pool, results in input order."""
    items = list(items)
    n = min(_n_threads(threads), len(items)) if items else 1
    if n <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def transient_cycles(
    spec: ReferenceSpec,
    id_cfg: IdentifierConfig,
    init: IdentifierState,
    settings: SimSettings,
    params: Optional[LoopParams] = None,
):
    """Number of whole periods to discard and the measured settling time (``None`` if unsettled)."""
    tr = simulate_identifier(spec, id_cfg, init, settings.settle_horizon, settings.h)
    settle = settling_time(tr.t, tr["omega_hat"], spec.omega0, settings.settle_tol)
    t_skip = settings.settle_horizon if settle is None else settings.settle_factor * settle
    if params is not None and settings.loop_decay > 0:
        margin = stability_margin(params, spec.omega0)
        if margin < 0:
            t_skip = max(t_skip, math.log(1.0 / settings.loop_decay) / -margin)
    n = max(settings.discard_cycles, math.ceil(t_skip / spec.period - 1e-9))
    return n, settle


def simulate_frequency_point(
    freq_hz: float,
    template: ReferenceSpec,
    id_cfg: IdentifierConfig,
    params: LoopParams,
    settings: SimSettings = SimSettings(),
    channel: str = "y",
):
    """Run the coupled loop at one stimulus frequency and extract ``r1 -> channel``.

    Returns the response point and the simulated trajectory.
    """
    spec = ReferenceSpec.from_hz(freq_hz, template.amplitude, template.phase)
    init = IdentifierState.detuned(spec, settings.init_ratio)
    n_skip, settle = transient_cycles(spec, id_cfg, init, settings, params)
    t_end = (n_skip + settings.measure_cycles) * spec.period
    traj = simulate_coupled(spec, id_cfg, init, params, t_end=t_end, h=settings.h)
    traj.meta["settling_time"] = settle
    traj.meta["discard_cycles"] = n_skip
    point = extract_response(traj, "r1", channel, freq_hz, n_skip, settings.measure_cycles)
    return point, traj


class SweepError(RuntimeError):
    def __init__(self, freq_hz, cause):
        self.freq_hz = freq_hz
        self.cause = cause
        super().__init__(f"{freq_hz} Hz: {cause}")


def bode_sweep(
    freqs_hz: Sequence[float],
    template: ReferenceSpec,
    id_cfg: IdentifierConfig,
    table: ResonatorTable,
    settings: SimSettings = SimSettings(),
    channel: str = "y",
    threads: Optional[int] = None,
) -> BodeDataset:
    """Time-domain Bode points ``r1 -> channel`` of the adaptive loop.

    ``channel="y_c"`` measures the ideal loop from the same runs.  Failures
    are raised as :class:`SweepError` naming the offending frequency.
    """
    freqs = sorted(float(f) for f in freqs_hz)
    if any(f <= 0 for f in freqs):
        raise ValueError("frequencies must be positive")

    def one(f):
        try:
            return simulate_frequency_point(f, template, id_cfg, table.lookup(f), settings, channel)[0]
        except Exception as exc:
            raise SweepError(f, exc) from exc

    return BodeDataset(tuple(parallel_map(one, freqs, threads)), source="simulated")


def analytic_bode(freqs_hz: Sequence[float], table: ResonatorTable) -> BodeDataset:
    """Ideal-loop steady-state response with the resonator tuned to each stimulus frequency."""
    pts = []
    for f in sorted(freqs_hz):
        params = table.lookup(f)
        w = 2 * math.pi * f
        if stability_margin(params, w) >= 0:
            raise SweepError(f, NotHurwitz(stability_margin(params, w)))
        pts.append(FrequencyResponsePoint.from_complex(f, frequency_response(params, w, w)))
    return BodeDataset(tuple(pts), source="analytic")


# -- resonator fitting ------------------------------------------------------

DEFAULT_ZETA_GRID = tuple(np.linspace(0.0, 0.9, 25))
# signed: at high stimulus frequencies only negative k4 stabilises a lightly damped resonator
DEFAULT_K4_GRID = tuple(np.concatenate([-np.logspace(2, -2, 25), np.logspace(-2, 2, 25)]))


def point_loss(sim: FrequencyResponsePoint | tuple, target: FrequencyResponsePoint) -> float:
    gain, phase = (sim.gain, sim.phase) if isinstance(sim, FrequencyResponsePoint) else sim
    if gain <= 0:
        return math.inf
    return (math.log(gain) - math.log(target.gain)) ** 2 + wrap_phase(phase - target.phase) ** 2


def fit_frequency_point(
    target: FrequencyResponsePoint,
    base: LoopParams,
    k4_grid: Sequence[float] = DEFAULT_K4_GRID,
    zeta_grid: Sequence[float] = DEFAULT_ZETA_GRID,
    min_decay: float = 0.0,
):
    """Exhaustive grid search for the ``(k4, zeta)`` best matching ``target``.

    Only grid points where the ideal loop is Hurwitz at the target frequency
    are considered; ``min_decay > 0`` further requires every closed-loop
    eigenvalue to have real part below ``-min_decay``.  Ties go to the
    smaller ``zeta``, then the smaller ``k4``.

    Returns
    -------
    k4, zeta, loss
    """
    if target.gain <= 0:
        raise NoFeasiblePoint(f"target gain must be positive at {target.freq_hz} Hz")
    k4s = sorted(set(float(k) for k in k4_grid))
    zetas = sorted(set(float(z) for z in zeta_grid))
    if not k4s or not zetas:
        raise ValueError("grids must be non-empty")
    w = 2 * math.pi * target.freq_hz
    best = None
    for zeta in zetas:
        for k4 in k4s:
            try:
                params = base.with_resonator(k4, zeta)
            except ValueError:
                continue
            margin = stability_margin(params, w)
            if margin >= 0 or margin >= -min_decay:
                continue
            G = frequency_response(params, w, w)
            loss = point_loss((abs(G), math.atan2(G.imag, G.real)), target)
            if best is None or loss < best[2]:
                best = (k4, zeta, loss)
    if best is None:
        raise NoFeasiblePoint(f"no Hurwitz grid point at {target.freq_hz} Hz")
    return best


def fit_dataset(
    data: BodeDataset,
    base: LoopParams,
    k4_grid: Sequence[float] = DEFAULT_K4_GRID,
    zeta_grid: Sequence[float] = DEFAULT_ZETA_GRID,
    min_decay: float = 0.0,
    threads: Optional[int] = None,
):
    """Fit every point of ``data``; returns ``(table, failures)`` with failures keyed by frequency."""

    def one(pt):
        try:
            return fit_frequency_point(pt, base, k4_grid, zeta_grid, min_decay)
        except NoFeasiblePoint as exc:
            return exc

    results = parallel_map(one, list(data.points), threads)
    entries, failures = {}, {}
    for pt, res in zip(data.points, results):
        if isinstance(res, Exception):
            failures[pt.freq_hz] = str(res)
        else:
            entries[pt.freq_hz] = res
    return entries, failures
