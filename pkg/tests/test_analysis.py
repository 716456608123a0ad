import math
import threading

import numpy as np
import pytest
from hypothesis import given, strategies as st

from adaptive_imp.analysis import (
    DEFAULT_K4_GRID,
    DEFAULT_ZETA_GRID,
    THREADS_ENV,
    BodeDataset,
    FrequencyResponsePoint,
    ResonatorTable,
    SimSettings,
    SweepError,
    analytic_bode,
    bode_sweep,
    extract_response,
    fit_dataset,
    fit_frequency_point,
    format_bode_csv,
    parallel_map,
    parse_bode_csv,
    point_loss,
    simulate_frequency_point,
    sinusoid_coefficient,
    transient_cycles,
    wrap_phase,
)
from adaptive_imp.defaults import (
    DEFAULT_BASE,
    FIT_MIN_DECAY,
    SYNTHETIC_TREND,
    default_identifier_config,
    default_table,
)
from adaptive_imp.errors import DataFormatError, NoFeasiblePoint, WindowTooShort, ZeroInput
from adaptive_imp.identifier import IdentifierState
from adaptive_imp.loop import LoopParams, frequency_response, ideal_steady_state_error, stability_margin
from adaptive_imp.numcore import Trajectory
from adaptive_imp.reference import ReferenceSpec

CFG = default_identifier_config()
TABLE = default_table()


def sine_traj(f, t_end, out_fn, h=1e-3):
    t = np.arange(0.0, t_end + h / 2, h)
    u = np.sin(2 * math.pi * f * t)
    return Trajectory(t, np.column_stack([u, out_fn(t, u)]), ("u", "y"))


# -- points and datasets --------------------------------------------------------


@pytest.mark.parametrize(
    "phase, wrapped",
    [(0.0, 0.0), (math.pi, math.pi), (-math.pi, math.pi), (3 * math.pi / 2, -math.pi / 2), (-7.0, -7.0 + 2 * math.pi)],
)
def test_wrap_phase_examples(phase, wrapped):
    assert wrap_phase(phase) == pytest.approx(wrapped, abs=1e-12)


@given(st.floats(-1e4, 1e4))
def test_wrap_phase_range_and_equivalence(p):
    w = wrap_phase(p)
    assert -math.pi < w <= math.pi
    assert abs(math.sin(w) - math.sin(p)) < 1e-9 and abs(math.cos(w) - math.cos(p)) < 1e-9


def test_wrap_phase_vectorised():
    out = wrap_phase([0.0, 2 * math.pi, -3 * math.pi])
    np.testing.assert_allclose(out, [0.0, 0.0, math.pi], atol=1e-12)


def test_point_validation_and_views():
    with pytest.raises(ValueError):
        FrequencyResponsePoint(0.0, 1.0, 0.0)
    with pytest.raises(ValueError):
        FrequencyResponsePoint(1.0, -0.1, 0.0)
    with pytest.raises(ValueError):
        FrequencyResponsePoint(1.0, math.nan, 0.0)
    p = FrequencyResponsePoint(1.0, 0.1, 5 * math.pi / 2)
    assert p.phase == pytest.approx(math.pi / 2)
    assert p.gain_db == pytest.approx(-20.0)
    assert p.phase_deg == pytest.approx(90.0)
    assert abs(p.complex - 0.1j) < 1e-15
    assert FrequencyResponsePoint(1.0, 0.0, 0.0).gain_db == -math.inf


def test_dataset_requires_increasing_frequencies():
    a, b = FrequencyResponsePoint(1.0, 1.0, 0.0), FrequencyResponsePoint(2.0, 1.0, 0.0)
    assert len(BodeDataset((a, b))) == 2
    with pytest.raises(ValueError):
        BodeDataset((b, a))
    with pytest.raises(ValueError):
        BodeDataset((a, a))
    with pytest.raises(ValueError):
        BodeDataset((a,), source="guess")


# -- CSV ----------------------------------------------------------------------


def test_parse_csv_sorts_and_skips_comments():
    text = "# lab data\nfreq_hz,gain,phase_rad\n0.5, 0.9, -0.3\n\n# second block\n0.1,1.0,-0.01\n"
    d = parse_bode_csv(text)
    np.testing.assert_array_equal(d.freqs, [0.1, 0.5])
    np.testing.assert_array_equal(d.gains, [1.0, 0.9])
    assert d.source == "experimental-import"


@pytest.mark.parametrize(
    "text, line",
    [
        ("", 1),
        ("freq_hz,gain,phase_rad\n", 1),
        ("f,g,p\n0.1,1,0\n", 1),
        ("freq_hz,gain,phase_rad\n0.1,1,0\n0.2,abc,0\n", 3),
        ("# c\nfreq_hz,gain,phase_rad\n0.1,1\n", 3),
        ("freq_hz,gain,phase_rad\n0.1,-1,0\n", 2),
        ("freq_hz,gain,phase_rad\n0.2,1,0\n0.1,1,0\n0.2,1,0\n", 4),
    ],
)
def test_parse_csv_errors_carry_line_numbers(text, line):
    with pytest.raises(DataFormatError) as err:
        parse_bode_csv(text)
    assert err.value.line == line
    assert f"line {line}" in str(err.value)


def test_parse_csv_skips_failed_status_rows():
    text = "freq_hz,gain,phase_rad,status\n0.1,1,0,ok\n0.2,,,failed: diverged\n0.3,0.5,-1,ok\n"
    np.testing.assert_array_equal(parse_bode_csv(text).freqs, [0.1, 0.3])


@given(
    st.lists(st.floats(0.01, 10.0), min_size=1, max_size=8, unique=True),
    st.data(),
)
def test_csv_round_trip(freqs, data):
    pts = tuple(
        FrequencyResponsePoint(f, data.draw(st.floats(0.0, 5.0)), data.draw(st.floats(-3.1, 3.1)))
        for f in sorted(freqs)
    )
    d = BodeDataset(pts)
    back = parse_bode_csv(format_bode_csv(d))
    np.testing.assert_allclose(back.freqs, d.freqs, rtol=1e-11)
    np.testing.assert_allclose(back.gains, d.gains, rtol=1e-11, atol=1e-300)
    np.testing.assert_allclose(back.phases, d.phases, rtol=1e-11, atol=1e-12)


def test_format_csv_columns():
    d = BodeDataset((FrequencyResponsePoint(0.5, 1.0, -math.pi / 2),))
    text = format_bode_csv(d, {"status": ["ok"], "residual": [0.25]})
    lines = text.splitlines()
    assert lines[0] == "freq_hz,gain,phase_rad,gain_db,phase_deg,status,residual"
    assert lines[1] == "0.5,1,-1.57079632679,0,-90,ok,0.25"
    assert "\r" not in text


# -- extraction -----------------------------------------------------------------


def test_extract_identity():
    tr = sine_traj(0.5, 10.0, lambda t, u: u)
    p = extract_response(tr, "u", "y", 0.5)
    assert abs(p.gain - 1) < 1e-10 and abs(p.phase) < 1e-10


def test_extract_quarter_period_shift():
    f = 0.8
    T = 1 / f
    tr = sine_traj(f, 8.0, lambda t, u: 0.5 * np.sin(2 * math.pi * f * (t - T / 4)))
    p = extract_response(tr, "u", "y", f)
    assert abs(p.gain - 0.5) < 1e-6 and abs(p.phase + math.pi / 2) < 1e-6


def test_extract_off_grid_window():
    # 0.7 Hz periods do not fall on the 1 ms grid
    f = 0.7
    tr = sine_traj(f, 10.0, lambda t, u: 2.0 * np.sin(2 * math.pi * f * t + 0.3) + 0.1)
    p = extract_response(tr, "u", "y", f)
    assert abs(p.gain - 2) < 1e-9 and abs(p.phase - 0.3) < 1e-9


def test_extract_with_measurement_noise():
    rng = np.random.default_rng(0)
    f = 1.0
    worst = 0.0
    for _ in range(20):
        tr = sine_traj(f, 13.0, lambda t, u: u + 0.01 * rng.standard_normal(u.size))
        p = extract_response(tr, "u", "y", f, discard_cycles=3, measure_cycles=10)
        worst = max(worst, abs(p.gain - 1))
    assert worst < 0.01


def test_extract_window_too_short():
    tr = sine_traj(0.5, 9.0, lambda t, u: u)
    with pytest.raises(WindowTooShort):
        extract_response(tr, "u", "y", 0.5, discard_cycles=3, measure_cycles=2)


def test_extract_zero_input():
    t = np.linspace(0, 10, 1001)
    tr = Trajectory(t, np.column_stack([np.zeros_like(t), np.sin(t)]), ("u", "y"))
    with pytest.raises(ZeroInput):
        extract_response(tr, "u", "y", 0.5)


@given(st.floats(1e-3, 1e3), st.floats(0.2, 2.0), st.floats(-3, 3))
def test_extract_amplitude_invariance(c, f, ph):
    tr = sine_traj(f, 6 / f, lambda t, u: 0.7 * np.sin(2 * math.pi * f * t + ph))
    scaled = Trajectory(tr.t, c * tr.data, tr.channels)
    a = extract_response(tr, "u", "y", f)
    b = extract_response(scaled, "u", "y", f)
    assert abs(a.gain - b.gain) <= 1e-12 * a.gain
    assert abs(wrap_phase(a.phase - b.phase)) < 1e-12


def test_sinusoid_coefficient_ignores_offset():
    t = np.linspace(0, 2, 2001)
    X = sinusoid_coefficient(t, 3 + 1.5 * np.cos(2 * math.pi * t - 0.4), 1.0)
    assert abs(X - 1.5 * np.exp(-0.4j)) < 1e-12


# -- resonator table and threading -----------------------------------------------


def test_table_lookup_and_fallback():
    p = TABLE.lookup(0.55)
    assert (p.k4, p.zeta) == TABLE.entries[0.55]
    with pytest.warns(UserWarning, match="nearest entry 0.55"):
        q = TABLE.lookup(0.6)
    assert q == p
    assert ResonatorTable(DEFAULT_BASE).lookup(1.0) == DEFAULT_BASE
    assert TABLE.freqs == sorted(TABLE.entries)


def test_parallel_map_preserves_order():
    out = parallel_map(lambda x: (x * x, threading.current_thread().name), range(50), threads=4)
    assert [v for v, _ in out] == [x * x for x in range(50)]


def test_threads_env(monkeypatch):
    seen = set()

    def fn(x):
        seen.add(threading.current_thread().name)
        return x

    monkeypatch.setenv(THREADS_ENV, "1")
    assert parallel_map(fn, range(10)) == list(range(10))
    assert seen == {threading.current_thread().name}


# -- sweeps ---------------------------------------------------------------------


def test_transient_cycles_covers_settling_and_loop_decay():
    spec = ReferenceSpec.from_hz(0.55)
    init = IdentifierState.detuned(spec, 0.5)
    n, settle = transient_cycles(spec, CFG, init, SimSettings())
    assert settle is not None and n * spec.period >= 3 * settle
    n2, _ = transient_cycles(spec, CFG, init, SimSettings(), TABLE.lookup(0.55))
    assert n2 >= n


def test_single_frequency_sweep_matches_direct_run():
    f = 0.55
    tmpl = ReferenceSpec.from_hz(1.0)
    sweep = bode_sweep([f], tmpl, CFG, TABLE, threads=1)
    direct, tr = simulate_frequency_point(f, tmpl, CFG, TABLE.lookup(f))
    again = extract_response(tr, "r1", "y", f, tr.meta["discard_cycles"], 2)
    assert sweep.points[0] == direct == again
    assert sweep.source == "simulated"


@pytest.mark.parametrize("f", [0.1, 1.45])
def test_time_domain_matches_analytic(f):
    tmpl = ReferenceSpec.from_hz(1.0)
    sim = bode_sweep([f], tmpl, CFG, TABLE, channel="y_c", threads=1).points[0]
    g, ph = ideal_steady_state_error(ReferenceSpec.from_hz(f), TABLE.lookup(f))
    assert abs(sim.gain - g) < 1e-4 and abs(wrap_phase(sim.phase - ph)) < 1e-3


def test_analytic_bode_low_frequency_and_trend():
    d = analytic_bode(TABLE.freqs, TABLE)
    assert d.source == "analytic"
    low, high = d.points[0], d.points[-1]
    assert 0.95 <= low.gain <= 1.05 and abs(low.phase) < 0.1
    assert high.gain < low.gain and -high.phase > -low.phase


def test_sweep_errors_name_the_frequency():
    bad = ResonatorTable(LoopParams(-50.0, 3.0, 1.0, 0.0, 0.0, 0.08), {0.3: (1.0, 0.1)})
    with pytest.raises(SweepError) as err:
        bode_sweep([0.3], ReferenceSpec.from_hz(1.0), CFG, bad, threads=1)
    assert err.value.freq_hz == 0.3 and "0.3 Hz" in str(err.value)
    with pytest.raises(SweepError):
        analytic_bode([0.3], bad)
    with pytest.raises(ValueError):
        bode_sweep([0.0], ReferenceSpec.from_hz(1.0), CFG, TABLE)


# -- fitting --------------------------------------------------------------------

SMALL_K4 = tuple(np.concatenate([-np.logspace(2, -1, 10), np.logspace(-1, 2, 10)]))
SMALL_ZETA = tuple(np.linspace(0.0, 0.9, 10))


def analytic_point(params, f):
    w = 2 * math.pi * f
    return FrequencyResponsePoint.from_complex(f, frequency_response(params, w, w))


def test_point_loss():
    t = FrequencyResponsePoint(1.0, 1.0, 3.0)
    assert point_loss((math.e, -3.0), t) == pytest.approx(1 + (2 * math.pi - 6) ** 2)
    assert point_loss((0.0, 0.0), t) == math.inf
    assert point_loss(t, t) == 0.0


@pytest.mark.parametrize("f, i, j", [(0.1, 12, 3), (0.55, 14, 5), (1.45, 18, 8)])
def test_fit_recovers_planted_point(f, i, j):
    k4, z = SMALL_K4[i], SMALL_ZETA[j]
    target = analytic_point(DEFAULT_BASE.with_resonator(k4, z), f)
    got = fit_frequency_point(target, DEFAULT_BASE, SMALL_K4, SMALL_ZETA)
    assert got[:2] == (k4, z) and got[2] < 1e-12


def test_fit_selects_undamped_for_perfect_tracking():
    target = FrequencyResponsePoint(0.55, 1.0, 0.0)
    k4, z, loss = fit_frequency_point(target, DEFAULT_BASE, SMALL_K4, SMALL_ZETA)
    assert z == 0.0 and loss < 1e-20


def test_fit_no_feasible_point():
    unstable = LoopParams(-50.0, 3.0, 1.0, 0.0, 0.0, 0.08)
    with pytest.raises(NoFeasiblePoint):
        fit_frequency_point(FrequencyResponsePoint(0.5, 1.0, 0.0), unstable, SMALL_K4, SMALL_ZETA)
    with pytest.raises(NoFeasiblePoint):
        fit_frequency_point(FrequencyResponsePoint(0.5, 0.0, 0.0), DEFAULT_BASE, SMALL_K4, SMALL_ZETA)
    with pytest.raises(ValueError):
        fit_frequency_point(FrequencyResponsePoint(0.5, 1.0, 0.0), DEFAULT_BASE, [], SMALL_ZETA)


@given(st.floats(0.1, 2.0), st.floats(0.1, 1.5), st.floats(-2.5, 0.0))
def test_fit_loss_non_increasing_under_refinement(f, g, ph):
    target = FrequencyResponsePoint(f, g, ph)
    coarse = fit_frequency_point(target, DEFAULT_BASE, SMALL_K4[::3], SMALL_ZETA[::3])[2]
    fine = fit_frequency_point(target, DEFAULT_BASE, SMALL_K4, SMALL_ZETA)[2]
    assert fine <= coarse


def test_fit_min_decay_restricts_grid():
    target = FrequencyResponsePoint(0.55, 1.0, 0.0)
    k4, z, _ = fit_frequency_point(target, DEFAULT_BASE, SMALL_K4, SMALL_ZETA, min_decay=0.4)
    assert stability_margin(DEFAULT_BASE.with_resonator(k4, z), 2 * math.pi * 0.55) < -0.4


def test_fit_dataset_partial_failure():
    good = analytic_point(DEFAULT_BASE.with_resonator(SMALL_K4[14], SMALL_ZETA[5]), 0.55)
    d = BodeDataset((good, FrequencyResponsePoint(1.0, 0.0, 0.0)))
    entries, failures = fit_dataset(d, DEFAULT_BASE, SMALL_K4, SMALL_ZETA, threads=2)
    assert entries[0.55][:2] == (SMALL_K4[14], SMALL_ZETA[5])
    assert list(failures) == [1.0]


def test_default_table_reproduces_its_fit():
    entries, failures = fit_dataset(SYNTHETIC_TREND, DEFAULT_BASE, DEFAULT_K4_GRID, DEFAULT_ZETA_GRID, FIT_MIN_DECAY)
    assert not failures
    # the table stores the decimal literals of the linspace grid values
    assert entries.keys() == TABLE.entries.keys()
    for f, (k4, z, _) in entries.items():
        assert (k4, z) == pytest.approx(TABLE.entries[f], abs=1e-12)
