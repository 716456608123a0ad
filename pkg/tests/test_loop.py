import math

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from adaptive_imp.defaults import DEFAULT_BASE, IMP_LIMIT_PARAMS, default_identifier_config, default_table
from adaptive_imp.errors import InvalidParams, NotHurwitz
from adaptive_imp.identifier import IdentifierState
from adaptive_imp.loop import (
    LoopParams,
    assemble,
    check_hurwitz,
    closed_loop_rhs,
    delay_frequency_response,
    frequency_response,
    ideal_steady_state_error,
    loop_output,
    simulate_coupled,
    stability_margin,
)
from adaptive_imp.analysis import sinusoid_coefficient
from adaptive_imp.numcore import OdeSystem, fit_exponential_rate, integrate
from adaptive_imp.reference import ReferenceSpec

CFG = default_identifier_config()
TABLE = default_table()
STATES = ("z11", "z12", "z21", "z22", "v1", "v2")


def loop_tf(params: LoopParams, w_design: float, s: complex) -> complex:
    """Oracle from the block diagram: series path, resonator, Padé delay, unity feedback."""
    k1, k2, k3, k4, z, tau = params.k1, params.k2, params.k3, params.k4, params.zeta, params.tau
    G = (k1 * s + k2) / (s * s + k3 * s) + k4 / (s * s + 2 * z * w_design * s + w_design**2)
    Pd = (s * s - 6 * s / tau + 12 / tau**2) / (s * s + 6 * s / tau + 12 / tau**2)
    return Pd * G / (1 + Pd * G)


# -- parameters and assembly ----------------------------------------------------


@pytest.mark.parametrize(
    "kw", [{"tau": 0.0}, {"tau": -0.1}, {"k3": 0.0}, {"zeta": 1.0}, {"zeta": -0.1}, {"k1": math.inf}]
)
def test_params_validation(kw):
    base = dict(k1=1.0, k2=1.0, k3=1.0, k4=1.0, zeta=0.1, tau=0.1)
    base.update(kw)
    with pytest.raises(InvalidParams):
        LoopParams(**base)


def test_with_resonator_copies():
    p = DEFAULT_BASE.with_resonator(2.0, 0.3)
    assert (p.k4, p.zeta) == (2.0, 0.3) and (p.k1, p.tau) == (DEFAULT_BASE.k1, DEFAULT_BASE.tau)


def test_assemble_pade_block():
    m = assemble(LoopParams(1, 1, 1, 1, 0.1, 0.1), 1.0)
    np.testing.assert_allclose(m.Av, [[0, 1], [-1200, -60]])
    np.testing.assert_allclose(m.Dv, [0, 100])
    np.testing.assert_allclose(m.Cv, [0, -1.2])


def test_assemble_block_structure():
    p = LoopParams(2.0, 3.0, 4.0, 5.0, 0.0, 0.2)
    m = assemble(p, 1.0)
    np.testing.assert_array_equal(m.A2, [[0, 1], [-1, 0]])
    np.testing.assert_array_equal(m.A1, [[0, 1], [0, -4]])
    np.testing.assert_array_equal(m.B, [0, 1, 0, 1, 0, 0])
    np.testing.assert_allclose(m.D, [0, 0, 0, 0, 0, 25])
    np.testing.assert_array_equal(m.F, [3, 2, 5, 0, 0, 0])
    np.testing.assert_allclose(m.C, [3, 2, 5, 0, 0, -2.4])
    A = m.A
    np.testing.assert_array_equal(A[2:4, 2:4], m.A2)
    assert np.count_nonzero(A[0:2, 2:]) == 0 and np.count_nonzero(A[4:, :4]) == 0
    np.testing.assert_allclose(m.closed_loop, A + np.outer(m.D, m.F) - np.outer(m.B, m.C))


def test_assemble_zero_gains():
    m = assemble(LoopParams(0, 0, 1, 0, 0.2, 0.1), 2.0)
    np.testing.assert_array_equal(m.F, 0)
    np.testing.assert_allclose(m.C, [0, 0, 0, 0, 0, -1.2])
    # the controller states no longer feed the delay block
    np.testing.assert_array_equal(m.closed_loop[4:, :4], 0)


def test_assemble_rejects_bad_omega():
    with pytest.raises(InvalidParams):
        assemble(DEFAULT_BASE, 0.0)


# -- Padé delay -----------------------------------------------------------------


def test_delay_dc_gain():
    assert delay_frequency_response(0.3, 0.0) == 1 + 0j


def test_delay_phase_small_argument():
    H = delay_frequency_response(0.1, 1.0)
    phase = math.atan2(H.imag, H.real)
    assert phase == pytest.approx(-0.1, rel=1e-4)


@pytest.mark.parametrize("tau", [0.01, 0.1, 0.3])
def test_delay_allpass_and_phase(tau):
    for w in np.logspace(-2, 3, 50):
        H = delay_frequency_response(tau, w)
        assert abs(abs(H) - 1) < 1e-12
        if w * tau <= 1:
            assert abs(math.atan2(H.imag, H.real) + w * tau) < 0.01 * w * tau


@given(st.floats(0.005, 1.0), st.floats(0.0, 500.0))
def test_delay_matches_state_space_realisation(tau, w):
    m = assemble(LoopParams(1, 1, 1, 0, 0.1, tau), 1.0)
    s = 1j * w
    H_ss = m.Cv @ np.linalg.solve(s * np.eye(2) - m.Av, m.Dv) + 1
    assert abs(H_ss - delay_frequency_response(tau, w)) < 1e-10


def test_delay_time_domain():
    tau = 0.08
    m = assemble(LoopParams(1, 1, 1, 0, 0.1, tau), 1.0)
    for f in (0.3, 1.5):
        w = 2 * math.pi * f
        tr = integrate(OdeSystem(2, lambda t, v: m.Av @ v + m.Dv * math.sin(w * t)), [0, 0], 0.0, 6 / f, 1e-3)
        u = np.sin(w * tr.t)
        y = tr.data @ m.Cv + u
        keep = tr.t >= 3 / f - 1e-9
        G = sinusoid_coefficient(tr.t[keep], y[keep], f) / sinusoid_coefficient(tr.t[keep], u[keep], f)
        assert abs(G - delay_frequency_response(tau, w)) < 1e-6


def test_delay_rejects_bad_tau():
    with pytest.raises(InvalidParams):
        delay_frequency_response(0.0, 1.0)


# -- closed loop ----------------------------------------------------------------


def test_rhs_origin_and_injection():
    p = DEFAULT_BASE.with_resonator(1.0, 0.2)
    np.testing.assert_array_equal(closed_loop_rhs(np.zeros(6), 0.0, 2.0, p), np.zeros(6))
    np.testing.assert_array_equal(closed_loop_rhs(np.zeros(6), 1.0, 2.0, p), assemble(p, 2.0).B)


vec6 = st.lists(st.floats(-10, 10), min_size=6, max_size=6)


@given(vec6, vec6, st.floats(-5, 5), st.floats(-5, 5), st.floats(0.1, 20))
def test_rhs_linearity(x, y, r, q, w):
    p = DEFAULT_BASE.with_resonator(3.0, 0.3)
    x, y = np.array(x), np.array(y)
    lhs = closed_loop_rhs(x, r, w, p) + closed_loop_rhs(y, q, w, p)
    np.testing.assert_allclose(lhs, closed_loop_rhs(x + y, r + q, w, p), atol=1e-9)


def test_loop_output_is_cx():
    p = DEFAULT_BASE.with_resonator(2.0, 0.1)
    x = np.arange(1.0, 7.0)
    assert loop_output(x, p) == pytest.approx(float(assemble(p, 5.0).C @ x))


@given(
    st.floats(0.1, 5),
    st.floats(0.1, 5),
    st.floats(0.1, 3),
    st.floats(-20, 20),
    st.floats(0, 0.95),
    st.floats(0.02, 0.2),
    st.floats(0.1, 15),
    st.floats(0.01, 30),
)
def test_frequency_response_matches_block_diagram(k1, k2, k3, k4, z, tau, wd, w):
    p = LoopParams(k1, k2, k3, k4, z, tau)
    assume(abs(w - wd) > 1e-3 or z > 0)
    G_oracle = loop_tf(p, wd, 1j * w)
    G = frequency_response(p, wd, w)
    assert abs(G - G_oracle) < 1e-8 * max(1.0, abs(G_oracle))


def test_check_hurwitz():
    p = TABLE.lookup(0.55)
    w = 2 * math.pi * 0.55
    assert check_hurwitz(p, w) == stability_margin(p, w) < 0
    bad = LoopParams(-50.0, 3.0, 1.0, 1.0, 0.1, 0.08)
    with pytest.raises(NotHurwitz) as err:
        check_hurwitz(bad, w)
    assert err.value.margin > 0 and err.value.eigenvalue.real == err.value.margin


@pytest.mark.parametrize("f", sorted(IMP_LIMIT_PARAMS))
def test_undamped_resonator_tracks_perfectly(f):
    g, ph = ideal_steady_state_error(ReferenceSpec.from_hz(f), IMP_LIMIT_PARAMS[f])
    assert abs(g - 1) < 1e-6 and abs(ph) < 1e-6


def test_low_frequency_gain_tends_to_one():
    p = TABLE.lookup(0.55)
    G = frequency_response(p, 2 * math.pi * 0.55, 1e-6)
    assert abs(G - 1) < 1e-5


def test_no_forward_path_gives_zero_gain():
    p = LoopParams(0.0, 0.0, 1.0, 0.0, 0.3, 0.08)
    assert abs(frequency_response(p, 2.0, 2.0)) < 1e-15


def test_ideal_error_requires_hurwitz():
    with pytest.raises(NotHurwitz):
        ideal_steady_state_error(ReferenceSpec.from_hz(0.55), LoopParams(-50.0, 3.0, 1.0, 1.0, 0.1, 0.08))


# -- coupled simulation ---------------------------------------------------------


def test_locked_identifier_gives_zero_discrepancy():
    spec = ReferenceSpec.from_hz(0.55)
    tr = simulate_coupled(spec, CFG, IdentifierState.locked(spec), TABLE.lookup(0.55), t_end=10.0)
    assert np.max(tr["l_norm"]) < 1e-9
    np.testing.assert_allclose(tr["y"], tr["y_c"], atol=1e-9)


def test_frozen_estimate_matches_direct_integration():
    spec = ReferenceSpec.from_hz(0.95, 1.3, 0.2)
    p = TABLE.lookup(0.95)
    x0 = np.linspace(-0.2, 0.3, 6)
    tr = simulate_coupled(spec, CFG, IdentifierState.locked(spec), p, x0, x0, 8.0, adapt=False)
    w0 = spec.omega0
    direct = integrate(
        OdeSystem(6, lambda t, x: closed_loop_rhs(x, spec.amplitude * math.sin(w0 * t + spec.phase), w0, p)),
        x0,
        0.0,
        8.0,
        1e-3,
    )
    x = np.column_stack([tr["x_" + n] for n in STATES])
    xc = np.column_stack([tr["xc_" + n] for n in STATES])
    assert np.max(np.abs(x - direct.data)) < 1e-12
    assert np.max(np.abs(xc - direct.data)) < 1e-12


def test_coupled_requires_hurwitz():
    spec = ReferenceSpec.from_hz(0.55)
    with pytest.raises(NotHurwitz):
        simulate_coupled(spec, CFG, IdentifierState.locked(spec), LoopParams(-50.0, 3.0, 1.0, 1.0, 0.1, 0.08), t_end=1.0)


def test_coupled_channels_are_consistent():
    spec = ReferenceSpec.from_hz(0.55, 2.0)
    p = TABLE.lookup(0.55)
    tr = simulate_coupled(spec, CFG, IdentifierState.detuned(spec, 0.5), p, t_end=3.0)
    C = assemble(p, 1.0).C
    x = np.column_stack([tr["x_" + n] for n in STATES])
    xc = np.column_stack([tr["xc_" + n] for n in STATES])
    np.testing.assert_allclose(tr["y"], x @ C, atol=1e-12)
    np.testing.assert_allclose(tr["e"], tr["r1_hat"] - tr["y"], atol=1e-12)
    np.testing.assert_allclose(tr["e_c"], tr["r1"] - tr["y_c"], atol=1e-12)
    np.testing.assert_allclose(tr["l_norm"], np.linalg.norm(x - xc, axis=1), atol=1e-12)
    np.testing.assert_allclose(tr["e_diff"], tr["e"] - tr["e_c"], atol=1e-10)
    np.testing.assert_allclose(tr["omega_hat"], np.sqrt(-tr["theta_hat"]))
    assert tr["omega_hat"][0] == pytest.approx(0.5 * spec.omega0)


def test_discrepancy_decays_from_detuned_start():
    spec = ReferenceSpec.from_hz(0.55)
    tr = simulate_coupled(spec, CFG, IdentifierState.detuned(spec, 0.5), TABLE.lookup(0.55), t_end=40.0)
    rate, r2 = fit_exponential_rate(tr.t, tr["l_norm"], spec.period)
    assert rate > 0 and r2 > 0.9
    assert abs(tr.final("e") - tr.final("e_c")) < 1e-6 * spec.amplitude
    margin = tr.meta["hurwitz_margin"]
    print(f"l decay rate {rate:.3f} vs half of min(-margin, identifier rate): {0.5 * -margin:.3f}")


def test_ideal_loop_superposition():
    p = TABLE.lookup(0.25)
    out = []
    for a in (1.0, 2.0):
        spec = ReferenceSpec.from_hz(0.25, a, 0.5)
        tr = simulate_coupled(spec, CFG, IdentifierState.locked(spec), p, t_end=8.0, adapt=False)
        out.append(tr["y_c"])
    assert np.max(np.abs(out[1] - 2 * out[0])) < 1e-10
