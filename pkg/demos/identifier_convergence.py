"""
Locking onto an unknown stimulus frequency
==========================================

The identifier starts with a wrong guess of the stimulus frequency and
pulls it in while the Lyapunov value falls monotonically.

"""

import math

import numpy as np

from adaptive_imp import (
    IdentifierConfig,
    IdentifierState,
    ReferenceSpec,
    default_identifier_config,
    fit_exponential_rate,
    settling_time,
    simulate_identifier,
)

# A 0.55 Hz stimulus; the state estimate starts on the true state, the
# frequency estimate at 0.30 Hz.
spec = ReferenceSpec.from_hz(0.55)
cfg = default_identifier_config()
init = IdentifierState.detuned(spec, 0.30 / 0.55)

tr = simulate_identifier(spec, cfg, init, t_end=20.0)

# The frequency estimate, sampled every half second.
print(" t [s]   f_hat [Hz]        V")
for k in range(0, 8001, 500):
    print(f"{tr.t[k]:6.2f}   {tr['omega_hat'][k] / (2 * math.pi):9.5f}   {tr['V'][k]:.3e}")

# V never goes up, apart from rounding.
dV = np.diff(tr["V"])
print(f"\nlargest step increase of V: {dV.max():.2e}")

# Settling to 1 % frequency error, and the exponential rate of the full error.
settle = settling_time(tr.t, tr["omega_hat"], spec.omega0)
rate, r2 = fit_exponential_rate(tr.t, tr["err_norm"], spec.period)
print(f"settles to 1 % in {settle:.3f} s")
print(f"error norm decays at {rate:.3f} 1/s (R^2 = {r2:.4f})")

# A larger adaptation gain speeds the lock-in.
print("\n gamma   settling [s]")
for gamma in (112.5, 225.0, 450.0, 900.0):
    c = IdentifierConfig(A_m=cfg.A_m, Q=cfg.Q, gamma=gamma)
    t = simulate_identifier(spec, c, init, t_end=20.0)
    print(f"{gamma:6.1f}   {settling_time(t.t, t['omega_hat'], spec.omega0)}")
