"""
The second-order Padé delay block
=================================

The sensorimotor delay is a two-state all-pass block.  Its gain is exactly
one at every frequency and its phase follows ``-omega * tau`` closely while
``omega * tau`` stays below one.

"""

import math

import numpy as np

from adaptive_imp import LoopParams, assemble, delay_frequency_response, integrate, OdeSystem
from adaptive_imp.analysis import sinusoid_coefficient

tau = 0.08
print(" omega*tau   |H|        phase      -omega*tau   rel. error")
for wt in (0.01, 0.1, 0.3, 1.0, 2.0, 5.0):
    H = delay_frequency_response(tau, wt / tau)
    ph = math.atan2(H.imag, H.real)
    print(f"{wt:9.2f}   {abs(H):.12f}   {ph:9.5f}   {-wt:9.5f}   {abs(ph + wt) / wt:.2e}")

# Drive the state-space block with a sinusoid and compare with the rational function.
m = assemble(LoopParams(1.0, 1.0, 1.0, 0.0, 0.1, tau), 1.0)
print("\n f [Hz]   |G_sim - H|")
for f in (0.25, 1.0, 2.05):
    w = 2 * math.pi * f
    tr = integrate(OdeSystem(2, lambda t, v: m.Av @ v + m.Dv * math.sin(w * t)), [0.0, 0.0], 0.0, 6 / f, 1e-3)
    u = np.sin(w * tr.t)
    y = tr.data @ m.Cv + u
    keep = tr.t >= 4 / f - 1e-9
    G = sinusoid_coefficient(tr.t[keep], y[keep], f) / sinusoid_coefficient(tr.t[keep], u[keep], f)
    print(f"{f:6.2f}   {abs(G - delay_frequency_response(tau, w)):.2e}")
