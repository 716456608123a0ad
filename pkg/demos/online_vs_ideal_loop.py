"""
Online loop against the loop that knows the frequency
=====================================================

The online loop is driven by the identifier's state estimate and retunes
its resonator to the current frequency estimate.  The ideal loop sees the
true stimulus and the true frequency.  Their state difference dies out
exponentially once the identifier has locked on.

"""

import numpy as np

from adaptive_imp import (
    IdentifierState,
    ReferenceSpec,
    default_identifier_config,
    default_table,
    fit_exponential_rate,
    simulate_coupled,
)

cfg = default_identifier_config()
table = default_table()

for f in (0.1, 0.55, 2.05):
    spec = ReferenceSpec.from_hz(f)
    params = table.lookup(f)
    tr = simulate_coupled(spec, cfg, IdentifierState.detuned(spec, 0.5), params, t_end=40.0)
    rate, r2 = fit_exponential_rate(tr.t, tr["l_norm"], spec.period)
    print(f"\n{f} Hz: ideal-loop margin {tr.meta['hurwitz_margin']:.3f}, |l| decays at {rate:.3f} 1/s (R^2 {r2:.4f})")
    print("  t [s]      |l|          e - e_c")
    for t in (0.0, 2.0, 5.0, 10.0, 20.0, 30.0, 40.0):
        k = int(np.searchsorted(tr.t, t - 1e-9))
        print(f"{tr.t[k]:7.1f}   {tr['l_norm'][k]:.3e}   {tr['e'][k] - tr['e_c'][k]: .3e}")
