"""Frozen default parameters.

None of the gains below are published values.  The identifier gains were
tuned so that a 0.30 Hz initial estimate locks onto a 0.55 Hz stimulus in
roughly 2.5 s.  The loop parameters keep ``k1, k2, k3, tau`` shared and fit
``(k4, zeta)`` per stimulus frequency against ``SYNTHETIC_TREND``, a
hand-made Bode target with near-unit gain below 0.5 Hz and growing lag and
attenuation above it.  The fit used the default grids with ``min_decay=0.4``
so every entry leaves a comfortable stability margin.
"""

from __future__ import annotations

import math

import numpy as np

from .analysis import BodeDataset, FrequencyResponsePoint, ResonatorTable
from .identifier import IdentifierConfig
from .loop import LoopParams

DEFAULT_FREQS_HZ = (0.1, 0.25, 0.55, 0.95, 1.45, 2.05)

DEFAULT_BASE = LoopParams(k1=3.0, k2=3.0, k3=1.0, k4=0.0, zeta=0.0, tau=0.08)

# (k4, zeta) per stimulus frequency in Hz; k4 values are points of the signed log grid
DEFAULT_RESONATORS = {
    0.1: (2.154434690031882, 0.1125),
    0.25: (6.812920690579608, 0.2625),
    0.55: (10.0, 0.4125),
    0.95: (2.154434690031882, 0.075),
    1.45: (31.622776601683793, 0.8625),
    2.05: (46.41588833612777, 0.9),
}

FIT_MIN_DECAY = 0.4

_TREND_GAIN = (1.0, 1.0, 0.95, 0.85, 0.7, 0.55)
_TREND_PHASE_DEG = (-2.0, -8.0, -30.0, -60.0, -95.0, -130.0)

SYNTHETIC_TREND = BodeDataset(
    tuple(
        FrequencyResponsePoint(f, g, math.radians(p))
        for f, g, p in zip(DEFAULT_FREQS_HZ, _TREND_GAIN, _TREND_PHASE_DEG)
    ),
    source="experimental-import",
)

# undamped resonator (zeta = 0) with gains that keep the ideal loop Hurwitz at each frequency
IMP_LIMIT_PARAMS = {
    0.1: LoopParams(3.0, 3.0, 1.0, 3.1622776601683795, 0.0, 0.08),
    0.55: LoopParams(3.0, 3.0, 1.0, 10.0, 0.0, 0.08),
    1.0: LoopParams(1.0, 1.0, 1.0, -14.677992676220699, 0.0, 0.08),
    2.05: LoopParams(3.0, 3.0, 1.0, -68.12920690579611, 0.0, 0.08),
}

LOCK_IN_FREQ_HZ = 0.55
LOCK_IN_INIT_HZ = 0.30


def default_identifier_config() -> IdentifierConfig:
    return IdentifierConfig(A_m=np.array([[0.0, 1.0], [-9.0, -10.0]]), Q=np.eye(2), gamma=450.0, theta_cap=1e-4)


def default_table() -> ResonatorTable:
    return ResonatorTable(DEFAULT_BASE, dict(DEFAULT_RESONATORS))
