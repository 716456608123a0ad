"""Sinusoidal exosystem ``r1 = A sin(w0 t + phi)``, ``r2 = dr1/dt``."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Mr = [0, r1]: selects the position into the velocity equation.
M = np.array([[0.0, 0.0], [1.0, 0.0]])


@dataclass(frozen=True)
class ReferenceSpec:
    """Amplitude, angular frequency (rad/s) and phase (rad) of the stimulus."""

    amplitude: float = 1.0
    omega0: float = 2 * math.pi * 0.55
    phase: float = 0.0

    def __post_init__(self):
        for name in ("amplitude", "omega0", "phase"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if not self.omega0 > 0:
            raise ValueError("omega0 must be positive")
        if self.amplitude < 0:
            raise ValueError("amplitude must be non-negative")

    @classmethod
    def from_hz(cls, freq_hz: float, amplitude: float = 1.0, phase: float = 0.0):
        return cls(amplitude=amplitude, omega0=2 * math.pi * freq_hz, phase=phase)

    @property
    def freq_hz(self) -> float:
        return self.omega0 / (2 * math.pi)

    @property
    def period(self) -> float:
        return 2 * math.pi / self.omega0

    @property
    def theta(self) -> float:
        return theta_true(self)

    def system_matrix(self) -> np.ndarray:
        """State matrix of the exosystem, ``[[0, 1], [-w0^2, 0]]``."""
        return np.array([[0.0, 1.0], [-self.omega0**2, 0.0]])


def reference_state(spec: ReferenceSpec, t) -> np.ndarray:
    """Closed-form ``[r1(t), r2(t)]``; ``t`` may be a scalar or an array (result shape ``(2, ...)``)."""
    arg = spec.omega0 * np.asarray(t, dtype=float) + spec.phase
    return np.array([spec.amplitude * np.sin(arg), spec.amplitude * spec.omega0 * np.cos(arg)])


def reference_position(spec: ReferenceSpec, t: float) -> float:
    return spec.amplitude * math.sin(spec.omega0 * t + spec.phase)


def regressor(spec: ReferenceSpec, t) -> np.ndarray:
    """``M r(t) = [0, r1(t)]``."""
    r1 = spec.amplitude * np.sin(spec.omega0 * np.asarray(t, dtype=float) + spec.phase)
    return np.array([np.zeros_like(r1), r1])


def theta_true(spec: ReferenceSpec) -> float:
    """The frequency parameter ``-w0^2``."""
    return -spec.omega0**2
