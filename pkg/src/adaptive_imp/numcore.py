"""Small dense numerical kernels.

Everything here works on plain :class:`numpy.ndarray` objects.  Matrices are
2-D float arrays, vectors are 1-D float arrays; :func:`as_matrix` and
:func:`as_vector` are the validation points for user supplied input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import (
    IntegrationDiverged,
    NoConvergence,
    NotHurwitz,
    SolveFailed,
    TooFewSamples,
)

__all__ = [
    "as_matrix",
    "as_vector",
    "OdeSystem",
    "Trajectory",
    "rk4_step",
    "integrate",
    "solve_lyapunov_2x2",
    "eigenvalues",
    "hurwitz_margin",
    "fit_exponential_rate",
]

DEFAULT_STEP = 1e-3
RATE_FLOOR = 1e-12
MIN_FIT_SAMPLES = 10


def as_matrix(a, shape: Optional[tuple] = None, name: str = "matrix") -> np.ndarray:
    """Return ``a`` as a finite 2-D float array, optionally of a given shape."""
    m = np.array(a, dtype=float, ndmin=2)
    if m.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got {m.ndim} dimensions")
    if shape is not None and m.shape != tuple(shape):
        raise ValueError(f"{name} must have shape {tuple(shape)}, got {m.shape}")
    if not np.isfinite(m).all():
        raise ValueError(f"{name} has non-finite entries")
    return m


def as_vector(v, n: Optional[int] = None, name: str = "vector") -> np.ndarray:
    x = np.array(v, dtype=float).reshape(-1)
    if n is not None and x.shape[0] != n:
        raise ValueError(f"{name} must have length {n}, got {x.shape[0]}")
    if not np.isfinite(x).all():
        raise ValueError(f"{name} has non-finite entries")
    return x


@dataclass(frozen=True)
class OdeSystem:
    """Right-hand side ``rhs(t, x) -> dx/dt`` of an ``n``-dimensional ODE."""

    n: int
    rhs: Callable[[float, np.ndarray], np.ndarray]

    def __call__(self, t, x):
        return self.rhs(t, x)


@dataclass
class Trajectory:
    """Sampled solution of an ODE, or any set of named channels on a time grid.

    ``data[k]`` is the sample at ``t[k]``.  ``channels`` labels the columns of
    ``data`` when present, and ``meta`` carries run diagnostics (projection
    events, settings) that are not time series.
    """

    t: np.ndarray
    data: np.ndarray
    channels: Optional[tuple] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.data = np.asarray(self.data, dtype=float)
        if self.data.shape[0] != self.t.shape[0]:
            raise ValueError("time grid and data have different lengths")
        if self.t.size > 1 and not np.all(np.diff(self.t) > 0):
            raise ValueError("time grid must be strictly increasing")
        if self.channels is not None:
            self.channels = tuple(self.channels)
            if len(self.channels) != self.data.shape[1]:
                raise ValueError("one channel label per data column is required")

    @property
    def h(self) -> float:
        return float(self.t[1] - self.t[0]) if self.t.size > 1 else 0.0

    @property
    def n_steps(self) -> int:
        return self.t.size - 1

    def __len__(self):
        return self.t.size

    def __getitem__(self, name: str) -> np.ndarray:
        if self.channels is None:
            raise KeyError(name)
        try:
            return self.data[:, self.channels.index(name)]
        except ValueError:
            raise KeyError(name) from None

    def __contains__(self, name):
        return self.channels is not None and name in self.channels

    def final(self, name: Optional[str] = None):
        return self[name][-1] if name is not None else self.data[-1]


def _check_finite(t, x):
    if not np.all(np.isfinite(x)):
        raise IntegrationDiverged(t)


def rk4_step(sys, t: float, state: np.ndarray, h: float) -> np.ndarray:
    """One classical fourth-order Runge-Kutta step of size ``h`` from ``(t, state)``.

    Every stage derivative is checked for finiteness so that a blow-up is
    reported at the stage where it first appears.
    """
    if not h > 0:
        raise ValueError("step size must be positive")
    x = np.asarray(state, dtype=float)
    n = getattr(sys, "n", None)
    if n is not None and x.shape[0] != n:
        raise ValueError(f"state has dimension {x.shape[0]}, system expects {n}")
    half = 0.5 * h
    k1 = np.asarray(sys(t, x), dtype=float)
    _check_finite(t, k1)
    k2 = np.asarray(sys(t + half, x + half * k1), dtype=float)
    _check_finite(t + half, k2)
    k3 = np.asarray(sys(t + half, x + half * k2), dtype=float)
    _check_finite(t + half, k3)
    k4 = np.asarray(sys(t + h, x + h * k3), dtype=float)
    _check_finite(t + h, k4)
    out = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    _check_finite(t + h, out)
    return out


def time_grid(t0: float, t_end: float, h: float) -> np.ndarray:
    """Uniform grid from ``t0`` with step ``h``; the last step is shortened to land on ``t_end``."""
    if not h > 0:
        raise ValueError("step size must be positive")
    if not t_end > t0:
        raise ValueError("t_end must be greater than t0")
    span = (t_end - t0) / h
    n = int(round(span))
    if abs(span - n) > 1e-9 * max(1.0, span):
        n = int(math.ceil(span))
    t = t0 + h * np.arange(n + 1, dtype=float)
    t[-1] = t_end
    return t


def integrate(
    sys,
    x0,
    t0: float,
    t_end: float,
    h: float = DEFAULT_STEP,
    project: Optional[Callable[[float, np.ndarray], np.ndarray]] = None,
    channels: Optional[Sequence[str]] = None,
) -> Trajectory:
    """Fixed-step RK4 integration of ``sys`` over ``[t0, t_end]``.

    ``project``, when given, maps each accepted state to its admissible
    version (e.g. a parameter clamp) before it is stored and used for the
    next step.
    """
    x = np.array(x0, dtype=float).reshape(-1)
    _check_finite(t0, x)
    t = time_grid(t0, t_end, h)
    out = np.empty((t.size, x.size))
    out[0] = x
    for k in range(t.size - 1):
        x = rk4_step(sys, t[k], x, t[k + 1] - t[k])
        if project is not None:
            x = project(t[k + 1], x)
        out[k + 1] = x
    return Trajectory(t, out, channels)


def solve_lyapunov_2x2(A_m, Q) -> np.ndarray:
    """Solve ``A_m^T P + P A_m + Q = 0`` for symmetric ``P``.

    The three unknowns ``(p11, p12, p22)`` satisfy a 3x3 linear system which
    is solved directly.  Raises :class:`NotHurwitz` if ``A_m`` is not Hurwitz
    and :class:`SolveFailed` if the system is singular or the result is not
    positive definite.
    """
    A = as_matrix(A_m, (2, 2), "A_m")
    Qm = as_matrix(Q, (2, 2), "Q")
    if not np.allclose(Qm, Qm.T, rtol=1e-12, atol=0.0):
        raise ValueError("Q must be symmetric")
    if np.min(np.linalg.eigvalsh(Qm)) <= 0:
        raise ValueError("Q must be positive definite")
    margin = hurwitz_margin(A)
    if margin >= 0:
        raise NotHurwitz(margin)

    (a, b), (c, d) = A
    # rows: (1,1), (1,2), (2,2) entries of A^T P + P A
    M = np.array(
        [
            [2 * a, 2 * c, 0.0],
            [b, a + d, c],
            [0.0, 2 * b, 2 * d],
        ]
    )
    rhs = -np.array([Qm[0, 0], Qm[0, 1], Qm[1, 1]])
    if abs(np.linalg.det(M)) < 1e-14 * max(1.0, np.abs(M).max() ** 3):
        raise SolveFailed("Lyapunov system is numerically singular")
    p11, p12, p22 = np.linalg.solve(M, rhs)
    P = np.array([[p11, p12], [p12, p22]])
    if np.min(np.linalg.eigvalsh(P)) <= 0:
        raise SolveFailed("Lyapunov solution is not positive definite")
    return P


def eigenvalues(A) -> np.ndarray:
    """Eigenvalues of a square matrix with multiplicity, as a complex array."""
    m = as_matrix(A, name="A")
    if m.shape[0] != m.shape[1]:
        raise ValueError(f"matrix must be square, got {m.shape}")
    try:
        return np.linalg.eigvals(m).astype(complex)
    except np.linalg.LinAlgError as exc:
        raise NoConvergence(str(exc)) from exc


def hurwitz_margin(A) -> float:
    """Largest real part over the spectrum of ``A``; ``A`` is Hurwitz iff this is < 0."""
    return float(np.max(eigenvalues(A).real))


def fit_exponential_rate(t, values, t_start: float = 0.0, floor: float = RATE_FLOOR):
    """Fit ``values ~ c * exp(-rate * t)`` by least squares on ``log(values)``.

    Only samples with ``t >= t_start`` and ``value > floor`` are used.

    Returns
    -------
    rate : float
        Negated slope of the log-linear fit (1/s).
    r_squared : float
        Coefficient of determination of the fit; 0 when the data has no
        variance to explain.
    """
    t = np.asarray(t, dtype=float)
    v = np.asarray(values, dtype=float)
    mask = (t >= t_start) & (v > floor) & np.isfinite(v)
    if np.count_nonzero(mask) < MIN_FIT_SAMPLES:
        raise TooFewSamples(
            f"{np.count_nonzero(mask)} usable samples, need {MIN_FIT_SAMPLES}"
        )
    ts = t[mask]
    y = np.log(v[mask])
    tc = ts - ts.mean()
    yc = y - y.mean()
    slope = float(np.dot(tc, yc) / np.dot(tc, tc))
    ss_tot = float(np.dot(yc, yc))
    ss_res = float(np.sum((yc - slope * tc) ** 2))
    r2 = 0.0 if ss_tot <= 1e-300 else 1.0 - ss_res / ss_tot
    return 0.0 - slope, r2
