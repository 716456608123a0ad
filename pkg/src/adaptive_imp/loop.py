"""Six-state IMP tracking loop driven by the identifier.

The controller-plant cascade is a second-order path ``(k1 s + k2)/(s^2 + k3 s)``
in parallel with a damped resonator ``k4/(s^2 + 2 zeta w s + w^2)``, followed
by a second-order Pade approximation of the sensorimotor delay ``tau``.  With
``x = [z1, z2, v]`` the closed loop is

    x' = (A(w) + D F - B C) x + B r_in,     y = C x,

where ``r_in`` is the estimated stimulus position ``r1_hat`` for the online
loop (with ``w = omega_hat(t)``) and the true position ``r1`` for the ideal
loop (with ``w = omega0``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidParams, NotHurwitz
from .identifier import (
    IdentifierConfig,
    IdentifierState,
    _ThetaProjector,
    error_coordinates,
    identifier_channels,
)
from .numcore import DEFAULT_STEP, Trajectory, as_vector, eigenvalues, rk4_step, time_grid
from .reference import ReferenceSpec, theta_true

STATE_NAMES = ("z11", "z12", "z21", "z22", "v1", "v2")

COUPLED_CHANNELS = (
    ("r1", "r1_hat", "r2_hat", "theta_hat", "omega_hat")
    + tuple("x_" + s for s in STATE_NAMES)
    + tuple("xc_" + s for s in STATE_NAMES)
    + ("y", "y_c", "e", "e_c", "e_diff", "l_norm", "err_norm")
)


@dataclass(frozen=True)
class LoopParams:
    """Controller gains, resonator damping and sensorimotor delay (s)."""

    k1: float
    k2: float
    k3: float
    k4: float
    zeta: float
    tau: float

    def __post_init__(self):
        for name in ("k1", "k2", "k3", "k4", "zeta", "tau"):
            if not math.isfinite(getattr(self, name)):
                raise InvalidParams(f"{name} must be finite")
        if self.tau <= 0:
            raise InvalidParams("tau must be positive")
        if self.k3 <= 0:
            raise InvalidParams("k3 must be positive")
        if not 0 <= self.zeta < 1:
            raise InvalidParams("zeta must lie in [0, 1)")

    def with_resonator(self, k4: float, zeta: float) -> "LoopParams":
        return replace(self, k4=float(k4), zeta=float(zeta))


@dataclass(frozen=True)
class LoopMatrices:
    A1: np.ndarray
    A2: np.ndarray
    Av: np.ndarray
    Dv: np.ndarray
    Cv: np.ndarray
    B: np.ndarray
    D: np.ndarray
    F: np.ndarray
    C: np.ndarray

    @property
    def A(self) -> np.ndarray:
        out = np.zeros((6, 6))
        out[0:2, 0:2] = self.A1
        out[2:4, 2:4] = self.A2
        out[4:6, 4:6] = self.Av
        return out

    @property
    def closed_loop(self) -> np.ndarray:
        """``A + D F - B C``."""
        return self.A + np.outer(self.D, self.F) - np.outer(self.B, self.C)


def resonator_matrix(omega: float, zeta: float) -> np.ndarray:
    return np.array([[0.0, 1.0], [-omega * omega, -2.0 * zeta * omega]])


def assemble(params: LoopParams, omega: float) -> LoopMatrices:
    """Block matrices of the loop with the resonator tuned to ``omega`` (rad/s)."""
    if not omega > 0:
        raise InvalidParams("omega must be positive")
    k1, k2, k3, k4, tau = params.k1, params.k2, params.k3, params.k4, params.tau
    Av = np.array([[0.0, 1.0], [-12.0 / tau**2, -6.0 / tau]])
    Dv = np.array([0.0, 1.0 / tau**2])
    Cv = np.array([0.0, -12.0 * tau])
    return LoopMatrices(
        A1=np.array([[0.0, 1.0], [0.0, -k3]]),
        A2=resonator_matrix(omega, params.zeta),
        Av=Av,
        Dv=Dv,
        Cv=Cv,
        B=np.array([0.0, 1.0, 0.0, 1.0, 0.0, 0.0]),
        D=np.concatenate([np.zeros(4), Dv]),
        F=np.array([k2, k1, k4, 0.0, 0.0, 0.0]),
        C=np.array([k2, k1, k4, 0.0, 0.0, -12.0 * tau]),
    )


def closed_loop_matrix(params: LoopParams, omega: float) -> np.ndarray:
    return assemble(params, omega).closed_loop


def stability_margin(params: LoopParams, omega0: float) -> float:
    """Largest real part of the ideal closed-loop spectrum at ``omega0``."""
    return float(np.max(eigenvalues(closed_loop_matrix(params, omega0)).real))


def check_hurwitz(params: LoopParams, omega0: float) -> float:
    """Return the stability margin, raising :class:`NotHurwitz` if it is not negative."""
    lam = eigenvalues(closed_loop_matrix(params, omega0))
    worst = lam[np.argmax(lam.real)]
    if worst.real >= 0:
        raise NotHurwitz(
            worst.real,
            eigenvalue=complex(worst),
            message=f"closed loop is not Hurwitz at omega0 = {omega0:.6g} rad/s: eigenvalue {worst:.6g}",
        )
    return float(worst.real)


def delay_frequency_response(tau: float, omega: float) -> complex:
    """Frequency response of the Pade delay block at ``s = j omega``."""
    if not tau > 0:
        raise InvalidParams("tau must be positive")
    s = 1j * omega
    return complex((s * s - 6 * s / tau + 12 / tau**2) / (s * s + 6 * s / tau + 12 / tau**2))


def closed_loop_rhs(x, r1_input: float, omega: float, params: LoopParams) -> np.ndarray:
    m = assemble(params, omega)
    return m.closed_loop @ np.asarray(x, dtype=float) + m.B * r1_input


def loop_output(x, params: LoopParams) -> float:
    """Plant position ``y = C x`` (independent of the resonator frequency)."""
    return float(assemble(params, 1.0).C @ np.asarray(x, dtype=float))


def frequency_response(params: LoopParams, omega_design: float, omega: float) -> complex:
    """Ideal closed-loop response ``r1 -> y`` at ``omega`` with the resonator tuned to ``omega_design``."""
    m = assemble(params, omega_design)
    H = m.closed_loop
    return complex(m.C @ np.linalg.solve(1j * omega * np.eye(6) - H, m.B))


def ideal_steady_state_error(spec: ReferenceSpec, params: LoopParams):
    """Gain and phase (rad) of the ideal loop ``r1 -> y_c`` at the stimulus frequency."""
    check_hurwitz(params, spec.omega0)
    G = frequency_response(params, spec.omega0, spec.omega0)
    return abs(G), math.atan2(G.imag, G.real)


def _coupled_kernel(spec: ReferenceSpec, cfg: IdentifierConfig, params: LoopParams, adapt: bool):
    """Right-hand side of the stacked system ``[dr1, dr2, dtheta, l, x_c]``.

    ``l = x - x_c`` is integrated instead of ``x`` itself; since
    ``x' - x_c' = H l + (A(omega_hat) - A_c) x + B dr1`` this is the same ODE.
    """
    m = assemble(params, spec.omega0)
    H = m.closed_loop
    B = m.B
    (a11, a12), (a21, a22) = cfg.A_m
    p12, p22 = cfg.P[0, 1], cfg.P[1, 1]
    g = cfg.gamma
    amp, w0, ph = spec.amplitude, spec.omega0, spec.phase
    theta = theta_true(spec)
    cap = cfg.theta_cap
    two_zeta = 2.0 * params.zeta
    sin = math.sin

    def rhs(t, s):
        r1 = amp * sin(w0 * t + ph)
        d1, d2, dth = s[0], s[1], s[2]
        l = s[3:9]
        xc = s[9:15]
        out = np.empty(15)
        if adapt:
            out[0] = a11 * d1 + a12 * d2
            out[1] = a21 * d1 + a22 * d2 + dth * r1
            out[2] = -g * (p12 * d1 + p22 * d2) * r1
        else:
            out[0:3] = 0.0
        # stage values may dip past the clamp between steps; evaluate omega_hat on the admissible set
        w2 = -min(theta + dth, -cap)
        w_hat = math.sqrt(w2)
        x2, x3 = xc[2] + l[2], xc[3] + l[3]
        dl = H @ l
        dl[1] += d1
        dl[3] += d1 - (w2 - w0 * w0) * x2 - two_zeta * (w_hat - w0) * x3
        out[3:9] = dl
        out[9:15] = H @ xc + B * r1
        return out

    return rhs


def simulate_coupled(
    spec: ReferenceSpec,
    id_cfg: IdentifierConfig,
    id_init: IdentifierState,
    params: LoopParams,
    x0=None,
    xc0=None,
    t_end: float = 40.0,
    h: float = DEFAULT_STEP,
    adapt: bool = True,
) -> Trajectory:
    """Simulate identifier, online loop and ideal loop together on ``[0, t_end]``.

    The online loop is driven by ``r1_hat`` with its resonator at
    ``omega_hat(t)`` (re-evaluated at every Runge-Kutta stage); the ideal loop
    is driven by ``r1`` with the resonator at ``omega0``.  With
    ``adapt=False`` the identifier is frozen at its initial estimate.

    Raises :class:`NotHurwitz` when the ideal loop at ``omega0`` is unstable.
    """
    margin = check_hurwitz(params, spec.omega0)
    x0 = np.zeros(6) if x0 is None else as_vector(x0, 6, "x0")
    xc0 = np.zeros(6) if xc0 is None else as_vector(xc0, 6, "xc0")
    e0 = error_coordinates(id_init, spec, 0.0)
    proj = _ThetaProjector(theta_true(spec), id_cfg.theta_cap)
    s = np.concatenate([e0.delta_r, [e0.delta_theta], x0 - xc0, xc0])
    s = proj(0.0, s)
    rhs = _coupled_kernel(spec, id_cfg, params, adapt)
    t = time_grid(0.0, t_end, h)
    out = np.empty((t.size, 15))
    out[0] = s
    for k in range(t.size - 1):
        s = proj(t[k + 1], rk4_step(rhs, t[k], s, t[k + 1] - t[k]))
        out[k + 1] = s

    ident = identifier_channels(spec, id_cfg, t, out[:, 0:3])
    l = out[:, 3:9]
    xc = out[:, 9:15]
    x = xc + l
    C = assemble(params, spec.omega0).C
    r1 = ident[:, 0]
    r1_hat = ident[:, 2]
    y = x @ C
    y_c = xc @ C
    data = np.column_stack(
        [
            r1,
            r1_hat,
            ident[:, 3],
            ident[:, 4],
            ident[:, 5],
            x,
            xc,
            y,
            y_c,
            r1_hat - y,
            r1 - y_c,
            ident[:, 6] - l @ C,
            np.linalg.norm(l, axis=1),
            ident[:, 10],
        ]
    )
    meta = {
        "projection_events": [te for te, _ in proj.events],
        "hurwitz_margin": margin,
        "h": h,
    }
    return Trajectory(t, data, COUPLED_CHANNELS, meta=meta)
