"""Adaptive internal-model tracking of sinusoidal stimuli.

An adaptive identifier estimates the stimulus state and frequency online;
its estimate retunes the resonator of an internal-model tracking loop with a
Padé-approximated sensorimotor delay.  The package simulates the identifier,
the online loop and the ideal loop that knows the true frequency, and
provides the Bode extraction and per-frequency fitting used to compare the
model with behavioural data.
"""

from .errors import (
    AdaptiveImpError,
    ConfigError,
    DataFormatError,
    IntegrationDiverged,
    InvalidParams,
    NoConvergence,
    NoFeasiblePoint,
    NotHurwitz,
    SolveFailed,
    TooFewSamples,
    WindowTooShort,
    ZeroInput,
)
from .numcore import (
    OdeSystem,
    Trajectory,
    eigenvalues,
    fit_exponential_rate,
    hurwitz_margin,
    integrate,
    rk4_step,
    solve_lyapunov_2x2,
)
from .reference import ReferenceSpec, reference_state, regressor, theta_true
from .identifier import (
    ErrorCoordinates,
    IdentifierConfig,
    IdentifierState,
    identifier_rhs,
    lyapunov_value,
    project_theta,
    settling_time,
    simulate_identifier,
    simulate_identifier_batch,
)
from .loop import (
    LoopMatrices,
    LoopParams,
    assemble,
    closed_loop_rhs,
    delay_frequency_response,
    frequency_response,
    ideal_steady_state_error,
    stability_margin,
    simulate_coupled,
)
from .analysis import (
    BodeDataset,
    FrequencyResponsePoint,
    ResonatorTable,
    SimSettings,
    analytic_bode,
    bode_sweep,
    extract_response,
    fit_dataset,
    fit_frequency_point,
    format_bode_csv,
    parse_bode_csv,
    read_bode_csv,
)
from .defaults import SYNTHETIC_TREND, default_identifier_config, default_table

__version__ = "0.1.0"
