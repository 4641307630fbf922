"""Threshold detection of classical Gaussian signals: simulator and exact layer."""

from .detection import (
    ClickLedger,
    CycleOutcome,
    DetectorConfig,
    NoClicks,
    accumulate,
    empirical_probabilities,
    run_cycle,
    run_cycles,
    wilson_interval,
)
from .gaussian import (
    DimensionMismatch,
    QuadraticForm,
    SameChannel,
    energy_correlation,
    eval_quadratic_form,
    mean_quadratic,
    quartic_moment,
    sample_signal,
    sample_signals,
)
from .harness import (
    BoundInputs,
    DegenerateChannel,
    ExperimentConfig,
    G2Result,
    SweepResult,
    ZeroDiagonal,
    basis_invariance_experiment,
    born_rule_experiment,
    brightness_sweep,
    chebyshev_bound,
    g2_experiment,
    threshold_sweep,
)
from .linalg import (
    CovarianceOperator,
    DensityMatrix,
    FactorizationFailure,
    IndexOutOfRange,
    NotHermitian,
    NotPositiveSemidefinite,
    NotUnitary,
    ZeroTrace,
    cholesky_factor,
    conjugate_by_unitary,
    normalize_to_density,
    projector,
    random_covariance,
    random_unitary,
    validate_covariance,
)
from .wiener import (
    CENSORED,
    FirstPassageResult,
    ThresholdNonpositive,
    WienerConfig,
    first_passage_all_channels,
    step_path,
    wiener_moment_check,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
