"""Full experiments: click probabilities, coincidence rates and bounds.

Orchestrates renewal-cycle simulations into the measurements the model
is meant to produce: per-channel click probabilities against the
trace-normalized covariance diagonal, invariance of the total click
count under a unitary re-split of the channels, the normalized
coincidence coefficient g2 = P12 / (P1 P2), and its analytic ceiling

    g2 <= 3 eps^2 (1 + |rho_ij|^2 / (rho_ii rho_jj)),
    eps = sqrt(mean tau^2) * Tr B / threshold,

obtained from a Markov-type inequality on the product of two channel
energies. The mean of tau^2 is estimated from the same run the bound is
applied to, pooled across channels, with the censored fraction reported
alongside.

Sweeps over the threshold (and over source brightness) reuse the same
per-cycle substreams, so rows are coupled draw-for-draw and comparisons
across rows are variance-reduced.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .detection import (
    ClickLedger,
    DetectorConfig,
    NoClicks,
    PairTally,
    empirical_probabilities,
    run_cycles,
)
from .linalg import (
    CovarianceOperator,
    DensityMatrix,
    cholesky_factor,
    conjugate_by_unitary,
    normalize_to_density,
    validate_covariance,
)

Z95 = 1.959963984540054


class ZeroDiagonal(ValueError):
    pass


class DegenerateChannel(ValueError):
    """A requested channel has no clicks; g2 is undefined for the pair."""

    def __init__(self, message: str, p12: float):
        super().__init__(message)
        self.p12 = p12


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    """Covariance, detector settings and run budget for one experiment."""

    covariance: CovarianceOperator
    detector: DetectorConfig
    n_cycles: int
    seed: int
    sweep: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.n_cycles < 1:
            raise ValueError(f"n_cycles must be at least 1, got {self.n_cycles}")
        if self.sweep is not None:
            values = tuple(float(v) for v in self.sweep)
            if not values:
                raise ValueError("sweep must be non-empty when given")
            if any(v <= 0 for v in values):
                raise ValueError(f"sweep values must be positive, got {values}")
            if any(b <= a for a, b in zip(values, values[1:])):
                raise ValueError(f"sweep values must be strictly increasing, got {values}")
            object.__setattr__(self, "sweep", values)

    def with_threshold(self, threshold: float) -> "ExperimentConfig":
        return replace(self, detector=replace(self.detector, threshold=threshold))

    def with_covariance(self, covariance: CovarianceOperator) -> "ExperimentConfig":
        return replace(self, covariance=covariance)


@dataclass(frozen=True)
class BoundInputs:
    """Ingredients of the coincidence bound, all finite."""

    trace_b: float
    mean_tau_sq: float
    rho: DensityMatrix
    threshold: float

    def __post_init__(self):
        for name in ("trace_b", "mean_tau_sq", "threshold"):
            value = getattr(self, name)
            if not np.isfinite(value):
                raise ValueError(f"{name} must be finite, got {value}")
        if self.trace_b <= 0:
            raise ValueError(f"trace_b must be positive, got {self.trace_b}")
        if self.mean_tau_sq < 0:
            raise ValueError(f"mean_tau_sq must be nonnegative, got {self.mean_tau_sq}")
        if self.threshold <= 0:
            raise ValueError(f"threshold must be positive, got {self.threshold}")

    @property
    def epsilon(self) -> float:
        return math.sqrt(self.mean_tau_sq) * self.trace_b / self.threshold


@dataclass(frozen=True)
class ChebyshevBound:
    p12_bound: float
    g2_bound: float
    epsilon: float


def chebyshev_bound(
    inputs: BoundInputs, i: int, j: int, linear_trace: bool = False
) -> ChebyshevBound:
    """Analytic ceiling on the coincidence probability and on g2.

    P12 <= 3 eps^2 (rho_ii rho_jj + |rho_ij|^2) and
    g2  <= 3 eps^2 (1 + |rho_ij|^2 / (rho_ii rho_jj)).

    With linear_trace=True the prefactor carries a single power of Tr B
    (3 Tr B mean_tau_sq / threshold^2) instead of eps^2 = (Tr B)^2
    mean_tau_sq / threshold^2. The two readings differ by a factor Tr B;
    the quadratic one is the default because it is the one consistent
    with the dimensionless eps. Both shrink as 1 / threshold^2.
    """
    rho = inputs.rho.matrix
    dim = rho.shape[0]
    if not (0 <= i < dim and 0 <= j < dim) or i == j:
        raise ValueError(f"need two distinct channels in range, got ({i},{j})")
    rho_ii = float(rho[i, i].real)
    rho_jj = float(rho[j, j].real)
    if rho_ii == 0.0 or rho_jj == 0.0:
        raise ZeroDiagonal(f"rho[{i},{i}] = {rho_ii}, rho[{j},{j}] = {rho_jj}")
    off = rho[i, j]
    off_sq = float((off * off.conjugate()).real)
    eps = inputs.epsilon
    if linear_trace:
        prefactor = 3.0 * inputs.trace_b * inputs.mean_tau_sq / inputs.threshold**2
    else:
        prefactor = 3.0 * eps * eps
    return ChebyshevBound(
        p12_bound=prefactor * (rho_ii * rho_jj + off_sq),
        g2_bound=prefactor * (1.0 + off_sq / (rho_ii * rho_jj)),
        epsilon=eps,
    )


@dataclass(eq=False)
class BornReport:
    """Empirical click probabilities against the density-matrix diagonal."""

    p: np.ndarray
    p_low: np.ndarray
    p_high: np.ndarray
    targets: np.ndarray
    flagged: tuple[int, ...]
    clicks: np.ndarray
    n_clicks: int
    n_cycles: int
    all_censored_cycles: int
    censored_fraction: float

    def covered(self, j: int) -> bool:
        return self.p_low[j] <= self.targets[j] <= self.p_high[j]


def born_rule_experiment(
    cfg: ExperimentConfig, workers: int = 1, log_path=None
) -> BornReport:
    """Measure P_i = N_i / N and compare with the normalized diagonal.

    Channels whose target falls outside the Wilson interval are flagged,
    not failed: whether the asymmetric case reproduces the targets under
    the renewal model is exactly what the experiment measures.
    """
    factor = cholesky_factor(cfg.covariance)
    ledger, _ = run_cycles(
        factor, cfg.detector, cfg.n_cycles, cfg.seed, workers=workers, log_path=log_path
    )
    probs = empirical_probabilities(ledger)
    targets = normalize_to_density(cfg.covariance).diagonal()
    flagged = tuple(
        j
        for j in range(ledger.n_channels)
        if not (probs.p_low[j] <= targets[j] <= probs.p_high[j])
    )
    return BornReport(
        p=probs.p,
        p_low=probs.p_low,
        p_high=probs.p_high,
        targets=targets,
        flagged=flagged,
        clicks=ledger.clicks.copy(),
        n_clicks=ledger.n_clicks,
        n_cycles=ledger.total_cycles,
        all_censored_cycles=ledger.all_censored_cycles,
        censored_fraction=ledger.censored_channel_fraction(),
    )


@dataclass(eq=False)
class BasisInvarianceReport:
    """Total click counts for B versus U B U^dagger under paired seeds."""

    n_clicks: int
    n_clicks_rotated: int
    clicks: np.ndarray
    clicks_rotated: np.ndarray
    band: float
    within_band: bool
    n_cycles: int


def basis_invariance_experiment(
    cfg: ExperimentConfig, unitary: np.ndarray, workers: int = 1
) -> BasisInvarianceReport:
    """Compare total clicks for the original and rotated covariance.

    The band is 3 sigma for a binomial over channel-slots (m * n_cycles
    Bernoulli trials at the pooled click rate). Censoring at the horizon
    perturbs the totals at order threshold / (t_max * b_jj), which is why
    the comparison is statistical rather than exact.
    """
    rotated = conjugate_by_unitary(cfg.covariance, unitary)
    ledger_a, _ = run_cycles(
        cholesky_factor(cfg.covariance), cfg.detector, cfg.n_cycles, cfg.seed, workers=workers
    )
    ledger_b, _ = run_cycles(
        cholesky_factor(rotated), cfg.detector, cfg.n_cycles, cfg.seed, workers=workers
    )
    n_a, n_b = ledger_a.n_clicks, ledger_b.n_clicks
    slots = ledger_a.n_channels * cfg.n_cycles
    pooled = (n_a + n_b) / (2 * slots)
    var = slots * pooled * (1.0 - pooled)
    band = 3.0 * math.sqrt(2.0 * var)
    return BasisInvarianceReport(
        n_clicks=n_a,
        n_clicks_rotated=n_b,
        clicks=ledger_a.clicks.copy(),
        clicks_rotated=ledger_b.clicks.copy(),
        band=band,
        within_band=abs(n_a - n_b) <= band,
        n_cycles=cfg.n_cycles,
    )


@dataclass(eq=False)
class G2Result:
    """One measurement row: probabilities, g2 with interval, and the bound."""

    threshold: float
    pair: tuple[int, int]
    p: np.ndarray
    p_low: np.ndarray
    p_high: np.ndarray
    p12: float
    p12_low: float
    p12_high: float
    g2: float
    g2_ci_low: float
    g2_ci_high: float
    epsilon: float
    g2_bound: float
    p12_bound: float
    mean_tau_sq: float
    censored_fraction: float
    n_clicks: int
    n_cycles: int
    pass_flag: bool
    trace_b: float
    scale: float = 1.0


def _g2_interval(
    ledger: ClickLedger, tally: PairTally, i: int, j: int
) -> tuple[float, float, float]:
    """Point estimate and delta-method 95% interval for g2 = P12/(P1 P2).

    Works on the per-cycle indicator vector (coincidence, click_i,
    click_j, clicks_in_cycle); with S12 = 0 the upper limit falls back to
    a rule-of-three style bound 3/N on P12.
    """
    s12 = ledger.coincidences[(i, j)]
    si = int(ledger.clicks[i])
    sj = int(ledger.clicks[j])
    n_clicks = ledger.n_clicks
    if si == 0 or sj == 0:
        raise DegenerateChannel(
            f"channel {i if si == 0 else j} recorded no clicks; "
            f"g2 undefined (P12 = {s12 / n_clicks!r})",
            p12=s12 / n_clicks,
        )
    g2 = s12 * n_clicks / (si * sj)
    if s12 == 0:
        upper = 3.0 * n_clicks / (si * sj)
        return 0.0, 0.0, upper
    n = tally.n_cycles
    if n < 2:
        return g2, 0.0, math.inf
    mu = tally.sums / n
    cov = (tally.products - n * np.outer(mu, mu)) / (n - 1)
    grad = np.array(
        [
            mu[3] / (mu[1] * mu[2]),
            -g2 / mu[1],
            -g2 / mu[2],
            mu[0] / (mu[1] * mu[2]),
        ]
    )
    var = max(float(grad @ cov @ grad) / n, 0.0)
    half = Z95 * math.sqrt(var)
    return g2, max(0.0, g2 - half), g2 + half


def g2_experiment(
    cfg: ExperimentConfig,
    i: int = 0,
    j: int = 1,
    workers: int = 1,
    scale: float = 1.0,
    log_path=None,
) -> G2Result:
    """Run the coincidence experiment for one threshold and one pair."""
    if i == j:
        raise ValueError(f"need two distinct channels, got ({i},{j})")
    factor = cholesky_factor(cfg.covariance)
    ledger, tally = run_cycles(
        factor,
        cfg.detector,
        cfg.n_cycles,
        cfg.seed,
        workers=workers,
        pair=(min(i, j), max(i, j)),
        log_path=log_path,
    )
    probs = empirical_probabilities(ledger)
    i, j = min(i, j), max(i, j)
    g2, lo, hi = _g2_interval(ledger, tally, i, j)
    mean_tau_sq = ledger.mean_tau_sq()
    inputs = BoundInputs(
        trace_b=cfg.covariance.trace,
        mean_tau_sq=mean_tau_sq,
        rho=normalize_to_density(cfg.covariance),
        threshold=cfg.detector.threshold,
    )
    bound = chebyshev_bound(inputs, i, j)
    return G2Result(
        threshold=cfg.detector.threshold,
        pair=(i, j),
        p=probs.p,
        p_low=probs.p_low,
        p_high=probs.p_high,
        p12=probs.p_pair[(i, j)],
        p12_low=probs.p_pair_low[(i, j)],
        p12_high=probs.p_pair_high[(i, j)],
        g2=g2,
        g2_ci_low=lo,
        g2_ci_high=hi,
        epsilon=bound.epsilon,
        g2_bound=bound.g2_bound,
        p12_bound=bound.p12_bound,
        mean_tau_sq=mean_tau_sq,
        censored_fraction=ledger.censored_channel_fraction(),
        n_clicks=ledger.n_clicks,
        n_cycles=ledger.total_cycles,
        pass_flag=(hi <= bound.g2_bound) or (g2 <= bound.g2_bound),
        trace_b=cfg.covariance.trace,
        scale=scale,
    )


@dataclass(eq=False)
class SweepResult:
    """Rows over thresholds (or brightness scales) plus a log-log slope.

    The slope of log(g2) against log(threshold) is fitted only over rows
    with nonzero g2 and reported, never asserted; it is None when fewer
    than two rows qualify.
    """

    rows: list[G2Result]
    slope: float | None
    pair: tuple[int, int]
    kind: str = "threshold"


def _loglog_slope(x: list[float], y: list[float]) -> float | None:
    points = [(a, b) for a, b in zip(x, y) if b > 0]
    if len(points) < 2:
        return None
    lx = np.log([a for a, _ in points])
    ly = np.log([b for _, b in points])
    return float(np.polyfit(lx, ly, 1)[0])


def threshold_sweep(
    cfg: ExperimentConfig, i: int = 0, j: int = 1, workers: int = 1
) -> SweepResult:
    """One g2 experiment per sweep threshold, under paired substreams."""
    if not cfg.sweep:
        raise ValueError("config has no sweep list")
    rows = [
        g2_experiment(cfg.with_threshold(threshold), i, j, workers=workers)
        for threshold in cfg.sweep
    ]
    slope = _loglog_slope([r.threshold for r in rows], [r.g2 for r in rows])
    return SweepResult(rows=rows, slope=slope, pair=(min(i, j), max(i, j)))


def brightness_sweep(
    cfg: ExperimentConfig,
    scales,
    i: int = 0,
    j: int = 1,
    workers: int = 1,
) -> SweepResult:
    """g2 experiments over B -> c * B with the threshold held fixed.

    Scaling the covariance by c at fixed threshold is equivalent to
    dividing the threshold by c at fixed covariance; for power-of-four
    factors the equivalence is exact down to the floating point bits.
    """
    scales = tuple(float(c) for c in scales)
    if not scales:
        raise ValueError("brightness scale list must be non-empty")
    if any(c <= 0 for c in scales):
        raise ValueError(f"brightness scales must be positive, got {scales}")
    rows = []
    for c in scales:
        scaled = validate_covariance(c * cfg.covariance.matrix)
        row = g2_experiment(
            cfg.with_covariance(scaled), i, j, workers=workers, scale=c
        )
        expected = math.sqrt(row.mean_tau_sq) * scaled.trace / row.threshold
        assert abs(row.epsilon - expected) <= 1e-12 * max(1.0, expected)
        rows.append(row)
    slope = _loglog_slope([r.scale for r in rows], [r.g2 for r in rows])
    return SweepResult(
        rows=rows, slope=slope, pair=(min(i, j), max(i, j)), kind="brightness"
    )
