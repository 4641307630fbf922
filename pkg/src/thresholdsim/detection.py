"""Renewal-cycle threshold detection and click bookkeeping.

Each cycle draws a fresh signal vector, runs one shared Wiener path, and
records the per-channel threshold crossings. Every non-censored channel
contributes one click; pairs of channels crossing within the coincidence
window contribute one coincidence event. Cycles are independent, which
makes them embarrassingly parallel: the random stream is split into
per-cycle substreams keyed by cycle index, and ledgers merge in fixed
chunk order, so results do not depend on scheduling or worker count.

Probabilities are normalized by the total click count over all channels,
not by the cycle count.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import parallel
from .gaussian import sample_signal
from .wiener import CENSORED, FirstPassageResult, WienerConfig, first_passage_all_channels

#: Substream namespace for detection cycles (first spawn-key component).
CYCLE_STREAM = 0


class NoClicks(ValueError):
    pass


def cycle_rng(seed: int, index: int, domain: int = CYCLE_STREAM) -> np.random.Generator:
    """Independent substream for one cycle, keyed by (domain, index).

    Pairing contract: the same (seed, index) always yields the same draw
    sequence, so experiments that differ only in detector settings see
    identical signals and path increments.
    """
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(domain, index)))


@dataclass(frozen=True)
class DetectorConfig:
    """Threshold, coincidence window and path discretization for all channels."""

    threshold: float
    coincidence_window: float
    wiener: WienerConfig

    def __post_init__(self):
        if not (self.threshold > 0 and np.isfinite(self.threshold)):
            raise ValueError(f"threshold must be positive, got {self.threshold}")
        if self.coincidence_window < 0:
            raise ValueError(
                f"coincidence window must be nonnegative, got {self.coincidence_window}"
            )
        k = round(self.coincidence_window / self.wiener.dt)
        if abs(self.coincidence_window - k * self.wiener.dt) > 1e-9 * self.wiener.dt:
            raise ValueError(
                f"coincidence window {self.coincidence_window} is not an integer "
                f"multiple of dt = {self.wiener.dt}"
            )

    @property
    def window_steps(self) -> int:
        return round(self.coincidence_window / self.wiener.dt)


@dataclass(eq=False)
class CycleOutcome:
    """One renewal cycle: crossings, clicked channels, coincident pairs."""

    passage: FirstPassageResult
    clicked: tuple[int, ...]
    coincidences: tuple[tuple[int, int], ...]
    duration: float


@dataclass(eq=False)
class ClickLedger:
    """Accumulated counts over cycles.

    sum_tau and sum_tau_sq pool the non-censored passage times across all
    channels; their count equals the total click count, which keeps the
    empirical moments of the passage time computable from the ledger alone.
    """

    clicks: np.ndarray
    coincidences: dict[tuple[int, int], int]
    total_cycles: int = 0
    all_censored_cycles: int = 0
    censored_channel_count: int = 0
    observation_time: float = 0.0
    sum_tau: float = 0.0
    sum_tau_sq: float = 0.0

    @classmethod
    def empty(cls, n_channels: int) -> "ClickLedger":
        pairs = {
            (i, j): 0 for i in range(n_channels) for j in range(i + 1, n_channels)
        }
        return cls(clicks=np.zeros(n_channels, dtype=np.int64), coincidences=pairs)

    @property
    def n_channels(self) -> int:
        return int(self.clicks.shape[0])

    @property
    def n_clicks(self) -> int:
        return int(self.clicks.sum())

    def merge(self, other: "ClickLedger") -> None:
        self.clicks += other.clicks
        for pair, count in other.coincidences.items():
            self.coincidences[pair] += count
        self.total_cycles += other.total_cycles
        self.all_censored_cycles += other.all_censored_cycles
        self.censored_channel_count += other.censored_channel_count
        self.observation_time += other.observation_time
        self.sum_tau += other.sum_tau
        self.sum_tau_sq += other.sum_tau_sq

    def censored_channel_fraction(self) -> float:
        total = self.n_channels * self.total_cycles
        return self.censored_channel_count / total if total else 0.0

    def mean_tau_sq(self) -> float:
        """Pooled empirical mean of tau^2 over all non-censored crossings."""
        n = self.n_clicks
        if n == 0:
            raise NoClicks("no clicks recorded, passage-time moments undefined")
        return self.sum_tau_sq / n

    def as_dict(self) -> dict:
        return {
            "clicks": [int(c) for c in self.clicks],
            "coincidences": {
                f"{i}-{j}": int(c) for (i, j), c in sorted(self.coincidences.items())
            },
            "total_cycles": self.total_cycles,
            "all_censored_cycles": self.all_censored_cycles,
            "censored_channel_count": self.censored_channel_count,
            "observation_time": self.observation_time,
            "sum_tau": self.sum_tau,
            "sum_tau_sq": self.sum_tau_sq,
        }


@dataclass(eq=False)
class PairTally:
    """Per-cycle indicator moments for one channel pair.

    Tracks sums and second moments of the integer vector
    (coincidence, click_i, click_j, clicks_in_cycle) used by the delta
    method for the g2 confidence interval. Integer arithmetic keeps the
    merge exact and order-independent.
    """

    pair: tuple[int, int]
    sums: np.ndarray = field(default_factory=lambda: np.zeros(4, dtype=np.int64))
    products: np.ndarray = field(default_factory=lambda: np.zeros((4, 4), dtype=np.int64))
    n_cycles: int = 0

    def add(self, outcome: CycleOutcome) -> None:
        i, j = self.pair
        clicked = outcome.clicked
        y = np.array(
            [
                1 if self.pair in outcome.coincidences else 0,
                1 if i in clicked else 0,
                1 if j in clicked else 0,
                len(clicked),
            ],
            dtype=np.int64,
        )
        self.sums += y
        self.products += np.outer(y, y)
        self.n_cycles += 1

    def merge(self, other: "PairTally") -> None:
        assert other.pair == self.pair
        self.sums += other.sums
        self.products += other.products
        self.n_cycles += other.n_cycles


def run_cycle(
    factor: np.ndarray, cfg: DetectorConfig, rng: np.random.Generator
) -> CycleOutcome:
    """Sample a signal, run one shared path, return crossings and pairs."""
    phi = sample_signal(factor, rng)
    passage = first_passage_all_channels(phi, cfg.threshold, cfg.wiener, rng)
    clicked = tuple(int(j) for j in np.flatnonzero(passage.steps != CENSORED))
    window = cfg.window_steps
    pairs = []
    for a in range(len(clicked)):
        for b in range(a + 1, len(clicked)):
            i, j = clicked[a], clicked[b]
            if abs(int(passage.steps[i]) - int(passage.steps[j])) <= window:
                pairs.append((i, j))
    if clicked:
        duration = float(np.max(passage.tau[list(clicked)]))
    else:
        duration = cfg.wiener.t_max
    return CycleOutcome(
        passage=passage,
        clicked=clicked,
        coincidences=tuple(pairs),
        duration=duration,
    )


def accumulate(ledger: ClickLedger, outcome: CycleOutcome) -> ClickLedger:
    """Fold one cycle into the ledger; returns the (mutated) ledger."""
    m = ledger.n_channels
    ledger.total_cycles += 1
    ledger.observation_time += outcome.duration
    n_clicked = len(outcome.clicked)
    ledger.censored_channel_count += m - n_clicked
    if n_clicked == 0:
        ledger.all_censored_cycles += 1
        return ledger
    for j in outcome.clicked:
        ledger.clicks[j] += 1
        tau = float(outcome.passage.tau[j])
        ledger.sum_tau += tau
        ledger.sum_tau_sq += tau * tau
    for pair in outcome.coincidences:
        ledger.coincidences[pair] += 1
    return ledger


def _log_record(index: int, outcome: CycleOutcome) -> str:
    taus = [
        None if outcome.passage.steps[j] == CENSORED else float(outcome.passage.tau[j])
        for j in range(outcome.passage.steps.shape[0])
    ]
    return json.dumps(
        {"cycle": index, "tau": taus, "coincidences": [list(p) for p in outcome.coincidences]},
        separators=(",", ":"),
    )


def _cycle_chunk(
    start: int,
    stop: int,
    factor: np.ndarray,
    cfg: DetectorConfig,
    seed: int,
    pair: tuple[int, int] | None,
    keep_log: bool,
):
    ledger = ClickLedger.empty(factor.shape[0])
    tally = PairTally(pair=pair) if pair is not None else None
    lines = [] if keep_log else None
    for index in range(start, stop):
        outcome = run_cycle(factor, cfg, cycle_rng(seed, index))
        accumulate(ledger, outcome)
        if tally is not None:
            tally.add(outcome)
        if lines is not None:
            lines.append(_log_record(index, outcome))
    return ledger, tally, lines


def run_cycles(
    factor: np.ndarray,
    cfg: DetectorConfig,
    n_cycles: int,
    seed: int,
    workers: int = 1,
    pair: tuple[int, int] | None = None,
    log_path=None,
    chunk_size: int = parallel.CHUNK_SIZE,
) -> tuple[ClickLedger, PairTally | None]:
    """Run n_cycles independent renewal cycles, optionally in parallel.

    The per-cycle substreams and the fixed chunking make the returned
    ledger (and the optional event log) bit-identical for every worker
    count.
    """
    if n_cycles < 1:
        raise ValueError(f"n_cycles must be at least 1, got {n_cycles}")
    parts = parallel.run_chunked(
        n_cycles,
        _cycle_chunk,
        args=(factor, cfg, seed, pair, log_path is not None),
        workers=workers,
        chunk_size=chunk_size,
    )
    ledger = ClickLedger.empty(factor.shape[0])
    tally = PairTally(pair=pair) if pair is not None else None
    lines: list[str] = []
    for part_ledger, part_tally, part_lines in parts:
        ledger.merge(part_ledger)
        if tally is not None:
            tally.merge(part_tally)
        if part_lines is not None:
            lines.extend(part_lines)
    if log_path is not None:
        with open(log_path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines))
            if lines:
                fh.write("\n")
    return ledger, tally


def wilson_interval(successes: int, trials: int, z: float = 1.959963984540054) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion (95% by default)."""
    if trials <= 0:
        raise ValueError("trials must be positive")
    p = successes / trials
    z2 = z * z
    denom = 1.0 + z2 / trials
    center = (p + z2 / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z2 / (4 * trials * trials)) / denom
    return max(0.0, center - half), min(1.0, center + half)


@dataclass(eq=False)
class ProbabilityEstimates:
    """Click-normalized channel and pair probabilities with Wilson intervals."""

    p: np.ndarray
    p_low: np.ndarray
    p_high: np.ndarray
    p_pair: dict[tuple[int, int], float]
    p_pair_low: dict[tuple[int, int], float]
    p_pair_high: dict[tuple[int, int], float]
    n_clicks: int


def empirical_probabilities(ledger: ClickLedger) -> ProbabilityEstimates:
    """P_i = N_i / N and pair probabilities N_ij / N, N = total clicks."""
    n = ledger.n_clicks
    if n == 0:
        raise NoClicks("no clicks recorded")
    m = ledger.n_channels
    p = ledger.clicks / n
    lows = np.empty(m)
    highs = np.empty(m)
    for j in range(m):
        lows[j], highs[j] = wilson_interval(int(ledger.clicks[j]), n)
    pair_p, pair_lo, pair_hi = {}, {}, {}
    for pair, count in ledger.coincidences.items():
        pair_p[pair] = count / n
        pair_lo[pair], pair_hi[pair] = wilson_interval(count, n)
    return ProbabilityEstimates(
        p=p,
        p_low=lows,
        p_high=highs,
        p_pair=pair_p,
        p_pair_low=pair_lo,
        p_pair_high=pair_hi,
        n_clicks=n,
    )
