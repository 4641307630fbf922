"""Discretized Wiener paths and first-passage detection.

One cycle drives every detection channel with a single shared path w(t):
channel j fires at the first grid time where w(t)^2 * |phi_j|^2 reaches
the threshold. Paths are generated incrementally in growing blocks and
never stored whole, so a cycle can run to the step budget in O(block)
memory.

Crossings are detected by comparing against the running maximum of w^2
on the grid, with no bridge correction between grid points. That leaves
a known O(sqrt(dt)) overshoot bias in passage times; it is controlled by
the step size and cancels in click-count ratios.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

#: Step-index sentinel for channels that never crossed within the horizon.
CENSORED = -1

_FIRST_BLOCK = 1024
_MAX_BLOCK = 1 << 16


class ThresholdNonpositive(ValueError):
    pass


@dataclass(frozen=True)
class WienerConfig:
    """Grid step dt and censoring horizon t_max for one cycle."""

    dt: float
    t_max: float
    max_steps: int = 100_000_000

    def __post_init__(self):
        if not (self.dt > 0 and np.isfinite(self.dt)):
            raise ValueError(f"dt must be positive and finite, got {self.dt}")
        if not (self.t_max >= self.dt and np.isfinite(self.t_max)):
            raise ValueError(f"t_max must be at least dt, got {self.t_max}")
        if self.n_steps > self.max_steps:
            raise ValueError(
                f"t_max/dt = {self.t_max / self.dt:.3e} exceeds the step budget "
                f"{self.max_steps}"
            )

    @property
    def n_steps(self) -> int:
        # Tiny upward nudge so an intended integer ratio is not lost to rounding.
        return int(self.t_max / self.dt + 1e-9)


@dataclass(eq=False)
class FirstPassageResult:
    """Per-channel first crossing of the energy threshold on one shared path.

    steps holds the 1-based grid index of the crossing (CENSORED if none),
    tau the corresponding time steps * dt (inf if censored), and w_at_tau
    the path value at the crossing (nan if censored), kept for diagnostics.
    """

    steps: np.ndarray
    tau: np.ndarray
    w_at_tau: np.ndarray
    dt: float

    @property
    def censored(self) -> np.ndarray:
        return self.steps == CENSORED


def step_path(w: float, dt: float, rng: np.random.Generator) -> float:
    """Single Euler increment: mean 0, variance dt."""
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    return w + np.sqrt(dt) * rng.standard_normal()


def first_passage_all_channels(
    phi: np.ndarray,
    threshold: float,
    cfg: WienerConfig,
    rng: np.random.Generator,
) -> FirstPassageResult:
    """First grid times where w(t)^2 * |phi_j|^2 >= threshold, per channel.

    All channels share one path, so channels with larger |phi_j|^2 cross
    no later than channels with smaller energy; this ordering is asserted.
    The crossing test is evaluated literally as the product against the
    threshold, which makes the outcome invariant under the exact scaling
    (phi, threshold) -> (c * phi, c^2 * threshold).
    """
    if not threshold > 0:
        raise ThresholdNonpositive(f"threshold must be positive, got {threshold}")
    phi = np.asarray(phi, dtype=np.complex128)
    m = phi.shape[0]
    energy = phi.real**2 + phi.imag**2

    steps = np.full(m, CENSORED, dtype=np.int64)
    w_at = np.full(m, np.nan)

    open_channels = [j for j in range(m) if energy[j] > 0.0]
    sqrt_dt = np.sqrt(cfg.dt)
    n_steps = cfg.n_steps
    w_last = 0.0
    runmax = 0.0
    done = 0
    block = _FIRST_BLOCK
    while open_channels and done < n_steps:
        n = min(block, n_steps - done)
        w_path = w_last + sqrt_dt * np.cumsum(rng.standard_normal(n))
        block_max = np.maximum.accumulate(w_path**2)
        if runmax > 0.0:
            np.maximum(block_max, runmax, out=block_max)
        still_open = []
        for j in open_channels:
            hits = block_max * energy[j] >= threshold
            if hits.any():
                idx = int(hits.argmax())
                steps[j] = done + idx + 1
                w_at[j] = w_path[idx]
            else:
                still_open.append(j)
        open_channels = still_open
        w_last = float(w_path[-1])
        runmax = float(block_max[-1])
        done += n
        block = min(block * 2, _MAX_BLOCK)

    # Shared path: larger channel energy can never cross later.
    order = np.argsort(energy, kind="stable")
    effective = np.where(steps == CENSORED, np.iinfo(np.int64).max, steps)
    assert np.all(np.diff(effective[order]) <= 0)

    tau = np.where(steps == CENSORED, np.inf, steps * cfg.dt)
    return FirstPassageResult(steps=steps, tau=tau, w_at_tau=w_at, dt=cfg.dt)


def wiener_moment_check(
    tau: float,
    n_paths: int,
    cfg: WienerConfig,
    rng: np.random.Generator,
    batch: int = 20_000,
) -> tuple[float, float]:
    """Empirical second and fourth moments of w at a fixed grid time tau.

    Terminal values are built from the full increment sum so the check
    exercises the same path construction as the passage-time sampler.
    """
    k = int(round(tau / cfg.dt))
    if k < 1 or abs(k * cfg.dt - tau) > 1e-9 * tau:
        raise ValueError(f"tau = {tau} is not a positive multiple of dt = {cfg.dt}")
    sqrt_dt = np.sqrt(cfg.dt)
    sum2 = 0.0
    sum4 = 0.0
    remaining = n_paths
    while remaining > 0:
        n = min(batch, remaining)
        w = sqrt_dt * rng.standard_normal((n, k)).sum(axis=1)
        w2 = w * w
        sum2 += float(w2.sum())
        sum4 += float((w2 * w2).sum())
        remaining -= n
    return sum2 / n_paths, sum4 / n_paths
