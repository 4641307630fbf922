"""Self-check suites: moment identities and first-passage oracles.

Each check compares an independent Monte Carlo estimate against a closed
form (or a stopping-time identity) and reports a z-score or relative
error with its acceptance criterion. The checks are deterministic given
the seed; the sampling side never reuses the closed-form code path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import parallel
from .gaussian import (
    QuadraticForm,
    eval_quadratic_form_many,
    mean_quadratic,
    quartic_moment,
    sample_signals,
)
from .linalg import cholesky_factor, random_covariance
from .wiener import CENSORED, WienerConfig, first_passage_all_channels, wiener_moment_check

# Substream namespaces (first spawn-key component); 0 is taken by cycles.
MOMENT_STREAM = 1
WIENER_STREAM = 2
PASSAGE_STREAM = 3


@dataclass(frozen=True)
class CheckRow:
    """One diagnostic result: value vs target under a stated criterion."""

    name: str
    value: float
    target: float
    statistic: float
    criterion: str
    passed: bool


def _stream(seed: int, domain: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(domain, index)))


def _random_hermitian(dim: int, rng: np.random.Generator) -> QuadraticForm:
    g = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    return QuadraticForm((g + g.conj().T) / 2.0)


def moment_identity_rows(
    seed: int, n_cases: int = 10, n_samples: int = 1_000_000, z_max: float = 5.0
) -> list[CheckRow]:
    """MC means of quadratic forms and their products vs the closed forms.

    For each random (B, A1, A2) the sample mean of f_A1 and of f_A1 f_A2
    over n_samples signals must sit within z_max standard errors of
    Tr(B A1) and Tr(B A1) Tr(B A2) + Tr(B A2 B A1) respectively.
    """
    rows = []
    dims = (2, 3, 4)
    for case in range(n_cases):
        rng = _stream(seed, MOMENT_STREAM, case)
        dim = dims[case % len(dims)]
        b = random_covariance(dim, rng)
        form1 = _random_hermitian(dim, rng)
        form2 = _random_hermitian(dim, rng)
        phis = sample_signals(cholesky_factor(b), n_samples, rng)
        f1 = eval_quadratic_form_many(form1, phis)
        f2 = eval_quadratic_form_many(form2, phis)

        exact_mean = mean_quadratic(b, form1)
        mc_mean = float(f1.mean())
        se = float(f1.std(ddof=1)) / np.sqrt(n_samples)
        z = (mc_mean - exact_mean) / se
        rows.append(
            CheckRow(
                name=f"moment_mean_case{case}_dim{dim}",
                value=mc_mean,
                target=exact_mean,
                statistic=z,
                criterion=f"|z| <= {z_max}",
                passed=abs(z) <= z_max,
            )
        )

        product = f1 * f2
        exact_quartic = quartic_moment(b, form1, form2)
        mc_quartic = float(product.mean())
        se_q = float(product.std(ddof=1)) / np.sqrt(n_samples)
        z_q = (mc_quartic - exact_quartic) / se_q
        rows.append(
            CheckRow(
                name=f"moment_quartic_case{case}_dim{dim}",
                value=mc_quartic,
                target=exact_quartic,
                statistic=z_q,
                criterion=f"|z| <= {z_max}",
                passed=abs(z_q) <= z_max,
            )
        )
    return rows


def wiener_moment_rows(
    seed: int,
    n_paths: int = 100_000,
    dt: float = 1e-3,
    tau: float = 1.0,
    z_max: float = 5.0,
) -> list[CheckRow]:
    """Empirical second and fourth path moments at a fixed time.

    Standard errors use the exact sampling variances of w^2 and w^4 at
    time tau (2 tau^2 and 96 tau^4), so the check is an oracle, not a
    self-comparison.
    """
    cfg = WienerConfig(dt=dt, t_max=tau)
    rng = _stream(seed, WIENER_STREAM, 0)
    m2, m4 = wiener_moment_check(tau, n_paths, cfg, rng)
    se2 = np.sqrt(2.0 * tau**2 / n_paths)
    se4 = np.sqrt(96.0 * tau**4 / n_paths)
    z2 = (m2 - tau) / se2
    z4 = (m4 - 3.0 * tau**2) / se4
    return [
        CheckRow(
            name="wiener_second_moment",
            value=m2,
            target=tau,
            statistic=z2,
            criterion=f"|z| <= {z_max}",
            passed=abs(z2) <= z_max,
        ),
        CheckRow(
            name="wiener_fourth_moment",
            value=m4,
            target=3.0 * tau**2,
            statistic=z4,
            criterion=f"|z| <= {z_max}",
            passed=abs(z4) <= z_max,
        ),
    ]


def _passage_chunk(
    start: int, stop: int, threshold: float, cfg: WienerConfig, seed: int
):
    phi = np.array([1.0 + 0.0j])
    total = 0.0
    censored = 0
    for index in range(start, stop):
        rng = _stream(seed, PASSAGE_STREAM, index)
        result = first_passage_all_channels(phi, threshold, cfg, rng)
        if result.steps[0] == CENSORED:
            censored += 1
        else:
            total += float(result.tau[0])
    return total, censored


def first_passage_rows(
    seed: int,
    n_paths: int = 100_000,
    dt: float = 1e-4,
    level: float = 1.0,
    t_max: float = 8.0,
    rel_tol: float = 0.02,
    workers: int = 1,
) -> list[CheckRow]:
    """Mean first-passage time of |w| to a fixed level vs the exact value.

    Optional stopping gives level^2 exactly; the grid detector carries an
    O(sqrt(dt)) overshoot bias, which must stay inside rel_tol together
    with the sampling error.
    """
    cfg = WienerConfig(dt=dt, t_max=t_max)
    parts = parallel.run_chunked(
        n_paths,
        _passage_chunk,
        args=(level * level, cfg, seed),
        workers=workers,
    )
    total = 0.0
    censored = 0
    for part_total, part_censored in parts:
        total += part_total
        censored += part_censored
    crossed = n_paths - censored
    mean = total / crossed if crossed else float("nan")
    target = level * level
    rel_err = (mean - target) / target
    return [
        CheckRow(
            name="first_passage_mean",
            value=mean,
            target=target,
            statistic=rel_err,
            criterion=f"|rel err| <= {rel_tol}",
            passed=abs(rel_err) <= rel_tol,
        ),
        CheckRow(
            name="first_passage_censored_fraction",
            value=censored / n_paths,
            target=0.0,
            statistic=censored / n_paths,
            criterion="fraction <= 0.001",
            passed=censored / n_paths <= 0.001,
        ),
    ]


def selftest_rows(seed: int, workers: int = 1) -> list[CheckRow]:
    """The full oracle suite: moment identities, path moments, passage times."""
    rows = moment_identity_rows(seed)
    rows += wiener_moment_rows(seed)
    rows += first_passage_rows(seed, workers=workers)
    return rows
