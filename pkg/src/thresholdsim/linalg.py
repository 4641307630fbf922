"""Small-dimension complex Hermitian linear algebra.

Validation of covariance operators (Hermitian, positive semidefinite,
positive trace), trace normalization to density matrices, Cholesky
factorization with an eigenvalue fallback for rank-deficient input,
rank-one projectors and unitary basis changes. Everything is dense:
the signal spaces of interest have a handful of channels, never more.

All returned matrix wrappers are immutable and safe to share across
threads or processes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Entrywise Hermiticity tolerance, relative to the largest matrix entry.
HERMITIAN_RTOL = 1e-10
# Smallest admissible eigenvalue, relative to the trace. Eigenvalues in
# [-PSD_RTOL * trace, 0] are treated as exact zeros during factorization.
PSD_RTOL = 1e-10


class LinalgError(ValueError):
    """Base class for matrix validation failures."""


class NotHermitian(LinalgError):
    pass


class NotPositiveSemidefinite(LinalgError):
    pass


class ZeroTrace(LinalgError):
    pass


class FactorizationFailure(LinalgError):
    pass


class NotUnitary(LinalgError):
    pass


class IndexOutOfRange(LinalgError, IndexError):
    pass


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


def as_complex_matrix(raw) -> np.ndarray:
    """Coerce input to an immutable square complex128 array."""
    m = np.asarray(raw, dtype=np.complex128)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 1:
        raise LinalgError(f"expected a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m.view(np.float64))):
        raise LinalgError("matrix contains non-finite entries")
    return _freeze(m.copy())


@dataclass(frozen=True, eq=False)
class CovarianceOperator:
    """Validated Hermitian PSD matrix with cached (real, positive) trace."""

    matrix: np.ndarray
    trace: float

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def diagonal(self) -> np.ndarray:
        return self.matrix.diagonal().real.copy()


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """Hermitian PSD matrix with unit trace."""

    matrix: np.ndarray

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def diagonal(self) -> np.ndarray:
        return self.matrix.diagonal().real.copy()


def validate_covariance(raw) -> CovarianceOperator:
    """Check Hermiticity, positive semidefiniteness and positive trace.

    Raises NotHermitian / NotPositiveSemidefinite / ZeroTrace naming the
    worst offending entry or eigenvalue.
    """
    m = as_complex_matrix(raw)
    scale = float(np.abs(m).max())

    dev = np.abs(m - m.conj().T)
    worst = float(dev.max())
    if worst > HERMITIAN_RTOL * max(scale, 1e-300):
        i, j = np.unravel_index(int(dev.argmax()), dev.shape)
        raise NotHermitian(
            f"entry ({i},{j}) deviates from conjugate transpose by {worst:.3e} "
            f"(tolerance {HERMITIAN_RTOL * scale:.3e})"
        )

    trace = float(m.trace().real)
    if trace <= 0.0:
        raise ZeroTrace(f"trace must be positive, got {trace!r}")

    eigs = np.linalg.eigvalsh(m)
    lo = float(eigs.min())
    if lo < -PSD_RTOL * trace:
        raise NotPositiveSemidefinite(
            f"smallest eigenvalue {lo:.6e} below tolerance {-PSD_RTOL * trace:.3e}"
        )

    return CovarianceOperator(matrix=m, trace=trace)


def normalize_to_density(b: CovarianceOperator) -> DensityMatrix:
    """Divide by the trace so the result has unit trace."""
    rho = b.matrix / b.trace
    assert abs(rho.trace().real - 1.0) <= 1e-12
    return DensityMatrix(matrix=_freeze(rho))


def cholesky_factor(b: CovarianceOperator) -> np.ndarray:
    """Factor L with L @ L.conj().T == b.matrix.

    Positive definite input uses the standard lower Cholesky factor.
    Rank-deficient input falls back to an eigenvalue factorization with
    eigenvalues in [-PSD_RTOL * trace, 0] clamped to zero; the product
    property still holds but L is not triangular in that case.
    """
    m = b.matrix
    clamped = 0.0
    try:
        factor = np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        herm = (m + m.conj().T) / 2.0
        eigs, vecs = np.linalg.eigh(herm)
        clamped = float(max(0.0, -eigs.min()))
        eigs = np.maximum(eigs, 0.0)
        factor = vecs * np.sqrt(eigs)

    residual = float(np.abs(factor @ factor.conj().T - m).max())
    tol = 1e-10 * float(np.abs(m).max()) + 1.1 * clamped + 1e-14 * b.trace
    if residual > tol:
        raise FactorizationFailure(
            f"factor residual {residual:.3e} exceeds tolerance {tol:.3e}"
        )
    return _freeze(factor)


def projector(dim: int, k: int) -> np.ndarray:
    """Rank-one projector onto basis vector k: a single 1 at (k, k)."""
    if not 0 <= k < dim:
        raise IndexOutOfRange(f"channel {k} out of range for dimension {dim}")
    p = np.zeros((dim, dim), dtype=np.complex128)
    p[k, k] = 1.0
    return _freeze(p)


def conjugate_by_unitary(b: CovarianceOperator, u) -> CovarianceOperator:
    """Basis change U @ B @ U.conj().T; the trace is preserved."""
    u = as_complex_matrix(u)
    if u.shape != b.matrix.shape:
        raise LinalgError(
            f"unitary shape {u.shape} does not match operator shape {b.matrix.shape}"
        )
    dev = np.abs(u @ u.conj().T - np.eye(u.shape[0]))
    worst = float(dev.max())
    if worst > 1e-10:
        raise NotUnitary(f"U @ U.conj().T deviates from identity by {worst:.3e}")
    return validate_covariance(u @ b.matrix @ u.conj().T)


def random_covariance(dim: int, rng: np.random.Generator) -> CovarianceOperator:
    """Random PSD test matrix G @ G.conj().T with complex standard normal G."""
    g = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    return validate_covariance(g @ g.conj().T)


def random_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-ish random unitary via QR of a complex Ginibre matrix."""
    g = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    q, r = np.linalg.qr(g)
    # Fix the phase ambiguity so the result is deterministic given the draw.
    d = r.diagonal().copy()
    d[d == 0] = 1.0
    q = q * (d / np.abs(d))
    return _freeze(q)
