"""Zero-mean complex Gaussian signal vectors and their moment identities.

A signal vector phi is sampled as phi = L @ z where L is a factor of the
covariance operator B (L @ L^dagger = B) and z has independent components
whose real and imaginary parts are each Normal(0, 1/2). That convention
gives E z_i conj(z_j) = delta_ij and hence E phi_i conj(phi_j) = b_ij.

The exact layer evaluates the closed-form moments of Hermitian quadratic
forms f_A(phi) = <A phi, phi>:

    E f_A            = Tr(B A)
    E f_A1 f_A2      = Tr(B A1) Tr(B A2) + Tr(B A2 B A1)

Both identities are cross-checked against Monte Carlo sampling in the
test suite; the sampler and the closed forms never share a code path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import (
    HERMITIAN_RTOL,
    CovarianceOperator,
    IndexOutOfRange,
    NotHermitian,
    as_complex_matrix,
    projector,
)


class DimensionMismatch(ValueError):
    pass


class SameChannel(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class QuadraticForm:
    """Hermitian operator defining the pointwise function <A phi, phi>."""

    operator: np.ndarray

    def __post_init__(self):
        op = as_complex_matrix(self.operator)
        dev = float(np.abs(op - op.conj().T).max())
        scale = max(float(np.abs(op).max()), 1e-300)
        if dev > HERMITIAN_RTOL * scale:
            raise NotHermitian(
                f"quadratic form operator deviates from Hermitian by {dev:.3e}"
            )
        object.__setattr__(self, "operator", op)

    @property
    def dim(self) -> int:
        return self.operator.shape[0]


def sample_signal(factor: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One signal vector phi = L @ z.

    The draw order (all real parts, then all imaginary parts) is part of
    the reproducibility contract and must not change.
    """
    m = factor.shape[0]
    z = rng.standard_normal(2 * m)
    unit = (z[:m] + 1j * z[m:]) * np.sqrt(0.5)
    return factor @ unit


def sample_signals(factor: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """n independent signal vectors, stacked as rows of an (n, m) array."""
    m = factor.shape[0]
    z = rng.standard_normal((n, 2 * m))
    unit = (z[:, :m] + 1j * z[:, m:]) * np.sqrt(0.5)
    return unit @ factor.T


def eval_quadratic_form(form: QuadraticForm, phi: np.ndarray) -> float:
    """Pointwise value <A phi, phi>, real for Hermitian A."""
    phi = np.asarray(phi, dtype=np.complex128)
    if phi.shape != (form.dim,):
        raise DimensionMismatch(
            f"signal shape {phi.shape} does not match form dimension {form.dim}"
        )
    value = complex(np.vdot(phi, form.operator @ phi))
    scale = max(abs(value), float(np.abs(form.operator).max()) * float(np.vdot(phi, phi).real))
    assert abs(value.imag) <= 1e-10 * max(scale, 1e-300)
    return value.real


def eval_quadratic_form_many(form: QuadraticForm, phis: np.ndarray) -> np.ndarray:
    """Vectorized <A phi, phi> over rows of an (n, m) sample array."""
    phis = np.asarray(phis, dtype=np.complex128)
    if phis.ndim != 2 or phis.shape[1] != form.dim:
        raise DimensionMismatch(
            f"sample shape {phis.shape} does not match form dimension {form.dim}"
        )
    return np.einsum("ni,ij,nj->n", phis.conj(), form.operator, phis).real


def mean_quadratic(b: CovarianceOperator, form: QuadraticForm) -> float:
    """Exact mean of the quadratic form: Tr(B A)."""
    if form.dim != b.dim:
        raise DimensionMismatch(f"form dim {form.dim} vs operator dim {b.dim}")
    value = complex((b.matrix @ form.operator).trace())
    assert abs(value.imag) <= 1e-10 * max(abs(value), 1e-300)
    return value.real


def quartic_moment(
    b: CovarianceOperator, form1: QuadraticForm, form2: QuadraticForm
) -> float:
    """Exact mean of the product of two quadratic forms.

    Tr(B A1) Tr(B A2) + Tr(B A2 B A1); symmetric in the two forms.
    """
    if form1.dim != b.dim or form2.dim != b.dim:
        raise DimensionMismatch(
            f"form dims {form1.dim}, {form2.dim} vs operator dim {b.dim}"
        )
    t1 = complex((b.matrix @ form1.operator).trace())
    t2 = complex((b.matrix @ form2.operator).trace())
    cross = complex((b.matrix @ form2.operator @ b.matrix @ form1.operator).trace())
    value = t1 * t2 + cross
    assert abs(value.imag) <= 1e-10 * max(abs(value), 1e-300)
    return value.real


def energy_correlation(b: CovarianceOperator, i: int, j: int, tau: float) -> float:
    """Mean product of two channel energies at a fixed path time tau.

    Equals 3 tau^2 (b_ii b_jj + |b_ij|^2); the factor 3 tau^2 is the
    fourth moment of the shared path value at time tau.
    """
    dim = b.dim
    if not (0 <= i < dim and 0 <= j < dim):
        raise IndexOutOfRange(f"channels ({i},{j}) out of range for dimension {dim}")
    if i == j:
        raise SameChannel(f"channels must differ, got i = j = {i}")
    if tau < 0:
        raise ValueError(f"time must be nonnegative, got {tau}")
    ci = QuadraticForm(projector(dim, i))
    cj = QuadraticForm(projector(dim, j))
    return 3.0 * tau**2 * quartic_moment(b, ci, cj)
