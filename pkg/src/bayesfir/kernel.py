"""Tuned/correlated (TC) kernel matrices used as FIR impulse-response priors.

The kernel over tap indices i, j = 1..n is

    K[i, j] = lam * beta ** max(i, j),

which encodes exponentially decaying, positively correlated impulse
responses.  ``lam`` scales the prior variance and ``beta`` controls the
decay rate.  The feasible box is lam >= 0, 0 <= beta <= 1; on the
boundary the matrix is only positive semidefinite, so a semidefinite
square-root factorization is provided alongside the strict Cholesky.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """Matrix has no strictly positive definite Cholesky factorization."""


@dataclass(frozen=True)
class Hyperparameters:
    """Kernel hyperparameters: scale ``lam`` >= 0 and decay ``beta`` in [0, 1]."""

    lam: float
    beta: float

    def __post_init__(self):
        lam = float(self.lam)
        beta = float(self.beta)
        if not np.isfinite(lam) or lam < 0.0:
            raise ValueError(f"lam must be finite and >= 0, got {self.lam!r}")
        if not np.isfinite(beta) or not 0.0 <= beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta!r}")
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "beta", beta)

    def as_array(self) -> np.ndarray:
        return np.array([self.lam, self.beta])

    @classmethod
    def from_array(cls, eta) -> "Hyperparameters":
        lam, beta = np.asarray(eta, dtype=float)
        return cls(lam, beta)


@dataclass
class CholeskyFactor:
    """Lower Cholesky factor with log-determinant and linear solves."""

    lower: np.ndarray

    @property
    def logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.lower))))

    def solve(self, b: np.ndarray) -> np.ndarray:
        half = sla.solve_triangular(self.lower, b, lower=True)
        return sla.solve_triangular(self.lower.T, half, lower=False)


class KernelMatrix:
    """TC kernel Gram matrix together with its (lazily computed) factorization."""

    def __init__(self, n: int, eta: Hyperparameters, entries: np.ndarray):
        self.n = n
        self.eta = eta
        self.entries = entries
        self._chol = None

    @property
    def chol(self) -> np.ndarray:
        """Strict lower Cholesky factor; raises NotPositiveDefiniteError on the box boundary."""
        if self._chol is None:
            self._chol = chol_logdet_solve(self.entries).lower
        return self._chol

    def sqrt_factor(self) -> np.ndarray:
        """Lower-triangular L with L @ L.T == entries, tolerating semidefinite kernels.

        Boundary hyperparameters (lam = 0 or beta in {0, 1}) yield singular
        kernels; the marginal likelihood stays finite through L, so no jitter
        is ever added to the kernel itself.
        """
        # A zero diagonal entry (boundary eta or flushed tail) makes plain
        # Cholesky fail after a near-full factorization; skip the attempt.
        if np.any(np.diagonal(self.entries) == 0.0):
            return psd_sqrt_factor(self.entries)
        try:
            return self.chol
        except NotPositiveDefiniteError:
            return psd_sqrt_factor(self.entries)


# Entries this far below the kernel's largest entry are invisible at double
# precision but keep BLAS kernels in slow subnormal arithmetic; flush to zero.
TAIL_REL_FLOOR = 1e-150


def build_tc_kernel(n: int, eta: Hyperparameters) -> KernelMatrix:
    """Assemble the n-by-n TC kernel K[i, j] = lam * beta ** max(i, j) (1-based).

    Deeply decayed tail entries (below TAIL_REL_FLOOR relative to the leading
    lam * beta entry) are flushed to exact zero.  At n = 80 this touches
    nothing for beta > 0.013, and near the boundary it only removes values
    whose every downstream contribution underflows anyway.
    """
    if n < 1:
        raise ValueError(f"kernel order must be >= 1, got {n}")
    idx = np.arange(1, n + 1)
    m = np.maximum(idx[:, None], idx[None, :])
    entries = eta.lam * eta.beta ** m
    top = entries[0, 0]
    if top > 0.0:
        entries[entries < top * TAIL_REL_FLOOR] = 0.0
    return KernelMatrix(n, eta, entries)


def kernel_dbeta(n: int, beta: float) -> np.ndarray:
    """Entrywise derivative of the unit-scale kernel beta ** max(i, j) w.r.t. beta.

    The lam factor is deliberately excluded; callers multiply by lam when
    differentiating the scaled kernel.
    """
    if n < 1:
        raise ValueError(f"kernel order must be >= 1, got {n}")
    idx = np.arange(1, n + 1)
    m = np.maximum(idx[:, None], idx[None, :])
    # beta ** 0 == 1 also at beta == 0, matching the right-limit convention.
    return m * beta ** (m - 1)


def unit_kernel_inverse_bands(n: int, beta: float):
    """(diag, offdiag) of the tridiagonal inverse of the unit-scale kernel.

    The kernel beta ** max(i, j) is a reversed min-type matrix, so its
    inverse is exactly tridiagonal:

        inv[1, 1]     = 1 / (beta * (1 - beta))          (1 / beta when n == 1)
        inv[i, i]     = (1 + beta) / (beta**i * (1 - beta))   for 1 < i < n
        inv[n, n]     = 1 / (beta**n * (1 - beta))
        inv[i, i + 1] = -1 / (beta**i * (1 - beta))

    Quadratic forms and traces against the inverse therefore cost O(n)
    instead of a dense factorization.  Raises when the kernel is singular:
    beta <= 0 always, beta >= 1 for n >= 2, or beta**n underflowing to zero.
    """
    if n < 1:
        raise ValueError(f"kernel order must be >= 1, got {n}")
    if beta <= 0.0 or (n >= 2 and beta >= 1.0):
        raise NotPositiveDefiniteError(f"unit kernel is singular at beta={beta!r}, n={n}")
    if n == 1:
        return np.array([1.0 / beta]), np.zeros(0)
    powers = beta ** np.arange(1, n + 1, dtype=float)
    if powers[-1] == 0.0:
        raise NotPositiveDefiniteError(f"beta**n underflows at beta={beta!r}, n={n}")
    # scale grows monotonically toward the tail, so the largest band entry is
    # (1 + beta) / ((1 - beta) * beta**n); if that scalar is finite nothing
    # else can overflow and the vector arithmetic below is warning-free.
    with np.errstate(over="ignore", divide="ignore"):
        top = (1.0 + beta) / ((1.0 - beta) * powers[-1])
    if not np.isfinite(top):
        raise NotPositiveDefiniteError(f"unit kernel inverse overflows at beta={beta!r}, n={n}")
    scale = 1.0 / ((1.0 - beta) * powers)
    diag = (1.0 + beta) * scale
    diag[0] = scale[0]
    diag[-1] = scale[-1]
    offdiag = -scale[:-1]
    return diag, offdiag


def unit_kernel_logdet(n: int, beta: float) -> float:
    """log det of the unit-scale kernel: (n(n+1)/2) ln beta + (n-1) ln(1-beta)."""
    if n < 1:
        raise ValueError(f"kernel order must be >= 1, got {n}")
    if beta <= 0.0 or (n >= 2 and beta >= 1.0):
        raise NotPositiveDefiniteError(f"unit kernel is singular at beta={beta!r}, n={n}")
    return 0.5 * n * (n + 1) * np.log(beta) + (n - 1) * np.log1p(-beta)


def dbeta_block_weights(n: int, beta: float) -> np.ndarray:
    """Weights c with kernel_dbeta(n, beta) == sum_m c[m] * B_m.

    B_m is the rank-one block indicator (ones on the leading m-by-m block),
    so any matrix a[max(i, j)] splits into sum_m (a_m - a_{m+1}) B_m + a_n B_n.
    Positive weights collect the positive semidefinite part of the derivative
    and negative weights the rest, which is what the gradient sign-split needs.
    """
    m = np.arange(1, n + 1, dtype=float)
    a = m * beta ** (m - 1.0)
    c = np.empty(n)
    c[:-1] = a[:-1] - a[1:]
    c[-1] = a[-1]
    return c


def chol_logdet_solve(mat: np.ndarray) -> CholeskyFactor:
    """Factor a symmetric positive definite matrix, exposing logdet and solves."""
    try:
        lower = sla.cholesky(mat, lower=True)
    except (sla.LinAlgError, ValueError) as exc:
        raise NotPositiveDefiniteError(str(exc)) from exc
    return CholeskyFactor(lower)


def psd_sqrt_factor(mat: np.ndarray, rel_tol: float = 1e-12) -> np.ndarray:
    """Square L with L @ L.T == mat for positive SEMIdefinite mat.

    Pivoted Cholesky (LAPACK dpstrf) with the rows unpermuted afterwards, so
    L is not triangular in general but the product reconstruction is exact to
    rounding.  Pivots below rel_tol times the largest diagonal entry are
    treated as exact zero directions and their columns zeroed.
    """
    a = np.array(mat, dtype=float)
    floor = rel_tol * max(float(np.max(np.diag(a))), 0.0)
    c, piv, rank, info = sla.lapack.dpstrf(a, lower=1, tol=floor)
    if info < 0:
        raise ValueError(f"pivoted Cholesky rejected argument {-info}")
    lower = np.tril(c)
    lower[:, rank:] = 0.0
    out = np.zeros_like(lower)
    out[piv - 1, :] = lower
    return out
