"""Streaming sufficient statistics for FIR least squares.

Incoming input/output batches are compressed into {R, ytilde, ybar, nbar}
with R = Phi' Phi and ytilde = Phi' Y, so memory stays O(n^2) no matter how
long the stream runs.  Regressor rows follow the convention

    phi(t) = [u(t), u(t-1), ..., u(t-n+1)],

with inputs before time 1 taken as zero; the last n-1 inputs are carried
across batch boundaries so rows at a boundary are exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla

RIDGE_SCALE = 1e-8
NOISE_FLOOR = 1e-12
SM_DENOM_FLOOR = 1e-12


class RankDeficientError(np.linalg.LinAlgError):
    """Normal matrix R is numerically singular with nbar >= n samples."""


class IllConditionedUpdateError(np.linalg.LinAlgError):
    """Rank-one inverse update hit a vanishing denominator."""


@dataclass(frozen=True)
class Batch:
    """One contiguous chunk of input/output samples."""

    u: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        u = np.atleast_1d(np.asarray(self.u, dtype=float))
        y = np.atleast_1d(np.asarray(self.y, dtype=float))
        if u.ndim != 1 or y.ndim != 1:
            raise ValueError("batch u and y must be one-dimensional")
        if u.size != y.size:
            raise ValueError(f"batch length mismatch: {u.size} inputs vs {y.size} outputs")
        if u.size == 0:
            raise ValueError("batch must contain at least one sample")
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(y))):
            raise ValueError("batch contains non-finite samples")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "y", y)

    def __len__(self) -> int:
        return self.u.size


@dataclass(frozen=True)
class SufficientStats:
    """Compressed regression statistics plus the input tail for row building."""

    n: int
    R: np.ndarray
    ytilde: np.ndarray
    ybar: float
    nbar: int
    history: np.ndarray  # last n-1 inputs seen, oldest first

    @classmethod
    def empty(cls, n: int) -> "SufficientStats":
        if n < 1:
            raise ValueError(f"model order must be >= 1, got {n}")
        return cls(
            n=n,
            R=np.zeros((n, n)),
            ytilde=np.zeros(n),
            ybar=0.0,
            nbar=0,
            history=np.zeros(n - 1),
        )


def regressor_rows(u: np.ndarray, history: np.ndarray, n: int) -> np.ndarray:
    """Build the batch regressor matrix, one row [u(t), ..., u(t-n+1)] per sample.

    ``history`` holds the n-1 inputs that preceded this batch (zeros where the
    stream has not run that long yet).
    """
    u = np.atleast_1d(np.asarray(u, dtype=float))
    nk = u.size
    tail = np.zeros(n - 1)
    if n > 1 and history is not None:
        hist = np.atleast_1d(np.asarray(history, dtype=float))[-(n - 1):]
        if hist.size:
            tail[-hist.size:] = hist
    ext = np.concatenate([tail, u])
    cols = [ext[n - 1 - i : n - 1 - i + nk] for i in range(n)]
    return np.stack(cols, axis=1)


def ingest(stats: SufficientStats, batch: Batch) -> SufficientStats:
    """Fold one batch into the statistics, returning a new instance.

    The caller's ``stats`` is never mutated, so a failed downstream update
    can simply keep the old object.
    """
    phi = regressor_rows(batch.u, stats.history, stats.n)
    if len(batch) == 1:
        row = phi[0]
        r_new = stats.R + np.outer(row, row)
        ytilde_new = stats.ytilde + row * batch.y[0]
    else:
        r_new = stats.R + phi.T @ phi
        ytilde_new = stats.ytilde + phi.T @ batch.y
    ybar_new = stats.ybar + float(batch.y @ batch.y)
    history_new = np.concatenate([stats.history, batch.u])[-(stats.n - 1):] if stats.n > 1 else stats.history
    return SufficientStats(
        n=stats.n,
        R=r_new,
        ytilde=ytilde_new,
        ybar=ybar_new,
        nbar=stats.nbar + len(batch),
        history=history_new,
    )


def ls_estimate(stats: SufficientStats) -> np.ndarray:
    """Least-squares solve R h = ytilde.

    When the plain Cholesky factorization fails -- underdetermined early
    stream, or a band-limited input whose sample Gram matrix stays numerically
    singular well past nbar = n -- the solve falls back to the ridge system
    R + RIDGE_SCALE * trace(R)/n * I and the result is provisional.  Only an
    exactly unidentifiable problem raises: some regressor column carries zero
    energy (a diagonal of R is zero) even though nbar >= n, so no amount of
    further data at this excitation can pin that coefficient down.
    """
    try:
        cho = sla.cho_factor(stats.R, lower=True)
        return sla.cho_solve(cho, stats.ytilde)
    except (sla.LinAlgError, ValueError):
        pass
    if stats.nbar >= stats.n and np.any(np.diagonal(stats.R) <= 0.0):
        raise RankDeficientError(
            f"unexcited regressor lag: R has a zero diagonal with nbar={stats.nbar} >= n={stats.n}"
        )
    trace = float(np.trace(stats.R))
    if trace <= 0.0:
        return np.zeros(stats.n)
    ridge = RIDGE_SCALE * trace / stats.n
    try:
        cho = sla.cho_factor(stats.R + ridge * np.eye(stats.n), lower=True)
    except (sla.LinAlgError, ValueError):
        raise RankDeficientError("R is numerically singular even after ridge regularization") from None
    return sla.cho_solve(cho, stats.ytilde)


def noise_variance(stats: SufficientStats, h_ls: np.ndarray, floor: float = NOISE_FLOOR) -> float:
    """Residual noise variance (ybar - 2 ytilde'h + h'Rh) / (nbar - n), floored.

    The least-squares residual can round to zero (or slightly below) on
    noise-free data; the floor keeps downstream likelihood evaluations
    well defined.
    """
    if stats.nbar <= stats.n:
        raise ValueError(f"noise variance needs nbar > n, got nbar={stats.nbar}, n={stats.n}")
    h_ls = np.asarray(h_ls, dtype=float)
    rss = stats.ybar - 2.0 * float(stats.ytilde @ h_ls) + float(h_ls @ stats.R @ h_ls)
    return max(rss / (stats.nbar - stats.n), floor)


def sherman_morrison_inverse_update(rinv: np.ndarray, row: np.ndarray) -> np.ndarray:
    """Inverse of R + row row' given rinv = inv(R), via the rank-one identity."""
    row = np.asarray(row, dtype=float)
    rv = rinv @ row
    denom = 1.0 + float(row @ rv)
    if denom <= SM_DENOM_FLOOR:
        raise IllConditionedUpdateError(
            f"rank-one update denominator {denom:.3e} below {SM_DENOM_FLOOR:.0e}; refactorize"
        )
    out = rinv - np.outer(rv, rv) / denom
    return 0.5 * (out + out.T)
