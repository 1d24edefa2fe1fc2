"""Synthetic benchmark systems, band-limited excitation, and fit scoring.

Test systems are random stable rational transfer functions (poles inside a
disk of radius 0.95, conjugate-closed) truncated to an n-tap impulse response
with unit Euclidean norm; systems whose response has not decayed to 1e-3 of
its peak by tap n are resampled.  The excitation is unit-variance white noise
shaped by a fixed 64-tap Hamming-windowed-sinc low-pass with cutoff at 0.8
times Nyquist.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal as ssig

FILTER_TAPS = 64
FILTER_CUTOFF = 0.8  # relative to Nyquist
POLE_RADIUS = 0.95
ORDER_RANGE = (5, 10)
DECAY_TOL = 1e-3
MAX_RETRIES = 50


@dataclass(frozen=True)
class TrueSystem:
    """Ground-truth system: rational model plus its truncated impulse response."""

    order: int
    poles: np.ndarray
    zeros: np.ndarray
    gain: float
    h_true: np.ndarray


@dataclass(frozen=True)
class ExperimentConfig:
    """Benchmark protocol knobs shared by the CLI commands."""

    n: int = 80
    n_total: int = 5000
    n_warmup: int = 100
    n_k: int = 10
    snr: float = 5.0
    runs: int = 200
    seed: int = 0
    methods: tuple = ("bb", "sgp", "bfgs", "em", "em1", "em2", "opt")
    lambda_only: bool = False

    def __post_init__(self):
        if self.n < 1 or self.n_warmup < 1 or self.n_k < 1 or self.runs < 1:
            raise ValueError("n, n_warmup, n_k, and runs must all be >= 1")
        if self.n_total <= self.n_warmup:
            raise ValueError(
                f"n_total={self.n_total} must exceed n_warmup={self.n_warmup}"
            )
        if self.snr <= 0:
            raise ValueError(f"snr must be > 0, got {self.snr}")
        object.__setattr__(self, "methods", tuple(self.methods))


def _sample_in_disk(rng, count: int, radius: float) -> np.ndarray:
    """Conjugate-closed draw of ``count`` points uniform in a centered disk."""
    vals = []
    if count % 2:
        vals.append(complex(rng.uniform(-radius, radius)))
    for _ in range(count // 2):
        r = radius * np.sqrt(rng.uniform())
        theta = rng.uniform(0.0, np.pi)
        p = r * np.exp(1j * theta)
        vals.extend([p, np.conj(p)])
    return np.array(vals)


def impulse_response(b: np.ndarray, a: np.ndarray, n: int) -> np.ndarray:
    """First n impulse-response taps of the rational filter b(z^-1)/a(z^-1)."""
    imp = np.zeros(n)
    imp[0] = 1.0
    return ssig.lfilter(b, a, imp)


def random_system(
    rng,
    n: int,
    order_range: tuple = ORDER_RANGE,
    pole_radius: float = POLE_RADIUS,
    decay_tol: float = DECAY_TOL,
    max_retries: int = MAX_RETRIES,
) -> TrueSystem:
    """Draw a random stable system and truncate it to n unit-norm taps.

    ``decay_tol=None`` disables the tail-decay check (useful for small n where
    no stable system of these orders has died out yet).
    """
    for _ in range(max_retries):
        order = int(rng.integers(order_range[0], order_range[1] + 1))
        poles = _sample_in_disk(rng, order, pole_radius)
        zeros = _sample_in_disk(rng, order - 1, 1.0)
        a = np.real(np.poly(poles))
        b_raw = np.real(np.poly(zeros))
        # One extra delay keeps the model strictly proper: b has degree
        # order-1 against a's degree order.
        b = np.concatenate([[0.0], b_raw])
        h_raw = impulse_response(b, a, n)
        norm = float(np.linalg.norm(h_raw))
        if norm < 1e-12:
            continue
        h_true = h_raw / norm
        if decay_tol is not None and abs(h_true[-1]) > decay_tol * np.max(np.abs(h_true)):
            continue
        return TrueSystem(
            order=order, poles=poles, zeros=zeros, gain=1.0 / norm, h_true=h_true
        )
    raise RuntimeError(f"no admissible system after {max_retries} draws")


def bandlimited_input(rng, n_samples: int) -> np.ndarray:
    """Unit-variance Gaussian noise low-passed to [0, 0.8] of Nyquist."""
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    white = rng.standard_normal(n_samples)
    taps = ssig.firwin(FILTER_TAPS, FILTER_CUTOFF)
    shaped = ssig.lfilter(taps, 1.0, white)
    scale = float(np.std(shaped))
    return shaped / scale if scale > 0.0 else shaped


def simulate_io(system: TrueSystem, u: np.ndarray, snr: float, rng) -> np.ndarray:
    """Noisy output y = h_true * u + e with var(e) = var(h_true * u) / snr."""
    u = np.asarray(u, dtype=float)
    y0 = np.convolve(system.h_true, u)[: u.size]
    noise_var = float(np.var(y0)) / snr
    return y0 + np.sqrt(noise_var) * rng.standard_normal(u.size)


def fit(h_true: np.ndarray, h_hat: np.ndarray) -> float:
    """Fit score 100 * (1 - ||h_true - h_hat|| / ||h_true||); 100 is exact recovery."""
    h_true = np.asarray(h_true, dtype=float)
    h_hat = np.asarray(h_hat, dtype=float)
    denom = float(np.linalg.norm(h_true))
    if denom == 0.0:
        raise ValueError("fit is undefined for an all-zero reference response")
    return 100.0 * (1.0 - float(np.linalg.norm(h_true - h_hat)) / denom)


def dump_dataset(path, u: np.ndarray, y: np.ndarray) -> None:
    """Write an input/output record as two-column text with a ``u,y`` header.

    Values are written with shortest round-trip precision so a reload
    reproduces the exact same doubles.
    """
    u = np.asarray(u, dtype=float)
    y = np.asarray(y, dtype=float)
    if u.shape != y.shape or u.ndim != 1:
        raise ValueError("u and y must be one-dimensional and equally long")
    with open(path, "w") as fh:
        fh.write("u,y\n")
        for ui, yi in zip(u, y):
            # plain-float repr; numpy scalars would stringify as np.float64(...)
            fh.write(f"{float(ui)!r},{float(yi)!r}\n")


def load_dataset(path):
    """Read a dataset written by dump_dataset; returns (u, y).

    Raises ValueError naming the offending line number on malformed input.
    """
    u, y = [], []
    with open(path) as fh:
        header = fh.readline()
        if header.strip() != "u,y":
            raise ValueError(f"{path}: line 1: expected header 'u,y'")
        for lineno, line in enumerate(fh, start=2):
            text = line.strip()
            if not text:
                continue
            parts = text.split(",")
            if len(parts) != 2:
                raise ValueError(f"{path}: line {lineno}: expected two comma-separated values")
            try:
                u.append(float(parts[0]))
                y.append(float(parts[1]))
            except ValueError:
                raise ValueError(f"{path}: line {lineno}: non-numeric value") from None
    if not u:
        raise ValueError(f"{path}: no samples found")
    return np.array(u), np.array(y)
