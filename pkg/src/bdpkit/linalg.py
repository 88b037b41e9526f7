"""Truncated generators, matrix exponentials and Van Loan integrals."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .models import ModelSpec

MAX_STATES = 20000
WINDOW_PAD = 100


@dataclass(frozen=True)
class TruncationWindow:
    z_min: int
    z_max: int

    def __post_init__(self):
        if self.z_min < 0 or self.z_max <= self.z_min:
            raise ValueError(f"invalid truncation window [{self.z_min}, {self.z_max}]")

    @property
    def size(self) -> int:
        return self.z_max - self.z_min + 1

    @property
    def states(self) -> np.ndarray:
        return np.arange(self.z_min, self.z_max + 1)

    def index(self, z):
        z = np.asarray(z)
        if np.any(z < self.z_min) or np.any(z > self.z_max):
            raise ValueError(
                f"states outside the truncation window [{self.z_min}, {self.z_max}]"
            )
        return (z - self.z_min).astype(int)

    def contains(self, z) -> bool:
        z = np.asarray(z)
        return bool(np.all((z >= self.z_min) & (z <= self.z_max)))


def default_window(*states, pad: int = WINDOW_PAD, bound=None) -> TruncationWindow:
    """Window ``[max(0, min - pad), max + pad]`` around all given states."""
    flat = np.concatenate([np.atleast_1d(np.asarray(s, dtype=float)).ravel() for s in states])
    lo = max(0, int(np.min(flat)) - pad)
    hi = int(np.max(flat)) + pad
    if bound is not None:
        hi = min(hi, int(bound))
    if hi <= lo:
        hi = lo + 1
    return TruncationWindow(lo, hi)


def resolve_window(z_trunc, *states, bound=None) -> TruncationWindow:
    if z_trunc is None:
        return default_window(*states, bound=bound)
    if isinstance(z_trunc, TruncationWindow):
        return z_trunc
    lo, hi = z_trunc
    return TruncationWindow(int(lo), int(hi))


@dataclass(frozen=True)
class GeneratorMatrix:
    window: TruncationWindow
    Q: np.ndarray
    birth: np.ndarray
    death: np.ndarray


def build_generator(model: ModelSpec, p, window: TruncationWindow) -> GeneratorMatrix:
    """Tridiagonal generator on `window` with outward rates zeroed at the edges."""
    z = window.states.astype(float)
    lam = np.array(model.birth(z, p), dtype=float)
    mu = np.array(model.death(z, p), dtype=float)
    bad = ~(np.isfinite(lam) & np.isfinite(mu))
    if bad.any():
        raise ValueError(f"non-finite rate at state {int(z[np.argmax(bad)])}")
    lam[-1] = 0.0
    mu[0] = 0.0
    n = window.size
    Q = np.zeros((n, n))
    idx = np.arange(n)
    Q[idx[:-1], idx[1:]] = lam[:-1]
    Q[idx[1:], idx[:-1]] = mu[1:]
    Q[idx, idx] = -(lam + mu)
    return GeneratorMatrix(window, Q, lam, mu)


def expm(M) -> np.ndarray:
    """Matrix exponential by scaling and squaring with a Pade approximant."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("expm needs a square matrix")
    if M.shape[0] > 2 * MAX_STATES:
        raise ValueError(
            f"matrix with {M.shape[0]} rows exceeds the {MAX_STATES}-state limit; "
            "narrow the truncation window"
        )
    if not np.all(np.isfinite(M)):
        raise ValueError("expm received non-finite entries")
    return scipy.linalg.expm(M)


def transition_matrix(gen: GeneratorMatrix, t: float) -> np.ndarray:
    if gen.window.size > MAX_STATES:
        raise ValueError(
            f"window of {gen.window.size} states exceeds the {MAX_STATES}-state limit"
        )
    return expm(gen.Q * t)


def van_loan_integral(gen: GeneratorMatrix, a: int, b: int, t: float) -> np.ndarray:
    """``int_0^t exp(Qs) e_a e_b^T exp(Q(t-s)) ds`` for window states `a`, `b`."""
    n = gen.window.size
    ia, ib = gen.window.index(a), gen.window.index(b)
    C = np.zeros((2 * n, 2 * n))
    C[:n, :n] = gen.Q
    C[n:, n:] = gen.Q
    C[ia, n + ib] = 1.0
    return expm(C * t)[:n, n:]


def van_loan_weighted(gen: GeneratorMatrix, B: np.ndarray, t: float):
    """Return ``(P, S)`` with ``P = exp(Qt)`` and
    ``S = int_0^t exp(Q^T s) B exp(Q^T (t-s)) ds``.

    ``S[a, b]`` equals ``sum_ij B[i, j] int p_ia(s) p_bj(t-s) ds``, which is
    what the EM E-step needs for every ``(a, b)`` pair at the cost of one
    exponential.
    """
    n = gen.window.size
    QT = gen.Q.T
    # S is linear in B; a unit-size coupling block keeps the scaling-and-squaring
    # step count governed by Q even when B carries reciprocals of tiny probabilities
    c = float(np.max(np.abs(B))) if B.size else 0.0
    c = c if c > 0 else 1.0
    C = np.zeros((2 * n, 2 * n))
    C[:n, :n] = QT
    C[n:, n:] = QT
    C[:n, n:] = B / c
    E = expm(C * t)
    return E[:n, :n].T, E[:n, n:] * c
