"""Observation containers, known-parameter handling and estimation results."""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np

SCHEMES = ("discrete", "continuous")


def _as_paths(values, dtype=float):
    """Accept a single list or a list of lists; return a list of 1-d arrays."""
    if len(values) == 0:
        raise ValueError("no observations supplied")
    first = values[0]
    if np.ndim(first) == 0:
        return [np.asarray(values, dtype=dtype)]
    return [np.asarray(v, dtype=dtype) for v in values]


@dataclass
class ObservedData:
    """Sample paths observed at (possibly irregular) times.

    For the ``"discrete"`` scheme each path lists observation times and the
    counts seen at those times. For ``"continuous"`` each path lists the start
    time followed by every jump time, with the state entered at that time; a
    final entry with an unchanged state marks the end of the observation
    window.
    """

    t_data: list
    p_data: list
    scheme: str = "discrete"

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        self.t_data = _as_paths(self.t_data)
        self.p_data = _as_paths(self.p_data)
        if len(self.t_data) != len(self.p_data):
            raise ValueError("t_data and p_data hold different numbers of paths")
        for k, (t, z) in enumerate(zip(self.t_data, self.p_data)):
            if t.shape != z.shape:
                raise ValueError(f"path {k}: times and counts differ in length")
            if t.size < 2:
                raise ValueError(f"path {k}: at least two observations are needed")
            if np.any(np.diff(t) <= 0):
                raise ValueError(f"path {k}: times must be strictly increasing")
            if np.any(z < 0):
                raise ValueError(f"path {k}: counts must be non-negative")
            if self.scheme == "continuous":
                steps = np.abs(np.diff(z))
                if np.any(steps[:-1] != 1) or steps[-1] > 1:
                    raise ValueError(
                        f"path {k}: continuous data must move by exactly one per jump"
                    )

    @property
    def num_paths(self) -> int:
        return len(self.t_data)

    def require_integer(self):
        for k, z in enumerate(self.p_data):
            if np.any(z != np.round(z)):
                raise ValueError(f"path {k}: counts must be integers")

    def transitions(self, integer: bool = True):
        """``(z_prev, z_next, dt)`` arrays over every consecutive pair; counts
        are cast to int64 unless ``integer=False``."""
        zp, zn, dt = [], [], []
        for t, z in zip(self.t_data, self.p_data):
            zp.append(z[:-1])
            zn.append(z[1:])
            dt.append(np.diff(t))
        kind = np.int64 if integer else float
        return (np.concatenate(zp).astype(kind), np.concatenate(zn).astype(kind),
                np.concatenate(dt))

    def max_count(self) -> float:
        return float(max(np.max(z) for z in self.p_data))

    def min_count(self) -> float:
        return float(min(np.min(z) for z in self.p_data))


def group_by_dt(z_prev, z_next, dt, decimals: int = 12):
    """Group transitions sharing an elapsed time.

    Returns a list of ``(dt, pairs, counts)`` with ``pairs`` an ``(m, 2)``
    array of distinct ``(z_prev, z_next)`` and ``counts`` their multiplicity.
    """
    key = np.round(dt, decimals)
    out = []
    for d in np.unique(key):
        sel = key == d
        pairs, counts = np.unique(np.stack([z_prev[sel], z_next[sel]], axis=1),
                                  axis=0, return_counts=True)
        out.append((float(dt[sel][0]), pairs, counts))
    return out


class ParamMap:
    """Split a canonical parameter vector into known and free entries."""

    def __init__(self, n: int, known_p=(), idx_known_p=()):
        known_p = list(np.atleast_1d(np.asarray(known_p, dtype=float))) if len(known_p) else []
        idx = [int(i) for i in idx_known_p]
        if len(known_p) != len(idx):
            raise ValueError("known_p and idx_known_p must have the same length")
        if len(set(idx)) != len(idx) or any(i < 0 or i >= n for i in idx):
            raise ValueError(f"idx_known_p must hold distinct indices in [0, {n})")
        self.n = n
        self.known_idx = np.array(idx, dtype=int)
        self.known_val = np.array(known_p, dtype=float)
        self.free = np.array([i for i in range(n) if i not in idx], dtype=int)
        if self.free.size == 0:
            raise ValueError("every parameter is known; there is nothing to estimate")

    @property
    def num_free(self) -> int:
        return self.free.size

    def full(self, x) -> np.ndarray:
        p = np.empty(self.n)
        p[self.known_idx] = self.known_val
        p[self.free] = np.asarray(x, dtype=float)
        return p

    def full_batch(self, X) -> np.ndarray:
        """Free vectors as rows of `X` -> canonical parameters as columns."""
        X = np.atleast_2d(X)
        P = np.empty((self.n, X.shape[0]))
        P[self.known_idx] = self.known_val[:, None]
        P[self.free] = X.T
        return P

    def free_of(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        if p.size == self.n:
            return p[self.free]
        if p.size == self.free.size:
            return p
        raise ValueError(
            f"parameter vector of length {p.size} matches neither the full ({self.n}) "
            f"nor the free ({self.free.size}) parameter count"
        )


@dataclass
class EstimationResult:
    """Outcome of a parameter-estimation run.

    ``p`` holds the full canonical parameter vector (known values included);
    ``cov`` and ``se`` refer to the estimated entries listed in ``free_idx``.
    """

    p: np.ndarray
    free_idx: np.ndarray
    val: float
    framework: str
    scheme: str
    p0: np.ndarray
    capacity: Optional[int] = None
    cov: Optional[np.ndarray] = None
    se: Optional[np.ndarray] = None
    se_type: str = "none"
    compute_time: float = 0.0
    message: str = ""
    success: bool = True
    iterations: list = field(default_factory=list)
    samples: Optional[np.ndarray] = None
    method: Optional[str] = None
    model: str = ""
    diagnostics: dict = field(default_factory=dict)

    @property
    def p_free(self) -> np.ndarray:
        return self.p[self.free_idx]

    def to_dict(self) -> dict:
        d = asdict(self)
        for key, value in d.items():
            if isinstance(value, np.ndarray):
                d[key] = value.tolist()
        d["iterations"] = [np.asarray(v).tolist() for v in self.iterations]
        return d
