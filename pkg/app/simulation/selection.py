import math
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from app.core.errors import DomainError


@dataclass(frozen=True)
class SelectionRound:
    round_t: int
    theta: np.ndarray
    threshold: Optional[float]
    indicator: np.ndarray
    tau: Optional[float] = None
    # no score met the threshold; the argmin worker was taken instead
    fallback: bool = False
    # round 1 (or no threshold yet): everyone participates
    bootstrap: bool = False

    @property
    def num_selected(self) -> int:
        return int(self.indicator.sum())

    @property
    def selected(self) -> List[int]:
        return [int(i) for i in np.flatnonzero(self.indicator)]

    def rows(self) -> List[Dict[str, Any]]:
        return [
            {
                "round": self.round_t,
                "worker": i,
                "theta": float(self.theta[i]),
                "threshold": self.threshold,
                "selected": int(self.indicator[i]),
                "fallback": int(self.fallback),
            }
            for i in range(len(self.theta))
        ]


def _check_tau(tau: float) -> None:
    if not 0.0 <= tau <= 1.0:
        raise DomainError(f"tau must lie in [0, 1] (got {tau})")


def tradeoff_score(f: float, eta: float, tau: float) -> float:
    _check_tau(tau)
    if f < 0:
        raise DomainError(f"loss must be nonnegative (got {f})")
    return tau * f + (1.0 - tau) * eta


def tradeoff_scores(f: Sequence[float], eta: Sequence[float], tau: float) -> np.ndarray:
    _check_tau(tau)
    f = np.asarray(f, dtype=np.float64)
    eta = np.asarray(eta, dtype=np.float64)
    if f.shape != eta.shape:
        raise DomainError("loss and eta vectors differ in length")
    if np.any(f < 0):
        raise DomainError("losses must be nonnegative")
    return tau * f + (1.0 - tau) * eta


def _as_theta(theta: Sequence[float]) -> np.ndarray:
    arr = np.asarray(theta, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise DomainError("theta must list at least one worker")
    return arr


def avg_threshold(theta: Sequence[float]) -> float:
    arr = _as_theta(theta)
    lo, hi = float(arr.min()), float(arr.max())
    # clamp so a constant score vector reproduces its value exactly
    return min(max(math.fsum(arr) / arr.size, lo), hi)


def select_workers(
    theta: Sequence[float],
    threshold_prev: Optional[float],
    t: int,
    tau: Optional[float] = None,
) -> SelectionRound:
    """
    Largest set with theta_i <= previous threshold (inclusive). Round 1, or a
    missing threshold, selects everyone; an empty feasible set falls back to
    the single argmin worker.
    """
    arr = _as_theta(theta)
    if t <= 1 or threshold_prev is None:
        return SelectionRound(t, arr, threshold_prev, np.ones(arr.size, dtype=bool), tau, bootstrap=True)
    indicator = arr <= threshold_prev
    if indicator.any():
        return SelectionRound(t, arr, threshold_prev, indicator, tau)
    indicator = np.zeros(arr.size, dtype=bool)
    indicator[int(np.argmin(arr))] = True
    return SelectionRound(t, arr, threshold_prev, indicator, tau, fallback=True)


def select_all(theta: Sequence[float], t: int, tau: Optional[float] = None) -> SelectionRound:
    arr = _as_theta(theta)
    return SelectionRound(t, arr, None, np.ones(arr.size, dtype=bool), tau)


def select_argmin(theta: Sequence[float], t: int, tau: Optional[float] = None) -> SelectionRound:
    """Single best worker (lowest score, lowest id on ties)."""
    arr = _as_theta(theta)
    indicator = np.zeros(arr.size, dtype=bool)
    indicator[int(np.argmin(arr))] = True
    return SelectionRound(t, arr, None, indicator, tau)
