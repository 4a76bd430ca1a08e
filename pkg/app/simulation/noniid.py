"""
Heterogeneity metrics over label histograms: 1-D Wasserstein distance,
label-support ratio, the normalized non-i.i.d. degree, and the least-squares
fit of the degree coefficients against observed accuracy.
"""

import csv
import io
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize

from app.core.errors import ConfigError, DomainError, SchemaError, SingularityError
from app.schemas.experiment import DegreeCoefficients
from app.simulation.data import LabelHistogram
from app.utils.seeding import STREAM_FIT, keyed_rng

OBSERVATION_COLUMNS = ["label_ratio", "wd", "accuracy"]

_NORM_TOL = 1e-9


@dataclass(frozen=True)
class HeterogeneityComponents:
    wd: float
    label_ratio: float


@dataclass(frozen=True)
class NonIIDDegreeVector:
    eta: np.ndarray
    raw: np.ndarray
    components: List[HeterogeneityComponents]


@dataclass(frozen=True)
class TransportPlan:
    matrix: np.ndarray


def _as_distribution(p: Sequence[float], name: str) -> np.ndarray:
    arr = np.asarray(p, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise DomainError(f"{name} must be a non-empty vector")
    if np.any(arr < 0) or not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} has negative or non-finite mass")
    if abs(arr.sum() - 1.0) > _NORM_TOL:
        raise DomainError(f"{name} sums to {arr.sum()!r}, expected 1")
    return arr


def wasserstein_1d(p: Sequence[float], q: Sequence[float]) -> float:
    """Exact transport cost on class indices with ground metric |i - j|."""
    a = _as_distribution(p, "p")
    b = _as_distribution(q, "q")
    if a.shape != b.shape:
        raise DomainError(f"length mismatch ({a.size} vs {b.size})")
    return float(np.abs(np.cumsum(a) - np.cumsum(b)).sum())


def wasserstein_lp_oracle(
    p: Sequence[float],
    q: Sequence[float],
    cost: Optional[np.ndarray] = None,
) -> Tuple[float, TransportPlan]:
    """
    Solves the discrete transport program exactly (dual simplex) for any cost
    matrix; the default |i - j| cost reproduces the closed form.
    """
    a = _as_distribution(p, "p")
    b = _as_distribution(q, "q")
    M = _index_cost(a.size) if cost is None else np.asarray(cost, dtype=np.float64)
    if M.shape != (a.size, b.size):
        raise DomainError(f"cost shape {M.shape} does not match marginals ({a.size}, {b.size})")
    if np.any(M < 0):
        raise DomainError("cost must be nonnegative")
    rows = np.kron(np.eye(a.size), np.ones(b.size))
    cols = np.kron(np.ones(a.size), np.eye(b.size))
    res = optimize.linprog(
        M.ravel(),
        A_eq=np.vstack([rows, cols]),
        b_eq=np.concatenate([a, b]),
        bounds=(0, None),
        method="highs-ds",
        options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10},
    )
    if res.status != 0:
        raise DomainError(f"transport program infeasible: {res.message}")
    plan = np.clip(res.x.reshape(a.size, b.size), 0.0, None)
    return float(M.ravel() @ plan.ravel()), TransportPlan(plan)


def _index_cost(L: int) -> np.ndarray:
    idx = np.arange(L)
    return np.abs(idx[:, None] - idx[None, :]).astype(np.float64)


def minmax_normalize(raw: Sequence[float]) -> np.ndarray:
    """Min-max scaling; all-equal scores map to 0.5."""
    arr = np.asarray(raw, dtype=np.float64)
    lo, hi = arr.min(), arr.max()
    if hi - lo <= 0.0:
        return np.full(arr.shape, 0.5)
    return (arr - lo) / (hi - lo)


def heterogeneity_components(worker: LabelHistogram, global_hist: LabelHistogram) -> HeterogeneityComponents:
    if worker.total <= 0:
        raise DomainError("worker histogram is empty")
    if global_hist.support == 0:
        raise DomainError("global histogram has no classes")
    return HeterogeneityComponents(
        wd=wasserstein_1d(worker.proportions(), global_hist.proportions()),
        label_ratio=worker.support / global_hist.support,
    )


def noniid_degree(
    workers: Sequence[LabelHistogram],
    global_hist: LabelHistogram,
    coeffs: DegreeCoefficients,
) -> NonIIDDegreeVector:
    if len(workers) == 0:
        raise DomainError("need at least one worker histogram")
    comps = [heterogeneity_components(h, global_hist) for h in workers]
    raw = np.array([coeffs.beta1 * c.label_ratio + coeffs.beta2 * c.wd + coeffs.phi for c in comps])
    return NonIIDDegreeVector(eta=minmax_normalize(raw), raw=raw, components=comps)


def orient_eta(eta: np.ndarray, complement: bool) -> np.ndarray:
    return 1.0 - eta if complement else eta


def fit_coefficients(
    observations: Sequence[Tuple[float, float, float]],
    test_fraction: float = 0.1,
    seed: int = 0,
) -> Tuple[DegreeCoefficients, float]:
    """
    OLS of accuracy on (label_ratio, wd, 1) over a seeded 90/10 split.
    R^2 is measured on the held-out part.
    """
    obs = np.asarray(observations, dtype=np.float64)
    if obs.ndim != 2 or obs.shape[1] != 3:
        raise DomainError("observations must be (label_ratio, wd, accuracy) triples")
    n = obs.shape[0]
    if n < 4:
        raise DomainError(f"need at least 4 observations (got {n})")
    n_test = max(1, int(round(test_fraction * n)))
    if n >= 5:
        # a single held-out row has no variance to score against
        n_test = max(n_test, 2)
    n_test = min(n_test, n - 3)
    perm = keyed_rng(seed, STREAM_FIT).permutation(n)
    fit_rows, test_rows = obs[perm[n_test:]], obs[perm[:n_test]]

    X = np.column_stack([fit_rows[:, 0], fit_rows[:, 1], np.ones(len(fit_rows))])
    if np.linalg.matrix_rank(X) < 3:
        raise SingularityError(
            "design matrix is rank-deficient: label_ratio and wd must vary independently across observations"
        )
    beta, *_ = np.linalg.lstsq(X, fit_rows[:, 2], rcond=None)

    X_test = np.column_stack([test_rows[:, 0], test_rows[:, 1], np.ones(len(test_rows))])
    resid = test_rows[:, 2] - X_test @ beta
    ss_res = float(resid @ resid)
    ss_tot = float(np.sum((test_rows[:, 2] - test_rows[:, 2].mean()) ** 2))
    if ss_tot <= 1e-24:
        r2 = 1.0 if ss_res <= 1e-20 else 0.0
    else:
        r2 = 1.0 - ss_res / ss_tot
    coeffs = DegreeCoefficients(beta1=float(beta[0]), beta2=float(beta[1]), phi=float(beta[2]))
    return coeffs, r2


def observations_csv(observations: Sequence[Tuple[float, float, float]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(OBSERVATION_COLUMNS)
    for row in observations:
        writer.writerow([repr(float(v)) for v in row])
    return buf.getvalue()


def read_observations(path: str) -> List[Tuple[float, float, float]]:
    try:
        with open(path, newline="") as f:
            reader = csv.DictReader(f)
            if reader.fieldnames != OBSERVATION_COLUMNS:
                raise SchemaError(f"{path}: expected header {','.join(OBSERVATION_COLUMNS)}")
            return [(float(r["label_ratio"]), float(r["wd"]), float(r["accuracy"])) for r in reader]
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e}")
    except (TypeError, ValueError) as e:
        raise SchemaError(f"{path}: malformed observation row ({e})")
