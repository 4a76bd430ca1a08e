"""
Convergence diagnostics over a finished trace: gradient-norm decay, velocity
alignment bounds, an empirical Lipschitz estimate and the closed-form bound
constant built from them.
"""

from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from app.core.errors import DegenerateTraceError, DomainError, ProbeError
from app.core.logging import logger
from app.schemas.trace import (
    CommSummary,
    ConvergenceBoundTerms,
    DiagnosticsReport,
    GradNormStats,
    TrainingTrace,
    WorkerRecord,
)
from app.simulation.data import Dataset
from app.simulation.model import ParamVector, grad
from app.utils.seeding import STREAM_PROBES, keyed_rng

GRAD_EPS = 1e-12


@dataclass(frozen=True)
class PhiBar:
    value: float
    # (F(w_0) - F_best) / (value * T), when the run totals are supplied
    rhs: Optional[float] = None


def velocity_alignment(v: np.ndarray, g: np.ndarray) -> Tuple[Optional[float], Optional[float]]:
    """(cos(v, -g), |v|/|g|). Both None when |g| is negligible; cosine None for v = 0."""
    g_norm = float(np.linalg.norm(g))
    if g_norm < GRAD_EPS:
        return None, None
    v_norm = float(np.linalg.norm(v))
    if v_norm == 0.0:
        return None, 0.0
    cos = float(-(v @ g) / (v_norm * g_norm))
    return min(max(cos, -1.0), 1.0), v_norm / g_norm


def running_average_stats(per_round: Sequence[float]) -> GradNormStats:
    series = np.asarray(per_round, dtype=np.float64)
    if series.size == 0:
        raise DegenerateTraceError("no gradient records to summarize")
    if np.any(series < 0) or not np.all(np.isfinite(series)):
        raise DomainError("gradient norms must be finite and nonnegative")
    t = np.arange(1, series.size + 1, dtype=np.float64)
    running = np.cumsum(series) / t
    if np.all(series == 0):
        return GradNormStats(per_round=series.tolist(), running_avg=running.tolist(), converged=True)
    mask = running > 0
    exponent = None
    if mask.sum() >= 2:
        exponent = float(np.polyfit(np.log(t[mask]), np.log(running[mask]), 1)[0])
    return GradNormStats(per_round=series.tolist(), running_avg=running.tolist(), exponent=exponent)


def grad_norm_stats(trace: TrainingTrace) -> GradNormStats:
    """Per-round mean of |grad F_i|^2 over workers, its running average and power-law exponent."""
    if not trace.rounds:
        raise DegenerateTraceError("trace has no rounds")
    return running_average_stats([r.grad_norm_sq_mean for r in trace.rounds])


def _probe(center: np.ndarray, k: int, radius: float, seed: int) -> np.ndarray:
    # probe k depends only on (seed, k): a longer sequence extends a shorter one
    rng = keyed_rng(seed, STREAM_PROBES, k)
    direction = rng.standard_normal(center.size)
    scale = radius * rng.uniform() ** (1.0 / center.size)
    norm = np.linalg.norm(direction)
    if norm == 0.0 or scale == 0.0:
        return center.copy()
    return center + scale * direction / norm


def estimate_lipschitz(
    grad_fn: Callable[[np.ndarray], np.ndarray],
    center: np.ndarray,
    num_probes: int,
    radius: float = 1.0,
    seed: int = 0,
) -> float:
    """
    Largest |grad(a) - grad(b)| / |a - b| over all pairs of probes drawn in a
    ball around `center`. A lower bound on the true constant.
    """
    if num_probes < 2:
        raise ProbeError(f"need at least 2 probes (got {num_probes})")
    if radius < 0:
        raise ProbeError("probe radius must be nonnegative")
    center = np.asarray(center, dtype=np.float64)
    points = [_probe(center, k, radius, seed) for k in range(num_probes)]
    grads = [np.asarray(grad_fn(p), dtype=np.float64) for p in points]
    best = None
    for a in range(num_probes):
        for b in range(a + 1, num_probes):
            dist = float(np.linalg.norm(points[a] - points[b]))
            if dist == 0.0:
                continue
            ratio = float(np.linalg.norm(grads[a] - grads[b])) / dist
            best = ratio if best is None else max(best, ratio)
    if best is None:
        raise ProbeError("all probe pairs coincide")
    return best


def estimate_model_lipschitz(
    w: ParamVector,
    d: Dataset,
    num_probes: int = 8,
    radius: float = 0.5,
    seed: int = 0,
) -> float:
    return estimate_lipschitz(lambda x: grad(w.with_values(x), d), w.values, num_probes, radius, seed)


def _extrema(values: List[float]) -> Tuple[Optional[float], Optional[float]]:
    if not values:
        return None, None
    return min(values), max(values)


def cosine_velocity_bounds(trace: TrainingTrace) -> ConvergenceBoundTerms:
    if not trace.workers:
        raise DegenerateTraceError("trace has no worker records")
    usable: List[WorkerRecord] = []
    excluded = 0
    for rec in trace.workers:
        if rec.grad_norm_sq < GRAD_EPS ** 2 or rec.ratio_local is None:
            excluded += 1
        else:
            usable.append(rec)
    if not usable:
        raise DegenerateTraceError("every (round, worker) record has a vanishing gradient")
    if excluded:
        logger.warning(f"Excluded {excluded} near-zero-gradient records from velocity bounds")

    q_lo, q_hi = _extrema([r.cos_local for r in usable if r.cos_local is not None])
    qg_lo, qg_hi = _extrema([r.cos_global for r in usable if r.cos_global is not None])
    u_lo, u_hi = _extrema([r.ratio_local for r in usable])
    ug_lo, ug_hi = _extrema([r.ratio_global for r in usable if r.ratio_global is not None])
    selected = [r.k2 for r in trace.workers if r.selected]
    return ConvergenceBoundTerms(
        k1=float(np.mean([r.k1 for r in trace.workers])),
        k2=float(np.mean(selected)) if selected else 0.0,
        c2=float(np.mean([r.c2 for r in trace.workers])),
        q_lo=q_lo,
        q_hi=q_hi,
        qg_lo=qg_lo,
        qg_hi=qg_hi,
        u_lo=u_lo,
        u_hi=u_hi,
        ug_lo=ug_lo,
        ug_hi=ug_hi,
        excluded=excluded,
        zero_velocity=sum(1 for r in usable if r.cos_local is None),
    )


def phi_bar(
    k1: float,
    k2: float,
    u_i: float,
    q_i: float,
    u: float,
    q: float,
    L_hat: float,
    c2: float,
    selected: bool = True,
    f_initial: Optional[float] = None,
    f_best: Optional[float] = None,
    rounds: Optional[int] = None,
) -> PhiBar:
    """
    k1*u_i*q_i + L*k1*u_i^2 + (1+c2)^2/(2L) + k2*u*q + L*k2^2*u^2.
    The k2 terms only count for a selected worker.
    """
    if not L_hat > 0:
        raise DomainError(f"Lipschitz estimate must be > 0 (got {L_hat})")
    value = k1 * u_i * q_i + L_hat * k1 * u_i ** 2 + (1.0 + c2) ** 2 / (2.0 * L_hat)
    if selected:
        value += k2 * u * q + L_hat * k2 ** 2 * u ** 2
    rhs = None
    if f_initial is not None and f_best is not None and rounds and value != 0:
        rhs = (f_initial - f_best) / (value * rounds)
    return PhiBar(value=float(value), rhs=rhs)


def per_record_phi(trace: TrainingTrace, L_hat: float) -> List[float]:
    """Phi for every (round, worker) record with defined alignment terms."""
    out = []
    for r in trace.workers:
        if r.ratio_local is None or r.cos_local is None:
            continue
        out.append(
            phi_bar(
                r.k1, r.k2, r.ratio_local, r.cos_local,
                r.ratio_global or 0.0, r.cos_global or 0.0,
                L_hat, r.c2, selected=r.selected,
            ).value
        )
    return out


def comm_summary(label: str, trace: TrainingTrace) -> CommSummary:
    return CommSummary(
        label=label,
        algorithm=trace.algorithm,
        rounds=len(trace.rounds),
        upload_total=trace.comm_upload_total(),
        broadcast_total=trace.comm_broadcast_total(),
    )


def diagnose(
    trace: TrainingTrace,
    L_hat: float,
    comm: Sequence[CommSummary] = (),
) -> DiagnosticsReport:
    stats = grad_norm_stats(trace)
    bounds = cosine_velocity_bounds(trace)
    f_best = min([trace.initial_loss] + [r.global_loss for r in trace.rounds])
    phi = phi_bar(
        bounds.k1,
        bounds.k2,
        bounds.u_hi or 0.0,
        bounds.q_hi or 0.0,
        bounds.ug_hi or 0.0,
        bounds.qg_hi or 0.0,
        L_hat,
        bounds.c2,
        f_initial=trace.initial_loss,
        f_best=f_best,
        rounds=len(trace.rounds),
    )
    bounds = bounds.model_copy(update={"L_hat": L_hat, "phi_bar": phi.value})
    per_record = per_record_phi(trace, L_hat)
    return DiagnosticsReport(
        algorithm=trace.algorithm,
        k1=bounds.k1,
        k2=bounds.k2,
        bounds=bounds,
        L_hat=L_hat,
        phi_bar=phi.value,
        phi_mean=float(np.mean(per_record)) if per_record else None,
        rhs=phi.rhs,
        measured_running_avg=stats.running_avg[-1],
        running_avg_series=stats.running_avg,
        exponent=stats.exponent,
        converged=stats.converged,
        alpha_theoretical=1.0 / L_hat,
        alpha_configured=float(trace.config.get("swarm", {}).get("lr_init", 0.0)),
        comm=list(comm),
    )
