"""
PSO-SGD local update with local-best / global-best memory.

    w' = w + c0*v + c1*(w_local_best - w) + c2*(w_global_best - w) - lr*grad(w)
    v' = w' - w

The attraction terms are taken once per round, on the first minibatch step,
where w is still the broadcast position; later steps carry inertia and the
gradient only. The bests are drawn from broadcast positions, never from a
worker's own trained iterate.
"""

from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

import numpy as np

from app.core.errors import DivergenceError, DomainError
from app.schemas.experiment import SwarmConfig
from app.simulation.data import Dataset
from app.simulation.model import ParamVector, grad
from app.utils.seeding import STREAM_COEFFS, keyed_rng


@dataclass(frozen=True)
class SwarmCoefficients:
    c0: float
    c1: float
    c2: float
    lr: float
    seed: int = 0
    gamma: float = 0.5
    decay_period: int = 10
    freeze: bool = False
    random_scaling: bool = False
    round_t: int = 0
    # per-component uniform factors on the c1 / c2 attraction terms (classic PSO)
    r1: Optional[np.ndarray] = field(default=None, repr=False, compare=False)
    r2: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not self.lr > 0:
            raise DomainError(f"learning rate must be > 0 (got {self.lr})")
        if not all(np.isfinite([self.c0, self.c1, self.c2, self.lr])):
            raise DomainError("swarm coefficients must be finite")

    @classmethod
    def from_config(cls, cfg: SwarmConfig) -> "SwarmCoefficients":
        return cls(
            c0=cfg.c0,
            c1=cfg.c1,
            c2=cfg.c2,
            lr=cfg.lr_init,
            seed=cfg.seed,
            gamma=cfg.gamma,
            decay_period=cfg.decay_period,
            freeze=cfg.freeze,
            random_scaling=cfg.random_scaling,
        )


@dataclass
class WorkerState:
    """
    `w` is the position the next local phase starts from (the broadcast model).
    `w_last` / `w_prev` are the start positions of the two most recent local
    phases, paired with the evaluation losses `f_curr` / `f_prev` those phases
    produced.
    """

    id: int
    w: ParamVector
    v: np.ndarray
    w_local_best: ParamVector
    w_last: ParamVector
    eta: float = 0.0
    theta: float = 0.0
    w_prev: Optional[ParamVector] = None
    f_prev: Optional[float] = None
    f_curr: Optional[float] = None

    def record_iterate(self, start: ParamVector, loss: float) -> None:
        self.w_prev, self.f_prev = self.w_last, self.f_curr
        self.w_last, self.f_curr = start, loss


@dataclass
class GlobalState:
    w: ParamVector
    w_prev: ParamVector
    w_global_best: ParamVector
    f_curr: float
    f_prev: Optional[float] = None

    @property
    def v(self) -> np.ndarray:
        return self.w.values - self.w_prev.values

    def advance(self, w_new: ParamVector, loss: float) -> None:
        self.w_prev, self.f_prev = self.w, self.f_curr
        self.w, self.f_curr = w_new, loss


def init_worker(worker_id: int, w0: ParamVector, f0: float, eta: float = 0.0) -> WorkerState:
    return WorkerState(
        id=worker_id,
        w=w0,
        v=np.zeros(len(w0)),
        w_local_best=w0,
        w_last=w0,
        eta=eta,
        f_curr=f0,
    )


def init_global(w0: ParamVector, f0: float) -> GlobalState:
    return GlobalState(w=w0, w_prev=w0, w_global_best=w0, f_curr=f0)


def update_local_best(ws: WorkerState) -> ParamVector:
    if ws.f_prev is None or ws.w_prev is None or ws.f_curr is None:
        return ws.w_last
    return ws.w_prev if ws.f_curr > ws.f_prev else ws.w_last


def update_global_best(gs: GlobalState) -> ParamVector:
    if gs.f_prev is None:
        return gs.w
    return gs.w_prev if gs.f_curr > gs.f_prev else gs.w


def pso_sgd_step(
    ws: WorkerState,
    gs: GlobalState,
    coeffs: SwarmCoefficients,
    batch: Dataset,
    attract: bool = True,
) -> Tuple[ParamVector, np.ndarray]:
    w = ws.w.values
    g = grad(ws.w, batch)
    if not attract:
        new_w = w + coeffs.c0 * ws.v - coeffs.lr * g
    else:
        pull_local = ws.w_local_best.values - w
        pull_global = gs.w_global_best.values - w
        if coeffs.r1 is not None:
            pull_local = coeffs.r1 * pull_local
        if coeffs.r2 is not None:
            pull_global = coeffs.r2 * pull_global
        # evaluation order keeps c0=c1=c2=0 bit-identical to w - lr*g
        new_w = w + coeffs.c0 * ws.v + coeffs.c1 * pull_local + coeffs.c2 * pull_global - coeffs.lr * g
    if not np.all(np.isfinite(new_w)):
        raise DivergenceError(coeffs.round_t, ws.id)
    return ws.w.with_values(new_w), new_w - w


def sgd_step(
    w: ParamVector,
    lr: float,
    batch: Dataset,
    round_t: int = 0,
    worker: Optional[int] = None,
) -> ParamVector:
    new_w = w.values - lr * grad(w, batch)
    if not np.all(np.isfinite(new_w)):
        raise DivergenceError(round_t, worker)
    return w.with_values(new_w)


def decayed_lr(base: SwarmCoefficients, t: int) -> float:
    return base.lr * base.gamma ** (t // base.decay_period)


def sample_coefficients(base: SwarmCoefficients, t: int, i: int) -> SwarmCoefficients:
    """c0 ~ U(0,1), c1, c2 ~ N(0,1) keyed on (seed, t, i); lr on the step-decay schedule."""
    lr = decayed_lr(base, t)
    if base.freeze:
        return replace(base, lr=lr, round_t=t, r1=None, r2=None)
    rng = keyed_rng(base.seed, STREAM_COEFFS, t, i)
    c0 = float(rng.uniform(0.0, 1.0))
    c1, c2 = (float(x) for x in rng.standard_normal(2))
    return replace(base, c0=c0, c1=c1, c2=c2, lr=lr, round_t=t, r1=None, r2=None)


def draw_scaling(coeffs: SwarmCoefficients, i: int, step: int, n: int) -> SwarmCoefficients:
    """Fresh r1, r2 ~ U(0,1)^n for one minibatch step; no-op unless random_scaling is on."""
    if not coeffs.random_scaling:
        return coeffs
    rng = keyed_rng(coeffs.seed, STREAM_COEFFS, coeffs.round_t, i, step + 1)
    return replace(coeffs, r1=rng.uniform(0.0, 1.0, n), r2=rng.uniform(0.0, 1.0, n))
