"""
Barrier-synchronous round loop for the parameter server.

Each round: best updates -> local phase on every worker (parallel map) ->
loss on D_g -> trade-off scores -> selection -> delta aggregation ->
broadcast. FedAvg, single-best DSL and multi-worker DSL share the loop and
differ only in the local step and the selection rule.
"""

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.core.config import get_settings
from app.core.errors import ContractError, DivergenceError
from app.core.logging import logger
from app.schemas.experiment import BlobsSource, ExperimentConfig, ModelArch
from app.schemas.trace import RoundRecord, TrainingTrace, WorkerRecord
from app.simulation.analysis import velocity_alignment
from app.simulation.data import (
    Dataset,
    build_global_eval_set,
    label_histogram,
    load_idx,
    make_synthetic_blobs,
    partition_indices,
    split_holdout,
)
from app.simulation.model import ParamVector, accuracy, grad, init_params, rmse_loss
from app.simulation.noniid import NonIIDDegreeVector, noniid_degree, orient_eta
from app.simulation.selection import (
    SelectionRound,
    avg_threshold,
    select_all,
    select_argmin,
    select_workers,
    tradeoff_scores,
)
from app.simulation.swarm import (
    GlobalState,
    SwarmCoefficients,
    WorkerState,
    draw_scaling,
    init_global,
    init_worker,
    pso_sgd_step,
    sample_coefficients,
    sgd_step,
    update_global_best,
    update_local_best,
)
from app.utils.seeding import STREAM_BATCHES, keyed_rng


@dataclass
class ExperimentData:
    pool: Dataset
    eval_set: Dataset
    test: Dataset
    shards: List[Dataset]
    shard_indices: List[np.ndarray]
    alphas: List[float]
    degree: NonIIDDegreeVector
    eta: np.ndarray


def load_source(config: ExperimentConfig) -> Tuple[Dataset, Dataset]:
    """Returns (pool, test): the pool feeds D_g and the shards, the test split reports accuracy."""
    src = config.data.source
    if isinstance(src, BlobsSource):
        full = make_synthetic_blobs(src.num_classes, src.dim, src.n, src.separation, src.seed)
        return split_holdout(full, config.data.test_size, config.data.seed)
    full = load_idx(src.images, src.labels)
    if src.test_images and src.test_labels:
        return full, load_idx(src.test_images, src.test_labels)
    return split_holdout(full, config.data.test_size, config.data.seed)


def prepare_data(config: ExperimentConfig) -> ExperimentData:
    pool, test = load_source(config)
    eval_set = build_global_eval_set(pool, config.data.eval_size, config.data.seed)
    shard_indices = partition_indices(pool.labels, pool.num_classes, config.partition)
    shards = [pool.subset(idx) for idx in shard_indices]
    degree = noniid_degree([label_histogram(s) for s in shards], label_histogram(eval_set), config.degree)
    return ExperimentData(
        pool=pool,
        eval_set=eval_set,
        test=test,
        shards=shards,
        shard_indices=shard_indices,
        alphas=config.partition.worker_alphas(),
        degree=degree,
        eta=orient_eta(degree.eta, config.eta_complement),
    )


@dataclass
class CommLedger:
    num_params: int
    uploads: List[int] = field(default_factory=list)
    broadcasts: List[int] = field(default_factory=list)

    def record(self, num_selected: int, num_workers: int) -> Tuple[int, int]:
        up = self.num_params * num_selected
        down = self.num_params * num_workers
        self.uploads.append(up)
        self.broadcasts.append(down)
        return up, down

    @property
    def upload_total(self) -> int:
        return sum(self.uploads)

    @property
    def broadcast_total(self) -> int:
        return sum(self.broadcasts)


@dataclass
class ExperimentState:
    config: ExperimentConfig
    data: ExperimentData
    arch: ModelArch
    base: SwarmCoefficients
    workers: List[WorkerState]
    glob: GlobalState
    ledger: CommLedger
    initial_loss: float
    initial_acc: float
    round_t: int = 0
    # θ̄ from the previous round; None until round 1 completes
    threshold: Optional[float] = None
    selections: List[SelectionRound] = field(default_factory=list)
    rounds: List[RoundRecord] = field(default_factory=list)
    worker_records: List[WorkerRecord] = field(default_factory=list)


@dataclass
class LocalResult:
    worker: int
    w_new: ParamVector
    v_new: np.ndarray
    loss: float
    coeffs: SwarmCoefficients
    grad_norm_sq: float
    cos_local: Optional[float]
    cos_global: Optional[float]
    ratio_local: Optional[float]
    ratio_global: Optional[float]
    k1: float
    k2: float


def init_state(config: ExperimentConfig, data: Optional[ExperimentData] = None) -> ExperimentState:
    data = data if data is not None else prepare_data(config)
    arch = ModelArch(input_dim=data.pool.dim, hidden=config.hidden, num_classes=data.pool.num_classes)
    w0 = init_params(arch, config.seed)
    f0 = rmse_loss(w0, data.eval_set)
    workers = [init_worker(i, w0, f0, float(data.eta[i])) for i in range(len(data.shards))]
    return ExperimentState(
        config=config,
        data=data,
        arch=arch,
        base=SwarmCoefficients.from_config(config.swarm),
        workers=workers,
        glob=init_global(w0, f0),
        ledger=CommLedger(arch.num_params),
        initial_loss=f0,
        initial_acc=accuracy(w0, data.test),
    )


def _training_source(state: ExperimentState, i: int) -> Dataset:
    if state.config.gradient_source == "global":
        return state.data.eval_set
    return state.data.shards[i]


def _local_phase(state: ExperimentState, ws: WorkerState, t: int, swarm: bool) -> LocalResult:
    cfg = state.config
    gs = state.glob
    src = _training_source(state, ws.id)
    coeffs = sample_coefficients(state.base, t, ws.id)

    g0 = grad(ws.w, src)
    cos_l, ratio_l = velocity_alignment(ws.v, g0)
    cos_g, ratio_g = velocity_alignment(gs.v, g0)
    rose_local = ws.f_prev is not None and ws.f_curr > ws.f_prev
    fell_global = gs.f_prev is not None and gs.f_prev > gs.f_curr
    k1 = coeffs.c0 - float(rose_local) * coeffs.c1 - coeffs.c2 * (coeffs.c0 - coeffs.c1 - coeffs.c2)
    k2 = coeffs.c2 * float(fell_global)

    rng = keyed_rng(cfg.seed, STREAM_BATCHES, t, ws.id)
    n = min(cfg.batch_size, len(src))
    work = replace(ws)
    step = 0
    for _ in range(cfg.epochs):
        for _ in range(cfg.batches_per_epoch):
            batch = src.subset(rng.choice(len(src), size=n, replace=False))
            if swarm and step == 0:
                # attraction measured from the broadcast position, once per round
                work.w, work.v = pso_sgd_step(work, gs, draw_scaling(coeffs, ws.id, step, len(ws.w)), batch)
            elif swarm:
                work.w, work.v = pso_sgd_step(work, gs, coeffs, batch, attract=False)
            else:
                work.w = sgd_step(work.w, coeffs.lr, batch, t, ws.id)
            step += 1
    v_new = work.v if swarm else work.w.values - ws.w.values

    return LocalResult(
        worker=ws.id,
        w_new=work.w,
        v_new=v_new,
        loss=rmse_loss(work.w, state.data.eval_set),
        coeffs=coeffs,
        grad_norm_sq=float(g0 @ g0),
        cos_local=cos_l,
        cos_global=cos_g,
        ratio_local=ratio_l,
        ratio_global=ratio_g,
        k1=k1,
        k2=k2,
    )


def aggregate(
    gs: GlobalState,
    updates: Sequence[Tuple[int, ParamVector, ParamVector]],
    indicator: Sequence[bool],
) -> ParamVector:
    """w_{t+1} = w_t + mean of (new - old) over the selected updates, summed in worker order."""
    chosen = [(i, new, old) for i, new, old in sorted(updates, key=lambda u: u[0]) if indicator[i]]
    if not chosen:
        raise ContractError("aggregation needs at least one selected update")
    total = np.zeros(len(gs.w))
    for _, new, old in chosen:
        total += new.values - old.values
    w_next = gs.w.values + total / len(chosen)
    if not np.all(np.isfinite(w_next)):
        raise DivergenceError(0, None, "non-finite aggregate")
    return gs.w.with_values(w_next)


def _map_workers(
    fn: Callable[[WorkerState], LocalResult],
    workers: List[WorkerState],
    parallelism: int,
) -> List[LocalResult]:
    if parallelism <= 1 or len(workers) <= 1:
        return [fn(ws) for ws in workers]
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(fn, workers))


def _select(state: ExperimentState, algorithm: str, f: np.ndarray, t: int) -> SelectionRound:
    cfg = state.config
    eta = np.array([ws.eta for ws in state.workers])
    if algorithm == "FedAvg":
        return select_all(tradeoff_scores(f, eta, cfg.tau), t, cfg.tau)
    if algorithm == "VanillaDSL":
        return select_argmin(tradeoff_scores(f, eta, 1.0), t, 1.0)
    tau = 1.0 if algorithm == "MultiDSL" else cfg.tau
    return select_workers(tradeoff_scores(f, eta, tau), state.threshold, t, tau)


def _run_round(
    state: ExperimentState,
    algorithm: str,
    parallelism: int = 1,
) -> Tuple[ExperimentState, RoundRecord]:
    t = state.round_t + 1
    gs = state.glob
    gs.w_global_best = update_global_best(gs)
    for ws in state.workers:
        ws.w_local_best = update_local_best(ws)

    swarm = algorithm != "FedAvg"
    try:
        results = _map_workers(lambda ws: _local_phase(state, ws, t, swarm), state.workers, parallelism)
    except DivergenceError as e:
        logger.error(f"Divergence in round {t}: {e}")
        raise

    # barrier: every local phase has finished
    w_t = gs.w
    for ws, res in zip(state.workers, results):
        ws.record_iterate(ws.w, res.loss)
        ws.v = res.v_new

    f = np.array([ws.f_curr for ws in state.workers])
    sel = _select(state, algorithm, f, t)
    for ws in state.workers:
        ws.theta = float(sel.theta[ws.id])
    if sel.fallback:
        logger.warning(f"Round {t}: no worker met threshold {sel.threshold:.6f}; selected worker {sel.selected[0]}")

    try:
        w_next = aggregate(gs, [(r.worker, r.w_new, w_t) for r in results], sel.indicator)
    except DivergenceError:
        raise DivergenceError(t, None, "non-finite aggregate")

    gs.advance(w_next, rmse_loss(w_next, state.data.eval_set))
    for ws in state.workers:
        ws.w = gs.w

    up, down = state.ledger.record(sel.num_selected, len(state.workers))
    if algorithm in ("MDSL", "MultiDSL"):
        state.threshold = avg_threshold(sel.theta)

    record = RoundRecord(
        round=t,
        global_loss=gs.f_curr,
        global_acc=accuracy(gs.w, state.data.test),
        num_selected=sel.num_selected,
        comm_upload=up,
        comm_broadcast=down,
        fallback=sel.fallback,
        threshold=sel.threshold,
        grad_norm_sq_mean=float(np.mean([r.grad_norm_sq for r in results])),
        selected=sel.selected,
    )
    for res in results:
        state.worker_records.append(
            WorkerRecord(
                round=t,
                worker=res.worker,
                loss=res.loss,
                theta=float(sel.theta[res.worker]),
                selected=bool(sel.indicator[res.worker]),
                grad_norm_sq=res.grad_norm_sq,
                cos_local=res.cos_local,
                cos_global=res.cos_global,
                ratio_local=res.ratio_local,
                ratio_global=res.ratio_global,
                k1=res.k1,
                k2=res.k2,
                c0=res.coeffs.c0,
                c1=res.coeffs.c1,
                c2=res.coeffs.c2,
                lr=res.coeffs.lr,
            )
        )
    state.round_t = t
    state.selections.append(sel)
    state.rounds.append(record)
    logger.info(
        f"[{algorithm}] round {t}: loss={record.global_loss:.5f} acc={record.global_acc:.4f} "
        f"selected={record.num_selected}/{len(state.workers)} upload={up}"
    )
    return state, record


def fedavg_round(state: ExperimentState, parallelism: int = 1) -> Tuple[ExperimentState, RoundRecord]:
    return _run_round(state, "FedAvg", parallelism)


def vanilla_dsl_round(state: ExperimentState, parallelism: int = 1) -> Tuple[ExperimentState, RoundRecord]:
    return _run_round(state, "VanillaDSL", parallelism)


def multi_dsl_round(state: ExperimentState, parallelism: int = 1) -> Tuple[ExperimentState, RoundRecord]:
    return _run_round(state, "MultiDSL", parallelism)


def mdsl_round(state: ExperimentState, parallelism: int = 1) -> Tuple[ExperimentState, RoundRecord]:
    return _run_round(state, "MDSL", parallelism)


ROUND_FUNCTIONS: Dict[str, Callable[..., Tuple[ExperimentState, RoundRecord]]] = {
    "MDSL": mdsl_round,
    "MultiDSL": multi_dsl_round,
    "VanillaDSL": vanilla_dsl_round,
    "FedAvg": fedavg_round,
}


def run_round(
    state: ExperimentState,
    config: Optional[ExperimentConfig] = None,
    parallelism: int = 1,
) -> Tuple[ExperimentState, RoundRecord]:
    config = config or state.config
    return ROUND_FUNCTIONS[config.algorithm](state, parallelism)


def _resolve_parallelism(config: ExperimentConfig, parallelism: Optional[int]) -> int:
    if parallelism is not None:
        return max(1, parallelism)
    if config.parallelism is not None:
        return config.parallelism
    return max(1, get_settings().PARALLELISM)


def build_trace(state: ExperimentState, started_at: str, elapsed: float) -> TrainingTrace:
    return TrainingTrace(
        algorithm=state.config.algorithm,
        num_workers=len(state.workers),
        num_params=state.arch.num_params,
        arch=state.arch,
        initial_loss=state.initial_loss,
        initial_acc=state.initial_acc,
        eta=[float(e) for e in state.data.eta],
        rounds=list(state.rounds),
        workers=list(state.worker_records),
        final_params=state.glob.w.values.tolist(),
        config=state.config.model_dump(mode="json"),
        started_at=started_at,
        finished_at=datetime.now(timezone.utc).isoformat(),
        elapsed_sec=elapsed,
    )


def run_experiment(
    config: ExperimentConfig,
    data: Optional[ExperimentData] = None,
    parallelism: Optional[int] = None,
) -> TrainingTrace:
    started_at = datetime.now(timezone.utc).isoformat()
    t0 = time.perf_counter()
    threads = _resolve_parallelism(config, parallelism)
    state = init_state(config, data)
    logger.info(
        f"Starting {config.algorithm} '{config.name}': C={len(state.workers)} N={state.arch.num_params} "
        f"T={config.rounds} threads={threads} initial_loss={state.initial_loss:.5f}"
    )
    for _ in range(config.rounds):
        state, _ = run_round(state, config, threads)
    trace = build_trace(state, started_at, time.perf_counter() - t0)
    logger.info(
        f"Finished {config.algorithm} '{config.name}' in {trace.elapsed_sec:.1f}s: "
        f"final_acc={trace.rounds[-1].global_acc:.4f} uploads={trace.comm_upload_total()}"
    )
    return trace
