import numpy as np
import pytest

from app.core.errors import ContractError, DivergenceError
from app.simulation import orchestrator, swarm
from app.simulation.data import label_histogram, make_synthetic_blobs
from app.simulation.model import init_params
from app.simulation.noniid import heterogeneity_components
from app.simulation.orchestrator import (
    CommLedger,
    aggregate,
    init_state,
    prepare_data,
    run_experiment,
    run_round,
)
from app.simulation.reports import selection_csv, trace_csv
from app.simulation.selection import select_all
from app.simulation.swarm import init_global, sgd_step
from app.utils.seeding import STREAM_BATCHES, keyed_rng

FROZEN_ZERO = {"freeze": True, "c0": 0.0, "c1": 0.0, "c2": 0.0}


def _kahan_mean(deltas):
    total = np.zeros_like(deltas[0])
    comp = np.zeros_like(total)
    for d in deltas:
        y = d - comp
        t = total + y
        comp = (t - total) - y
        total = t
    return total / len(deltas)


# --- aggregation ------------------------------------------------------------


@pytest.fixture
def gs(linear_arch):
    return init_global(init_params(linear_arch, seed=0), 1.0)


def test_aggregate_single_worker(gs, rng):
    old = gs.w
    new = old.with_values(old.values + rng.normal(size=len(old)))
    out = aggregate(gs, [(0, new, old), (1, old.with_values(old.values + 5.0), old)], [True, False])
    np.testing.assert_allclose(out.values, gs.w.values + (new.values - old.values), atol=1e-15)


def test_aggregate_fixed_point_and_cancellation(gs, rng):
    old = gs.w
    delta = rng.normal(size=len(old))
    assert np.array_equal(aggregate(gs, [(0, old, old), (1, old, old)], [True, True]).values, old.values)
    plus = old.with_values(old.values + delta)
    minus = old.with_values(old.values - delta)
    np.testing.assert_allclose(aggregate(gs, [(0, plus, old), (1, minus, old)], [True, True]).values, old.values, atol=1e-14)


def test_aggregate_requires_selection(gs):
    with pytest.raises(ContractError):
        aggregate(gs, [(0, gs.w, gs.w)], [False])


def test_aggregate_matches_compensated_sum(gs):
    rng = np.random.default_rng(99)
    for _ in range(200):
        C = int(rng.integers(1, 12))
        indicator = rng.random(C) < 0.5
        indicator[rng.integers(C)] = True
        old = gs.w
        updates = [(i, old.with_values(old.values + rng.normal(size=len(old))), old) for i in range(C)]
        expected = old.values + _kahan_mean([u[1].values - old.values for u in updates if indicator[u[0]]])
        np.testing.assert_allclose(aggregate(gs, updates, indicator).values, expected, rtol=0, atol=1e-12)


def test_ledger_totals():
    ledger = CommLedger(num_params=10)
    assert ledger.record(3, 5) == (30, 50)
    ledger.record(5, 5)
    assert ledger.upload_total == 80 and ledger.broadcast_total == 100


# --- rounds and experiments ------------------------------------------------


def test_zero_coefficient_mdsl_matches_fedavg(config_factory, monkeypatch):
    fedavg_cfg = config_factory(algorithm="FedAvg", swarm=FROZEN_ZERO)
    mdsl_cfg = config_factory(algorithm="MDSL", swarm=FROZEN_ZERO)
    fedavg = run_experiment(fedavg_cfg)
    monkeypatch.setattr(orchestrator, "select_workers", lambda theta, thr, t, tau=None: select_all(theta, t, tau))
    mdsl = run_experiment(mdsl_cfg)
    np.testing.assert_allclose(mdsl.final_params, fedavg.final_params, rtol=0, atol=1e-12)
    assert [r.global_loss for r in mdsl.rounds] == pytest.approx([r.global_loss for r in fedavg.rounds], abs=1e-12)


def test_single_worker_round_is_sgd_pass(config_factory):
    cfg = config_factory(
        partition={"groups": [{"count": 1, "alpha": 0.5}]},
        swarm=FROZEN_ZERO,
        rounds=1,
    )
    data = prepare_data(cfg)
    state = init_state(cfg, data)
    w = state.glob.w
    rng = keyed_rng(cfg.seed, STREAM_BATCHES, 1, 0)
    shard = data.shards[0]
    for _ in range(cfg.epochs * cfg.batches_per_epoch):
        w = sgd_step(w, cfg.swarm.lr_init, shard.subset(rng.choice(len(shard), size=cfg.batch_size, replace=False)))
    state, record = run_round(state, cfg)
    np.testing.assert_allclose(state.glob.w.values, w.values, rtol=0, atol=1e-12)
    assert record.num_selected == 1


def test_trace_shape_and_ledger(config_factory):
    cfg = config_factory(rounds=6)
    trace = run_experiment(cfg)
    N, C = trace.num_params, trace.num_workers
    assert len(trace.rounds) == 6
    assert len(trace.workers) == 6 * C
    for r in trace.rounds:
        assert r.comm_upload == N * r.num_selected
        assert r.comm_broadcast == N * C
        assert 1 <= r.num_selected <= C
        assert r.num_selected == len(r.selected)
    assert trace.rounds[0].num_selected == C


def test_fedavg_selects_everyone(config_factory):
    trace = run_experiment(config_factory(algorithm="FedAvg", rounds=4))
    assert all(r.num_selected == trace.num_workers for r in trace.rounds)
    assert trace.comm_upload_total() == trace.num_params * trace.num_workers * 4


def test_vanilla_dsl_uploads_one_model(config_factory):
    trace = run_experiment(config_factory(algorithm="VanillaDSL", rounds=4))
    assert all(r.num_selected == 1 and r.comm_upload == trace.num_params for r in trace.rounds)
    for r in trace.rounds:
        losses = {w.worker: w.loss for w in trace.workers if w.round == r.round}
        assert r.selected == [min(losses, key=lambda i: (losses[i], i))]


def test_multi_dsl_equals_mdsl_when_eta_constant(config_factory):
    cfg = config_factory(rounds=5)
    data = prepare_data(cfg)
    data.eta = np.full(len(data.shards), 0.5)
    mdsl = run_experiment(cfg, data=data)
    multi = run_experiment(cfg.model_copy(update={"algorithm": "MultiDSL"}), data=data)
    assert [r.selected for r in mdsl.rounds] == [r.selected for r in multi.rounds]
    np.testing.assert_array_equal(mdsl.final_params, multi.final_params)


def test_reproducible_traces(config_factory):
    cfg = config_factory(rounds=4)
    a, b = run_experiment(cfg), run_experiment(cfg)
    assert trace_csv(a) == trace_csv(b)
    assert selection_csv(a) == selection_csv(b)
    assert a.final_params == b.final_params


def test_parallelism_does_not_change_results(config_factory):
    cfg = config_factory(rounds=4)
    serial = run_experiment(cfg, parallelism=1)
    threaded = run_experiment(cfg, parallelism=4)
    assert trace_csv(serial) == trace_csv(threaded)
    assert [w.model_dump() for w in serial.workers] == [w.model_dump() for w in threaded.workers]
    assert serial.final_params == threaded.final_params


def test_iid_accuracy_above_chance(config_factory):
    cfg = config_factory(partition={"groups": [{"count": 5, "alpha": 1000.0}]}, rounds=20)
    trace = run_experiment(cfg)
    assert all(r.global_acc > 0.35 for r in trace.rounds[2:])
    assert trace.rounds[-1].global_loss < trace.initial_loss


@pytest.mark.parametrize("overrides", [{"gradient_source": "global"}, {"swarm": {"random_scaling": True}}, {"hidden": [5]}])
def test_variants_run_finite(config_factory, overrides):
    trace = run_experiment(config_factory(rounds=3, **overrides))
    assert np.all(np.isfinite(trace.final_params))
    assert len(trace.rounds) == 3


def test_divergence_carries_round_and_worker(config_factory, monkeypatch):
    monkeypatch.setattr(swarm, "grad", lambda w, b: np.full(len(w), np.inf))
    with pytest.raises(DivergenceError) as exc:
        run_experiment(config_factory(rounds=2), parallelism=1)
    assert exc.value.round_t == 1 and exc.value.worker == 0


def test_worker_diagnostics_recorded(config_factory):
    trace = run_experiment(config_factory(rounds=3))
    first = [w for w in trace.workers if w.round == 1]
    # zero initial velocity: cosine undefined, ratio zero
    assert all(w.cos_local is None and w.ratio_local == 0.0 for w in first)
    later = [w for w in trace.workers if w.round == 3]
    assert all(w.cos_local is None or -1.0 <= w.cos_local <= 1.0 for w in later)
    assert all(w.grad_norm_sq > 0 for w in trace.workers)


def test_attraction_does_not_pull_back_later_local_steps(config_factory):
    # round 1 bests equal the start position, so only later-step pulls could differ
    pulled = run_experiment(config_factory(rounds=1, swarm={"freeze": True, "c0": 0.0, "c1": 1.0, "c2": 1.0}))
    plain = run_experiment(config_factory(rounds=1, swarm=FROZEN_ZERO))
    np.testing.assert_allclose(pulled.final_params, plain.final_params, rtol=0, atol=1e-12)


def test_bests_come_from_broadcast_positions(config_factory):
    cfg = config_factory(rounds=2)
    state = init_state(cfg)
    w0 = state.glob.w
    state, _ = run_round(state, cfg)
    w1 = state.glob.w
    state, _ = run_round(state, cfg)
    for ws in state.workers:
        assert ws.w_prev is w0 and ws.w_last is w1
        best = swarm.update_local_best(ws)
        assert best is w0 or best is w1
    assert state.glob.w_prev is w1


def test_heterogeneity_measured_against_eval_set(config_factory, monkeypatch):
    full = make_synthetic_blobs(4, 6, 4000, 4.0, seed=3)
    by_class = [np.flatnonzero(full.labels == k) for k in range(4)]
    # 70/10/10/10 pool against a stratified evaluation set
    pool = full.subset(np.concatenate([by_class[0][:700], *(idx[:100] for idx in by_class[1:])]))
    test = full.subset(np.concatenate([idx[-50:] for idx in by_class]))
    monkeypatch.setattr(orchestrator, "load_source", lambda config: (pool, test))
    data = prepare_data(config_factory(partition={"groups": [{"count": 8, "alpha": 0.5}], "shard_size": 100}))
    eval_hist = label_histogram(data.eval_set)
    assert eval_hist.to_list() == [50, 50, 50, 50]
    moved = 0
    for shard, comp in zip(data.shards, data.degree.components):
        assert comp.wd == pytest.approx(heterogeneity_components(label_histogram(shard), eval_hist).wd, abs=1e-15)
        against_pool = heterogeneity_components(label_histogram(shard), label_histogram(pool))
        moved += abs(against_pool.wd - comp.wd) > 1e-6
    assert moved > 0
