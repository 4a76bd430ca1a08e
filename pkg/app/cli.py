"""
Command-line entry point.

    python -m app.cli partition configs/blobs_case2.json --out runs/case2
    python -m app.cli run configs/blobs_case1.json --out runs/mdsl --rounds 40
    python -m app.cli sweep configs/blobs_sweep.json --alphas 0.001 0.01 0.1 1 10 100 1000 --fit
    python -m app.cli fit runs/sweep/observations.csv
    python -m app.cli analyze runs/mdsl --compare runs/fedavg

Exit codes: 0 success, 1 domain error, 2 configuration / I/O error.
"""

import argparse
import json
import os
import sys
from contextlib import contextmanager
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from app import __version__
from app.core.config import get_settings
from app.core.errors import ConfigError, DomainError, SchemaError, SimulationError
from app.core.logging import logger
from app.schemas.experiment import AlphaGroup, DegreeCoefficients, ExperimentConfig, RunManifest
from app.schemas.trace import DiagnosticsReport, TrainingTrace
from app.simulation.analysis import comm_summary, diagnose, estimate_model_lipschitz
from app.simulation.data import label_histogram, partition_manifest
from app.simulation.noniid import fit_coefficients, observations_csv, read_observations
from app.simulation.orchestrator import prepare_data, run_experiment
from app.simulation.reports import (
    diagnostics_json,
    final_params,
    load_config,
    load_trace,
    parse_model,
    selection_csv,
    sweep_csv,
    trace_csv,
    trace_json,
    worker_table_csv,
)
from app.utils.files import OutputSet

settings = get_settings()


@dataclass
class SweepResult:
    rows: List[Dict[str, Any]]
    observations: List[Tuple[float, float, float]]
    manifest: RunManifest
    coefficients: Optional[DegreeCoefficients] = None
    r2: Optional[float] = None


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


@contextmanager
def _outputs(out_dir: str) -> Iterator[OutputSet]:
    out = OutputSet(out_dir)
    try:
        yield out
    except BaseException:
        out.discard()
        raise


def _finish(out: OutputSet, command: str, config: ExperimentConfig, started_at: str) -> RunManifest:
    manifest = RunManifest(
        command=command,
        config=config.model_dump(mode="json"),
        seeds=config.seeds(),
        version=__version__,
        outputs=list(out.written),
        started_at=started_at,
        finished_at=_now(),
    )
    out.write("manifest.json", manifest.model_dump_json(indent=2) + "\n")
    return manifest


def default_out_dir(config: ExperimentConfig, command: str) -> str:
    return os.path.join(settings.OUTPUT_ROOT, config.name, command)


def cmd_partition(config: ExperimentConfig, out_dir: str) -> RunManifest:
    started_at = _now()
    with _outputs(out_dir) as out:
        data = prepare_data(config)
        summary = partition_manifest(data.shards, data.alphas)
        # heterogeneity is measured against D_g, the stratified evaluation set
        summary["global_counts"] = label_histogram(data.eval_set).to_list()
        summary["pool_counts"] = label_histogram(data.pool).to_list()
        out.write_json("partition.json", summary)
        rows = [
            {
                "worker": i,
                "alpha": data.alphas[i],
                "size": len(shard),
                "wd": comp.wd,
                "label_ratio": comp.label_ratio,
                "eta": float(data.eta[i]),
            }
            for i, (shard, comp) in enumerate(zip(data.shards, data.degree.components))
        ]
        out.write("workers.csv", worker_table_csv(rows))
        out.write_json("shards.json", {str(i): idx.tolist() for i, idx in enumerate(data.shard_indices)})
        manifest = _finish(out, "partition", config, started_at)
    logger.info(f"Partitioned {len(data.shards)} workers into {out_dir}")
    return manifest


def cmd_run(
    config: ExperimentConfig,
    out_dir: str,
    parallelism: Optional[int] = None,
) -> Tuple[RunManifest, TrainingTrace]:
    started_at = _now()
    with _outputs(out_dir) as out:
        trace = run_experiment(config, parallelism=parallelism)
        out.write("trace.csv", trace_csv(trace))
        out.write("trace.json", trace_json(trace))
        out.write("selection.csv", selection_csv(trace))
        out.write("final_params.bin", final_params(trace).to_bytes())
        manifest = _finish(out, "run", config, started_at)
    logger.info(f"Run '{config.name}' written to {out_dir}")
    return manifest, trace


def cmd_sweep(
    config: ExperimentConfig,
    alphas: Sequence[float],
    out_dir: str,
    seeds: Optional[Sequence[int]] = None,
    fit: bool = False,
    parallelism: Optional[int] = None,
) -> SweepResult:
    """FedAvg over one Dirichlet concentration per row; feeds the coefficient fit."""
    if not alphas:
        raise DomainError("sweep needs at least one alpha")
    bad = [a for a in alphas if not a > 0]
    if bad:
        raise DomainError(f"alpha must be > 0 (got {bad[0]})")
    seeds = list(seeds) if seeds else [config.partition.seed]
    C = config.partition.num_workers
    started_at = _now()
    rows: List[Dict[str, Any]] = []
    observations: List[Tuple[float, float, float]] = []
    with _outputs(out_dir) as out:
        for alpha in alphas:
            for seed in seeds:
                partition = config.partition.model_copy(
                    update={"groups": [AlphaGroup(count=C, alpha=alpha)], "seed": seed}
                )
                cfg = config.model_copy(update={"algorithm": "FedAvg", "partition": partition})
                data = prepare_data(cfg)
                trace = run_experiment(cfg, data=data, parallelism=parallelism)
                comps = data.degree.components
                row = {
                    "alpha": alpha,
                    "seed": seed,
                    "wd_mean": float(np.mean([c.wd for c in comps])),
                    "label_ratio_mean": float(np.mean([c.label_ratio for c in comps])),
                    "eta_mean": float(np.mean(data.eta)),
                    "final_accuracy": trace.rounds[-1].global_acc,
                }
                rows.append(row)
                observations.append((row["label_ratio_mean"], row["wd_mean"], row["final_accuracy"]))
                logger.info(
                    f"Sweep alpha={alpha:g} seed={seed}: W={row['wd_mean']:.4f} "
                    f"ratio={row['label_ratio_mean']:.3f} acc={row['final_accuracy']:.4f}"
                )
        out.write("sweep.csv", sweep_csv(rows))
        out.write("observations.csv", observations_csv(observations))
        coefficients, r2 = None, None
        if fit:
            coefficients, r2 = fit_coefficients(observations, seed=config.seed)
            out.write_json("fit.json", {**coefficients.model_dump(), "r2": r2})
        manifest = _finish(out, "sweep", config, started_at)
    return SweepResult(rows, observations, manifest, coefficients, r2)


def cmd_fit(observations_path: str, seed: int = 0) -> Tuple[DegreeCoefficients, float]:
    coefficients, r2 = fit_coefficients(read_observations(observations_path), seed=seed)
    logger.info(
        f"Fitted beta1={coefficients.beta1:.4f} beta2={coefficients.beta2:.4f} "
        f"phi={coefficients.phi:.4f} (R^2={r2:.4f})"
    )
    return coefficients, r2


def _trace_file(path: str) -> str:
    return os.path.join(path, "trace.json") if os.path.isdir(path) else path


def _label(path: str) -> str:
    return os.path.basename(os.path.dirname(os.path.abspath(path))) or path


def cmd_analyze(
    trace_path: str,
    out_dir: Optional[str] = None,
    compare: Sequence[str] = (),
    num_probes: int = 8,
    radius: float = 0.5,
    seed: int = 0,
) -> DiagnosticsReport:
    path = _trace_file(trace_path)
    trace = load_trace(path)
    config = parse_model(ExperimentConfig, trace.config, path, SchemaError)
    data = prepare_data(config)
    L_hat = estimate_model_lipschitz(final_params(trace), data.eval_set, num_probes, radius, seed)
    comm = [comm_summary(_label(path), trace)]
    for other in compare:
        other_path = _trace_file(other)
        comm.append(comm_summary(_label(other_path), load_trace(other_path)))
    report = diagnose(trace, L_hat, comm)
    with _outputs(out_dir or os.path.dirname(os.path.abspath(path))) as out:
        written = out.write("diagnostics.json", diagnostics_json(report))
    logger.info(f"Diagnostics written to {written} (L_hat={L_hat:.4g}, phi_bar={report.phi_bar:.4g})")
    return report


def _apply_overrides(config: ExperimentConfig, args: argparse.Namespace) -> ExperimentConfig:
    updates: Dict[str, Any] = {}
    for key in ("rounds", "algorithm", "seed"):
        value = getattr(args, key, None)
        if value is not None:
            updates[key] = value
    if not updates:
        return config
    return parse_model(ExperimentConfig, {**config.model_dump(), **updates}, "overrides", ConfigError)


def _print(data: Any) -> None:
    print(json.dumps(data, indent=2, default=str))


def _partition(args: argparse.Namespace) -> None:
    config = load_config(args.config)
    manifest = cmd_partition(config, args.out or default_out_dir(config, "partition"))
    _print({"outputs": manifest.outputs})


def _run(args: argparse.Namespace) -> None:
    config = _apply_overrides(load_config(args.config), args)
    manifest, trace = cmd_run(config, args.out or default_out_dir(config, "run"), args.parallelism)
    _print(
        {
            "outputs": manifest.outputs,
            "final_accuracy": trace.rounds[-1].global_acc,
            "comm_upload_total": trace.comm_upload_total(),
        }
    )


def _sweep(args: argparse.Namespace) -> None:
    config = load_config(args.config)
    result = cmd_sweep(
        config,
        args.alphas,
        args.out or default_out_dir(config, "sweep"),
        seeds=args.seeds,
        fit=args.fit,
        parallelism=args.parallelism,
    )
    payload: Dict[str, Any] = {"rows": result.rows, "outputs": result.manifest.outputs}
    if result.coefficients is not None:
        payload["fit"] = {**result.coefficients.model_dump(), "r2": result.r2}
    _print(payload)


def _fit(args: argparse.Namespace) -> None:
    coefficients, r2 = cmd_fit(args.observations, args.seed)
    _print({**coefficients.model_dump(), "r2": r2})


def _analyze(args: argparse.Namespace) -> None:
    report = cmd_analyze(args.trace, args.out, args.compare, args.probes, args.radius, args.seed)
    _print(
        {
            "L_hat": report.L_hat,
            "phi_bar": report.phi_bar,
            "rhs": report.rhs,
            "measured_running_avg": report.measured_running_avg,
            "exponent": report.exponent,
            "comm": [c.model_dump() for c in report.comm],
        }
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mdsl", description="Multi-worker swarm learning simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("partition", help="split the source into worker shards and score heterogeneity")
    p.add_argument("config")
    p.add_argument("--out")
    p.set_defaults(func=_partition)

    p = sub.add_parser("run", help="run one experiment and write its trace")
    p.add_argument("config")
    p.add_argument("--out")
    p.add_argument("--rounds", type=int)
    p.add_argument("--algorithm", choices=["MDSL", "MultiDSL", "VanillaDSL", "FedAvg"])
    p.add_argument("--seed", type=int)
    p.add_argument("--parallelism", type=int)
    p.set_defaults(func=_run)

    p = sub.add_parser("sweep", help="FedAvg accuracy over Dirichlet concentrations")
    p.add_argument("config")
    p.add_argument("--alphas", type=float, nargs="+", required=True)
    p.add_argument("--seeds", type=int, nargs="+")
    p.add_argument("--out")
    p.add_argument("--fit", action="store_true", help="fit degree coefficients on the sweep")
    p.add_argument("--parallelism", type=int)
    p.set_defaults(func=_sweep)

    p = sub.add_parser("fit", help="fit degree coefficients from an observations CSV")
    p.add_argument("observations")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_fit)

    p = sub.add_parser("analyze", help="convergence diagnostics for a finished run")
    p.add_argument("trace", help="run directory or trace.json")
    p.add_argument("--out")
    p.add_argument("--compare", nargs="*", default=[])
    p.add_argument("--probes", type=int, default=8)
    p.add_argument("--radius", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_analyze)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except SimulationError as e:
        logger.error(f"{args.command} failed: {e}")
        return e.exit_code
    except OSError as e:
        logger.error(f"{args.command} failed: {e}")
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
