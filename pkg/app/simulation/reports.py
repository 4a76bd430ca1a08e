"""
File formats for runs: trace CSV + JSON sidecar, selection history, partition
tables, sweep tables, final parameters, and experiment config loading.

Column orders are fixed; downstream plotting scripts depend on them.
"""

import csv
import io
import json
from typing import Any, Dict, Iterable, List, Sequence

import numpy as np
from pydantic import BaseModel, ValidationError

from app.core.errors import ConfigError, SchemaError
from app.schemas.experiment import ExperimentConfig
from app.schemas.trace import DiagnosticsReport, TrainingTrace
from app.simulation.model import ParamVector

TRACE_COLUMNS = ["round", "global_loss", "global_acc", "num_selected", "comm_upload", "fallback"]
SELECTION_COLUMNS = ["round", "worker", "theta", "threshold", "selected", "fallback"]
WORKER_TABLE_COLUMNS = ["worker", "alpha", "size", "wd", "label_ratio", "eta"]
SWEEP_COLUMNS = ["alpha", "seed", "wd_mean", "label_ratio_mean", "eta_mean", "final_accuracy"]


def _num(x: Any) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _csv(columns: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_num(v) for v in row])
    return buf.getvalue()


def trace_csv(trace: TrainingTrace) -> str:
    return _csv(
        TRACE_COLUMNS,
        (
            (r.round, r.global_loss, r.global_acc, r.num_selected, r.comm_upload, r.fallback)
            for r in trace.rounds
        ),
    )


def selection_csv(trace: TrainingTrace) -> str:
    by_round = {r.round: r for r in trace.rounds}
    rows = []
    for w in sorted(trace.workers, key=lambda w: (w.round, w.worker)):
        r = by_round[w.round]
        rows.append((w.round, w.worker, w.theta, r.threshold, w.selected, r.fallback))
    return _csv(SELECTION_COLUMNS, rows)


def worker_table_csv(rows: Sequence[Dict[str, Any]]) -> str:
    return _csv(WORKER_TABLE_COLUMNS, ([row[c] for c in WORKER_TABLE_COLUMNS] for row in rows))


def sweep_csv(rows: Sequence[Dict[str, Any]]) -> str:
    return _csv(SWEEP_COLUMNS, ([row[c] for c in SWEEP_COLUMNS] for row in rows))


def trace_json(trace: TrainingTrace) -> str:
    return trace.model_dump_json(indent=2) + "\n"


def diagnostics_json(report: DiagnosticsReport) -> str:
    return report.model_dump_json(indent=2) + "\n"


def final_params(trace: TrainingTrace) -> ParamVector:
    if trace.arch is None:
        raise SchemaError("trace does not record the model architecture")
    return ParamVector(np.asarray(trace.final_params, dtype=np.float64), trace.arch)


def format_validation_error(e: ValidationError) -> str:
    parts = []
    for err in e.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        parts.append(f"{loc}: {err['msg']}")
    return "; ".join(parts)


def _read_json(path: str, error: type) -> Any:
    try:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise error(f"cannot read {path}: {e}")
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise error(f"{path}: invalid JSON at line {e.lineno}, column {e.colno}: {e.msg}")


def parse_model(model: type, data: Any, source: str, error: type) -> BaseModel:
    try:
        return model.model_validate(data)
    except ValidationError as e:
        raise error(f"{source}: {format_validation_error(e)}")


def load_config(path: str) -> ExperimentConfig:
    return parse_model(ExperimentConfig, _read_json(path, ConfigError), path, ConfigError)


def load_trace(path: str) -> TrainingTrace:
    return parse_model(TrainingTrace, _read_json(path, SchemaError), path, SchemaError)
