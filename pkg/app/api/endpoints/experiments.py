from fastapi import APIRouter, HTTPException
from pydantic import BaseModel, Field
from typing import Any, Dict, List, Optional

from app.cli import cmd_analyze, cmd_partition, cmd_run, default_out_dir
from app.core.errors import SimulationError
from app.core.logging import logger
from app.schemas.experiment import CASE2_LAYOUT, DEGREE_PRESETS, ExperimentConfig, case_groups

router = APIRouter()


class PartitionRequest(BaseModel):
    config: ExperimentConfig
    out_dir: Optional[str] = None


class RunRequest(BaseModel):
    config: ExperimentConfig
    out_dir: Optional[str] = None
    parallelism: Optional[int] = Field(None, ge=1)


class AnalyzeRequest(BaseModel):
    trace_path: str
    out_dir: Optional[str] = None
    compare: List[str] = Field(default_factory=list)
    num_probes: int = Field(8, ge=2)
    radius: float = Field(0.5, gt=0)
    seed: int = 0


def _fail(action: str, e: SimulationError):
    logger.error(f"{action} failed: {e}")
    raise HTTPException(status_code=e.status_code, detail=str(e))


@router.get("/experiments/presets")
def get_presets() -> Dict[str, Any]:
    num_workers = sum(n for n, _ in CASE2_LAYOUT)
    return {
        "algorithms": ["MDSL", "MultiDSL", "VanillaDSL", "FedAvg"],
        "cases": {
            case: [g.model_dump() for g in case_groups(case, num_workers)]
            for case in ("iid", "case1", "case2")
        },
        "degree": {name: c.model_dump() for name, c in DEGREE_PRESETS.items()},
    }


@router.post("/experiments/partition")
def partition_experiment(payload: PartitionRequest):
    out_dir = payload.out_dir or default_out_dir(payload.config, "partition")
    try:
        manifest = cmd_partition(payload.config, out_dir)
    except SimulationError as e:
        _fail("partition", e)
    return manifest.model_dump()


@router.post("/experiments/run")
def run_experiment_endpoint(payload: RunRequest):
    out_dir = payload.out_dir or default_out_dir(payload.config, "run")
    try:
        manifest, trace = cmd_run(payload.config, out_dir, payload.parallelism)
    except SimulationError as e:
        _fail("run", e)
    return {
        "manifest": manifest.model_dump(),
        "rounds": [r.model_dump() for r in trace.rounds],
        "comm_upload_total": trace.comm_upload_total(),
        "comm_broadcast_total": trace.comm_broadcast_total(),
    }


@router.post("/experiments/analyze")
def analyze_experiment(payload: AnalyzeRequest):
    try:
        report = cmd_analyze(
            payload.trace_path,
            payload.out_dir,
            payload.compare,
            payload.num_probes,
            payload.radius,
            payload.seed,
        )
    except SimulationError as e:
        _fail("analyze", e)
    return report.model_dump()
