from typing import Any, Dict, List, Optional
from pydantic import BaseModel, Field

from app.schemas.experiment import ModelArch


class WorkerRecord(BaseModel):
    round: int
    worker: int
    loss: float
    theta: float
    selected: bool
    # diagnostics taken at the round start, before the local phase
    grad_norm_sq: float
    cos_local: Optional[float] = None
    cos_global: Optional[float] = None
    ratio_local: Optional[float] = None
    ratio_global: Optional[float] = None
    k1: float
    k2: float
    c0: float
    c1: float
    c2: float
    lr: float


class RoundRecord(BaseModel):
    round: int
    global_loss: float
    global_acc: float
    num_selected: int
    comm_upload: int
    comm_broadcast: int
    fallback: bool = False
    threshold: Optional[float] = None
    grad_norm_sq_mean: float
    selected: List[int] = Field(default_factory=list)


class TrainingTrace(BaseModel):
    algorithm: str
    num_workers: int
    num_params: int
    arch: Optional[ModelArch] = None
    initial_loss: float
    initial_acc: float
    eta: List[float]
    rounds: List[RoundRecord] = Field(default_factory=list)
    workers: List[WorkerRecord] = Field(default_factory=list)
    final_params: List[float] = Field(default_factory=list)
    config: Dict[str, Any] = Field(default_factory=dict)
    started_at: Optional[str] = None
    finished_at: Optional[str] = None
    elapsed_sec: Optional[float] = None

    def comm_upload_total(self) -> int:
        return sum(r.comm_upload for r in self.rounds)

    def comm_broadcast_total(self) -> int:
        return sum(r.comm_broadcast for r in self.rounds)


class ConvergenceBoundTerms(BaseModel):
    k1: float
    k2: float
    c2: float
    q_lo: Optional[float] = None
    q_hi: Optional[float] = None
    qg_lo: Optional[float] = None
    qg_hi: Optional[float] = None
    u_lo: Optional[float] = None
    u_hi: Optional[float] = None
    ug_lo: Optional[float] = None
    ug_hi: Optional[float] = None
    excluded: int = 0
    zero_velocity: int = 0
    L_hat: Optional[float] = None
    phi_bar: Optional[float] = None


class GradNormStats(BaseModel):
    per_round: List[float]
    running_avg: List[float]
    exponent: Optional[float] = None
    converged: bool = False


class CommSummary(BaseModel):
    label: str
    algorithm: str
    rounds: int
    upload_total: int
    broadcast_total: int


class DiagnosticsReport(BaseModel):
    algorithm: str
    k1: float
    k2: float
    bounds: ConvergenceBoundTerms
    L_hat: float
    phi_bar: float
    phi_mean: Optional[float] = None
    rhs: Optional[float] = None
    measured_running_avg: float
    running_avg_series: List[float]
    exponent: Optional[float] = None
    converged: bool = False
    alpha_theoretical: Optional[float] = None
    alpha_configured: float
    comm: List[CommSummary] = Field(default_factory=list)
