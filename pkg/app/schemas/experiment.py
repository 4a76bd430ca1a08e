from typing import Any, Dict, List, Literal, Optional, Union
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

Algorithm = Literal["MDSL", "MultiDSL", "VanillaDSL", "FedAvg"]
CaseName = Literal["iid", "case1", "case2"]

# α used for the "i.i.d." case; large concentration reproduces the source proportions
IID_ALPHA = 1000.0

# (fraction of workers, α) for the mixed-skew case, 50-worker reference layout 20/15/10/5
CASE2_LAYOUT = [(20, 0.1), (15, 0.5), (10, 1.0), (5, 10.0)]


class AlphaGroup(BaseModel):
    count: int = Field(..., ge=1)
    alpha: float


def case_groups(case: str, num_workers: int) -> List[AlphaGroup]:
    """Worker groups for the named experiment case, scaled to num_workers."""
    if num_workers < 1:
        raise ValueError("num_workers must be >= 1")
    if case == "iid":
        return [AlphaGroup(count=num_workers, alpha=IID_ALPHA)]
    if case == "case1":
        return [AlphaGroup(count=num_workers, alpha=0.5)]
    if case != "case2":
        raise ValueError(f"unknown case '{case}'")
    total = sum(n for n, _ in CASE2_LAYOUT)
    exact = [n * num_workers / total for n, _ in CASE2_LAYOUT]
    counts = [int(x) for x in exact]
    # largest remainder so the group sizes add up to num_workers
    order = sorted(range(len(exact)), key=lambda k: exact[k] - counts[k], reverse=True)
    for k in order[: num_workers - sum(counts)]:
        counts[k] += 1
    return [AlphaGroup(count=c, alpha=a) for c, (_, a) in zip(counts, CASE2_LAYOUT) if c > 0]


class PartitionSpec(BaseModel):
    num_workers: Optional[int] = Field(None, ge=1)
    groups: List[AlphaGroup] = Field(default_factory=list)
    shard_size: int = Field(512, ge=1)
    seed: int = 0
    # per-worker sampling from the full source unless disjoint is set
    disjoint: bool = False

    @model_validator(mode="before")
    @classmethod
    def _expand_case(cls, data: Any) -> Any:
        if isinstance(data, dict) and data.get("case"):
            data = dict(data)
            case = data.pop("case")
            if not data.get("groups"):
                n = data.get("num_workers") or 50
                data["groups"] = [g.model_dump() for g in case_groups(case, int(n))]
        return data

    @model_validator(mode="after")
    def _check_groups(self) -> "PartitionSpec":
        if not self.groups:
            raise ValueError("groups must list at least one (count, alpha) entry")
        total = sum(g.count for g in self.groups)
        if self.num_workers is None:
            self.num_workers = total
        elif self.num_workers != total:
            raise ValueError(f"group sizes add up to {total}, expected num_workers={self.num_workers}")
        for g in self.groups:
            if not g.alpha > 0:
                raise ValueError(f"alpha must be > 0 (got {g.alpha})")
        return self

    def worker_alphas(self) -> List[float]:
        out: List[float] = []
        for g in self.groups:
            out.extend([g.alpha] * g.count)
        return out


class ModelArch(BaseModel):
    model_config = ConfigDict(frozen=True)

    input_dim: int = Field(..., ge=1)
    hidden: List[int] = Field(default_factory=list)
    num_classes: int = Field(..., ge=2)
    activation: Literal["tanh"] = "tanh"

    @property
    def layer_sizes(self) -> List[int]:
        return [self.input_dim, *self.hidden, self.num_classes]

    @property
    def num_params(self) -> int:
        sizes = self.layer_sizes
        return sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))


class DegreeCoefficients(BaseModel):
    beta1: float = 0.286
    beta2: float = -0.07
    phi: float = 0.592


DEGREE_PRESETS: Dict[str, DegreeCoefficients] = {
    "cifar10": DegreeCoefficients(beta1=0.286, beta2=-0.07, phi=0.592),
    "mnist": DegreeCoefficients(beta1=-0.031, beta2=0.127, phi=-0.04),
}


class SwarmConfig(BaseModel):
    lr_init: float = Field(0.01, gt=0)
    gamma: float = Field(0.5, gt=0)
    decay_period: int = Field(10, ge=1)
    # fixed c0, c1, c2 instead of per-(round, worker) sampling
    freeze: bool = False
    c0: float = 0.5
    c1: float = 0.0
    c2: float = 0.0
    random_scaling: bool = False
    seed: int = 0


class BlobsSource(BaseModel):
    kind: Literal["blobs"] = "blobs"
    num_classes: int = Field(10, ge=2)
    dim: int = 16
    n: int = 30000
    separation: float = Field(4.0, ge=0)
    seed: int = 7


class IdxSource(BaseModel):
    kind: Literal["idx"] = "idx"
    images: str
    labels: str
    test_images: Optional[str] = None
    test_labels: Optional[str] = None


class DataConfig(BaseModel):
    source: Union[BlobsSource, IdxSource] = Field(default_factory=BlobsSource, discriminator="kind")
    eval_size: int = Field(2048, ge=1)
    test_size: int = Field(2000, ge=1)
    seed: int = 0


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str = "experiment"
    algorithm: Algorithm = "MDSL"
    data: DataConfig = Field(default_factory=DataConfig)
    partition: PartitionSpec = Field(default_factory=lambda: PartitionSpec(case="case1", num_workers=50))
    hidden: List[int] = Field(default_factory=list)
    swarm: SwarmConfig = Field(default_factory=SwarmConfig)
    degree: DegreeCoefficients = Field(default_factory=DegreeCoefficients)
    tau: float = Field(0.9, ge=0, le=1)
    rounds: int = Field(40, ge=1)
    epochs: int = Field(4, ge=1)
    batches_per_epoch: int = Field(1, ge=1)
    batch_size: int = Field(64, ge=1)
    seed: int = 0
    eta_complement: bool = False
    gradient_source: Literal["local", "global"] = "local"
    parallelism: Optional[int] = Field(None, ge=1)

    @field_validator("degree", mode="before")
    @classmethod
    def _degree_preset(cls, v: Any) -> Any:
        if isinstance(v, str):
            if v not in DEGREE_PRESETS:
                raise ValueError(f"unknown degree preset '{v}' (expected one of {sorted(DEGREE_PRESETS)})")
            return DEGREE_PRESETS[v]
        return v

    def seeds(self) -> Dict[str, int]:
        src = self.data.source
        return {
            "experiment": self.seed,
            "partition": self.partition.seed,
            "swarm": self.swarm.seed,
            "data": self.data.seed,
            "blobs": src.seed if isinstance(src, BlobsSource) else 0,
        }


class RunManifest(BaseModel):
    command: str
    config: Dict[str, Any]
    seeds: Dict[str, int]
    version: str
    outputs: List[str]
    started_at: str
    finished_at: Optional[str] = None
