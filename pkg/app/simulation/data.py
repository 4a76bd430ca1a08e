"""
Datasets, label histograms and worker partitioning.

- synthetic Gaussian blobs (desk-scale stand-in for image datasets)
- IDX (MNIST) loader
- Dirichlet label-skew partition, one shard per worker
- stratified evaluation set D_g and held-out test split
"""

import gzip
import struct
from dataclasses import dataclass
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from app.core.errors import ConsistencyError, CoverageError, DomainError, FormatError, SizeError
from app.schemas.experiment import PartitionSpec
from app.utils.seeding import STREAM_EVAL, STREAM_HOLDOUT, STREAM_PARTITION, keyed_rng

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class Sample(NamedTuple):
    features: np.ndarray
    label: int


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        if self.features.ndim != 2:
            raise DomainError(f"features must be 2-D (got shape {self.features.shape})")
        if self.labels.shape != (self.features.shape[0],):
            raise ConsistencyError("labels and features disagree on sample count")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DomainError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def __getitem__(self, i: int) -> Sample:
        return Sample(self.features[i], int(self.labels[i]))

    @property
    def dim(self) -> int:
        return int(self.features.shape[1])

    def subset(self, idx: np.ndarray) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.num_classes)


@dataclass(frozen=True)
class LabelHistogram:
    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def support(self) -> int:
        return int(np.count_nonzero(self.counts))

    def proportions(self) -> np.ndarray:
        total = self.total
        if total <= 0:
            raise DomainError("empty histogram has no label distribution")
        return self.counts.astype(np.float64) / total

    def to_list(self) -> List[int]:
        return [int(c) for c in self.counts]


def make_dataset(features: Any, labels: Any, num_classes: int) -> Dataset:
    labels = np.asarray(labels, dtype=np.int64)
    features = np.asarray(features, dtype=np.float64)
    return Dataset(features.reshape(len(labels), features.shape[-1]), labels, int(num_classes))


def label_histogram(d: Dataset) -> LabelHistogram:
    return LabelHistogram(np.bincount(d.labels, minlength=d.num_classes).astype(np.int64))


def make_synthetic_blobs(num_classes: int, dim: int, n: int, separation: float, seed: int) -> Dataset:
    """
    Isotropic unit-variance Gaussian clusters, labels assigned round-robin.
    Class means are mutually orthogonal with norm `separation` (random
    unit directions when dim < num_classes).
    """
    if dim <= 0 or n <= 0:
        raise DomainError(f"dim and n must be positive (dim={dim}, n={n})")
    if num_classes < 2:
        raise DomainError("need at least two classes")
    if n < num_classes:
        raise DomainError(f"n={n} cannot cover {num_classes} classes")
    rng = np.random.default_rng(seed)
    if dim >= num_classes:
        basis, _ = np.linalg.qr(rng.standard_normal((dim, num_classes)))
        directions = basis.T
    else:
        directions = rng.standard_normal((num_classes, dim))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    means = separation * directions
    labels = np.arange(n, dtype=np.int64) % num_classes
    features = means[labels] + rng.standard_normal((n, dim))
    return Dataset(features, labels, num_classes)


def _read_raw(path: str) -> bytes:
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rb") as f:
        return f.read()


def _parse_idx(raw: bytes, magic: int, ndim: int, path: str) -> np.ndarray:
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError(f"{path}: truncated header")
    found = struct.unpack(">I", raw[:4])[0]
    if found != magic:
        raise FormatError(f"{path}: magic number mismatch (0x{found:08x}, expected 0x{magic:08x})")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = int(np.prod(dims))
    if len(raw) - header < count:
        raise FormatError(f"{path}: truncated payload ({len(raw) - header} of {count} bytes)")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=header).reshape(dims)


def load_idx(images_path: str, labels_path: str) -> Dataset:
    images = _parse_idx(_read_raw(images_path), IDX_IMAGES_MAGIC, 3, images_path)
    labels = _parse_idx(_read_raw(labels_path), IDX_LABELS_MAGIC, 1, labels_path)
    if images.shape[0] != labels.shape[0]:
        raise ConsistencyError(
            f"image count {images.shape[0]} does not match label count {labels.shape[0]}"
        )
    num_classes = max(int(labels.max()) + 1 if len(labels) else 0, 2)
    flat = images.reshape(images.shape[0], int(np.prod(images.shape[1:])))
    return make_dataset(flat / 255.0, labels, num_classes)


def split_holdout(d: Dataset, size: int, seed: int) -> Tuple[Dataset, Dataset]:
    """Returns (remaining, holdout) with `size` samples held out uniformly at random."""
    if size <= 0 or size >= len(d):
        raise SizeError(f"holdout size {size} must be in (0, {len(d)})")
    perm = keyed_rng(seed, STREAM_HOLDOUT).permutation(len(d))
    return d.subset(np.sort(perm[size:])), d.subset(np.sort(perm[:size]))


def build_global_eval_set(source: Dataset, size: int, seed: int) -> Dataset:
    """Stratified sample: per-class counts differ by at most one."""
    if size <= 0:
        raise SizeError("evaluation set size must be positive")
    if size > len(source):
        raise SizeError(f"source has {len(source)} samples, {size} requested")
    L = source.num_classes
    pools = [np.flatnonzero(source.labels == k) for k in range(L)]
    missing = [k for k, p in enumerate(pools) if len(p) == 0]
    if missing:
        raise CoverageError(f"classes {missing} absent from source")
    rng = keyed_rng(seed, STREAM_EVAL)
    base, extra = divmod(size, L)
    alloc = np.full(L, base, dtype=np.int64)
    alloc[rng.choice(L, size=extra, replace=False)] += 1
    short = [k for k in range(L) if alloc[k] > len(pools[k])]
    if short:
        raise CoverageError(f"classes {short} have too few samples for a stratified set of {size}")
    idx = np.concatenate([rng.choice(pools[k], size=alloc[k], replace=False) for k in range(L)])
    return source.subset(rng.permutation(idx))


def _draw_proportions(rng: np.random.Generator, alpha: float, L: int) -> np.ndarray:
    p = rng.dirichlet(np.full(L, alpha))
    if not np.all(np.isfinite(p)) or p.sum() <= 0:
        # tiny concentrations underflow; the limit puts all mass on one class
        p = np.zeros(L)
        p[rng.integers(L)] = 1.0
    return p


def _largest_remainder(weights: np.ndarray, total: int) -> np.ndarray:
    exact = weights / weights.sum() * total
    base = np.floor(exact).astype(np.int64)
    short = int(total - base.sum())
    if short > 0:
        order = np.argsort(-(exact - base), kind="stable")
        base[order[:short]] += 1
    return base


def _allocate_counts(props: np.ndarray, size: int, available: np.ndarray) -> np.ndarray:
    counts = np.minimum(_largest_remainder(props, size), available)
    deficit = size - int(counts.sum())
    while deficit > 0:
        # move the deficit onto classes that still have samples, in proportion
        room = available - counts
        w = np.where(room > 0, props, 0.0)
        if w.sum() <= 0:
            w = room.astype(np.float64)
        counts += np.minimum(_largest_remainder(w, deficit), room)
        deficit = size - int(counts.sum())
    return counts


def partition_indices(labels: np.ndarray, num_classes: int, spec: PartitionSpec) -> List[np.ndarray]:
    alphas = spec.worker_alphas()
    bad = [a for a in alphas if not a > 0]
    if bad:
        raise DomainError(f"Dirichlet concentration must be > 0 (got {bad[0]})")
    C = len(alphas)
    if spec.num_workers is not None and spec.num_workers != C:
        raise DomainError(f"group sizes add up to {C}, expected {spec.num_workers}")
    if len(labels) < C * spec.shard_size:
        raise SizeError(f"source has {len(labels)} samples, need {C} x {spec.shard_size}")
    pools = [np.flatnonzero(labels == k) for k in range(num_classes)]
    shards: List[np.ndarray] = []
    for i, alpha in enumerate(alphas):
        rng = keyed_rng(spec.seed, STREAM_PARTITION, i)
        props = _draw_proportions(rng, alpha, num_classes)
        available = np.array([len(p) for p in pools], dtype=np.int64)
        counts = _allocate_counts(props, spec.shard_size, available)
        chosen = [rng.choice(pools[k], size=counts[k], replace=False) for k in range(num_classes)]
        if spec.disjoint:
            pools = [np.setdiff1d(p, c, assume_unique=True) for p, c in zip(pools, chosen)]
        shards.append(rng.permutation(np.concatenate(chosen)))
    return shards


def partition_dirichlet(source: Dataset, spec: PartitionSpec) -> List[Dataset]:
    return [source.subset(idx) for idx in partition_indices(source.labels, source.num_classes, spec)]


def partition_manifest(shards: Sequence[Dataset], alphas: Optional[Sequence[float]] = None) -> Dict[str, Any]:
    """worker id -> per-class counts, JSON-ready."""
    workers: Dict[str, Any] = {}
    for i, shard in enumerate(shards):
        entry: Dict[str, Any] = {"counts": label_histogram(shard).to_list(), "size": len(shard)}
        if alphas is not None:
            entry["alpha"] = float(alphas[i])
        workers[str(i)] = entry
    return {
        "num_workers": len(shards),
        "num_classes": shards[0].num_classes if shards else 0,
        "workers": workers,
    }
