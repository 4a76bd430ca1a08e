"""
Small tanh MLP (no hidden layers = linear softmax model) with a softmax head,
the per-sample RMSE loss against one-hot labels, and its exact gradient.

Parameters live in one flat vector: for each layer, weights (fan_in x fan_out,
row-major) followed by biases.
"""

import json
import struct
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from app.core.errors import DomainError, FormatError
from app.schemas.experiment import ModelArch
from app.simulation.data import Dataset
from app.utils.seeding import STREAM_BATCHES, STREAM_INIT, keyed_rng


@dataclass(frozen=True)
class ParamVector:
    values: np.ndarray
    arch: ModelArch

    def __post_init__(self):
        if self.values.shape != (self.arch.num_params,):
            raise DomainError(
                f"parameter vector has shape {self.values.shape}, arch needs ({self.arch.num_params},)"
            )

    def __len__(self) -> int:
        return self.arch.num_params

    def with_values(self, values: np.ndarray) -> "ParamVector":
        return ParamVector(np.asarray(values, dtype=np.float64), self.arch)

    def copy(self) -> "ParamVector":
        return ParamVector(self.values.copy(), self.arch)

    def to_bytes(self) -> bytes:
        # 8-byte little-endian length header, then little-endian float64 values
        return struct.pack("<Q", self.values.size) + self.values.astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes, arch: ModelArch) -> "ParamVector":
        if len(blob) < 8:
            raise FormatError("parameter blob shorter than its header")
        (n,) = struct.unpack("<Q", blob[:8])
        if len(blob) != 8 + 8 * n:
            raise FormatError(f"parameter blob declares {n} values but holds {(len(blob) - 8) / 8:g}")
        return cls(np.frombuffer(blob, dtype="<f8", offset=8).astype(np.float64), arch)

    def to_json(self) -> str:
        return json.dumps({"arch": self.arch.model_dump(), "values": self.values.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "ParamVector":
        data: Dict[str, Any] = json.loads(text)
        return cls(np.asarray(data["values"], dtype=np.float64), ModelArch(**data["arch"]))


def _unpack(w: ParamVector) -> List[Tuple[np.ndarray, np.ndarray]]:
    sizes = w.arch.layer_sizes
    layers = []
    offset = 0
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        W = w.values[offset: offset + fan_in * fan_out].reshape(fan_in, fan_out)
        offset += fan_in * fan_out
        b = w.values[offset: offset + fan_out]
        offset += fan_out
        layers.append((W, b))
    return layers


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _activations(w: ParamVector, X: np.ndarray) -> Tuple[List[np.ndarray], np.ndarray]:
    if X.shape[1] != w.arch.input_dim:
        raise DomainError(f"input dimension {X.shape[1]} does not match arch input_dim {w.arch.input_dim}")
    layers = _unpack(w)
    acts = [X]
    h = X
    for k, (W, b) in enumerate(layers):
        z = h @ W + b
        if k < len(layers) - 1:
            h = np.tanh(z)
            acts.append(h)
        else:
            return acts, _softmax(z)
    raise AssertionError("unreachable")


def _onehot(labels: np.ndarray, L: int) -> np.ndarray:
    Y = np.zeros((labels.shape[0], L))
    Y[np.arange(labels.shape[0]), labels] = 1.0
    return Y


def _require_nonempty(d: Dataset, what: str) -> None:
    if len(d) == 0:
        raise DomainError(f"{what} is empty")


def init_params(arch: ModelArch, seed: int) -> ParamVector:
    """Glorot-uniform weights, zero biases."""
    rng = keyed_rng(seed, STREAM_INIT)
    sizes = arch.layer_sizes
    parts = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        parts.append(rng.uniform(-limit, limit, size=fan_in * fan_out))
        parts.append(np.zeros(fan_out))
    return ParamVector(np.concatenate(parts), arch)


def forward(w: ParamVector, x: np.ndarray) -> np.ndarray:
    """Class probabilities for one feature vector (or a 2-D batch)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return _activations(w, x[None, :])[1][0]
    return _activations(w, x)[1]


def rmse_loss(w: ParamVector, d: Dataset) -> float:
    _require_nonempty(d, "dataset")
    _, P = _activations(w, d.features)
    diff = P - _onehot(d.labels, w.arch.num_classes)
    return float(np.mean(np.sqrt(np.sum(diff * diff, axis=1))))


def grad(w: ParamVector, batch: Dataset) -> np.ndarray:
    _require_nonempty(batch, "batch")
    acts, P = _activations(w, batch.features)
    n = len(batch)
    diff = P - _onehot(batch.labels, w.arch.num_classes)
    r = np.sqrt(np.sum(diff * diff, axis=1))
    # a sample already at its one-hot target contributes a zero subgradient
    safe = np.where(r > 0, r, 1.0)
    gP = np.where(r[:, None] > 0, diff / safe[:, None], 0.0) / n
    dz = P * (gP - np.sum(gP * P, axis=1, keepdims=True))

    layers = _unpack(w)
    out: List[np.ndarray] = [None] * (2 * len(layers))
    for k in range(len(layers) - 1, -1, -1):
        W, _ = layers[k]
        out[2 * k] = (acts[k].T @ dz).ravel()
        out[2 * k + 1] = dz.sum(axis=0)
        if k > 0:
            dz = (dz @ W.T) * (1.0 - acts[k] ** 2)
    return np.concatenate(out)


def accuracy(w: ParamVector, d: Dataset) -> float:
    _require_nonempty(d, "dataset")
    _, P = _activations(w, d.features)
    return float(np.mean(np.argmax(P, axis=1) == d.labels))


def fit_central(
    arch: ModelArch,
    d: Dataset,
    epochs: int = 20,
    lr: float = 0.5,
    batch_size: int = 64,
    seed: int = 0,
    init: Optional[ParamVector] = None,
) -> ParamVector:
    """Plain minibatch SGD on one dataset; the centralized reference."""
    _require_nonempty(d, "dataset")
    w = init if init is not None else init_params(arch, seed)
    values = w.values.copy()
    for epoch in range(epochs):
        perm = keyed_rng(seed, STREAM_BATCHES, epoch).permutation(len(d))
        for start in range(0, len(d), batch_size):
            batch = d.subset(perm[start: start + batch_size])
            values = values - lr * grad(w.with_values(values), batch)
    return w.with_values(values)
