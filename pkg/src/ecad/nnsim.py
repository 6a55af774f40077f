"""Native MLP trainer: builds the network from a description, trains with
mini-batch Adam on softmax cross-entropy, reports test accuracy and exports
the weights and biases in the binary interchange format (16-byte header of
four little-endian int32 dimensions, then row-major float32 data).
"""

from __future__ import annotations

import json
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .dataset import Dataset
from .genome import NetworkDescription

ADAM_LR = 0.001
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class LayerParams:
    weights: np.ndarray   # (in_features, out_features)
    bias: np.ndarray      # (out_features,)


@dataclass
class Mlp:
    layers: list[LayerParams]
    activations: list[str]   # per layer: "relu" | "none"

    @property
    def dims(self) -> list[int]:
        return [self.layers[0].weights.shape[0]] + [l.weights.shape[1] for l in self.layers]


@dataclass
class TrainReport:
    name: str
    accuracy: float
    epochs: int
    training_time: float
    batch_size: int
    epoch_accuracy: list[float] = field(default_factory=list)

    def to_json(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "accuracy": self.accuracy,
            "epochs": self.epochs,
            "training_time": self.training_time,
            "batch_size": self.batch_size,
            "epoch_accuracy": self.epoch_accuracy,
        }

    def write(self, path: Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n", encoding="utf-8")


def init_mlp(desc: NetworkDescription, seed: int, dtype=np.float32) -> Mlp:
    """Seeded uniform +-sqrt(6 / (in + out)) weight init, zero biases."""
    rng = np.random.default_rng(seed)
    layers, activations = [], []
    for layer in desc.layers:
        fan_in, fan_out = layer.in_features, layer.out_features
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)
        b = np.zeros(fan_out, dtype=dtype)
        layers.append(LayerParams(weights=w, bias=b))
        activations.append(layer.activation)
    return Mlp(layers=layers, activations=activations)


def forward(m: Mlp, batch: np.ndarray) -> np.ndarray:
    """Logits for a batch; ReLU on hidden layers, no softmax."""
    x = np.asarray(batch)
    if x.ndim != 2 or x.shape[1] != m.layers[0].weights.shape[0]:
        raise ValueError(f"batch width {x.shape} does not match input size {m.layers[0].weights.shape[0]}")
    for params, act in zip(m.layers, m.activations):
        x = x @ params.weights + params.bias
        if act == "relu":
            x = np.maximum(x, 0)
    return x


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    """Mean softmax cross-entropy of one-hot labels."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    return float(np.mean(np.sum(labels * (log_z - shifted), axis=1)))


def _trace(m: Mlp, x: np.ndarray) -> tuple[list[np.ndarray], list[np.ndarray]]:
    pre: list[np.ndarray] = []
    post: list[np.ndarray] = [x]
    for params, act in zip(m.layers, m.activations):
        z = post[-1] @ params.weights + params.bias
        pre.append(z)
        post.append(np.maximum(z, 0) if act == "relu" else z)
    return pre, post


def _backprop(m: Mlp, pre: list[np.ndarray], post: list[np.ndarray],
              labels: np.ndarray) -> list[LayerParams]:
    n = post[0].shape[0]
    delta = (softmax(post[-1]) - labels) / n
    grads: list[LayerParams] = [None] * len(m.layers)  # type: ignore[list-item]
    for i in range(len(m.layers) - 1, -1, -1):
        grads[i] = LayerParams(weights=post[i].T @ delta, bias=delta.sum(axis=0))
        if i > 0:
            delta = delta @ m.layers[i].weights.T
            if m.activations[i - 1] == "relu":
                delta = delta * (pre[i - 1] > 0)
    return grads


def grad(m: Mlp, batch: np.ndarray, labels: np.ndarray) -> list[LayerParams]:
    """Exact gradients of mean softmax cross-entropy, same shapes as the parameters."""
    pre, post = _trace(m, np.asarray(batch))
    return _backprop(m, pre, post, labels)


def accuracy(m: Mlp, x: np.ndarray, y: np.ndarray, chunk: int = 2048) -> float:
    hits = 0
    for lo in range(0, x.shape[0], chunk):
        logits = forward(m, x[lo:lo + chunk])
        hits += int(np.sum(np.argmax(logits, axis=1) == np.argmax(y[lo:lo + chunk], axis=1)))
    return hits / x.shape[0]


class _Adam:
    def __init__(self, layers: list[LayerParams], lr: float = ADAM_LR) -> None:
        self.lr = lr
        self.t = 0
        self.m = [LayerParams(np.zeros_like(l.weights), np.zeros_like(l.bias)) for l in layers]
        self.v = [LayerParams(np.zeros_like(l.weights), np.zeros_like(l.bias)) for l in layers]

    def step(self, layers: list[LayerParams], grads: list[LayerParams]) -> None:
        self.t += 1
        correction = np.sqrt(1 - ADAM_BETA2 ** self.t) / (1 - ADAM_BETA1 ** self.t)
        for p, g, mo, ve in zip(layers, grads, self.m, self.v):
            for attr in ("weights", "bias"):
                gv = getattr(g, attr)
                mv = getattr(mo, attr)
                vv = getattr(ve, attr)
                mv += (1 - ADAM_BETA1) * (gv - mv)
                vv += (1 - ADAM_BETA2) * (gv * gv - vv)
                getattr(p, attr)[...] -= self.lr * correction * mv / (np.sqrt(vv) + ADAM_EPS)


def train(
    desc: NetworkDescription,
    data: Dataset,
    epochs: int,
    batch_size: int,
    seed: int = 0,
    lr: float = ADAM_LR,
    verbose: bool = False,
) -> tuple[Mlp, TrainReport]:
    """Mini-batch Adam training; deterministic for a fixed seed.

    Raises TrainingDiverged on a non-finite loss.
    """
    if epochs < 1 or batch_size < 1:
        raise ValueError("epochs and batch_size must be >= 1")
    t0 = time.perf_counter()
    m = init_mlp(desc, seed=seed)
    opt = _Adam(m.layers, lr=lr)
    rng = np.random.default_rng(seed + 1)
    n = data.train_x.shape[0]
    epoch_acc: list[float] = []

    for epoch in range(epochs):
        order = rng.permutation(n)
        for lo in range(0, n, batch_size):
            idx = order[lo:lo + batch_size]
            xb, yb = data.train_x[idx], data.train_y[idx]
            pre, post = _trace(m, xb)
            if not np.isfinite(post[-1]).all():
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, offset {lo}")
            opt.step(m.layers, _backprop(m, pre, post, yb))
        acc = accuracy(m, data.test_x, data.test_y)
        epoch_acc.append(acc)
        if verbose:
            print(f"epoch {epoch + 1}/{epochs}: test accuracy {acc:.4f}")

    report = TrainReport(
        name=str(desc.id),
        accuracy=epoch_acc[-1],
        epochs=epochs,
        training_time=time.perf_counter() - t0,
        batch_size=batch_size,
        epoch_accuracy=epoch_acc,
    )
    return m, report


# --- binary parameter files ----------------------------------------------------

def _write_bin(path: Path, dims: tuple[int, int, int, int], data: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4i", *dims))
        fh.write(np.ascontiguousarray(data, dtype=np.float32).tobytes())


def _read_bin(path: Path) -> tuple[tuple[int, ...], np.ndarray]:
    raw = Path(path).read_bytes()
    if len(raw) < 16:
        raise ValueError(f"{path}: missing 16-byte dimension header")
    dims = struct.unpack("<4i", raw[:16])
    count = 1
    for d in dims:
        count *= d
    data = np.frombuffer(raw[16:], dtype="<f4")
    if data.shape[0] != count:
        raise ValueError(f"{path}: header says {count} values, file holds {data.shape[0]}")
    return dims, data


def save_params(m: Mlp, dir_path: str | Path, cell_names: list[str]) -> list[Path]:
    """Write <cell>_weights.bin and <cell>_biases.bin per layer; returns the paths."""
    if len(cell_names) != len(m.layers):
        raise ValueError(f"need {len(m.layers)} cell names, got {len(cell_names)}")
    out_dir = Path(dir_path)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    for name, params in zip(cell_names, m.layers):
        fan_in, fan_out = params.weights.shape
        wpath = out_dir / f"{name}_weights.bin"
        bpath = out_dir / f"{name}_biases.bin"
        _write_bin(wpath, (fan_in, fan_out, 1, 1), params.weights)
        _write_bin(bpath, (fan_out, 1, 1, 1), params.bias)
        written += [wpath, bpath]
    return written


def load_params(dir_path: str | Path, cell_names: list[str]) -> list[LayerParams]:
    """Inverse of save_params."""
    out_dir = Path(dir_path)
    layers: list[LayerParams] = []
    for name in cell_names:
        wdims, wdata = _read_bin(out_dir / f"{name}_weights.bin")
        bdims, bdata = _read_bin(out_dir / f"{name}_biases.bin")
        weights = wdata.reshape(wdims[0], wdims[1]).copy()
        bias = bdata[:bdims[0]].copy()
        if bias.shape[0] != weights.shape[1]:
            raise ValueError(f"{name}: bias length {bias.shape[0]} does not match weights {weights.shape}")
        layers.append(LayerParams(weights=weights, bias=bias))
    return layers


def build_mlp(desc: NetworkDescription, params: list[LayerParams]) -> Mlp:
    """Assemble an Mlp from a description plus loaded parameters."""
    if len(params) != len(desc.layers):
        raise ValueError(f"expected {len(desc.layers)} layers, got {len(params)}")
    for layer, p in zip(desc.layers, params):
        if p.weights.shape != (layer.in_features, layer.out_features):
            raise ValueError(f"layer '{layer.name}': weights shape {p.weights.shape} mismatched")
    return Mlp(layers=list(params), activations=[l.activation for l in desc.layers])
