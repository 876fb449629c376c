"""Minimal feedforward classifier with manual backpropagation.

Desk-scale stand-in for the image experiments: synthetic Gaussian-blob
datasets, label-noise injection on the training split only, and a
deterministic minibatch training loop driving any optimizer from
``flatmin.optim``.  Parameters travel as one flat float64 vector in
layer-major order (each layer's weights, then its biases).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np

from .errors import ContractViolationError, NonFiniteError
from .optim import (
    LrSchedule,
    OptimizerParams,
    build_optimizer,
    schedule_multiplier,
)


@dataclass(frozen=True)
class MlpSpec:
    layer_sizes: tuple[int, ...]
    activation: str = "tanh"
    init_seed: int = 0
    init_scale_rule: str = "xavier-uniform"

    def __post_init__(self):
        if len(self.layer_sizes) < 2:
            raise ContractViolationError("need at least input and output layers")
        if self.layer_sizes[-1] < 2:
            raise ContractViolationError("output size (number of classes) must be >= 2")
        if self.activation not in ("tanh", "relu"):
            raise ContractViolationError(f"unknown activation {self.activation!r}")
        if self.init_scale_rule != "xavier-uniform":
            raise ContractViolationError(f"unknown init rule {self.init_scale_rule!r}")


class Mlp:
    """Fully connected net; weights uniform in +-sqrt(6/(fan_in+fan_out)), biases zero."""

    def __init__(self, spec: MlpSpec):
        self.spec = spec
        rng = np.random.Generator(np.random.PCG64(spec.init_seed))
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        sizes = spec.layer_sizes
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            self.weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    @property
    def num_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def get_flat(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.reshape(-1))
            parts.append(b)
        return np.concatenate(parts)

    def set_flat(self, flat: np.ndarray) -> None:
        if flat.shape != (self.num_params,):
            raise ContractViolationError("flat parameter vector has wrong dimension")
        pos = 0
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            self.weights[i] = flat[pos : pos + w.size].reshape(w.shape).copy()
            pos += w.size
            self.biases[i] = flat[pos : pos + b.size].copy()
            pos += b.size

    def _activate(self, z: np.ndarray) -> np.ndarray:
        if self.spec.activation == "tanh":
            return np.tanh(z)
        return np.maximum(z, 0.0)

    def logits(self, inputs: np.ndarray) -> np.ndarray:
        a = inputs
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w + b
            a = z if i == last else self._activate(z)
        return a


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def forward_loss(model: Mlp, inputs: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy over the batch; returns (loss, logits)."""
    if inputs.shape[0] == 0:
        raise ContractViolationError("batch must be non-empty")
    logits = model.logits(inputs)
    if not np.all(np.isfinite(logits)):
        raise NonFiniteError("non-finite activations in forward pass")
    logp = _log_softmax(logits)
    loss = float(-logp[np.arange(len(labels)), labels].mean())
    return loss, logits


def backward(model: Mlp, inputs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Exact flat gradient of forward_loss with respect to all parameters."""
    loss, grad, _ = loss_and_grad(model, inputs, labels)
    return grad


def loss_and_grad(model: Mlp, inputs: np.ndarray, labels: np.ndarray):
    """One forward/backward pass; returns (loss, flat gradient, logits)."""
    if inputs.shape[0] == 0:
        raise ContractViolationError("batch must be non-empty")
    n = inputs.shape[0]
    last = len(model.weights) - 1

    activations = [inputs]
    pre_acts = []
    a = inputs
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ w + b
        pre_acts.append(z)
        a = z if i == last else model._activate(z)
        activations.append(a)
    logits = activations[-1]
    if not np.all(np.isfinite(logits)):
        raise NonFiniteError("non-finite activations in forward pass")

    logp = _log_softmax(logits)
    loss = float(-logp[np.arange(n), labels].mean())

    delta = np.exp(logp)
    delta[np.arange(n), labels] -= 1.0
    delta /= n

    grads_w = [None] * len(model.weights)
    grads_b = [None] * len(model.biases)
    for i in range(last, -1, -1):
        grads_w[i] = activations[i].T @ delta
        grads_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = delta @ model.weights[i].T
            if model.spec.activation == "tanh":
                delta = delta * (1.0 - activations[i] ** 2)
            else:
                delta = delta * (pre_acts[i - 1] > 0)

    parts = []
    for gw, gb in zip(grads_w, grads_b):
        parts.append(gw.reshape(-1))
        parts.append(gb)
    return loss, np.concatenate(parts), logits


def accuracy(model: Mlp, inputs: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of argmax-correct predictions (lowest index wins ties)."""
    preds = np.argmax(model.logits(inputs), axis=1)
    return float(np.mean(preds == labels))


# ---------------------------------------------------------------------------
# Datasets


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray  # (N, d) float64
    labels: np.ndarray  # (N,) int64
    train_idx: np.ndarray
    test_idx: np.ndarray
    noise_rate: float = 0.0

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1


def make_blobs(
    classes: int,
    per_class: int,
    spread: float,
    seed: int,
    n_features: int = 20,
) -> Dataset:
    """Gaussian class clusters on a circle of radius 3*spread.

    Cluster centers live in the first two feature dimensions; every
    dimension carries Gaussian noise with scale spread/3, so classes are
    cleanly separable at any spread and the difficulty of downstream
    experiments comes from injected label noise.  The train/test split is
    a seeded 80/20 shuffle.
    """
    if classes < 2:
        raise ContractViolationError("need at least 2 classes")
    if per_class < 1:
        raise ContractViolationError("per_class must be >= 1")
    if spread <= 0:
        raise ContractViolationError("spread must be > 0")
    rng = np.random.Generator(np.random.PCG64(seed))
    n = classes * per_class
    inputs = rng.normal(0.0, spread / 3.0, size=(n, n_features))
    labels = np.repeat(np.arange(classes), per_class)
    angles = 2.0 * np.pi * labels / classes
    inputs[:, 0] += 3.0 * spread * np.cos(angles)
    inputs[:, 1] += 3.0 * spread * np.sin(angles)
    perm = rng.permutation(n)
    n_train = int(round(0.8 * n))
    return Dataset(
        inputs=inputs,
        labels=labels.astype(np.int64),
        train_idx=perm[:n_train],
        test_idx=perm[n_train:],
    )


def inject_label_noise(ds: Dataset, rate: float, seed: int) -> Dataset:
    """Flip exactly round(rate * N_train) train labels to a different class."""
    if not (0 <= rate < 1):
        raise ContractViolationError("noise rate must lie in [0, 1)")
    if rate == 0:
        return ds
    rng = np.random.Generator(np.random.PCG64(seed))
    n_train = len(ds.train_idx)
    n_flip = int(round(rate * n_train))
    victims = rng.choice(ds.train_idx, size=n_flip, replace=False)
    classes = ds.num_classes
    labels = ds.labels.copy()
    for idx in victims:
        # uniform over the other classes
        new = int(rng.integers(0, classes - 1))
        if new >= labels[idx]:
            new += 1
        labels[idx] = new
    return replace(ds, labels=labels, noise_rate=rate)


# ---------------------------------------------------------------------------
# Optional IDX ingestion (big-endian magic 0x803 for images, 0x801 for labels)


def load_idx(path) -> np.ndarray:
    """Read an IDX image or label file into a numpy array."""
    with open(path, "rb") as f:
        data = f.read()
    magic = struct.unpack(">I", data[:4])[0]
    if magic == 0x00000803:
        n, rows, cols = struct.unpack(">III", data[4:16])
        arr = np.frombuffer(data, dtype=np.uint8, offset=16)
        return arr.reshape(n, rows, cols)
    if magic == 0x00000801:
        (n,) = struct.unpack(">I", data[4:8])
        return np.frombuffer(data, dtype=np.uint8, offset=8).copy()
    raise ContractViolationError(f"unrecognized IDX magic 0x{magic:08x} in {path}")


def dataset_from_idx(images_path, labels_path, seed: int) -> Dataset:
    """Build a Dataset from IDX image/label files (flattened, scaled to [0,1])."""
    images = load_idx(images_path)
    labels = load_idx(labels_path)
    if images.ndim != 3 or images.shape[0] != labels.shape[0]:
        raise ContractViolationError("IDX image/label files do not match")
    n = images.shape[0]
    inputs = images.reshape(n, -1).astype(np.float64) / 255.0
    rng = np.random.Generator(np.random.PCG64(seed))
    perm = rng.permutation(n)
    n_train = int(round(0.8 * n))
    return Dataset(
        inputs=inputs,
        labels=labels.astype(np.int64),
        train_idx=perm[:n_train],
        test_idx=perm[n_train:],
    )


# ---------------------------------------------------------------------------
# Training


def steps_per_epoch(n_train: int, batch_size: int) -> int:
    return -(-n_train // batch_size)


def train_classifier(
    spec: MlpSpec,
    dataset: Dataset,
    optimizer: OptimizerParams,
    sched: LrSchedule,
    epochs: int,
    batch_size: int,
    seed: int,
):
    """Seeded minibatch training; returns (model, per-epoch metrics list).

    The optimizer is stepped once per batch with the schedule multiplier
    evaluated at the number of completed steps.  Metrics are recorded at
    the end of every epoch.
    """
    if epochs < 1:
        raise ContractViolationError("epochs must be >= 1")
    if batch_size < 1:
        raise ContractViolationError("batch_size must be >= 1")
    model = Mlp(spec)
    theta = model.get_flat()
    opt = build_optimizer(optimizer, theta.shape[0])
    rng = np.random.Generator(np.random.PCG64(seed))
    x_train = dataset.inputs[dataset.train_idx]
    y_train = dataset.labels[dataset.train_idx]
    x_test = dataset.inputs[dataset.test_idx]
    y_test = dataset.labels[dataset.test_idx]
    metrics = []
    step = 0
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(y_train))
        for lo in range(0, len(order), batch_size):
            batch = order[lo : lo + batch_size]
            try:
                _, grad, _ = loss_and_grad(model, x_train[batch], y_train[batch])
                mult = schedule_multiplier(sched, step)
                theta = opt.step(theta, grad, lr_multiplier=mult)
            except NonFiniteError as err:
                raise NonFiniteError(
                    f"training diverged at epoch {epoch}, batch {lo // batch_size}",
                    step=step + 1,
                ) from err
            model.set_flat(theta)
            step += 1
        train_loss, _ = forward_loss(model, x_train, y_train)
        test_loss, _ = forward_loss(model, x_test, y_test)
        metrics.append(
            {
                "epoch": epoch,
                "train_loss": train_loss,
                "train_acc": accuracy(model, x_train, y_train),
                "test_loss": test_loss,
                "test_acc": accuracy(model, x_test, y_test),
            }
        )
    return model, metrics
