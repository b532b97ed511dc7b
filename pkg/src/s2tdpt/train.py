"""Surrogate-gradient training, evaluation, and firing-rate map export.

The softmax lives exclusively inside the cross-entropy loss; the network
itself is normalization-free end to end. Training is deterministic given the
seed: initialization, shuffling, and augmentation draws all come from one
generator, and the optional batch-prefetch thread only moves precomputed
batches.
"""

from __future__ import annotations

import csv
import math
import os
import queue
import threading
import time
from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, log_softmax, no_grad
from .errors import ConfigurationError, ContractError, NonFiniteError
from .model import SpikingClassifier
from .probe import ForwardProbe


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    optimizer: str = "adamw"  # "adamw" | "sgd_momentum"
    seed: int = 0
    lr_schedule: str = "cosine"  # "cosine" | "constant"
    momentum: float = 0.9
    hflip: bool = False
    random_crop: bool = False

    def __post_init__(self):
        # learning_rate 0 is allowed: it makes a pass a bit-exact no-op, which
        # the determinism checks rely on.
        if min(self.epochs, self.batch_size) < 1 or self.learning_rate < 0:
            raise ConfigurationError("epochs and batch_size must be positive, learning_rate nonnegative")
        if self.optimizer not in ("adamw", "sgd_momentum"):
            raise ConfigurationError(f"unknown optimizer '{self.optimizer}'")
        if self.lr_schedule not in ("cosine", "constant"):
            raise ConfigurationError(f"unknown lr schedule '{self.lr_schedule}'")


@dataclass
class EvalReport:
    top1_accuracy: float
    confusion: np.ndarray  # [true, predicted]
    per_class_accuracy: np.ndarray

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, EvalReport)
            and self.top1_accuracy == other.top1_accuracy
            and np.array_equal(self.confusion, other.confusion)
            and np.array_equal(self.per_class_accuracy, other.per_class_accuracy)
        )


@dataclass
class SfrMap:
    """Mean spike probability per spatial token, in [0, 1]."""

    grid: np.ndarray


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    train_acc: float
    eval_acc: Optional[float]
    wall_seconds: float


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------


def cross_entropy_loss(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under the logits."""
    labels = np.asarray(labels)
    b, k = logits.shape
    if labels.shape != (b,):
        raise ContractError(f"labels shape {labels.shape} does not match batch {b}")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= k:
        raise ContractError(f"labels must lie in [0, {k})")
    log_probs = log_softmax(logits, axis=-1)
    onehot = np.zeros((b, k), dtype=logits.dtype)
    onehot[np.arange(b), labels] = 1.0
    return (log_probs * onehot).sum() * (-1.0 / b)


# ---------------------------------------------------------------------------
# Optimizers
# ---------------------------------------------------------------------------


class SgdMomentum:
    def __init__(self, params, lr: float, momentum: float = 0.9, weight_decay: float = 0.0):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        for p, v in zip(self.params, self.velocity):
            if p.grad is None:
                continue
            g = p.grad + self.weight_decay * p.data
            v *= self.momentum
            v += g
            p.data -= self.lr * v


class AdamW:
    def __init__(self, params, lr: float, betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.step_count += 1
        c1 = 1.0 - self.beta1**self.step_count
        c2 = 1.0 - self.beta2**self.step_count
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data -= self.lr * (update + self.weight_decay * p.data)


def make_optimizer(model: SpikingClassifier, cfg: TrainConfig):
    if cfg.optimizer == "adamw":
        return AdamW(model.parameters(), lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
    return SgdMomentum(model.parameters(), lr=cfg.learning_rate, momentum=cfg.momentum, weight_decay=cfg.weight_decay)


def lr_at(cfg: TrainConfig, epoch: int) -> float:
    if cfg.lr_schedule == "constant":
        return cfg.learning_rate
    return cfg.learning_rate * 0.5 * (1.0 + math.cos(math.pi * epoch / cfg.epochs))


# ---------------------------------------------------------------------------
# Batch pipeline
# ---------------------------------------------------------------------------


def _augment_plan(rng: np.random.Generator, n: int, cfg: TrainConfig) -> tuple[np.ndarray, np.ndarray]:
    """Pre-draw per-sample augmentation decisions on the main thread, so the
    prefetch worker stays free of random state."""
    flips = rng.random(n) < 0.5 if cfg.hflip else np.zeros(n, dtype=bool)
    offsets = rng.integers(0, 5, size=(n, 2)) if cfg.random_crop else np.full((n, 2), 2)
    return flips, offsets


def _apply_augment(images: np.ndarray, flips: np.ndarray, offsets: np.ndarray, enabled: bool) -> np.ndarray:
    if not enabled:
        return images
    out = images.copy()
    out[flips] = out[flips][..., ::-1]
    pad = np.pad(out, ((0, 0), (0, 0), (2, 2), (2, 2)))
    h, w = images.shape[2], images.shape[3]
    for i, (dy, dx) in enumerate(offsets):
        out[i] = pad[i, :, dy : dy + h, dx : dx + w]
    return out


def _iter_batches(
    images: np.ndarray,
    labels: np.ndarray,
    order: np.ndarray,
    batch_size: int,
    cfg: TrainConfig,
    flips: np.ndarray,
    offsets: np.ndarray,
) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    augment = cfg.hflip or cfg.random_crop
    for start in range(0, len(order), batch_size):
        idx = order[start : start + batch_size]
        batch = _apply_augment(images[idx], flips[idx], offsets[idx], augment)
        yield batch, labels[idx]


def _prefetched(batches: Iterator, workers: int) -> Iterator:
    """Producer-consumer with at most one batch in flight."""
    if workers < 1:
        yield from batches
        return
    q: queue.Queue = queue.Queue(maxsize=1)
    sentinel = object()

    def produce():
        for item in batches:
            q.put(item)
        q.put(sentinel)

    thread = threading.Thread(target=produce, daemon=True)
    thread.start()
    while True:
        item = q.get()
        if item is sentinel:
            break
        yield item
    thread.join()


def worker_threads() -> int:
    raw = os.environ.get("S2TDPT_THREADS", "1")
    try:
        return max(0, int(raw))
    except ValueError:
        return 1


# ---------------------------------------------------------------------------
# Training / evaluation
# ---------------------------------------------------------------------------


def _locate_non_finite(model: SpikingClassifier, batch: np.ndarray, labels: np.ndarray) -> str:
    """Re-run the failing batch with per-op finite checks to name the culprit."""
    ad.set_finite_checks(True)
    try:
        cross_entropy_loss(model(batch), labels)
    except NonFiniteError as exc:
        return str(exc)
    finally:
        ad.set_finite_checks(False)
    return "loss is non-finite but the forward pass is clean (gradient overflow?)"


def train_epoch(
    model: SpikingClassifier,
    data: tuple[np.ndarray, np.ndarray],
    cfg: TrainConfig,
    optimizer,
    rng: np.random.Generator,
    epoch: int = 0,
) -> tuple[SpikingClassifier, EpochMetrics]:
    """One pass of minibatch updates; returns the model and running metrics."""
    images, labels = data
    if len(images) == 0:
        raise ContractError("training data is empty")
    model.train()
    optimizer.lr = lr_at(cfg, epoch)

    order = rng.permutation(len(images))
    flips, offsets = _augment_plan(rng, len(images), cfg)
    started = time.perf_counter()
    total_loss = 0.0
    correct = 0
    batches = _iter_batches(images, labels, order, cfg.batch_size, cfg, flips, offsets)
    for batch, batch_labels in _prefetched(batches, worker_threads()):
        model.zero_grad()
        logits = model(batch)
        loss = cross_entropy_loss(logits, batch_labels)
        if not np.isfinite(loss.data):
            raise NonFiniteError(f"training diverged: {_locate_non_finite(model, batch, batch_labels)}")
        loss.backward()
        optimizer.step()
        total_loss += loss.item() * len(batch_labels)
        correct += int((logits.data.argmax(axis=1) == batch_labels).sum())

    metrics = EpochMetrics(
        epoch=epoch,
        train_loss=total_loss / len(images),
        train_acc=correct / len(images),
        eval_acc=None,
        wall_seconds=time.perf_counter() - started,
    )
    return model, metrics


def fit(
    model: SpikingClassifier,
    train_data: tuple[np.ndarray, np.ndarray],
    cfg: TrainConfig,
    eval_data: Optional[tuple[np.ndarray, np.ndarray]] = None,
    metrics_path=None,
    log=None,
) -> list[EpochMetrics]:
    """Run the full schedule; optionally append per-epoch rows to a CSV."""
    optimizer = make_optimizer(model, cfg)
    rng = np.random.default_rng(cfg.seed)
    history = []
    for epoch in range(cfg.epochs):
        _, metrics = train_epoch(model, train_data, cfg, optimizer, rng, epoch)
        if eval_data is not None:
            metrics.eval_acc = evaluate(model, eval_data).top1_accuracy
        history.append(metrics)
        if metrics_path is not None:
            append_metrics_csv(metrics_path, metrics, seed=cfg.seed)
        if log is not None:
            eval_part = f"  eval_acc={metrics.eval_acc:.4f}" if metrics.eval_acc is not None else ""
            log(
                f"epoch {epoch + 1}/{cfg.epochs}  loss={metrics.train_loss:.4f}  "
                f"acc={metrics.train_acc:.4f}{eval_part}  ({metrics.wall_seconds:.1f}s)"
            )
    return history


def evaluate(model: SpikingClassifier, data: tuple[np.ndarray, np.ndarray], batch_size: int = 64) -> EvalReport:
    """Top-1 accuracy plus a confusion matrix over the labeled data."""
    images, labels = data
    if len(images) == 0:
        raise ContractError("evaluation data is empty")
    k = model.cfg.num_classes
    confusion = np.zeros((k, k), dtype=np.int64)
    was_training = model.training
    model.eval()
    try:
        with no_grad():
            for start in range(0, len(images), batch_size):
                batch = images[start : start + batch_size]
                preds = model(batch).data.argmax(axis=1)
                for truth, pred in zip(labels[start : start + batch_size], preds):
                    confusion[truth, pred] += 1
    finally:
        if was_training:
            model.train()
    row_sums = confusion.sum(axis=1)
    per_class = np.divide(
        np.diag(confusion), row_sums, out=np.zeros(k, dtype=np.float64), where=row_sums > 0
    )
    return EvalReport(
        top1_accuracy=float(np.trace(confusion) / confusion.sum()),
        confusion=confusion,
        per_class_accuracy=per_class,
    )


def sfr_map(model: SpikingClassifier, image: np.ndarray) -> SfrMap:
    """Mean spike firing rate per spatial token for one input image.

    Every spiking-neuron output inside the encoder blocks is recorded and
    averaged over timesteps, heads/channels, and blocks; the token axis is
    reshaped back onto the spatial grid.
    """
    image = np.asarray(image)
    if image.ndim == 3:
        image = image[None]
    probe = ForwardProbe(record_rates=False, record_block_spikes=True)
    was_training = model.training
    model.eval()
    try:
        with no_grad():
            model(image, probe)
    finally:
        if was_training:
            model.train()
    gh, gw = model.cfg.token_grid
    per_token = np.zeros(model.cfg.num_tokens, dtype=np.float64)
    for _, spikes in probe.block_spikes:
        per_token += spikes.mean(axis=(0, 1, 3))  # over timesteps, batch, features
    per_token /= max(1, len(probe.block_spikes))
    return SfrMap(per_token.reshape(gh, gw))


# ---------------------------------------------------------------------------
# Artifact writers (CSV / PGM; each header records the run seed)
# ---------------------------------------------------------------------------


def append_metrics_csv(path, metrics: EpochMetrics, seed: int) -> None:
    new_file = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", newline="") as fh:
        if new_file:
            fh.write(f"# seed={seed}\n")
            fh.write("epoch,train_loss,train_acc,eval_acc,wall_seconds\n")
        writer = csv.writer(fh)
        writer.writerow(
            [
                metrics.epoch,
                f"{metrics.train_loss:.6f}",
                f"{metrics.train_acc:.6f}",
                "" if metrics.eval_acc is None else f"{metrics.eval_acc:.6f}",
                f"{metrics.wall_seconds:.3f}",
            ]
        )


def write_confusion_csv(path, report: EvalReport, seed: int) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# seed={seed}\n")
        writer = csv.writer(fh)
        writer.writerow(["true\\pred"] + [str(i) for i in range(report.confusion.shape[1])])
        for i, row in enumerate(report.confusion):
            writer.writerow([str(i)] + [str(int(v)) for v in row])


def write_sfr_csv(path, sfr: SfrMap, seed: int) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# seed={seed}\n")
        writer = csv.writer(fh)
        for row in sfr.grid:
            writer.writerow([f"{v:.6f}" for v in row])


def write_sfr_pgm(path, sfr: SfrMap, seed: int) -> None:
    """Plain-text PGM (P2), 255 max value, one row per grid row."""
    grid = np.clip(np.rint(255.0 * sfr.grid), 0, 255).astype(int)
    lines = [
        "P2",
        f"# seed={seed}",
        f"{grid.shape[1]} {grid.shape[0]}",
        "255",
    ]
    lines.extend(" ".join(str(v) for v in row) for row in grid)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
