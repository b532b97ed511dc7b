"""Dataset ingestion: CIFAR-style binary records and a synthetic shape task.

The on-disk record layout is one label prefix followed by channel-major
unsigned-byte pixels. 32x32x3 files with a single label byte (3073 bytes per
record) or a coarse+fine label pair (3074 bytes; the fine label is used) are
recognized without metadata; anything else needs the JSON sidecar written by
:func:`save_records`.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass

import numpy as np

from .errors import DatasetError

log = logging.getLogger(__name__)

_CIFAR10_RECORD = 1 + 3072
_CIFAR100_RECORD = 2 + 3072


@dataclass
class LabeledImages:
    images: np.ndarray  # [N, C, H, W], float32 in [0, 1]
    labels: np.ndarray  # [N], int64
    num_classes: int

    def __len__(self) -> int:
        return len(self.labels)

    def as_tuple(self) -> tuple[np.ndarray, np.ndarray]:
        return self.images, self.labels


def _parse_records(raw: np.ndarray, record_size: int, label_offset: int, num_classes: int, path) -> LabeledImages:
    records = raw.reshape(-1, record_size)
    labels = records[:, label_offset].astype(np.int64)
    bad = np.nonzero(labels >= num_classes)[0]
    if bad.size:
        i = int(bad[0])
        offset = i * record_size + label_offset
        raise DatasetError(
            f"{path}: label {int(labels[i])} >= {num_classes} classes in record {i} (byte offset {offset})"
        )
    pixels = records[:, record_size - 3072 :].reshape(-1, 3, 32, 32)
    images = pixels.astype(np.float32) / 255.0
    return LabeledImages(images, labels, num_classes)


def load_cifar_binary(path) -> LabeledImages:
    """Parse a CIFAR binary file, auto-detecting the 10/100-class layout.

    Pixels are scaled to [0, 1] floats at load; the record bytes themselves
    are interpreted bit-exactly. A file divisible by both record sizes is
    read with the single-label layout.
    """
    size = os.path.getsize(path)
    if size == 0:
        log.warning("%s is empty; returning an empty dataset", path)
        return LabeledImages(np.zeros((0, 3, 32, 32), dtype=np.float32), np.zeros(0, dtype=np.int64), 10)
    raw = np.fromfile(path, dtype=np.uint8)
    if size % _CIFAR10_RECORD == 0:
        return _parse_records(raw, _CIFAR10_RECORD, 0, 10, path)
    if size % _CIFAR100_RECORD == 0:
        return _parse_records(raw, _CIFAR100_RECORD, 1, 100, path)
    raise DatasetError(
        f"{path}: size {size} is not a whole number of records "
        f"({_CIFAR10_RECORD} or {_CIFAR100_RECORD} bytes each); file truncated?"
    )


def save_records(path, dataset: LabeledImages, seed: int | None = None) -> None:
    """Write label+pixel records with a JSON sidecar describing the shape."""
    n, c, h, w = dataset.images.shape
    quantized = np.clip(np.rint(dataset.images * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        for label, img in zip(dataset.labels, quantized):
            fh.write(bytes([int(label)]))
            fh.write(img.tobytes())
    meta = {"shape": [c, h, w], "num_classes": dataset.num_classes, "count": n}
    if seed is not None:
        meta["seed"] = seed
    with open(str(path) + ".meta.json", "w") as fh:
        json.dump(meta, fh, indent=2)


def load_records(path) -> LabeledImages:
    """Load a record file; uses the sidecar if present, else CIFAR layout."""
    meta_path = str(path) + ".meta.json"
    if not os.path.exists(meta_path):
        return load_cifar_binary(path)
    with open(meta_path) as fh:
        meta = json.load(fh)
    c, h, w = (int(v) for v in meta["shape"])
    record = 1 + c * h * w
    size = os.path.getsize(path)
    if size % record:
        raise DatasetError(f"{path}: size {size} is not a multiple of record size {record}")
    raw = np.fromfile(path, dtype=np.uint8).reshape(-1, record)
    labels = raw[:, 0].astype(np.int64)
    num_classes = int(meta["num_classes"])
    bad = np.nonzero(labels >= num_classes)[0]
    if bad.size:
        i = int(bad[0])
        raise DatasetError(f"{path}: label {int(labels[i])} >= {num_classes} in record {i} (byte offset {i * record})")
    images = raw[:, 1:].reshape(-1, c, h, w).astype(np.float32) / 255.0
    return LabeledImages(images, labels, num_classes)


# ---------------------------------------------------------------------------
# Synthetic shape task
# ---------------------------------------------------------------------------

SYNTHETIC_CLASSES = ("filled_square", "hollow_square", "cross", "diagonal_stripe")
_SIZE = 16


def _draw_class(canvas: np.ndarray, cls: int, dy: int, dx: int) -> None:
    if cls == 0:  # filled square
        canvas[5 + dy : 11 + dy, 5 + dx : 11 + dx] = 1.0
    elif cls == 1:  # hollow square
        canvas[3 + dy : 13 + dy, 3 + dx : 13 + dx] = 1.0
        canvas[5 + dy : 11 + dy, 5 + dx : 11 + dx] = 0.0
    elif cls == 2:  # cross
        canvas[3 + dy : 13 + dy, 7 + dx : 9 + dx] = 1.0
        canvas[7 + dy : 9 + dy, 3 + dx : 13 + dx] = 1.0
    else:  # diagonal stripe
        for i in range(_SIZE):
            for j in range(_SIZE):
                if abs(i - j - dx + dy) <= 1:
                    canvas[i, j] = 1.0


def gen_synthetic(seed: int, n_per_class: int) -> LabeledImages:
    """Four-class 16x16 RGB shape dataset, deterministic in ``seed``.

    Each sample places its shape with a small position jitter, scales the
    foreground per channel, and adds per-pixel uniform noise of amplitude
    0.1. Classes are exactly balanced and stored class-grouped; the training
    loop shuffles.
    """
    rng = np.random.default_rng(seed)
    n = 4 * n_per_class
    images = np.zeros((n, 3, _SIZE, _SIZE), dtype=np.float32)
    labels = np.zeros(n, dtype=np.int64)
    i = 0
    for cls in range(4):
        for _ in range(n_per_class):
            dy, dx = int(rng.integers(-2, 3)), int(rng.integers(-2, 3))
            mask = np.zeros((_SIZE, _SIZE), dtype=np.float32)
            _draw_class(mask, cls, dy, dx)
            color = rng.uniform(0.55, 1.0, size=3).astype(np.float32)
            img = mask[None, :, :] * color[:, None, None]
            img = img + rng.uniform(0.0, 0.1, size=img.shape).astype(np.float32)
            images[i] = np.clip(img, 0.0, 1.0)
            labels[i] = cls
            i += 1
    return LabeledImages(images, labels, 4)
