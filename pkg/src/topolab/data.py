"""Dataset ingestion: MNIST IDX files and CIFAR-10 binary batches.

Loaders validate internal consistency (magic numbers, record alignment,
image/label count agreement) and return images as float64 in [0, 1],
channel-major. Canonical-set cardinalities (60000/10000 MNIST,
50000/10000 CIFAR-10) are properties of the official files, checked by
the acceptance suite rather than enforced here, so that small synthetic
fixtures in the same formats remain loadable.

All byte-order handling is explicit big-endian, so loader output does not
depend on the host.
"""

from __future__ import annotations

import gzip
import json
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD_BYTES = 3073  # 1 label byte + 3 * 32 * 32 pixel bytes


class DataFormatError(ValueError):
    """Raised when an on-disk dataset file violates its format contract."""


@dataclass
class Dataset:
    images: np.ndarray  # (count, C, H, W) float64
    labels: np.ndarray  # (count,) int64 in [0, 10)
    split: str  # "train" | "test"
    normalization: tuple[np.ndarray, np.ndarray] | None = None  # per-channel (mean, std)

    @property
    def count(self) -> int:
        return self.images.shape[0]

    @property
    def channels(self) -> int:
        return self.images.shape[1]


def _open_maybe_gzip(path: Path):
    candidates = [path, path.with_name(path.name + ".gz")]
    for p in candidates:
        if p.exists():
            if p.name.endswith(".gz"):
                return gzip.open(p, "rb")
            return open(p, "rb")
    raise FileNotFoundError(f"missing dataset file: {path} (also tried {candidates[1].name})")


def _read_exact(f, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise DataFormatError(f"truncated {what}: wanted {n} bytes, got {len(buf)}")
    return buf


def _load_idx_images(path: Path) -> np.ndarray:
    with _open_maybe_gzip(path) as f:
        magic, count, rows, cols = struct.unpack(">IIII", _read_exact(f, 16, "IDX image header"))
        if magic != IDX_IMAGES_MAGIC:
            raise DataFormatError(
                f"bad IDX image magic in {path.name}: 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}"
            )
        raw = _read_exact(f, count * rows * cols, "IDX image payload")
    pixels = np.frombuffer(raw, dtype=np.uint8).reshape(count, 1, rows, cols)
    return pixels.astype(np.float64) / 255.0


def _load_idx_labels(path: Path) -> np.ndarray:
    with _open_maybe_gzip(path) as f:
        magic, count = struct.unpack(">II", _read_exact(f, 8, "IDX label header"))
        if magic != IDX_LABELS_MAGIC:
            raise DataFormatError(
                f"bad IDX label magic in {path.name}: 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}"
            )
        raw = _read_exact(f, count, "IDX label payload")
    labels = np.frombuffer(raw, dtype=np.uint8).astype(np.int64)
    if labels.size and (labels.min() < 0 or labels.max() > 9):
        raise DataFormatError(f"label out of range [0, 10) in {path.name}")
    return labels


_MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def load_mnist(data_dir: str | Path, split: str = "train") -> Dataset:
    """Load one MNIST split from canonical IDX files (gzip-optional)."""
    if split not in _MNIST_FILES:
        raise ValueError(f"split must be 'train' or 'test', got {split!r}")
    data_dir = Path(data_dir)
    img_name, lbl_name = _MNIST_FILES[split]
    images = _load_idx_images(data_dir / img_name)
    labels = _load_idx_labels(data_dir / lbl_name)
    if images.shape[0] != labels.shape[0]:
        raise DataFormatError(
            f"MNIST {split}: {images.shape[0]} images but {labels.shape[0]} labels"
        )
    return Dataset(images=images, labels=labels, split=split)


def _load_cifar_batch(path: Path) -> tuple[np.ndarray, np.ndarray]:
    with _open_maybe_gzip(path) as f:
        raw = f.read()
    if len(raw) == 0 or len(raw) % CIFAR_RECORD_BYTES != 0:
        raise DataFormatError(
            f"{path.name}: length {len(raw)} is not a positive multiple of {CIFAR_RECORD_BYTES}"
        )
    records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD_BYTES)
    labels = records[:, 0].astype(np.int64)
    if labels.min() < 0 or labels.max() > 9:
        raise DataFormatError(f"label out of range [0, 10) in {path.name}")
    images = records[:, 1:].reshape(-1, 3, 32, 32).astype(np.float64) / 255.0
    return images, labels


def load_cifar10(data_dir: str | Path, split: str = "train") -> Dataset:
    """Load CIFAR-10 from binary batches (data_batch_1..5.bin / test_batch.bin)."""
    data_dir = Path(data_dir)
    if split == "train":
        names = [f"data_batch_{i}.bin" for i in range(1, 6)]
    elif split == "test":
        names = ["test_batch.bin"]
    else:
        raise ValueError(f"split must be 'train' or 'test', got {split!r}")
    parts = [_load_cifar_batch(data_dir / n) for n in names]
    images = np.concatenate([p[0] for p in parts], axis=0)
    labels = np.concatenate([p[1] for p in parts], axis=0)
    return Dataset(images=images, labels=labels, split=split)


def channel_statistics(ds: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel mean and standard deviation over all pixels."""
    mean = ds.images.mean(axis=(0, 2, 3))
    std = ds.images.std(axis=(0, 2, 3))
    return mean, std


def train_normalization_stats(
    train_ds: Dataset, cache_path: str | Path | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Normalization constants from the train split, cached to disk.

    Statistics come from the train split only
    and applies them to both splits; the cache avoids a full pass on
    every run.
    """
    if train_ds.split != "train":
        raise ValueError("normalization statistics must come from the train split")
    if cache_path is not None:
        cache_path = Path(cache_path)
        if cache_path.exists():
            blob = json.loads(cache_path.read_text())
            return np.asarray(blob["mean"], dtype=np.float64), np.asarray(
                blob["std"], dtype=np.float64
            )
    mean, std = channel_statistics(train_ds)
    if cache_path is not None:
        cache_path.parent.mkdir(parents=True, exist_ok=True)
        tmp = cache_path.with_suffix(cache_path.suffix + ".tmp")
        tmp.write_text(json.dumps({"mean": mean.tolist(), "std": std.tolist()}))
        tmp.replace(cache_path)
    return mean, std


def normalize(ds: Dataset, mean, std) -> Dataset:
    """Per-channel (x - mean) / std; the constants are recorded on the result."""
    mean = np.asarray(mean, dtype=np.float64).reshape(-1)
    std = np.asarray(std, dtype=np.float64).reshape(-1)
    if mean.shape[0] != ds.channels or std.shape[0] != ds.channels:
        raise ValueError(
            f"need {ds.channels} per-channel constants, got mean {mean.shape} std {std.shape}"
        )
    if np.any(std <= 0):
        raise ValueError(f"std must be positive per channel, got {std}")
    images = (ds.images - mean[None, :, None, None]) / std[None, :, None, None]
    return replace(ds, images=images, normalization=(mean, std))


def batches(ds: Dataset, batch_size: int, shuffle_seed: int, epoch: int = 0):
    """Deterministically shuffled (images, labels) minibatches.

    The permutation comes from a counter-based Philox stream keyed by
    (seed, epoch), so any epoch of any run can be regenerated in
    isolation. The final partial batch is retained.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    rng = np.random.Generator(np.random.Philox(key=(int(shuffle_seed), int(epoch))))
    order = rng.permutation(ds.count)
    for start in range(0, ds.count, batch_size):
        idx = order[start : start + batch_size]
        yield ds.images[idx], ds.labels[idx]
