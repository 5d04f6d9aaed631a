"""IDX dataset loading, validation splits and average-pool downscaling."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Dataset:
    images: np.ndarray  # (n, side*side) floats in [0, 1]
    labels: np.ndarray  # (n,) ints
    num_classes: int
    side: int

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        images = np.asarray(self.images, dtype=np.float64).reshape(-1, self.side * self.side)
        if images.shape[0] != labels.shape[0]:
            raise ValueError("images and labels differ in length")
        if images.size and (images.min() < 0.0 or images.max() > 1.0):
            raise ValueError("pixel values must lie in [0, 1]")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise ValueError("label out of range")
        images.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def dim(self) -> int:
        return self.side * self.side

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.images[idx], self.labels[idx], self.num_classes, self.side)


@dataclass(frozen=True)
class Splits:
    train: Dataset
    validation: Dataset
    test: Dataset


def _read_idx(path, magic: int) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise IdxFormatError(f"{path}: truncated header")
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        raise IdxFormatError(f"{path}: bad magic 0x{found:08x}, expected 0x{magic:08x}")
    ndim = found & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxFormatError(f"{path}: truncated header")
    shape = struct.unpack(">" + "I" * ndim, raw[4:header])
    count = int(np.prod(shape))
    if len(raw) - header != count:
        raise IdxFormatError(
            f"{path}: expected {count} data bytes, found {len(raw) - header}"
        )
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(shape)


def load_idx(images_path, labels_path, num_classes: int = 10) -> Dataset:
    """Read an IDX image/label pair, scaling bytes to [0, 1]."""
    images = _read_idx(images_path, IMAGES_MAGIC)
    labels = _read_idx(labels_path, LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise IdxFormatError(
            f"count mismatch: {images.shape[0]} images vs {labels.shape[0]} labels"
        )
    if images.shape[1] != images.shape[2]:
        raise IdxFormatError("only square images are supported")
    side = int(images.shape[1])
    flat = images.reshape(images.shape[0], side * side).astype(np.float64) / 255.0
    return Dataset(flat, labels.astype(np.int64), num_classes, side)


def save_idx(dataset: Dataset, images_path, labels_path) -> None:
    n, side = len(dataset), dataset.side
    pixels = np.rint(dataset.images * 255.0).astype(np.uint8).reshape(n, side, side)
    Path(images_path).write_bytes(struct.pack(">IIII", IMAGES_MAGIC, n, side, side) + pixels.tobytes())
    Path(labels_path).write_bytes(
        struct.pack(">II", LABELS_MAGIC, n) + dataset.labels.astype(np.uint8).tobytes()
    )


def make_splits(dataset: Dataset, val_fraction: float, seed: int, test: Dataset | None = None) -> Splits:
    """Seeded shuffle of ``dataset`` into train and validation parts.

    ``test`` is passed through untouched; when omitted it is empty.
    """
    if not 0.0 < val_fraction < 1.0:
        raise ValueError("val_fraction must lie strictly between 0 and 1")
    n = len(dataset)
    if n == 0:
        raise ValueError("cannot split an empty dataset")
    n_val = int(round(n * val_fraction))
    if n_val < 1 or n_val >= n:
        raise ValueError(f"val_fraction {val_fraction} leaves an empty part of {n} items")
    order = np.random.default_rng(seed).permutation(n)
    if test is None:
        test = dataset.subset([])
    return Splits(dataset.subset(order[n_val:]), dataset.subset(order[:n_val]), test)


def downscale(dataset: Dataset, factor: int) -> Dataset:
    """Non-overlapping ``factor`` x ``factor`` average pooling."""
    if factor < 1 or dataset.side % factor:
        raise ValueError(f"side {dataset.side} is not divisible by {factor}")
    if factor == 1:
        return dataset
    s = dataset.side // factor
    imgs = dataset.images.reshape(len(dataset), s, factor, s, factor).mean(axis=(2, 4))
    return Dataset(np.clip(imgs.reshape(len(dataset), s * s), 0.0, 1.0), dataset.labels, dataset.num_classes, s)


def digits_dataset() -> Dataset:
    """scikit-learn's bundled 8x8 digits, quantised to bytes as an IDX file would hold them."""
    from sklearn.datasets import load_digits

    d = load_digits()
    pixels = np.rint(d.data * (255.0 / 16.0)) / 255.0
    return Dataset(pixels, d.target.astype(np.int64), 10, 8)


def write_digits_idx(out_dir, n_test: int = 400) -> dict:
    """Write the digits set as IDX train/test files; returns the four paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    full = digits_dataset()
    n = len(full)
    paths = {
        "train_images": out / "train-images-idx3-ubyte",
        "train_labels": out / "train-labels-idx1-ubyte",
        "test_images": out / "t10k-images-idx3-ubyte",
        "test_labels": out / "t10k-labels-idx1-ubyte",
    }
    save_idx(full.subset(range(n - n_test)), paths["train_images"], paths["train_labels"])
    save_idx(full.subset(range(n - n_test, n)), paths["test_images"], paths["test_labels"])
    return {k: str(v) for k, v in paths.items()}
