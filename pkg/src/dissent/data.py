"""Dataset loading (IDX/MNIST), deterministic splits and synthetic blobs."""
import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IMAGE_MAGIC = 2051
LABEL_MAGIC = 2049


class IdxFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    split: str = "train"
    n_classes: int = 10

    def __post_init__(self):
        x = np.asarray(self.inputs, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if x.ndim != 2 or y.shape != (x.shape[0],):
            raise ValueError("inputs must be (n, d) and labels (n,)")
        if x.size and (x.min() < 0 or x.max() > 1):
            raise ValueError("inputs must lie in [0, 1]")
        if y.size and (y.min() < 0 or y.max() >= self.n_classes):
            raise ValueError(f"labels must lie in [0, {self.n_classes})")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "labels", y)

    def __len__(self):
        return self.labels.shape[0]

    def subset(self, idx, split=None):
        return Dataset(self.inputs[idx], self.labels[idx], split or self.split, self.n_classes)

    def head(self, n):
        return self.subset(slice(0, n))


def _read_bytes(path):
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        try:
            raw = gzip.decompress(raw)
        except (OSError, EOFError) as exc:
            raise IdxFormatError(f"{path}: corrupt gzip stream ({exc})") from exc
    return raw


def parse_idx_images(raw, source="<bytes>"):
    if len(raw) < 16:
        raise IdxFormatError(f"{source}: truncated image header ({len(raw)} bytes)")
    magic, count, rows, cols = struct.unpack(">4i", raw[:16])
    if magic != IMAGE_MAGIC:
        raise IdxFormatError(f"{source}: bad image magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}")
    if count < 0 or rows <= 0 or cols <= 0:
        raise IdxFormatError(f"{source}: invalid dimensions {count}x{rows}x{cols}")
    expected = count * rows * cols
    if len(raw) - 16 != expected:
        raise IdxFormatError(f"{source}: payload has {len(raw) - 16} bytes, header implies {expected}")
    return np.frombuffer(raw, dtype=np.uint8, offset=16).reshape(count, rows, cols)


def parse_idx_labels(raw, source="<bytes>"):
    if len(raw) < 8:
        raise IdxFormatError(f"{source}: truncated label header ({len(raw)} bytes)")
    magic, count = struct.unpack(">2i", raw[:8])
    if magic != LABEL_MAGIC:
        raise IdxFormatError(f"{source}: bad label magic {magic:#010x}, expected {LABEL_MAGIC:#010x}")
    if count < 0 or len(raw) - 8 != count:
        raise IdxFormatError(f"{source}: payload has {len(raw) - 8} bytes, header implies {count}")
    return np.frombuffer(raw, dtype=np.uint8, offset=8)


def load_idx(images_path, labels_path, split="train", n_classes=10):
    """Load an IDX image/label pair (optionally gzip-compressed) scaled into [0, 1]."""
    images = parse_idx_images(_read_bytes(images_path), str(images_path))
    labels = parse_idx_labels(_read_bytes(labels_path), str(labels_path))
    if images.shape[0] != labels.shape[0]:
        raise IdxFormatError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    if labels.size and labels.max() >= n_classes:
        raise IdxFormatError(f"label {labels.max()} outside [0, {n_classes})")
    x = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return Dataset(x, labels.astype(np.int64), split, n_classes)


def write_idx(images_u8, labels_u8, images_path, labels_path):
    """Write uint8 arrays as an IDX pair (used by tests and fixtures)."""
    images_u8 = np.asarray(images_u8, dtype=np.uint8)
    labels_u8 = np.asarray(labels_u8, dtype=np.uint8)
    n, rows, cols = images_u8.shape
    Path(images_path).write_bytes(struct.pack(">4i", IMAGE_MAGIC, n, rows, cols) + images_u8.tobytes())
    Path(labels_path).write_bytes(struct.pack(">2i", LABEL_MAGIC, labels_u8.shape[0]) + labels_u8.tobytes())


def _find(directory, stem):
    for name in (stem, stem + ".gz"):
        p = Path(directory) / name
        if p.exists():
            return p
    raise FileNotFoundError(f"{stem}[.gz] not found in {directory}")


def load_mnist(directory):
    """``(train, test)`` from the standard four MNIST file names in ``directory``."""
    train = load_idx(_find(directory, "train-images-idx3-ubyte"), _find(directory, "train-labels-idx1-ubyte"), "train")
    test = load_idx(_find(directory, "t10k-images-idx3-ubyte"), _find(directory, "t10k-labels-idx1-ubyte"), "test")
    return train, test


def split(dataset, val_fraction=1 / 6, seed=0):
    """Seeded shuffle, then ``(train, val)``."""
    if not 0 < val_fraction < 1:
        raise ValueError("val_fraction must lie strictly between 0 and 1")
    n = len(dataset)
    order = np.random.default_rng(seed).permutation(n)
    n_val = int(round(n * val_fraction))
    return dataset.subset(order[n_val:], "train"), dataset.subset(order[:n_val], "val")


def synth_blobs(n_per_class, n_classes=3, dim=2, separation=10.0, seed=0):
    """Gaussian blobs on a circle in the first two coordinates, clipped into [0, 1].

    Neighbouring centres sit ``separation`` standard deviations apart.
    """
    if dim < 2 or n_classes < 2:
        raise ValueError("need dim >= 2 and n_classes >= 2")
    angles = 2 * np.pi * np.arange(n_classes) / n_classes
    centers = np.full((n_classes, dim), 0.5)
    centers[:, 0] += 0.3 * np.cos(angles)
    centers[:, 1] += 0.3 * np.sin(angles)
    gap = 0.6 * np.sin(np.pi / n_classes)
    sigma = gap / separation
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(n_classes), n_per_class)
    x = centers[labels] + sigma * rng.standard_normal((labels.size, dim))
    return Dataset(np.clip(x, 0.0, 1.0), labels, "train", n_classes)
