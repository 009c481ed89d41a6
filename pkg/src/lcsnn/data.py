"""IDX dataset loading and image preprocessing.

Handles the classic IDX container used by MNIST/EMNIST (optionally gzip
compressed), center cropping, and pixel-intensity -> firing-rate scaling.
"""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801

# standard file names, per dataset and split
_SPLIT_FILES = {
    ("mnist", "train"): ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    ("mnist", "test"): ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
    ("emnist-letters", "train"): (
        "emnist-letters-train-images-idx3-ubyte",
        "emnist-letters-train-labels-idx1-ubyte",
    ),
    ("emnist-letters", "test"): (
        "emnist-letters-test-images-idx3-ubyte",
        "emnist-letters-test-labels-idx1-ubyte",
    ),
}


class IdxFormatError(ValueError):
    """Malformed IDX container (bad magic, truncated payload, bad dims)."""


class DatasetConsistencyError(ValueError):
    """Image and label files disagree (e.g. different example counts)."""


@dataclass
class Dataset:
    """An image classification dataset held fully in memory.

    images are (n, h, w) uint8 grids in row-major pixel order; labels are
    class indices in [0, n_classes).
    """

    images: np.ndarray
    labels: np.ndarray
    n_classes: int
    split: str

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise DatasetConsistencyError(
                f"{len(self.images)} images vs {len(self.labels)} labels"
            )
        if len(self.labels) and int(self.labels.max()) >= self.n_classes:
            raise DatasetConsistencyError(
                f"label {int(self.labels.max())} out of range for "
                f"{self.n_classes} classes"
            )

    def __len__(self) -> int:
        return len(self.images)

    @property
    def image_shape(self) -> tuple[int, int]:
        return self.images.shape[1], self.images.shape[2]

    def subset(self, n: int) -> "Dataset":
        """First-n prefix, used by --limit."""
        return Dataset(self.images[:n], self.labels[:n], self.n_classes, self.split)


def _read_full(path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":  # gzip magic
        raw = gzip.decompress(raw)
    return raw


def load_idx(
    images_path,
    labels_path,
    *,
    transpose: bool = False,
    label_offset: int = 0,
    n_classes: int | None = None,
    split: str = "train",
) -> Dataset:
    """Load an IDX image/label file pair (gzip transparently supported).

    transpose flips each image's rows/columns; EMNIST stores its pixels
    transposed relative to MNIST orientation. label_offset is subtracted
    from every stored label (EMNIST letters are 1-based on disk).
    """
    raw = _read_full(images_path)
    if len(raw) < 16:
        raise IdxFormatError(f"{images_path}: truncated header")
    magic, n, h, w = struct.unpack(">IIII", raw[:16])
    if magic != IMAGES_MAGIC:
        raise IdxFormatError(f"{images_path}: bad magic {magic:#010x}")
    if len(raw) != 16 + n * h * w:
        raise IdxFormatError(
            f"{images_path}: payload is {len(raw) - 16} bytes, expected {n * h * w}"
        )
    images = np.frombuffer(raw, dtype=np.uint8, offset=16).reshape(n, h, w)

    raw = _read_full(labels_path)
    if len(raw) < 8:
        raise IdxFormatError(f"{labels_path}: truncated header")
    magic, n_labels = struct.unpack(">II", raw[:8])
    if magic != LABELS_MAGIC:
        raise IdxFormatError(f"{labels_path}: bad magic {magic:#010x}")
    if len(raw) != 8 + n_labels:
        raise IdxFormatError(
            f"{labels_path}: payload is {len(raw) - 8} bytes, expected {n_labels}"
        )
    labels = np.frombuffer(raw, dtype=np.uint8, offset=8).astype(np.int64)

    if n != n_labels:
        raise DatasetConsistencyError(f"{n} images but {n_labels} labels")

    if transpose:
        images = images.transpose(0, 2, 1).copy()
    if label_offset:
        labels = labels - label_offset
    if n_classes is None:
        n_classes = int(labels.max()) + 1 if len(labels) else 0
    return Dataset(images, labels, n_classes, split)


def load_split(data_dir, name: str, split: str) -> Dataset:
    """Load a named dataset split from a directory of standard IDX files.

    Accepts plain or .gz files. name is "mnist" or "emnist-letters".
    """
    key = (name, split)
    if key not in _SPLIT_FILES:
        raise ValueError(f"unknown dataset/split {name}/{split}")
    data_dir = Path(data_dir)
    paths = []
    for stem in _SPLIT_FILES[key]:
        plain, gz = data_dir / stem, data_dir / (stem + ".gz")
        if plain.exists():
            paths.append(plain)
        elif gz.exists():
            paths.append(gz)
        else:
            raise FileNotFoundError(f"missing {plain} (or .gz)")
    if name == "emnist-letters":
        return load_idx(
            paths[0], paths[1], transpose=True, label_offset=1, n_classes=26,
            split=split,
        )
    return load_idx(paths[0], paths[1], n_classes=10, split=split)


def write_idx(images: np.ndarray, labels: np.ndarray, images_path, labels_path):
    """Write an IDX image/label pair (gzipped when paths end in .gz).

    Tooling for tests and synthetic datasets; inverse of load_idx.
    """
    images = np.ascontiguousarray(images, dtype=np.uint8)
    labels = np.ascontiguousarray(labels, dtype=np.uint8)
    n, h, w = images.shape
    img_blob = struct.pack(">IIII", IMAGES_MAGIC, n, h, w) + images.tobytes()
    lbl_blob = struct.pack(">II", LABELS_MAGIC, len(labels)) + labels.tobytes()
    for path, blob in ((images_path, img_blob), (labels_path, lbl_blob)):
        path = Path(path)
        if path.suffix == ".gz":
            blob = gzip.compress(blob, mtime=0)
        path.write_bytes(blob)


def center_crop(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Centered out_h x out_w sub-grid; odd margins lose the bottom/right edge."""
    h, w = image.shape
    if out_h > h or out_w > w:
        raise ValueError(f"crop {out_h}x{out_w} larger than image {h}x{w}")
    r0 = (h - out_h) // 2
    c0 = (w - out_w) // 2
    return image[r0 : r0 + out_h, c0 : c0 + out_w]


def crop_dataset(dataset: Dataset, out_h: int, out_w: int) -> Dataset:
    """Center-crop every image; same margin arithmetic as center_crop."""
    n, h, w = dataset.images.shape
    if out_h > h or out_w > w:
        raise ValueError(f"crop {out_h}x{out_w} larger than image {h}x{w}")
    r0 = (h - out_h) // 2
    c0 = (w - out_w) // 2
    images = dataset.images[:, r0 : r0 + out_h, c0 : c0 + out_w]
    return Dataset(images, dataset.labels, dataset.n_classes, dataset.split)


def scale_intensity(image: np.ndarray, factor: float) -> np.ndarray:
    """Pixel values -> Poisson firing rates in Hz (value * factor)."""
    if factor <= 0:
        raise ValueError("intensity factor must be positive")
    return image.astype(np.float64) * factor
