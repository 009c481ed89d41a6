"""Shared fixtures: real MNIST (skipped when absent) and a synthetic corpus.

The synthetic dataset mimics the MNIST file layout so the same loading
path is exercised, but is small and learnable in a few dozen
presentations; most integration tests run on it so the suite stays fast
without the real data.
"""
from pathlib import Path

import numpy as np
import pytest

from lcsnn.config import RunConfig
from lcsnn.data import Dataset, crop_dataset, load_split, write_idx

REPO_ROOT = Path(__file__).resolve().parent.parent
MNIST_DIR = REPO_ROOT / "data" / "mnist"


def tiny_config(**overrides) -> RunConfig:
    """A configuration small enough to train in well under a second."""
    base = dict(
        arch="lc", k=12, s=8, n_filters=2, crop=20, c_norm=45.0,
        present_ms=20.0, estimate_every=10, estimate_size=5, refit_size=10,
        seed=1,
    )
    base.update(overrides)
    return RunConfig(**base)


def _mnist_dir() -> Path:
    import os

    return Path(os.environ.get("LCSNN_MNIST_DIR", MNIST_DIR))


def require_mnist() -> Path:
    path = _mnist_dir()
    if not (
        (path / "train-images-idx3-ubyte").exists()
        or (path / "train-images-idx3-ubyte.gz").exists()
    ):
        pytest.skip(f"MNIST not found under {path} (see scripts/fetch_mnist.py)")
    return path


@pytest.fixture(scope="session")
def mnist_train() -> Dataset:
    return load_split(require_mnist(), "mnist", "train")


@pytest.fixture(scope="session")
def mnist_test() -> Dataset:
    return load_split(require_mnist(), "mnist", "test")


def make_synthetic_images(n: int, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Three high-contrast 28x28 patterns plus pixel noise.

    Class 0 is a vertical bar, class 1 a horizontal bar, class 2 a filled
    square; bright enough that a few filters separate them quickly.
    """
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 3, size=n)
    images = np.zeros((n, 28, 28), dtype=np.uint8)
    for i, label in enumerate(labels):
        canvas = np.zeros((28, 28), dtype=np.float64)
        if label == 0:
            canvas[4:24, 12:16] = 255.0
        elif label == 1:
            canvas[12:16, 4:24] = 255.0
        else:
            canvas[9:19, 9:19] = 255.0
        canvas += rng.normal(0.0, 8.0, size=canvas.shape)
        images[i] = np.clip(canvas, 0, 255).astype(np.uint8)
    return images, labels.astype(np.int64)


@pytest.fixture(scope="session")
def synthetic_dataset() -> Dataset:
    images, labels = make_synthetic_images(90)
    return Dataset(images, labels, n_classes=3, split="train")


@pytest.fixture(scope="session")
def synthetic_data_dir(tmp_path_factory) -> Path:
    """A directory shaped like an MNIST download, holding synthetic digits."""
    root = tmp_path_factory.mktemp("idx")
    train_images, train_labels = make_synthetic_images(90, seed=0)
    test_images, test_labels = make_synthetic_images(45, seed=1)
    write_idx(
        train_images, train_labels,
        root / "train-images-idx3-ubyte", root / "train-labels-idx1-ubyte",
    )
    write_idx(
        test_images, test_labels,
        root / "t10k-images-idx3-ubyte", root / "t10k-labels-idx1-ubyte",
    )
    return root


@pytest.fixture(scope="session")
def cropped_synthetic(synthetic_dataset) -> Dataset:
    return crop_dataset(synthetic_dataset, 20, 20)
