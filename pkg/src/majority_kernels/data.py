"""Datasets: CIFAR-10 binary batches, synthetic Gaussian blobs, batching."""
from __future__ import annotations

import logging
import os
import tarfile
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numeric import ContractError, RngStream

log = logging.getLogger(__name__)

CIFAR_RECORD_BYTES = 1 + 3072
CIFAR_TRAIN_FILES = [f"data_batch_{i}.bin" for i in range(1, 6)]
CIFAR_TEST_FILE = "test_batch.bin"
CIFAR_URL = "https://www.cs.toronto.edu/~kriz/cifar-10-binary.tar.gz"
DATA_DIR_ENV = "MK_DATA_DIR"


class DataError(ValueError):
    """Missing, truncated or corrupt dataset files."""


@dataclass
class Dataset:
    features: np.ndarray  # (examples, input_dim) float64
    labels: np.ndarray  # (examples,) int64
    name: str
    split: str
    num_classes: int

    def __post_init__(self):
        if self.features.shape[0] != self.labels.shape[0]:
            raise ContractError(
                f"{self.name}/{self.split}: {self.features.shape[0]} rows but {self.labels.shape[0]} labels"
            )
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ContractError(f"{self.name}/{self.split}: labels outside [0, {self.num_classes})")

    def __len__(self):
        return self.labels.shape[0]

    @property
    def input_dim(self) -> int:
        return self.features.shape[1]


@dataclass
class DataSplits:
    train: Dataset
    val: Dataset
    test: Dataset
    mean: np.ndarray  # standardization statistics from the train split
    std: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def input_dim(self) -> int:
        return self.train.input_dim

    @property
    def num_classes(self) -> int:
        return self.train.num_classes


# -- CIFAR-10 ----------------------------------------------------------------

def parse_cifar_bytes(raw: bytes, source: str = "<bytes>") -> tuple:
    """Split raw records into (labels uint8 (N,), pixels uint8 (N, 3072))."""
    if len(raw) == 0 or len(raw) % CIFAR_RECORD_BYTES:
        raise DataError(
            f"{source}: size {len(raw)} is not a positive multiple of {CIFAR_RECORD_BYTES} bytes"
        )
    records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD_BYTES)
    labels = records[:, 0].copy()
    if labels.max() > 9:
        bad = int(np.argmax(labels > 9))
        raise DataError(f"{source}: record {bad} has label byte {labels[bad]} > 9 (corrupt data)")
    return labels, records[:, 1:].copy()


def serialize_cifar(labels, pixels) -> bytes:
    labels = np.asarray(labels, dtype=np.uint8).reshape(-1, 1)
    pixels = np.asarray(pixels, dtype=np.uint8).reshape(labels.shape[0], 3072)
    return np.hstack([labels, pixels]).tobytes()


def read_cifar_file(path, expected_records: int | None = None) -> tuple:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except FileNotFoundError:
        raise DataError(f"missing CIFAR-10 file: {path}") from None
    labels, pixels = parse_cifar_bytes(raw, str(path))
    if expected_records is not None and len(labels) != expected_records:
        raise DataError(f"{path}: {len(labels)} records, expected {expected_records}")
    return labels, pixels


def default_data_dir() -> Path:
    return Path(os.environ.get(DATA_DIR_ENV, "data/cifar-10-batches-bin"))


def standardize(pixels, mean, std) -> np.ndarray:
    """Scale bytes to [0, 1] then apply per-dimension train statistics."""
    x = np.asarray(pixels, dtype=np.float64) / 255.0
    x -= mean
    x /= std
    return x


def load_cifar10(
    path=None, val_size: int = 5000, split_seed: int = 0, strict: bool = True
) -> DataSplits:
    """Load the six binary batches and split off a validation set.

    The validation set is the last ``val_size`` examples of the training
    records shuffled with a fixed seed. With ``strict`` every file must hold
    exactly 10,000 records; fixtures pass ``strict=False``.
    """
    root = Path(path) if path is not None else default_data_dir()
    expected = 10000 if strict else None
    parts = [read_cifar_file(root / name, expected) for name in CIFAR_TRAIN_FILES]
    y_all = np.concatenate([p[0] for p in parts])
    x_all = np.concatenate([p[1] for p in parts])
    y_test, x_test = read_cifar_file(root / CIFAR_TEST_FILE, expected)
    if not 0 <= val_size < len(y_all):
        raise ContractError(f"val_size {val_size} must be in [0, {len(y_all)})")

    order = RngStream(split_seed).child("cifar10-split").permutation(len(y_all))
    train_idx, val_idx = order[: len(order) - val_size], order[len(order) - val_size :]

    x_train = x_all[train_idx].astype(np.float64) / 255.0
    mean = x_train.mean(axis=0)
    std = x_train.std(axis=0)
    std[std == 0.0] = 1.0
    x_train -= mean
    x_train /= std

    def make(x, y, split):
        return Dataset(x, y.astype(np.int64), "cifar10", split, 10)

    return DataSplits(
        make(x_train, y_all[train_idx], "train"),
        make(standardize(x_all[val_idx], mean, std), y_all[val_idx], "val"),
        make(standardize(x_test, mean, std), y_test, "test"),
        mean,
        std,
        {
            "dataset": "cifar10",
            "path": str(root),
            "preprocessing": "pixels/255, per-dimension standardization from train split",
            "val_size": val_size,
            "split_seed": split_seed,
            "train_indices_head": train_idx[:5].tolist(),
        },
    )


def fetch_cifar10(dest=None, url: str = CIFAR_URL) -> Path:
    """Download and unpack the binary CIFAR-10 archive; returns the batch directory."""
    dest = Path(dest) if dest is not None else default_data_dir().parent
    dest.mkdir(parents=True, exist_ok=True)
    archive = dest / "cifar-10-binary.tar.gz"
    if not archive.exists():
        log.info("downloading %s", url)
        urllib.request.urlretrieve(url, archive)
    with tarfile.open(archive) as tar:
        tar.extractall(dest, filter="data")
    return dest / "cifar-10-batches-bin"


# -- synthetic data ----------------------------------------------------------

def make_blobs(
    rng: RngStream,
    classes: int,
    per_class: int,
    dim: int,
    separation: float,
    name: str = "blobs",
    split: str = "train",
) -> Dataset:
    """Unit-variance Gaussian clusters whose centers are ``separation`` apart.

    Centers are scaled axis directions (random unit directions when
    ``classes > dim``) multiplied by ``separation / sqrt(2)``, so axis
    centers sit exactly ``separation`` apart.
    """
    if classes < 2:
        raise ContractError("make_blobs: need at least 2 classes")
    if separation <= 0:
        raise ContractError("make_blobs: separation must be > 0")
    if per_class < 1:
        raise ContractError("make_blobs: empty dataset (per_class must be >= 1)")
    centers = _blob_centers(classes, dim, separation)
    labels = np.repeat(np.arange(classes), per_class)
    x = centers[labels] + rng.child("noise").normal((len(labels), dim))
    order = rng.child("order").permutation(len(labels))
    return Dataset(x[order], labels[order].astype(np.int64), name, split, classes)


def _blob_centers(classes: int, dim: int, separation: float) -> np.ndarray:
    scale = separation / np.sqrt(2.0)
    if classes <= dim:
        return np.eye(classes, dim) * scale
    dirs = RngStream(0).child("blob-centers").normal((classes, dim))
    return dirs / np.linalg.norm(dirs, axis=1, keepdims=True) * scale


def make_blob_splits(
    seed: int,
    classes: int = 2,
    dim: int = 10,
    separation: float = 10.0,
    train_per_class: int = 200,
    val_per_class: int = 50,
    test_per_class: int = 50,
) -> DataSplits:
    rng = RngStream(seed).child("blobs")
    make = lambda split, count: make_blobs(rng.child(split), classes, count, dim, separation, split=split)
    return DataSplits(
        make("train", train_per_class),
        make("val", val_per_class),
        make("test", test_per_class),
        np.zeros(dim),
        np.ones(dim),
        {"dataset": "blobs", "classes": classes, "dim": dim, "separation": separation, "seed": seed},
    )


# -- batching ----------------------------------------------------------------

class BatchIterator:
    """Endless stream of index batches; each epoch is a fresh seeded permutation.

    Every index appears exactly once per epoch; the last batch of an epoch
    may be short.
    """

    def __init__(self, size: int, batch_size: int, rng: RngStream):
        if size < 1:
            raise ContractError("cannot batch an empty dataset")
        if batch_size < 1:
            raise ContractError("batch_size must be >= 1")
        self.size = size
        self.batch_size = batch_size
        self.rng = rng
        self.epoch = 0
        self._order = None
        self._pos = 0

    def __iter__(self):
        return self

    def __next__(self) -> np.ndarray:
        if self._order is None or self._pos >= self.size:
            self._order = self.rng.permutation(self.size)
            self._pos = 0
            self.epoch += 1
        idx = self._order[self._pos : self._pos + self.batch_size]
        self._pos += self.batch_size
        return idx

    def steps_per_epoch(self) -> int:
        return -(-self.size // self.batch_size)
