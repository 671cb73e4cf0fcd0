import gzip
import logging
import os
import struct

import numpy as np

from src.config.config import CIFAR10_TEST_FILES, CIFAR10_TRAIN_FILES, DATA_PATH, NUM_CLASSES
from src.utils.data_utils import Dataset, stratified_subset
from src.utils.errors import DatasetError, DatasetNotFoundError

logger = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD = 1 + 3 * 32 * 32


def _resolve(path):
    # accept "foo" when only "foo.gz" is on disk
    if os.path.exists(path):
        return path
    if os.path.exists(path + ".gz"):
        return path + ".gz"
    raise DatasetNotFoundError(f"dataset file not found: {path}")


def _read_bytes(path):
    path = _resolve(path)
    opener = gzip.open if path.endswith(".gz") else open
    with opener(path, "rb") as f:
        return path, f.read()


def load_idx(images_path, labels_path, name=""):
    """
    Reads an IDX image/label pair (MNIST, Fashion-MNIST). Big-endian headers:
        images: magic 0x00000803 | count | rows | cols | count*rows*cols bytes
        labels: magic 0x00000801 | count | count bytes
    Pixels are scaled by 1/255.
    """
    images_path, raw = _read_bytes(images_path)
    if len(raw) < 16:
        raise DatasetError(f"{images_path}: truncated IDX header")
    magic, n, rows, cols = struct.unpack_from(">IIII", raw, 0)
    if magic != IDX_IMAGES_MAGIC:
        raise DatasetError(f"{images_path}: bad magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}")
    if len(raw) != 16 + n * rows * cols:
        raise DatasetError(f"{images_path}: expected {16 + n * rows * cols} bytes, found {len(raw)} (truncated file)")
    pixels = np.frombuffer(raw, dtype=np.uint8, offset=16).reshape(n, 1, rows, cols)

    labels_path, raw = _read_bytes(labels_path)
    if len(raw) < 8:
        raise DatasetError(f"{labels_path}: truncated IDX header")
    magic, n_labels = struct.unpack_from(">II", raw, 0)
    if magic != IDX_LABELS_MAGIC:
        raise DatasetError(f"{labels_path}: bad magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}")
    if len(raw) != 8 + n_labels:
        raise DatasetError(f"{labels_path}: expected {8 + n_labels} bytes, found {len(raw)} (truncated file)")
    if n_labels != n:
        raise DatasetError(f"count mismatch: {images_path} has {n} images, {labels_path} has {n_labels} labels")
    labels = np.frombuffer(raw, dtype=np.uint8, offset=8).astype(np.int64)

    logger.info(f"loaded {n} images ({rows}x{cols}) from {os.path.basename(images_path)}")
    return Dataset(pixels.astype(np.float32) / np.float32(255.0), labels, NUM_CLASSES, name=name)


def _to_bytes(images):
    return np.rint(np.asarray(images, dtype=np.float64) * 255.0).clip(0, 255).astype(np.uint8)


def save_idx(dataset, images_path, labels_path):
    """Writes a single-channel dataset back as an IDX pair."""
    N, C, H, W = dataset.images.shape
    if C != 1:
        raise DatasetError(f"IDX holds single-channel images, dataset has {C} channels")
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, N, H, W))
        f.write(_to_bytes(dataset.images).tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, N))
        f.write(dataset.labels.astype(np.uint8).tobytes())


def load_cifar10_bin(paths, name=""):
    """CIFAR-10 binary batches: records of 1 label byte + 3072 pixel bytes (R, G, B planes)."""
    if isinstance(paths, str):
        paths = [paths]
    images, labels = [], []
    for path in paths:
        path, raw = _read_bytes(path)
        if len(raw) % CIFAR_RECORD:
            raise DatasetError(f"{path}: length {len(raw)} is not a multiple of {CIFAR_RECORD}")
        records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
        labels.append(records[:, 0].astype(np.int64))
        images.append(records[:, 1:].reshape(-1, 3, 32, 32))
    pixels = np.concatenate(images) if images else np.zeros((0, 3, 32, 32), dtype=np.uint8)
    logger.info(f"loaded {len(pixels)} CIFAR-10 records from {len(paths)} file(s)")
    return Dataset(pixels.astype(np.float32) / np.float32(255.0),
                   np.concatenate(labels) if labels else np.zeros(0, dtype=np.int64),
                   NUM_CLASSES, name=name)


def save_cifar10_bin(dataset, path):
    if dataset.sample_shape != (3, 32, 32):
        raise DatasetError(f"CIFAR-10 records are 3x32x32, dataset has {dataset.sample_shape}")
    records = np.empty((len(dataset), CIFAR_RECORD), dtype=np.uint8)
    records[:, 0] = dataset.labels.astype(np.uint8)
    records[:, 1:] = _to_bytes(dataset.images).reshape(len(dataset), -1)
    with open(path, "wb") as f:
        f.write(records.tobytes())


class DataManager:
    def __init__(self, data_folder=DATA_PATH):
        self.data_folder = data_folder

    def _path(self, folder, filename):
        return filename if os.path.isabs(filename) else os.path.join(folder, filename)

    def load_splits(self, data_cfg, seed):
        """
        Loads (train, test) for the configured dataset kind, applies the
        stratified desk-scale subsets and, for CIFAR, optional per-channel standardization.
        """
        folder = data_cfg.dir or os.path.join(self.data_folder, data_cfg.kind)
        if data_cfg.kind in ("mnist", "fashion-mnist"):
            train = load_idx(self._path(folder, data_cfg.train_images), self._path(folder, data_cfg.train_labels),
                             name=f"{data_cfg.kind}-train")
            test = load_idx(self._path(folder, data_cfg.test_images), self._path(folder, data_cfg.test_labels),
                            name=f"{data_cfg.kind}-test")
        elif data_cfg.kind == "cifar10":
            train = load_cifar10_bin([self._path(folder, p) for p in (data_cfg.cifar_train or CIFAR10_TRAIN_FILES)],
                                     name="cifar10-train")
            test = load_cifar10_bin([self._path(folder, p) for p in (data_cfg.cifar_test or CIFAR10_TEST_FILES)],
                                    name="cifar10-test")
        else:
            raise DatasetError(f"unknown dataset kind {data_cfg.kind!r}")

        train = stratified_subset(train, data_cfg.subset, seed)
        test = stratified_subset(test, data_cfg.test_subset, seed)

        if data_cfg.standardize:
            mean = train.images.mean(axis=(0, 2, 3), dtype=np.float64)
            std = train.images.std(axis=(0, 2, 3), dtype=np.float64)
            train, test = train.with_stats(mean, std), test.with_stats(mean, std)
            logger.info(f"standardizing with mean={np.round(mean, 4).tolist()} std={np.round(std, 4).tolist()}")

        return train, test
