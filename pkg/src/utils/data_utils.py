import logging
from dataclasses import dataclass, field

import numpy as np
from sklearn.model_selection import train_test_split

from src.utils.errors import ConfigError, DatasetError, ShapeError

logger = logging.getLogger(__name__)


@dataclass
class Dataset:
    """
    images: (N, C, H, W) in [0, 1] (raw bytes / 255), labels: (N,) class ids.
    mean/std are the per-channel constants applied by `normalize`; plain 1/255
    scaling keeps them at 0 and 1.
    """
    images: np.ndarray
    labels: np.ndarray
    num_classes: int = 10
    mean: np.ndarray = None
    std: np.ndarray = None
    name: str = ""

    def __post_init__(self):
        if self.images.ndim != 4:
            raise ShapeError(f"images must be (N, C, H, W), got {self.images.shape}")
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.images) != len(self.labels):
            raise DatasetError(f"{self.name or 'dataset'}: {len(self.images)} images but {len(self.labels)} labels")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DatasetError(f"{self.name or 'dataset'}: labels outside [0, {self.num_classes})")
        C = self.images.shape[1]
        self.mean = np.zeros(C) if self.mean is None else np.asarray(self.mean, dtype=np.float64)
        self.std = np.ones(C) if self.std is None else np.asarray(self.std, dtype=np.float64)

    def __len__(self):
        return len(self.labels)

    @property
    def sample_shape(self):
        return tuple(self.images.shape[1:])

    def _bshape(self):
        return (1, self.images.shape[1], 1, 1)

    def normalize(self, x, dtype=np.float64):
        return ((x - self.mean.reshape(self._bshape())) / self.std.reshape(self._bshape())).astype(dtype, copy=False)

    def bounds(self):
        """Valid input range [0, 1] expressed in normalized units, per channel."""
        lo = (0.0 - self.mean) / self.std
        hi = (1.0 - self.mean) / self.std
        return lo.reshape(self._bshape()), hi.reshape(self._bshape())

    def subset(self, indices, name=None):
        indices = np.asarray(indices)
        return Dataset(self.images[indices], self.labels[indices], self.num_classes,
                       self.mean, self.std, name or self.name)

    def with_stats(self, mean, std):
        return Dataset(self.images, self.labels, self.num_classes, mean, std, self.name)


def stratified_subset(dataset, n, seed):
    """Class-stratified subset of size n, original order preserved. n <= 0 or n >= N keeps everything."""
    if n <= 0 or n >= len(dataset):
        return dataset
    try:
        idx, _ = train_test_split(np.arange(len(dataset)), train_size=n, stratify=dataset.labels, random_state=seed)
    except ValueError as e:
        raise ConfigError(f"cannot draw a stratified subset of {n} from {dataset.name} "
                          f"({len(dataset)} samples, {dataset.num_classes} classes): {e}") from e
    return dataset.subset(np.sort(idx), name=f"{dataset.name}[{n}]")


def split_validation(dataset, fraction, seed):
    """Holds out `fraction` of the data (stratified, seeded) as a validation set."""
    if fraction <= 0:
        return dataset, None
    try:
        train_idx, val_idx = train_test_split(np.arange(len(dataset)), test_size=fraction,
                                              stratify=dataset.labels, random_state=seed)
    except ValueError as e:
        raise ConfigError(f"cannot hold out a stratified {fraction:g} validation split of {dataset.name} "
                          f"({len(dataset)} samples): {e}") from e
    return dataset.subset(np.sort(train_idx)), dataset.subset(np.sort(val_idx), name=f"{dataset.name}-val")


@dataclass(frozen=True)
class AugmentFlags:
    hflip: bool = False
    pad_crop: bool = False
    pad: int = 4
    crop_size: tuple = field(default=None)

    @property
    def any(self):
        return self.hflip or self.pad_crop


def hflip(images, coins):
    """Mirrors images[i] horizontally where coins[i] is true."""
    out = images.copy()
    out[coins] = out[coins][..., ::-1]
    return out


def pad_crop(images, offsets, pad=4):
    """Zero-pads every image by `pad` and crops back to the original size at offsets[i] = (dy, dx)."""
    N, C, H, W = images.shape
    padded = np.pad(images, [(0, 0), (0, 0), (pad, pad), (pad, pad)], "constant")
    out = np.empty_like(images)
    for i, (dy, dx) in enumerate(offsets):
        out[i] = padded[i, :, dy:dy + H, dx:dx + W]
    return out


def augment(images, flags, rng):
    """Random horizontal flip (p=0.5) and/or pad-and-crop, independently per image."""
    if not flags.any:
        return images
    N, _, H, W = images.shape
    if flags.pad_crop and flags.crop_size is not None and tuple(flags.crop_size) != (H, W):
        raise ShapeError(f"pad_crop configured for {tuple(flags.crop_size)} images, got {H}x{W}")
    if flags.hflip:
        images = hflip(images, rng.random(N) < 0.5)
    if flags.pad_crop:
        offsets = rng.integers(0, 2 * flags.pad + 1, size=(N, 2))
        images = pad_crop(images, offsets, flags.pad)
    return images


def batch_iterator(dataset, batch_size, seed=0, epoch=0, shuffle=True):
    """
    Yields (images, labels) batches. The permutation depends only on (seed, epoch);
    the last short batch is included.
    """
    if batch_size < 1:
        raise ValueError(f"batch size must be >= 1, got {batch_size}")
    n = len(dataset)
    order = np.random.default_rng([seed, epoch]).permutation(n) if shuffle else np.arange(n)
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        yield dataset.images[idx], dataset.labels[idx]
