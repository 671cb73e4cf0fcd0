import logging

import numpy as np

from src.utils.errors import ShapeError, UsageError

logger = logging.getLogger(__name__)


class ClassGradCache:
    """
    Per-hook, per-class single-sample gradients G_t^c for CANL.
    Entries start at zero; a zero entry means the (hook, class) pair was never written.
    """

    def __init__(self, num_classes, hook_shapes=None, dtype=np.float64):
        self.num_classes = num_classes
        self.dtype = dtype
        self.store = {}
        for hook, shape in (hook_shapes or {}).items():
            self.register(hook, shape)

    def register(self, hook, sample_shape):
        sample_shape = tuple(sample_shape)
        if hook in self.store:
            if self.store[hook].shape[1:] != sample_shape:
                raise ShapeError(f"hook {hook} registered with shape {self.store[hook].shape[1:]}, got {sample_shape}")
            return
        self.store[hook] = np.zeros((self.num_classes,) + sample_shape, dtype=self.dtype)

    def _check_class(self, c):
        if not 0 <= c < self.num_classes:
            raise UsageError(f"class {c} out of range [0, {self.num_classes})")

    def update(self, hook, c, grad):
        """Replaces (not averages) the cached gradient for (hook, c)."""
        self._check_class(c)
        grad = np.asarray(grad)
        if hook not in self.store:
            self.register(hook, grad.shape)
        if grad.shape != self.store[hook].shape[1:]:
            raise ShapeError(f"hook {hook} caches shape {self.store[hook].shape[1:]}, got {grad.shape}")
        self.store[hook][c] = grad

    def entry(self, hook, c):
        self._check_class(c)
        return self.store[hook][c]

    def lookup(self, hook, labels):
        """Stacks G_t^{y_i} for every label into a batch tensor."""
        labels = np.asarray(labels, dtype=np.int64)
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise UsageError(f"labels must lie in [0, {self.num_classes})")
        return self.store[hook][labels]

    def is_cold(self, hook, c):
        return not np.any(self.entry(hook, c))


class LatCache:
    """Per-hook gradients of the previous batch for LAT."""

    def __init__(self):
        self.store = {}

    def save(self, hook, grad):
        self.store[hook] = np.array(grad, copy=True)

    def fetch(self, hook, batch_size):
        """
        Previous-batch gradient fitted to `batch_size` along axis 0:
        truncated when the old batch was larger, cyclically tiled when smaller.
        None when nothing has been stored yet.
        """
        prev = self.store.get(hook)
        if prev is None:
            return None
        if len(prev) == batch_size:
            return prev
        return np.take(prev, np.arange(batch_size) % len(prev), axis=0)
