"""
Flat binary weights file.

    magic "ANLW" | u32 version | u32 layer count
    per layer:   u32 tensor count
    per tensor:  u32 ndim | ndim x u32 extents | little-endian float64 data

All integers are little-endian. Running batch-norm statistics are saved with
the layer they belong to.
"""
import logging
import os
import struct

import numpy as np

from src.config.config import WEIGHTS_MAGIC, WEIGHTS_VERSION
from src.utils.errors import ShapeError, WeightsError

logger = logging.getLogger(__name__)


def save_weights(model, path):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as f:
        f.write(WEIGHTS_MAGIC)
        f.write(struct.pack("<II", WEIGHTS_VERSION, len(model.layers)))
        for layer in model.layers:
            tensors = layer.state_tensors()
            f.write(struct.pack("<I", len(tensors)))
            for _, arr in tensors:
                f.write(struct.pack("<I", arr.ndim))
                f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
                f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    logger.info(f"saved weights of {model.name} to {path}")


def _read(f, n, path):
    buf = f.read(n)
    if len(buf) != n:
        raise WeightsError(f"{path}: truncated weights file")
    return buf


def load_weights(model, path):
    """Loads weights into `model` in place; the architecture must match the file exactly."""
    if not os.path.exists(path):
        raise WeightsError(f"weights file not found: {path}")
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != WEIGHTS_MAGIC:
            raise WeightsError(f"{path}: bad magic {magic!r}, expected {WEIGHTS_MAGIC!r}")
        version, n_layers = struct.unpack("<II", _read(f, 8, path))
        if version != WEIGHTS_VERSION:
            raise WeightsError(f"{path}: unsupported version {version}")
        if n_layers != len(model.layers):
            raise WeightsError(f"{path}: file has {n_layers} layers, {model.name} has {len(model.layers)}")

        for i, layer in enumerate(model.layers):
            (count,) = struct.unpack("<I", _read(f, 4, path))
            tensors = []
            for _ in range(count):
                (ndim,) = struct.unpack("<I", _read(f, 4, path))
                shape = struct.unpack(f"<{ndim}I", _read(f, 4 * ndim, path))
                size = int(np.prod(shape)) if ndim else 1
                data = np.frombuffer(_read(f, 8 * size, path), dtype="<f8").reshape(shape)
                tensors.append(data)
            try:
                layer.load_state_tensors(tensors)
            except ShapeError as e:
                raise WeightsError(f"{path}: layer {i} does not match the architecture ({e})") from e

        if f.read(1):
            raise WeightsError(f"{path}: trailing bytes after the last layer")
    logger.info(f"loaded weights for {model.name} from {path}")
    return model
