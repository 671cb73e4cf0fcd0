import logging
import os

import numpy as np

from src.core.ops import sigmoid_array
from src.utils.errors import UsageError

logger = logging.getLogger(__name__)


def extract_feature_maps(model, image, layer_index=0):
    """
    Channel images of the `layer_index`-th conv layer for one normalized image (C, H, W):
    conv output -> sigmoid -> rounded to 0..255, uint8 of shape (channels, H', W').
    Evaluated noise-free; the model is not modified.
    """
    convs = model.conv_positions()
    if not 0 <= layer_index < len(convs):
        raise UsageError(f"conv layer index {layer_index} outside [0, {len(convs)})")
    image = np.asarray(image)
    if image.ndim == 3:
        image = image[None]
    out = model.layer_output(image, convs[layer_index])[0]
    return np.rint(sigmoid_array(out.astype(np.float64)) * 255.0).astype(np.uint8)


def write_pgm(path, pixels):
    """8-bit binary PGM (P5)."""
    pixels = np.asarray(pixels, dtype=np.uint8)
    if pixels.ndim != 2:
        raise UsageError(f"PGM needs a 2-D image, got shape {pixels.shape}")
    h, w = pixels.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(pixels.tobytes())
    return path


def read_pgm(path):
    with open(path, "rb") as f:
        data = f.read()
    magic, dims, maxval, body = data.split(b"\n", 3)
    if magic != b"P5" or maxval != b"255":
        raise UsageError(f"{path}: not an 8-bit P5 PGM")
    w, h = (int(v) for v in dims.split())
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w)


def save_feature_maps(maps, out_dir, run_name, layer_index):
    """Writes {out_dir}/{run_name}/{layer_index}/{channel}.pgm; returns the paths."""
    folder = os.path.join(out_dir, run_name, str(layer_index))
    os.makedirs(folder, exist_ok=True)
    paths = [write_pgm(os.path.join(folder, f"{c}.pgm"), m) for c, m in enumerate(maps)]
    logger.info(f"wrote {len(paths)} feature maps to {folder}")
    return paths
