"""
Fast Gradient Sign Method, white-box: x_adv = clip(x + delta * sign(grad_x J(x, y))).

`fgsm` works on raw images in [0, 1] with delta on the 0-255 pixel scale;
`fgsm_normalized` works directly on model inputs (used by adversarial training).
"""
import logging

import numpy as np
import pandas as pd

from src.config.config import PIXEL_SCALE
from src.core.tensor import Tape
from src.nn.functional import softmax_cross_entropy
from src.training.evaluation import error_and_loss, predict_normalized
from src.utils.errors import UsageError

logger = logging.getLogger(__name__)


def input_gradient(model, x, y, train=False, rng=None):
    """dJ/dx for a batch of normalized inputs. Training mode never touches running statistics."""
    tape = Tape()
    res = model.forward(tape, np.asarray(x, dtype=model.dtype), train=train, rng=rng, update_stats=False)
    loss = softmax_cross_entropy(tape, res.logits, y)
    grads = tape.backward(loss)
    return grads[res.input], float(loss.value)


def fgsm_normalized(model, x, y, step, lo, hi, train=False, rng=None):
    """One signed-gradient step of size `step` (normalized units), clipped to [lo, hi]."""
    if np.any(np.asarray(step) < 0):
        raise UsageError("FGSM step must be >= 0")
    g, _ = input_gradient(model, x, y, train=train, rng=rng)
    return np.clip(x + step * np.sign(g), lo, hi).astype(x.dtype, copy=False)


def fgsm(model, images, labels, delta, dataset):
    """
    Adversarial versions of raw images in [0, 1]. `delta` is in 0-255 pixel units;
    the gradient sign w.r.t. the normalized input equals the sign w.r.t. raw pixels.
    """
    if delta < 0:
        raise UsageError(f"FGSM delta must be >= 0, got {delta}")
    g, _ = input_gradient(model, dataset.normalize(images, model.dtype), labels)
    adv = np.clip(images + (delta / PIXEL_SCALE) * np.sign(g), 0.0, 1.0)
    return adv.astype(images.dtype, copy=False)


def robustness_sweep(model, dataset, deltas, batch_size=256):
    """Accuracy (%) and mean loss on FGSM examples crafted against `model` itself, per delta."""
    deltas = [float(d) for d in deltas]
    if deltas != sorted(deltas):
        raise UsageError(f"deltas must be sorted ascending, got {deltas}")
    rows = []
    for delta in deltas:
        logits = []
        for start in range(0, len(dataset), batch_size):
            images = dataset.images[start:start + batch_size]
            labels = dataset.labels[start:start + batch_size]
            adv = fgsm(model, images, labels, delta, dataset) if delta > 0 else images
            logits.append(predict_normalized(model, adv, dataset, batch_size))
        err, loss = error_and_loss(np.concatenate(logits), dataset.labels)
        rows.append({"delta": delta, "accuracy_pct": 100.0 - err, "mean_loss": loss})
        logger.info(f"FGSM delta={delta:g}: accuracy {100.0 - err:.2f}%")
    return pd.DataFrame(rows, columns=["delta", "accuracy_pct", "mean_loss"])
