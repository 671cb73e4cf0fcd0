import numpy as np

from src.nn.functional import log_softmax
from src.utils.errors import DatasetError


def predict_normalized(model, images, dataset, batch_size=256):
    """Eval-mode logits for raw [0, 1] images, normalized with the dataset constants."""
    return model.predict(dataset.normalize(images, model.dtype), batch_size)


def error_and_loss(logits, labels):
    labels = np.asarray(labels, dtype=np.int64)
    logp = log_softmax(np.asarray(logits, dtype=np.float64))
    err = 100.0 * float(np.mean(logits.argmax(axis=1) != labels))
    loss = float(-logp[np.arange(len(labels)), labels].mean())
    return err, loss


def evaluate(model, dataset, batch_size=256):
    """Top-1 error (%) and mean cross-entropy of `model` on `dataset`, eval mode."""
    if len(dataset) == 0:
        raise DatasetError(f"cannot evaluate on an empty dataset {dataset.name!r}")
    logits = predict_normalized(model, dataset.images, dataset, batch_size)
    return error_and_loss(logits, dataset.labels)
