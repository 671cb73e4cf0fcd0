"""
Gradient cosine similarity between samples of a reference class and every other class.

Gradients are taken w.r.t. a hook activation in eval mode, where each sample's
hook gradient only depends on that sample.
"""
import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from src.core.tensor import Tape
from src.nn.functional import softmax_cross_entropy
from src.utils.errors import DatasetError, ShapeError, UsageError

logger = logging.getLogger(__name__)


def _max_normalize(g):
    peak = np.max(np.abs(g))
    if peak == 0:
        raise UsageError("cosine similarity is undefined for a zero tensor")
    return g / peak


def cosine_similarity(g_a, g_b):
    """phi = <a, b> / (|a|_2 |b|_2) after scaling each tensor by its max norm."""
    a = np.asarray(g_a, dtype=np.float64)
    b = np.asarray(g_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"cosine similarity needs equal shapes, got {a.shape} and {b.shape}")
    a, b = _max_normalize(a).ravel(), _max_normalize(b).ravel()
    phi = float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))
    return min(1.0, max(-1.0, phi))


def hook_gradients(model, x, labels, hook_id, batch_size=256):
    """Per-sample dJ/dh at hook `hook_id` for normalized inputs `x` (eval mode)."""
    if hook_id not in {h.id for h in model.hooks}:
        raise UsageError(f"model {model.name} has no hook {hook_id}")
    chunks = []
    for start in range(0, len(x), batch_size):
        tape = Tape()
        res = model.forward(tape, x[start:start + batch_size])
        loss = softmax_cross_entropy(tape, res.logits, labels[start:start + batch_size])
        chunks.append(tape.backward(loss)[res.hooks[hook_id]])
    return np.concatenate(chunks, axis=0)


@dataclass
class SimilarityReport:
    reference_class: int
    hook: int
    pairs: int
    means: dict = field(default_factory=dict)      # class -> mean phi
    counts: dict = field(default_factory=dict)     # class -> pairs actually used

    def to_frame(self):
        rows = [
            {"reference_class": self.reference_class, "class": c, "mean_phi": self.means[c], "pairs": self.counts[c]}
            for c in sorted(self.means)
        ]
        return pd.DataFrame(rows, columns=["reference_class", "class", "mean_phi", "pairs"])


def class_similarity_study(model, dataset, reference_class=0, pairs=100, hook_id=None, seed=0):
    """
    Mean phi between hook gradients of randomly paired (reference-class, class c) samples,
    for every class c. Self-pairs are excluded for c == reference_class; pairs where either
    gradient is exactly zero are skipped.
    """
    if hook_id is None or hook_id < 0:
        hook_id = model.first_conv_hook()
    if not 0 <= reference_class < dataset.num_classes:
        raise UsageError(f"reference class {reference_class} outside [0, {dataset.num_classes})")
    if pairs < 1:
        raise UsageError(f"pairs per class must be >= 1, got {pairs}")

    members = {c: np.flatnonzero(dataset.labels == c) for c in range(dataset.num_classes)}
    for c, idx in members.items():
        if len(idx) < 2:
            raise DatasetError(f"class {c} has {len(idx)} samples; the similarity study needs at least 2")

    rng = np.random.default_rng(seed)
    plan = {}
    for c in range(dataset.num_classes):
        a = rng.choice(members[reference_class], size=pairs)
        b = rng.choice(members[c], size=pairs)
        if c == reference_class:
            clash = a == b
            while np.any(clash):
                b[clash] = rng.choice(members[c], size=int(clash.sum()))
                clash = a == b
        plan[c] = (a, b)

    needed = np.unique(np.concatenate([np.concatenate(p) for p in plan.values()]))
    x = dataset.normalize(dataset.images[needed], model.dtype)
    grads = hook_gradients(model, x, dataset.labels[needed], hook_id)
    row_of = {int(i): k for k, i in enumerate(needed)}
    nonzero = np.any(grads.reshape(len(grads), -1) != 0, axis=1)

    report = SimilarityReport(reference_class, hook_id, pairs)
    for c, (a, b) in plan.items():
        phis = []
        for i, j in zip(a, b):
            ri, rj = row_of[int(i)], row_of[int(j)]
            if nonzero[ri] and nonzero[rj]:
                phis.append(cosine_similarity(grads[ri], grads[rj]))
        skipped = pairs - len(phis)
        if skipped:
            logger.warning(f"class {c}: skipped {skipped} pairs with a zero gradient")
        report.means[c] = float(np.mean(phis)) if phis else 0.0
        report.counts[c] = len(phis)
        logger.info(f"phi(class {reference_class}, class {c}) = {report.means[c]:+.4f} over {len(phis)} pairs")
    return report
