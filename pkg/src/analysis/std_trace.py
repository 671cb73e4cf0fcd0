import logging

import pandas as pd

from src.utils.errors import UsageError

logger = logging.getLogger(__name__)

STD_PREFIX = "std_"


def std_trace(metrics):
    """
    Per-hook mean activation std per epoch, pulled out of a training metrics frame
    (or a path to metrics.csv). Columns: epoch, then one per hook label.
    """
    if isinstance(metrics, str):
        metrics = pd.read_csv(metrics)
    columns = [c for c in metrics.columns if c.startswith(STD_PREFIX)]
    if not columns:
        raise UsageError("metrics carry no std columns; train with train.trace_std=true")
    trace = metrics[["epoch"] + columns].copy()
    trace.columns = ["epoch"] + [c[len(STD_PREFIX):] for c in columns]
    return trace.reset_index(drop=True)
