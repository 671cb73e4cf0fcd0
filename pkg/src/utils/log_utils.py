import logging
import os

from src.config.config import IS_DEBUG, LOG_LEVEL

LOG_FORMAT = "[%(levelname)s] %(name)s: %(message)s"


def setup_logging(level=None, log_dir=None):
    """
    Configures the root logger once per process.
    Messages look like the bracket-tagged prints used across the services ("[WARN] ...").
    When log_dir is given, a run.log file is written there as well.
    """
    if level is None:
        level = "DEBUG" if IS_DEBUG else LOG_LEVEL
    root = logging.getLogger()
    root.setLevel(level.upper() if isinstance(level, str) else level)

    for handler in list(root.handlers):
        root.removeHandler(handler)

    stream = logging.StreamHandler()
    stream.setFormatter(logging.Formatter(LOG_FORMAT))
    root.addHandler(stream)

    if log_dir:
        os.makedirs(log_dir, exist_ok=True)
        file_handler = logging.FileHandler(os.path.join(log_dir, "run.log"), mode="w", encoding="utf-8")
        file_handler.setFormatter(logging.Formatter("%(asctime)s " + LOG_FORMAT))
        root.addHandler(file_handler)

    return root
