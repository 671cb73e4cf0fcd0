"""Learning-rate schedules: step decay and validation-driven adaptive halving."""
import math
from dataclasses import dataclass

from src.config.config import SCHEDULE_DEFAULTS
from src.utils.errors import ConfigError


@dataclass(frozen=True)
class ScheduleSpec:
    kind: str = SCHEDULE_DEFAULTS["kind"]
    lr0: float = 0.05
    step_divisor: float = SCHEDULE_DEFAULTS["step_divisor"]
    step_period: int = SCHEDULE_DEFAULTS["step_period"]
    adaptive_divisor: float = SCHEDULE_DEFAULTS["adaptive_divisor"]
    adaptive_patience: int = SCHEDULE_DEFAULTS["adaptive_patience"]
    min_lr: float = SCHEDULE_DEFAULTS["min_lr"]

    def __post_init__(self):
        if self.kind not in ("step", "adaptive"):
            raise ConfigError(f"schedule kind must be 'step' or 'adaptive', got {self.kind!r}")
        if self.lr0 <= 0 or self.min_lr <= 0:
            raise ConfigError("learning rates must be positive")
        if self.step_period < 1 or self.adaptive_patience < 1:
            raise ConfigError("schedule period and patience must be >= 1")


def schedule_step(spec, epoch, history=()):
    """
    Learning rate to use for `epoch` (0-based).

    step:      lr0 / divisor ** floor(epoch / period)
    adaptive:  replays `history` (validation loss per finished epoch); the rate is
               divided when no new best was seen in the last `patience` epochs and the
               current rate has been held for at least `patience` epochs. Never below min_lr.
    """
    if spec.kind == "step":
        return spec.lr0 / spec.step_divisor ** math.floor(epoch / spec.step_period)

    lr = spec.lr0
    best = math.inf
    best_epoch = -1
    last_change = 0
    for e, loss in enumerate(list(history)[:epoch]):
        if loss < best:
            best, best_epoch = loss, e
        held = e + 1 - last_change
        if held >= spec.adaptive_patience and e - best_epoch >= spec.adaptive_patience:
            lr = max(lr / spec.adaptive_divisor, spec.min_lr)
            last_change = e + 1
    return max(lr, spec.min_lr)
