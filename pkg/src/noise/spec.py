from dataclasses import dataclass, field
from enum import Enum

from src.config.config import MAX_ABS_EPSILON
from src.utils.errors import ConfigError


class NoiseKind(str, Enum):
    NONE = "none"
    ANL = "anl"
    CANL = "canl"
    LAT = "lat"
    GAUSSIAN = "gaussian"


@dataclass(frozen=True)
class NoiseSpec:
    """
    Regularizer selection. `hooks` lists the active hook ids (empty = every hook).
    `norm` picks per-sample or batch-global infinity norm for ANL/CANL,
    `use_std=False` drops the s(h_t) factor.
    """
    kind: NoiseKind = NoiseKind.NONE
    epsilon: float = 0.0
    hooks: tuple = field(default_factory=tuple)
    input_hook: bool = False
    use_std: bool = True
    norm: str = "sample"

    def __post_init__(self):
        try:
            object.__setattr__(self, "kind", NoiseKind(self.kind))
        except ValueError:
            choices = ", ".join(k.value for k in NoiseKind)
            raise ConfigError(f"[noise] kind {self.kind!r} is not one of: {choices}") from None
        object.__setattr__(self, "hooks", tuple(int(h) for h in self.hooks))
        if abs(self.epsilon) > MAX_ABS_EPSILON:
            raise ConfigError(f"noise epsilon {self.epsilon} exceeds the |eps| <= {MAX_ABS_EPSILON} cap")
        if self.norm not in ("sample", "batch"):
            raise ConfigError(f"noise norm must be 'sample' or 'batch', got {self.norm!r}")

    @property
    def enabled(self):
        return self.kind is not NoiseKind.NONE

    def is_active(self, hook_id):
        return self.enabled and (not self.hooks or hook_id in self.hooks)
