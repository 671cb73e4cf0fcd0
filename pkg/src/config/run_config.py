"""
Run configuration: a flat, sectioned key=value file.

    [data]    dataset kind, folder, file names, desk-scale subsets, augmentation
    [model]   architecture and precision
    [noise]   regularizer kind, epsilon and hook placement
    [train]   optimizer, schedule, epochs, two-phase protocol, adversarial training
    [attack]  FGSM deltas (0-255 pixel units)
    [analysis] gradient-similarity study and feature-map options
    [sweep]   epsilon list and seeds for the sweep subcommand
    [run]     seed, output folder, timing and plots

Every key has a default; unknown sections or keys are rejected. The resolved
config is written back with every key so a run can be reproduced from it.
"""
import configparser
import dataclasses
import os
import re
from dataclasses import dataclass, field

from src.config.config import (
    FGSM_DELTAS, IDX_FILES, OPTIMIZER_DEFAULTS, RESULTS_PATH, SCHEDULE_DEFAULTS, SIMILARITY_PAIRS, VGG_SMALL_LAYOUT,
)
from src.noise.spec import NoiseSpec
from src.training.schedules import ScheduleSpec
from src.utils.data_utils import AugmentFlags
from src.utils.errors import ConfigError


@dataclass
class DataConfig:
    kind: str = "fashion-mnist"
    dir: str = ""
    train_images: str = IDX_FILES["train_images"]
    train_labels: str = IDX_FILES["train_labels"]
    test_images: str = IDX_FILES["test_images"]
    test_labels: str = IDX_FILES["test_labels"]
    cifar_train: list = field(default_factory=list)
    cifar_test: list = field(default_factory=list)
    subset: int = 10000
    test_subset: int = 0
    standardize: bool = False
    hflip: bool = False
    pad_crop: bool = False


@dataclass
class ModelConfig:
    arch: str = "lenet5"
    vgg_layout: str = VGG_SMALL_LAYOUT
    fc_width: int = 128
    fc_dropout: float = 0.0
    activation: str = "relu"
    dtype: str = "float32"


@dataclass
class NoiseConfig:
    kind: str = "none"
    epsilon: float = 0.03
    hooks: list = field(default_factory=list)
    input_hook: bool = False
    use_std: bool = True
    norm: str = "sample"


@dataclass
class TrainConfig:
    epochs: int = 15
    batch_size: int = 128
    lr: float = OPTIMIZER_DEFAULTS["lr"]
    momentum: float = OPTIMIZER_DEFAULTS["momentum"]
    nesterov: bool = OPTIMIZER_DEFAULTS["nesterov"]
    weight_decay: float = OPTIMIZER_DEFAULTS["weight_decay"]
    schedule: str = SCHEDULE_DEFAULTS["kind"]
    step_divisor: float = SCHEDULE_DEFAULTS["step_divisor"]
    step_period: int = SCHEDULE_DEFAULTS["step_period"]
    adaptive_divisor: float = SCHEDULE_DEFAULTS["adaptive_divisor"]
    adaptive_patience: int = SCHEDULE_DEFAULTS["adaptive_patience"]
    min_lr: float = SCHEDULE_DEFAULTS["min_lr"]
    val_fraction: float = 0.1
    noise_epochs: int = 0
    adversarial: bool = False
    adversarial_epsilon: float = 0.05
    trace_std: bool = False


@dataclass
class AttackConfig:
    deltas: list = field(default_factory=lambda: [float(d) for d in FGSM_DELTAS])
    batch_size: int = 256


@dataclass
class AnalysisConfig:
    hook: int = -1
    reference_class: int = 0
    pairs: int = SIMILARITY_PAIRS
    layer: int = 0
    image_index: int = 0


@dataclass
class SweepConfig:
    epsilons: list = field(default_factory=lambda: [0.01, 0.03, 0.05])
    seeds: int = 1


@dataclass
class RunSection:
    seed: int = 0
    out: str = os.path.join(RESULTS_PATH, "run")
    name: str = "run"
    record_timing: bool = False
    plots: bool = False


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    run: RunSection = field(default_factory=RunSection)

    def noise_spec(self):
        return NoiseSpec(kind=self.noise.kind, epsilon=self.noise.epsilon, hooks=tuple(self.noise.hooks),
                         input_hook=self.noise.input_hook, use_std=self.noise.use_std, norm=self.noise.norm)

    def schedule_spec(self):
        t = self.train
        return ScheduleSpec(kind=t.schedule, lr0=t.lr, step_divisor=t.step_divisor, step_period=t.step_period,
                            adaptive_divisor=t.adaptive_divisor, adaptive_patience=t.adaptive_patience,
                            min_lr=t.min_lr)

    def augment_flags(self):
        return AugmentFlags(hflip=self.data.hflip, pad_crop=self.data.pad_crop)

    def validate(self):
        if self.train.adversarial and self.noise.kind != "none":
            raise ConfigError("train.adversarial cannot be combined with a noise kind other than 'none'")
        if self.train.epochs < 1 or self.train.batch_size < 1:
            raise ConfigError("train.epochs and train.batch_size must be >= 1")
        if any(d < 0 for d in self.attack.deltas):
            raise ConfigError("attack.deltas must be >= 0")
        if self.model.dtype not in ("float32", "float64"):
            raise ConfigError(f"model.dtype must be float32 or float64, got {self.model.dtype!r}")
        self.noise_spec()
        self.schedule_spec()
        return self


# ------------------------------------------------------------------
def _parse_bool(text):
    value = text.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _coerce(default, text, item_type=None):
    if isinstance(default, bool):
        return _parse_bool(text)
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    if isinstance(default, list):
        parts = [p.strip() for p in text.split(",") if p.strip()]
        return [item_type(p) for p in parts] if item_type else parts
    return text.strip()


# element types of list-valued keys
_LIST_TYPES = {
    ("data", "cifar_train"): str,
    ("data", "cifar_test"): str,
    ("noise", "hooks"): int,
    ("attack", "deltas"): float,
    ("sweep", "epsilons"): float,
}


def _format(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, list):
        return ",".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _line_of(path, section, key):
    if not path or not os.path.exists(path):
        return None
    current = None
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            m = re.match(r"\s*\[([^\]]+)\]", line)
            if m:
                current = m.group(1).strip()
            elif current == section and re.match(rf"\s*{re.escape(key)}\s*[=:]", line):
                return lineno
    return None


def set_value(cfg, section, key, text, source=None):
    sub = getattr(cfg, section, None)
    if sub is None or not dataclasses.is_dataclass(sub):
        raise ConfigError(f"unknown config section [{section}]")
    if key not in {f.name for f in dataclasses.fields(sub)}:
        line = _line_of(source, section, key)
        where = f" (line {line})" if line else ""
        raise ConfigError(f"unknown key '{key}' in section [{section}]{where}")
    try:
        setattr(sub, key, _coerce(getattr(sub, key), text, _LIST_TYPES.get((section, key))))
    except ValueError as e:
        line = _line_of(source, section, key)
        where = f" (line {line})" if line else ""
        raise ConfigError(f"bad value for [{section}] {key}{where}: {e}") from e


def load_run_config(path=None, overrides=()):
    """
    Builds a RunConfig from defaults, the optional file at `path`, then
    `overrides` given as "section.key=value" strings.
    """
    cfg = RunConfig()
    if path:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            parser.read(path, encoding="utf-8")
        except configparser.Error as e:
            raise ConfigError(f"{path}: {e}") from e
        for section in parser.sections():
            for key, text in parser.items(section):
                set_value(cfg, section, key, text, source=path)

    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        dotted, text = item.split("=", 1)
        section, key = dotted.strip().split(".", 1)
        set_value(cfg, section, key, text)

    return cfg.validate()


def save_run_config(cfg, path):
    """Writes every key of every section in declaration order."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    lines = []
    for section in dataclasses.fields(cfg):
        sub = getattr(cfg, section.name)
        lines.append(f"[{section.name}]")
        for f in dataclasses.fields(sub):
            lines.append(f"{f.name} = {_format(getattr(sub, f.name))}")
        lines.append("")
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines))
    return path
