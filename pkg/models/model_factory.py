# models/model_factory.py

import logging

import numpy as np

from src.config.config import NUM_CLASSES, VGG_SMALL_LAYOUT
from src.nn.layers import ACTIVATIONS, BatchNorm, Conv2d, Dropout, Flatten, Linear, MaxPool
from src.nn.model import Model
from src.noise.spec import NoiseSpec
from src.utils.errors import ConfigError

logger = logging.getLogger(__name__)


def _activation(name):
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ConfigError(f"unknown activation {name!r}, expected one of {sorted(ACTIVATIONS)}") from None


def _fc_head(layers, widths, fc_dropout, rng, dtype, act=ACTIVATIONS["relu"]):
    """Linear-activation blocks over consecutive widths, dropout between FC layers, plain final Linear."""
    for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        layers.append(Linear(fan_in, fan_out, rng=rng, dtype=dtype))
        if i < len(widths) - 2:
            layers.append(act())
            if fc_dropout > 0:
                layers.append(Dropout(fc_dropout))


def build_lenet5(noise=None, input_shape=(1, 28, 28), num_classes=NUM_CLASSES, fc_dropout=0.0,
                 seed=0, dtype=np.float64, activation="relu"):
    """
    CONV-[noise]-RELU-POOL-CONV-[noise]-RELU-POOL-FC-RELU-FC-RELU-FC with the classic 6/16
    channel widths. The first conv pads by 2 so 28x28 inputs keep the 32x32 geometry.
    `activation="sigmoid"` gives the original squashing variant.
    """
    noise = noise or NoiseSpec()
    act = _activation(activation)
    rng = np.random.default_rng(seed)
    C, H, W = input_shape
    if H != W or (H // 2 - 4) % 2 or H % 2:
        raise ConfigError(f"LeNet-5 needs square inputs of size 28 or 32, got {H}x{W}")
    side = (H // 2 - 4) // 2

    layers = [
        Conv2d(C, 6, 5, pad=2, rng=rng, dtype=dtype),
        act(),
        MaxPool(),
        Conv2d(6, 16, 5, rng=rng, dtype=dtype),
        act(),
        MaxPool(),
        Flatten(),
    ]
    _fc_head(layers, [16 * side * side, 120, 84, num_classes], fc_dropout, rng, dtype, act)

    positions, labels = [1, 4], ["conv1", "conv2"]
    if noise.input_hook:
        positions, labels = [0] + positions, ["input"] + labels
    model = Model("lenet5", layers, positions, num_classes, input_shape, noise=noise, hook_labels=labels)
    logger.debug(model.summary())
    return model


def parse_layout(layout):
    tokens = [t.strip() for t in layout.split(",") if t.strip()]
    parsed = []
    for t in tokens:
        if t.upper() == "M":
            parsed.append("M")
        else:
            try:
                parsed.append(int(t))
            except ValueError as e:
                raise ConfigError(f"bad VGG layout token {t!r} in {layout!r}") from e
    return parsed


def build_vgg_small(noise=None, input_shape=(3, 32, 32), num_classes=NUM_CLASSES, layout=VGG_SMALL_LAYOUT,
                    fc_width=128, fc_dropout=0.0, seed=0, dtype=np.float64, activation="relu"):
    """
    VGG-style stack: every conv (3x3, pad 1) is followed by BatchNorm, a noise hook and the activation;
    "M" entries in `layout` are 2x2 max pools. Depth is set by the layout string.
    """
    noise = noise or NoiseSpec()
    act = _activation(activation)
    rng = np.random.default_rng(seed)
    C, H, W = input_shape
    layers, positions, labels = [], [], []
    if noise.input_hook:
        positions.append(0)
        labels.append("input")

    channels = C
    n_conv = 0
    for token in parse_layout(layout):
        if token == "M":
            if H % 2 or W % 2:
                raise ConfigError(f"layout {layout!r} pools an odd extent {H}x{W}")
            layers.append(MaxPool())
            H, W = H // 2, W // 2
            continue
        layers.append(Conv2d(channels, token, 3, pad=1, rng=rng, dtype=dtype))
        layers.append(BatchNorm(token, dtype=dtype))
        n_conv += 1
        positions.append(len(layers))
        labels.append(f"bn{n_conv}")
        layers.append(act())
        channels = token

    layers.append(Flatten())
    _fc_head(layers, [channels * H * W, fc_width, num_classes], fc_dropout, rng, dtype, act)

    model = Model("vgg_small", layers, positions, num_classes, input_shape, noise=noise, hook_labels=labels)
    logger.debug(model.summary())
    return model


def build_model(model_cfg, noise, input_shape, num_classes=NUM_CLASSES, seed=0):
    dtype = np.dtype(model_cfg.dtype)
    if model_cfg.arch == "lenet5":
        return build_lenet5(noise, input_shape, num_classes, model_cfg.fc_dropout, seed, dtype, model_cfg.activation)
    if model_cfg.arch == "vgg_small":
        return build_vgg_small(noise, input_shape, num_classes, model_cfg.vgg_layout, model_cfg.fc_width,
                               model_cfg.fc_dropout, seed, dtype, model_cfg.activation)
    raise ConfigError(f"unknown model arch {model_cfg.arch!r}")
