import numpy as np

from src.config.config import BATCHNORM_PARAMS
from src.core import ops
from src.nn import functional as F
from src.utils.errors import ShapeError, UsageError


class Layer:
    """
    Base layer. `params` maps parameter name -> array owned by the layer;
    the optimizer updates these arrays in place.
    """
    kind = "Layer"

    def __init__(self):
        self.params = {}

    def forward(self, tape, x, ctx):
        raise NotImplementedError

    def state_tensors(self):
        """Everything that must be saved to reproduce this layer's outputs."""
        return list(self.params.items())

    def load_state_tensors(self, tensors):
        own = self.state_tensors()
        if len(own) != len(tensors):
            raise ShapeError(f"{self.kind}: expected {len(own)} tensors, got {len(tensors)}")
        for (name, target), value in zip(own, tensors):
            if target.shape != value.shape:
                raise ShapeError(f"{self.kind}.{name}: shape {value.shape} != {target.shape}")
            target[...] = value

    def __repr__(self):
        return f"{self.kind}()"


class Conv2d(Layer):
    kind = "Conv2d"

    def __init__(self, in_channels, out_channels, kernel, stride=1, pad=0, rng=None, dtype=np.float64):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        fan_in = in_channels * kernel * kernel
        self.stride, self.pad = stride, pad
        self.params["weight"] = rng.normal(0.0, np.sqrt(2.0 / fan_in), (out_channels, in_channels, kernel, kernel)).astype(dtype)
        self.params["bias"] = np.zeros(out_channels, dtype=dtype)

    @property
    def out_channels(self):
        return self.params["weight"].shape[0]

    def forward(self, tape, x, ctx):
        w = ctx.param(self, "weight")
        b = ctx.param(self, "bias")
        return F.conv2d_forward(tape, x, w, b, self.stride, self.pad)

    def __repr__(self):
        o, i, k, _ = self.params["weight"].shape
        return f"Conv2d({i}, {o}, k={k}, s={self.stride}, p={self.pad})"


class MaxPool(Layer):
    kind = "MaxPool"

    def forward(self, tape, x, ctx):
        return F.maxpool2_forward(tape, x)


class Linear(Layer):
    kind = "Linear"

    def __init__(self, in_features, out_features, rng=None, dtype=np.float64):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params["weight"] = rng.normal(0.0, np.sqrt(2.0 / in_features), (out_features, in_features)).astype(dtype)
        self.params["bias"] = np.zeros(out_features, dtype=dtype)

    def forward(self, tape, x, ctx):
        return F.linear_forward(tape, x, ctx.param(self, "weight"), ctx.param(self, "bias"))

    def __repr__(self):
        o, i = self.params["weight"].shape
        return f"Linear({i}, {o})"


class ReLU(Layer):
    kind = "ReLU"

    def forward(self, tape, x, ctx):
        return ops.relu(tape, x)


class Sigmoid(Layer):
    kind = "Sigmoid"

    def forward(self, tape, x, ctx):
        return ops.sigmoid(tape, x)


ACTIVATIONS = {"relu": ReLU, "sigmoid": Sigmoid}


class BatchNormState:
    def __init__(self, channels, momentum, eps, dtype):
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.momentum = momentum
        self.eps = eps


class BatchNorm(Layer):
    kind = "BatchNorm"

    def __init__(self, channels, momentum=BATCHNORM_PARAMS["momentum"], eps=BATCHNORM_PARAMS["eps"], dtype=np.float64):
        super().__init__()
        self.params["gamma"] = np.ones(channels, dtype=dtype)
        self.params["beta"] = np.zeros(channels, dtype=dtype)
        self.state = BatchNormState(channels, momentum, eps, dtype)

    def forward(self, tape, x, ctx):
        return F.batchnorm_forward(
            tape, x, ctx.param(self, "gamma"), ctx.param(self, "beta"),
            self.state, ctx.train, update_stats=ctx.update_stats,
        )

    def state_tensors(self):
        return list(self.params.items()) + [
            ("running_mean", self.state.running_mean),
            ("running_var", self.state.running_var),
        ]

    def __repr__(self):
        return f"BatchNorm({self.params['gamma'].shape[0]})"


class Dropout(Layer):
    kind = "Dropout"

    def __init__(self, p=0.5):
        super().__init__()
        if not 0.0 <= p < 1.0:
            raise UsageError(f"dropout ratio must be in [0, 1), got {p}")
        self.p = p

    def forward(self, tape, x, ctx):
        return F.dropout_forward(tape, x, self.p, ctx.train, ctx.rng)

    def __repr__(self):
        return f"Dropout({self.p})"


class Flatten(Layer):
    kind = "Flatten"

    def forward(self, tape, x, ctx):
        return F.flatten(tape, x)
