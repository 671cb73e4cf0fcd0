import logging

import numpy as np

from src.config.config import OPTIMIZER_DEFAULTS
from src.utils.errors import NonFiniteError

logger = logging.getLogger(__name__)


class OptimizerState:
    """
    SGD with (Nesterov) momentum and L2 weight decay added to the gradient.
    Velocities mirror the parameter dict and are created lazily.
    """

    def __init__(self, lr=OPTIMIZER_DEFAULTS["lr"], momentum=OPTIMIZER_DEFAULTS["momentum"],
                 nesterov=OPTIMIZER_DEFAULTS["nesterov"], weight_decay=OPTIMIZER_DEFAULTS["weight_decay"]):
        self.lr = lr
        self.momentum = momentum
        self.nesterov = nesterov
        self.weight_decay = weight_decay
        self.velocity = {}

    def __repr__(self):
        return (f"OptimizerState(lr={self.lr}, momentum={self.momentum}, "
                f"nesterov={self.nesterov}, weight_decay={self.weight_decay})")


def sgd_nesterov_step(params, grads, state):
    """
    In-place update of every array in `params` (name -> array) from `grads` (name -> array):

        d = grad + wd * theta
        v = mu * v + d
        theta -= lr * (d + mu * v)     (Nesterov)   or   lr * v   (classic)

    Raises NonFiniteError before touching any parameter if a gradient is not finite.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for parameter {name}")

    for name, theta in params.items():
        d = grads[name]
        if state.weight_decay:
            d = d + state.weight_decay * theta
        if state.momentum:
            v = state.velocity.get(name)
            if v is None:
                v = np.zeros_like(theta)
                state.velocity[name] = v
            v *= state.momentum
            v += d
            step = d + state.momentum * v if state.nesterov else v
        else:
            step = d
        theta -= state.lr * step
    return params
