"""
Noise generators for the hook points.

ANL noise is  eta = r * s(h) * g / ||g||_inf  with r drawn from a normal
N(eps/2, (eps/4)^2) clipped to the interval between 0 and eps. LAT uses
eps * sign(g) of the previous batch, the Gaussian baseline N(0, (eps/4)^2).
"""
import numpy as np

from src.core import ops
from src.utils.errors import ShapeError


def sample_r(epsilon, rng):
    """One clipped-normal magnitude. Negative epsilon clips to [eps, 0]."""
    lo, hi = min(0.0, epsilon), max(0.0, epsilon)
    return float(np.clip(rng.normal(epsilon / 2.0, abs(epsilon) / 4.0), lo, hi))


def activation_std(h):
    """Population standard deviation over every element of the batch activation."""
    h = np.asarray(h)
    if h.size < 2:
        raise ShapeError(f"activation_std needs at least 2 elements, got {h.size}")
    return float(np.std(h, dtype=np.float64))


def anl_noise(g, s, r, per_sample=True):
    """
    eta = r * s * g / ||g||_inf. With per_sample the norm is taken over each
    sample (axis 0 is the batch); otherwise over the whole tensor.
    A zero gradient gives zero noise.
    """
    g = np.asarray(g)
    if per_sample:
        if g.ndim < 2:
            raise ShapeError(f"per-sample noise needs a batch axis, got shape {g.shape}")
        axes = tuple(range(1, g.ndim))
        norm = np.max(np.abs(g), axis=axes, keepdims=True)
    else:
        norm = np.max(np.abs(g)) if g.size else np.asarray(0.0)
    safe = np.where(norm > 0, norm, 1)
    unit = np.where(norm > 0, g / safe, 0)
    return ((r * s) * unit).astype(g.dtype, copy=False)


def lat_noise(g_prev, epsilon):
    return (epsilon * np.sign(g_prev)).astype(np.asarray(g_prev).dtype, copy=False)


def gaussian_noise(shape, epsilon, rng, dtype=np.float64):
    return rng.normal(0.0, abs(epsilon) / 4.0, shape).astype(dtype, copy=False)


def inject(h, eta, train=True, tape=None):
    """
    h_hat = h + eta in training mode, h unchanged in eval mode.
    `h` is an array, or a tape node (then the addition is recorded on `tape`).
    """
    if not train:
        return h
    h_shape = h.shape
    if np.shape(eta) != tuple(h_shape):
        raise ShapeError(f"noise shape {np.shape(eta)} != activation shape {tuple(h_shape)}")
    if tape is not None:
        return ops.add_const(tape, h, eta)
    return np.asarray(h) + eta
