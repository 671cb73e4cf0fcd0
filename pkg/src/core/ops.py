"""Differentiable elementwise and linear-algebra primitives recorded on a Tape."""
import numpy as np

from src.utils.errors import ShapeError


def _unbroadcast(grad, shape):
    # sum out axes that numpy broadcasting added or stretched
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(kind, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as e:
        raise ShapeError(f"{kind}: shapes {a.shape} and {b.shape} do not broadcast") from e


def add(tape, a, b):
    _broadcast_shape("add", a, b)
    return tape.record(
        "add", (a, b), a.value + b.value,
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(tape, a, b):
    _broadcast_shape("sub", a, b)
    return tape.record(
        "sub", (a, b), a.value - b.value,
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(tape, a, b):
    _broadcast_shape("mul", a, b)
    return tape.record(
        "mul", (a, b), a.value * b.value,
        lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)),
    )


def scale(tape, a, k):
    return tape.record("scale", (a,), a.value * k, lambda g: (g * k,))


def add_const(tape, a, const):
    """a + const where const is not differentiated (e.g. injected noise)."""
    const = np.asarray(const, dtype=a.value.dtype)
    if const.shape != a.shape:
        raise ShapeError(f"add_const: constant shape {const.shape} != node shape {a.shape}")
    return tape.record("add_const", (a,), a.value + const, lambda g: (g,))


def matmul(tape, a, b):
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    return tape.record(
        "matmul", (a, b), a.value @ b.value,
        lambda g: (g @ b.value.T, a.value.T @ g),
    )


def sum(tape, a):
    return tape.record("sum", (a,), np.sum(a.value), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def mean(tape, a):
    n = a.value.size
    return tape.record("mean", (a,), np.mean(a.value), lambda g: (np.full(a.shape, g / n, dtype=a.value.dtype),))


def reshape(tape, a, shape):
    try:
        value = a.value.reshape(shape)
    except ValueError as e:
        raise ShapeError(f"reshape: cannot reshape {a.shape} to {shape}") from e
    return tape.record("reshape", (a,), value, lambda g: (g.reshape(a.shape),))


def relu(tape, a):
    mask = a.value > 0
    # subgradient at 0 is 0
    return tape.record("relu", (a,), np.where(mask, a.value, 0).astype(a.value.dtype), lambda g: (g * mask,))


def sigmoid_array(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(tape, a):
    s = sigmoid_array(a.value)
    return tape.record("sigmoid", (a,), s, lambda g: (g * s * (1.0 - s),))
