"""
Layer primitives recorded on a Tape: convolution, pooling, batch norm,
dropout, linear and the softmax cross-entropy loss.
All tensors are NCHW; reductions run in a fixed order so results are bit-deterministic.
"""
import numpy as np

from src.core import ops
from src.utils.errors import ShapeError, UsageError


# ------------------------------------------------------------------
# im2col / col2im
def im2col(x, kh, kw, stride=1, pad=0):
    N, C, H, W = x.shape
    out_h = (H + 2 * pad - kh) // stride + 1
    out_w = (W + 2 * pad - kw) // stride + 1

    img = np.pad(x, [(0, 0), (0, 0), (pad, pad), (pad, pad)], "constant")
    col = np.empty((N, C, kh, kw, out_h, out_w), dtype=x.dtype)
    for y in range(kh):
        y_max = y + stride * out_h
        for xx in range(kw):
            x_max = xx + stride * out_w
            col[:, :, y, xx, :, :] = img[:, :, y:y_max:stride, xx:x_max:stride]

    # (N, C, kh, kw, oh, ow) -> (N*oh*ow, C*kh*kw)
    return col.transpose(0, 4, 5, 1, 2, 3).reshape(N * out_h * out_w, -1)


def col2im(col, input_shape, kh, kw, stride=1, pad=0):
    N, C, H, W = input_shape
    out_h = (H + 2 * pad - kh) // stride + 1
    out_w = (W + 2 * pad - kw) // stride + 1

    col = col.reshape(N, out_h, out_w, C, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    img = np.zeros((N, C, H + 2 * pad + stride - 1, W + 2 * pad + stride - 1), dtype=col.dtype)
    for y in range(kh):
        y_max = y + stride * out_h
        for xx in range(kw):
            x_max = xx + stride * out_w
            img[:, :, y:y_max:stride, xx:x_max:stride] += col[:, :, y, xx, :, :]
    return img[:, :, pad:pad + H, pad:pad + W]


# ------------------------------------------------------------------
def conv2d_forward(tape, x, w, b, stride=1, pad=0):
    if x.value.ndim != 4 or w.value.ndim != 4:
        raise ShapeError(f"conv2d expects NCHW input and OIHW weights, got {x.shape} and {w.shape}")
    N, C, H, W = x.shape
    O, I, kh, kw = w.shape
    if I != C:
        raise ShapeError(f"conv2d: input has {C} channels, weights expect {I}")
    if b.shape != (O,):
        raise ShapeError(f"conv2d: bias shape {b.shape} != ({O},)")
    out_h = (H + 2 * pad - kh) // stride + 1
    out_w = (W + 2 * pad - kw) // stride + 1
    if out_h <= 0 or out_w <= 0:
        raise ShapeError(f"conv2d: output extent {out_h}x{out_w} is not positive for input {H}x{W}")

    col = im2col(x.value, kh, kw, stride, pad)
    w_mat = w.value.reshape(O, -1)
    out = col @ w_mat.T + b.value
    out = out.reshape(N, out_h, out_w, O).transpose(0, 3, 1, 2)

    def backward(g):
        g_mat = g.transpose(0, 2, 3, 1).reshape(-1, O)
        dw = (g_mat.T @ col).reshape(w.shape)
        db = g_mat.sum(axis=0)
        dx = col2im(g_mat @ w_mat, x.shape, kh, kw, stride, pad)
        return dx, dw, db

    return tape.record("conv2d", (x, w, b), np.ascontiguousarray(out), backward)


def maxpool2_forward(tape, x):
    """2x2 max pool, stride 2. Ties route the gradient to the first window element in row-major order."""
    if x.value.ndim != 4:
        raise ShapeError(f"maxpool2 expects NCHW input, got {x.shape}")
    N, C, H, W = x.shape
    if H % 2 or W % 2:
        raise ShapeError(f"maxpool2 needs even spatial extents, got {H}x{W}")

    windows = x.value.reshape(N, C, H // 2, 2, W // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(N, C, H // 2, W // 2, 4)
    arg = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        dwin = np.zeros_like(windows)
        np.put_along_axis(dwin, arg[..., None], g[..., None], axis=-1)
        dx = dwin.reshape(N, C, H // 2, W // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(N, C, H, W)
        return (dx,)

    return tape.record("maxpool2", (x,), out, backward)


def batchnorm_forward(tape, x, gamma, beta, state, train, update_stats=True):
    """
    Per-channel batch norm for (N, C) or (N, C, H, W) inputs.
    `state` holds running_mean, running_var, momentum and eps; it is updated in place
    only when train and update_stats are both true.
    """
    if x.value.ndim not in (2, 4):
        raise ShapeError(f"batchnorm expects 2-D or 4-D input, got {x.shape}")
    C = x.shape[1]
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ShapeError(f"batchnorm: gamma/beta shape must be ({C},)")
    axes = (0,) if x.value.ndim == 2 else (0, 2, 3)
    bshape = (1, C) if x.value.ndim == 2 else (1, C, 1, 1)
    eps = state.eps

    if not train:
        inv_std = 1.0 / np.sqrt(state.running_var + eps)
        scale_ = (gamma.value * inv_std).reshape(bshape)
        x_hat = (x.value - state.running_mean.reshape(bshape)) * inv_std.reshape(bshape)
        out = x_hat * gamma.value.reshape(bshape) + beta.value.reshape(bshape)

        def backward_eval(g):
            return g * scale_, (g * x_hat).sum(axis=axes), g.sum(axis=axes)

        return tape.record("batchnorm", (x, gamma, beta), out, backward_eval)

    if x.shape[0] < 2:
        raise UsageError("batchnorm in training mode needs a batch of at least 2 samples")
    m = x.value.size // C
    mu = x.value.mean(axis=axes)
    var = x.value.var(axis=axes)
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (x.value - mu.reshape(bshape)) * inv_std.reshape(bshape)
    out = x_hat * gamma.value.reshape(bshape) + beta.value.reshape(bshape)

    if update_stats:
        unbiased = var * m / max(m - 1, 1)
        state.running_mean[...] = (1 - state.momentum) * state.running_mean + state.momentum * mu
        state.running_var[...] = (1 - state.momentum) * state.running_var + state.momentum * unbiased

    def backward(g):
        dgamma = (g * x_hat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        dx_hat = g * gamma.value.reshape(bshape)
        dx = (inv_std.reshape(bshape) / m) * (
            m * dx_hat
            - dx_hat.sum(axis=axes).reshape(bshape)
            - x_hat * (dx_hat * x_hat).sum(axis=axes).reshape(bshape)
        )
        return dx, dgamma, dbeta

    return tape.record("batchnorm", (x, gamma, beta), out, backward)


def dropout_forward(tape, x, p, train, rng=None):
    """Inverted dropout: survivors are scaled by 1/(1-p); identity in eval mode or when p == 0."""
    if not 0.0 <= p < 1.0:
        raise UsageError(f"dropout ratio must be in [0, 1), got {p}")
    if not train or p == 0.0:
        return x
    if rng is None:
        raise UsageError("dropout in training mode needs an rng")
    mask = (rng.random(x.shape) >= p).astype(x.value.dtype) / (1.0 - p)
    return tape.record("dropout", (x,), x.value * mask, lambda g: (g * mask,))


def linear_forward(tape, x, w, b):
    """y = x W^T + b with W of shape (out, in)."""
    if x.value.ndim != 2 or w.value.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"linear: input {x.shape} incompatible with weight {w.shape}")
    out = x.value @ w.value.T + b.value
    return tape.record(
        "linear", (x, w, b), out,
        lambda g: (g @ w.value, g.T @ x.value, g.sum(axis=0)),
    )


def flatten(tape, x):
    return ops.reshape(tape, x, (x.shape[0], -1))


def log_softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax_cross_entropy(tape, logits, labels):
    """Mean over the batch of -log softmax(logits)[label], max-subtracted for stability."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.value.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"cross entropy: logits {logits.shape} vs labels {labels.shape}")
    N, C = logits.shape
    if labels.size and (labels.min() < 0 or labels.max() >= C):
        raise UsageError(f"labels must lie in [0, {C})")

    logp = log_softmax(logits.value)
    rows = np.arange(N)
    loss = -logp[rows, labels].mean()

    def backward(g):
        d = np.exp(logp)
        d[rows, labels] -= 1.0
        return (d * (g / N),)

    return tape.record("softmax_cross_entropy", (logits,), np.asarray(loss, dtype=logits.value.dtype), backward)
