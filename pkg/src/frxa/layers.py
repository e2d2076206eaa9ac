"""Layer vocabulary shared by both architectures.

Batch normalization, ReLU, 2x2 max/average pooling, fully-connected,
global average pooling and softmax cross-entropy, all as tape-recording
operations on ActivationTensors.
"""

import numpy as np

from .tensor import ActivationTensor, Parameter, ShapeError, _node


class BatchNormState:
    """Per-channel affine (gamma, beta) plus running statistics.

    ``mode`` is "training" (normalize by batch statistics, update running
    stats) or "inference" (normalize by running stats only).
    """

    def __init__(self, channels, momentum=0.1, epsilon=1e-5, prefix="bn", dtype=np.float32):
        if not 0.0 < momentum < 1.0:
            raise ValueError(f"momentum must be in (0, 1), got {momentum}")
        if epsilon <= 0.0:
            raise ValueError(f"epsilon must be positive, got {epsilon}")
        self.channels = int(channels)
        self.gamma = Parameter(np.ones((1, channels, 1, 1), dtype=dtype), f"{prefix}.gamma")
        self.beta = Parameter(np.zeros((1, channels, 1, 1), dtype=dtype), f"{prefix}.beta")
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.momentum = float(momentum)
        self.epsilon = float(epsilon)
        self.mode = "training"
        self.prefix = prefix


def batch_norm(input, state):
    """Normalize per channel; behaviour depends on ``state.mode``."""
    x = _node(input)
    n, c, h, w = x.shape
    if c != state.channels:
        raise ShapeError(
            f"batch_norm channel mismatch: input has {c} channels, state has {state.channels}"
        )
    gamma = state.gamma.tensor
    beta = state.beta.tensor
    g = gamma.data.reshape(1, c, 1, 1)
    b = beta.data.reshape(1, c, 1, 1)

    if state.mode == "training":
        m = n * h * w
        if m < 2:
            raise ShapeError(f"training-mode batch_norm needs batch*H*W >= 2, got {m}")
        mu = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))  # biased
        inv_std = 1.0 / np.sqrt(var + state.epsilon)
        xhat = (x.data - mu.reshape(1, c, 1, 1)) * inv_std.reshape(1, c, 1, 1)
        out = g * xhat + b
        mom = state.momentum
        state.running_mean[:] = (1.0 - mom) * state.running_mean + mom * mu
        state.running_var[:] = (1.0 - mom) * state.running_var + mom * var

        def backward_fn(grad):
            dbeta = grad.sum(axis=(0, 2, 3))
            dgamma = (grad * xhat).sum(axis=(0, 2, 3))
            beta.accumulate_grad(dbeta.reshape(beta.shape))
            gamma.accumulate_grad(dgamma.reshape(gamma.shape))
            gd = grad * g  # dL/dxhat
            mean_gd = gd.mean(axis=(0, 2, 3), keepdims=True)
            mean_gd_xhat = (gd * xhat).mean(axis=(0, 2, 3), keepdims=True)
            dx = inv_std.reshape(1, c, 1, 1) * (gd - mean_gd - xhat * mean_gd_xhat)
            x.accumulate_grad(dx)

    elif state.mode == "inference":
        inv_std = 1.0 / np.sqrt(state.running_var + state.epsilon)
        xhat = (x.data - state.running_mean.reshape(1, c, 1, 1)) * inv_std.reshape(1, c, 1, 1)
        out = g * xhat + b

        def backward_fn(grad):
            dbeta = grad.sum(axis=(0, 2, 3))
            dgamma = (grad * xhat).sum(axis=(0, 2, 3))
            beta.accumulate_grad(dbeta.reshape(beta.shape))
            gamma.accumulate_grad(dgamma.reshape(gamma.shape))
            x.accumulate_grad(grad * g * inv_std.reshape(1, c, 1, 1))

    else:
        raise ValueError(f"unknown batch_norm mode {state.mode!r}")

    return ActivationTensor(out, parents=(x, gamma, beta), backward_fn=backward_fn)


def relu(input):
    """Elementwise max(0, x); gradient is 0 where x <= 0."""
    x = _node(input)
    mask = x.data > 0
    out = np.where(mask, x.data, np.zeros((), dtype=x.dtype))

    def backward_fn(grad):
        x.accumulate_grad(grad * mask)

    return ActivationTensor(out, parents=(x,), backward_fn=backward_fn)


def _windows_2x2(data):
    # (N, C, H, W) -> (N, C, H/2, W/2, 4) with window cells in row-major order
    n, c, h, w = data.shape
    x6 = data.reshape(n, c, h // 2, 2, w // 2, 2)
    return np.ascontiguousarray(x6.transpose(0, 1, 2, 4, 3, 5)).reshape(n, c, h // 2, w // 2, 4)


def _windows_back(dwin, shape):
    n, c, h, w = shape
    x6 = dwin.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return np.ascontiguousarray(x6).reshape(n, c, h, w)


def max_pool2(input):
    """2x2 max pooling, stride 2; gradient routed to the first max per window."""
    x = _node(input)
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"max_pool2 needs even spatial dims, got {h}x{w}")
    win = _windows_2x2(x.data)
    idx = win.argmax(axis=-1)  # first occurrence on ties
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def backward_fn(grad):
        dwin = np.zeros_like(win)
        np.put_along_axis(dwin, idx[..., None], grad[..., None], axis=-1)
        x.accumulate_grad(_windows_back(dwin, x.shape))

    return ActivationTensor(out, parents=(x,), backward_fn=backward_fn)


def avg_pool2(input):
    """2x2 average pooling, stride 2; gradient spreads grad/4 per window cell."""
    x = _node(input)
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"avg_pool2 needs even spatial dims, got {h}x{w}")
    win = _windows_2x2(x.data)
    out = win.mean(axis=-1)

    def backward_fn(grad):
        dwin = np.broadcast_to((grad * 0.25)[..., None], win.shape)
        x.accumulate_grad(_windows_back(np.ascontiguousarray(dwin), x.shape))

    return ActivationTensor(out, parents=(x,), backward_fn=backward_fn)


def global_avg_pool(input):
    """Spatial mean of each feature map: (N, K, H, W) -> (N, K, 1, 1)."""
    x = _node(input)
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3), keepdims=True)

    def backward_fn(grad):
        x.accumulate_grad(np.broadcast_to(grad / (h * w), x.shape).copy())

    return ActivationTensor(out, parents=(x,), backward_fn=backward_fn)


def fully_connected(input, weights, bias=None):
    """Linear map; input (N, C, H, W) is flattened to N x (C*H*W) rows.

    ``weights`` is a (D, C_out, 1, 1) parameter with D = C*H*W, ``bias``
    an optional (1, C_out, 1, 1) parameter.
    """
    x = _node(input)
    w = _node(weights)
    n = x.shape[0]
    d = x.data.size // n
    dw, c_out = w.shape[0], w.shape[1]
    if w.shape[2:] != (1, 1) or dw != d:
        raise ShapeError(
            f"fully_connected dimension mismatch: input {x.shape} flattens to {d}, "
            f"weights {w.shape}"
        )
    x2 = x.data.reshape(n, d)
    w2 = w.data.reshape(d, c_out)
    out2 = x2 @ w2
    bt = _node(bias) if bias is not None else None
    if bt is not None:
        if bt.shape != (1, c_out, 1, 1):
            raise ShapeError(f"bias shape {bt.shape} does not match output width {c_out}")
        out2 = out2 + bt.data.reshape(1, c_out)
    parents = (x, w) if bt is None else (x, w, bt)

    def backward_fn(grad):
        g2 = grad.reshape(n, c_out)
        w.accumulate_grad((x2.T @ g2).reshape(w.shape))
        x.accumulate_grad((g2 @ w2.T).reshape(x.shape))
        if bt is not None:
            bt.accumulate_grad(g2.sum(axis=0).reshape(bt.shape))

    return ActivationTensor(out2.reshape(n, c_out, 1, 1), parents=parents, backward_fn=backward_fn)


def softmax(logits):
    """Shift-stabilized softmax over the last axis of an (N, C) array."""
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy of (N, C, 1, 1) logits against integer labels.

    Returns (loss, probs): a scalar graph node and the N x C softmax rows.
    The logits gradient is (softmax - one_hot) / N.
    """
    x = _node(logits)
    n, c = x.shape[0], x.shape[1]
    if x.shape[2:] != (1, 1):
        raise ShapeError(f"logits must be (N, C, 1, 1), got {x.shape}")
    y = np.asarray(labels)
    if y.shape != (n,):
        raise ShapeError(f"labels must have shape ({n},), got {y.shape}")
    if y.size and (y.min() < 0 or y.max() >= c):
        bad = y[(y < 0) | (y >= c)][0]
        raise ValueError(f"label {bad} out of range [0, {c})")
    z2 = x.data.reshape(n, c)
    zmax = z2.max(axis=1, keepdims=True)
    zs = z2 - zmax
    lse = np.log(np.exp(zs).sum(axis=1))
    probs = softmax(z2)
    loss_val = float(np.mean(lse - zs[np.arange(n), y]))
    out = np.asarray(loss_val, dtype=x.dtype).reshape(1, 1, 1, 1)

    def backward_fn(grad):
        dz = probs.astype(x.dtype, copy=True)
        dz[np.arange(n), y] -= 1.0
        dz *= grad.reshape(()) / n
        x.accumulate_grad(dz.reshape(x.shape))

    return ActivationTensor(out, parents=(x,), backward_fn=backward_fn), probs
