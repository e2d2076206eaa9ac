"""Rank-4 tensors with reverse-mode gradient accumulation.

Every value flowing through a network is an ActivationTensor shaped
(batch, channel, height, width).  Each operation records a backward closure
on its result node; ``backward`` replays the recorded graph (the tape) in
reverse topological order, accumulating gradients into the leaves.
"""

import numpy as np


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


class GraphError(RuntimeError):
    """The autodiff graph was used outside its contract."""


class ActivationTensor:
    """An (N, C, H, W) array plus an optional same-shape gradient buffer."""

    __slots__ = ("data", "grad", "parents", "backward_fn", "consumed")

    def __init__(self, data, parents=(), backward_fn=None):
        data = np.asarray(data)
        if data.ndim != 4:
            raise ShapeError(
                f"expected a rank-4 (N, C, H, W) array, got shape {data.shape}"
            )
        self.data = data
        self.grad = None
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.consumed = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got {self.shape}")
        return float(self.data.reshape(()))

    def accumulate_grad(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def detach(self):
        """A leaf tensor sharing this node's data but cut from the graph."""
        return ActivationTensor(self.data)

    def __repr__(self):
        return f"ActivationTensor(shape={self.shape}, dtype={self.dtype})"


class Parameter:
    """Trainable leaf tensor with a stable identifier.

    ``trainable=False`` marks bookkeeping state (e.g. batch-norm running
    statistics) that is serialized with the model but never optimized.
    """

    def __init__(self, data, id, trainable=True):
        self.tensor = data if isinstance(data, ActivationTensor) else ActivationTensor(data)
        self.id = str(id)
        self.trainable = bool(trainable)

    @property
    def data(self):
        return self.tensor.data

    @property
    def grad(self):
        return self.tensor.grad

    @property
    def shape(self):
        return self.tensor.shape

    def zero_grad(self):
        self.tensor.zero_grad()

    def __repr__(self):
        return f"Parameter({self.id!r}, shape={self.shape}, trainable={self.trainable})"


def _node(x):
    """Unwrap a Parameter to its tensor; pass ActivationTensors through."""
    if isinstance(x, Parameter):
        return x.tensor
    if isinstance(x, ActivationTensor):
        return x
    raise TypeError(f"expected ActivationTensor or Parameter, got {type(x).__name__}")


# ---------------------------------------------------------------------------
# convolution

def _im2col(xp, kh, kw, stride, h_out, w_out):
    # xp: padded input (N, C, Hp, Wp) -> columns (N, h_out*w_out, C*kh*kw)
    n, c = xp.shape[:2]
    cols = np.empty((n, h_out, w_out, c, kh, kw), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, :, i : i + stride * h_out : stride, j : j + stride * w_out : stride]
            cols[:, :, :, :, i, j] = patch.transpose(0, 2, 3, 1)
    return cols.reshape(n, h_out * w_out, c * kh * kw)


def _col2im(dcols, xp_shape, kh, kw, stride, h_out, w_out):
    # dcols: (N, h_out*w_out, C*kh*kw) -> gradient w.r.t. padded input
    n, c, hp, wp = xp_shape
    dcols = dcols.reshape(n, h_out, w_out, c, kh, kw)
    dxp = np.zeros(xp_shape, dtype=dcols.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i : i + stride * h_out : stride, j : j + stride * w_out : stride] += (
                dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            )
    return dxp


def conv2d(input, kernels, stride=1, zero_pad=0):
    """Cross-correlate ``input`` (N, C, H, W) with ``kernels`` (C_out, C, kH, kW)."""
    x = _node(input)
    w = _node(kernels)
    n, c, h, wd = x.shape
    c_out, c_k, kh, kw = w.shape
    if c_k != c:
        raise ShapeError(
            f"kernel channels do not match input channels: input {x.shape} vs kernels {w.shape}"
        )
    if stride < 1 or zero_pad < 0:
        raise ValueError(f"need stride >= 1 and zero_pad >= 0, got {stride}, {zero_pad}")
    h_out = (h + 2 * zero_pad - kh) // stride + 1
    w_out = (wd + 2 * zero_pad - kw) // stride + 1
    if h_out < 1 or w_out < 1:
        raise ShapeError(
            f"zero-sized output {h_out}x{w_out} for input {x.shape}, "
            f"kernel {kh}x{kw}, stride {stride}, pad {zero_pad}"
        )
    if zero_pad > 0:
        xp = np.pad(x.data, ((0, 0), (0, 0), (zero_pad, zero_pad), (zero_pad, zero_pad)))
    else:
        xp = x.data
    xp_shape = xp.shape
    cols = _im2col(xp, kh, kw, stride, h_out, w_out)  # (N, L, CK)
    wmat = w.data.reshape(c_out, c * kh * kw)
    out = cols.reshape(n * h_out * w_out, -1) @ wmat.T
    out = np.ascontiguousarray(
        out.reshape(n, h_out, w_out, c_out).transpose(0, 3, 1, 2)
    )

    def backward_fn(grad):
        g2 = grad.transpose(0, 2, 3, 1).reshape(n * h_out * w_out, c_out)
        cols2 = cols.reshape(n * h_out * w_out, -1)
        dw = g2.T @ cols2
        w.accumulate_grad(dw.reshape(w.shape))
        dcols = g2 @ wmat
        dxp = _col2im(dcols.reshape(n, h_out * w_out, -1), xp_shape, kh, kw, stride, h_out, w_out)
        if zero_pad > 0:
            dxp = dxp[:, :, zero_pad : zero_pad + h, zero_pad : zero_pad + wd]
        x.accumulate_grad(dxp)

    return ActivationTensor(out, parents=(x, w), backward_fn=backward_fn)


# ---------------------------------------------------------------------------
# small graph plumbing used by models and tests

def add(a, b):
    """Elementwise sum of two same-shape tensors."""
    ta, tb = _node(a), _node(b)
    if ta.shape != tb.shape:
        raise ShapeError(f"add needs matching shapes, got {ta.shape} vs {tb.shape}")
    out = ta.data + tb.data

    def backward_fn(grad):
        ta.accumulate_grad(grad)
        tb.accumulate_grad(grad)

    return ActivationTensor(out, parents=(ta, tb), backward_fn=backward_fn)


def mul(a, b):
    """Elementwise product of two same-shape tensors."""
    ta, tb = _node(a), _node(b)
    if ta.shape != tb.shape:
        raise ShapeError(f"mul needs matching shapes, got {ta.shape} vs {tb.shape}")
    out = ta.data * tb.data

    def backward_fn(grad):
        ta.accumulate_grad(grad * tb.data)
        tb.accumulate_grad(grad * ta.data)

    return ActivationTensor(out, parents=(ta, tb), backward_fn=backward_fn)


def scale(a, factor):
    """Multiply a tensor by a python scalar."""
    t = _node(a)
    f = float(factor)
    out = t.data * np.asarray(f, dtype=t.dtype)

    def backward_fn(grad):
        t.accumulate_grad(grad * f)

    return ActivationTensor(out, parents=(t,), backward_fn=backward_fn)


def sum_all(a):
    """Sum every element into a (1, 1, 1, 1) scalar node."""
    t = _node(a)
    out = np.asarray(t.data.sum(), dtype=t.dtype).reshape(1, 1, 1, 1)

    def backward_fn(grad):
        t.accumulate_grad(np.full_like(t.data, grad.reshape(())))

    return ActivationTensor(out, parents=(t,), backward_fn=backward_fn)


def concat_channels(tensors):
    """Concatenate tensors along the channel axis (dense-block wiring)."""
    nodes = [_node(t) for t in tensors]
    if not nodes:
        raise ShapeError("concat_channels needs at least one tensor")
    ref = nodes[0].shape
    for t in nodes[1:]:
        if t.shape[0] != ref[0] or t.shape[2:] != ref[2:]:
            raise ShapeError(f"concat_channels shape mismatch: {ref} vs {t.shape}")
    out = np.concatenate([t.data for t in nodes], axis=1)
    edges = np.cumsum([0] + [t.shape[1] for t in nodes])

    def backward_fn(grad):
        for t, lo, hi in zip(nodes, edges[:-1], edges[1:]):
            t.accumulate_grad(grad[:, lo:hi])

    return ActivationTensor(out, parents=tuple(nodes), backward_fn=backward_fn)


# ---------------------------------------------------------------------------
# reverse pass

def backward(loss_root):
    """Run the reverse pass from a scalar (1, 1, 1, 1) root.

    Gradients accumulate (+=) into every reachable node; parameters keep
    theirs until zero_grad.  A root can be consumed only once.
    """
    root = _node(loss_root)
    if root.shape != (1, 1, 1, 1):
        raise GraphError(f"backward needs a (1,1,1,1) scalar root, got shape {root.shape}")
    if root.consumed:
        raise GraphError("graph already consumed by a previous backward pass")

    topo = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))

    root.grad = np.ones((1, 1, 1, 1), dtype=root.dtype)
    for node in reversed(topo):
        if node.backward_fn is not None and node.grad is not None:
            node.backward_fn(node.grad)
    root.consumed = True
