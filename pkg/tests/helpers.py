"""Shared test oracles: finite differences, loop convolution, rel-error metric."""

import numpy as np


def max_rel_error(analytic, numeric):
    """Max absolute difference relative to the largest reference-gradient magnitude."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = max(np.abs(numeric).max(), 1e-8)
    return np.abs(analytic - numeric).max() / denom


def numeric_grad(f, x, eps=1e-3):
    """Central finite differences of scalar f() w.r.t. array x (perturbed in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        i = it.multi_index
        orig = x[i]
        x[i] = orig + eps
        fp = f()
        x[i] = orig - eps
        fm = f()
        x[i] = orig
        g[i] = (fp - fm) / (2.0 * eps)
        it.iternext()
    return g


def gradcheck_all_layers(seed, eps=1e-3):
    """Finite-difference check of every layer type on 0.1-scale float64 inputs.

    Returns {check_name: max relative error}.  Inputs near ReLU/max-pool
    decision boundaries are nudged away so central differences stay valid.
    """
    from frxa import tensor as T
    from frxa import layers as L

    rng = np.random.default_rng(seed)
    errors = {}

    def leaf(arr):
        return T.ActivationTensor(np.asarray(arr, dtype=np.float64))

    def check(name, build, arrays):
        """build() -> output node given current array contents; compare grads."""
        nodes = [leaf(a) for a in arrays]
        out = build(nodes)
        proj = rng.normal(size=out.shape)
        loss = T.sum_all(T.mul(out, leaf(proj)))
        T.backward(loss)

        def scalar():
            fresh = [leaf(a) for a in arrays]
            return float((build(fresh).data * proj).sum())

        for k, (node, arr) in enumerate(zip(nodes, arrays)):
            err = max_rel_error(node.grad, numeric_grad(scalar, arr, eps=eps))
            errors[f"{name}[{k}]"] = err

    def spaced(shape):
        # unique values with pairwise gaps >> 2*eps, centered near zero
        size = int(np.prod(shape))
        vals = (rng.permutation(size) - size / 2.0) * 0.01
        return vals.reshape(shape)

    def nudged(shape):
        x = 0.1 * rng.normal(size=shape)
        x[np.abs(x) < 5 * eps] += 10 * eps
        return x

    # conv2d: input and kernel gradients
    x = 0.1 * rng.normal(size=(2, 2, 5, 5))
    w = 0.1 * rng.normal(size=(3, 2, 3, 3))
    check("conv2d", lambda n: T.conv2d(n[0], n[1], stride=1, zero_pad=1), [x, w])

    # batch_norm, training mode
    xb = 0.1 * rng.normal(size=(3, 2, 4, 4))
    gamma = 1.0 + 0.1 * rng.normal(size=(1, 2, 1, 1))
    beta = 0.1 * rng.normal(size=(1, 2, 1, 1))

    def bn_train(nodes):
        st = L.BatchNormState(2, dtype=np.float64)
        st.gamma.tensor = nodes[1]
        st.beta.tensor = nodes[2]
        return L.batch_norm(nodes[0], st)

    check("batch_norm_train", bn_train, [xb, gamma, beta])

    # batch_norm, inference mode
    run_mean = 0.1 * rng.normal(size=2)
    run_var = 1.0 + 0.2 * rng.random(size=2)

    def bn_infer(nodes):
        st = L.BatchNormState(2, dtype=np.float64)
        st.gamma.tensor = nodes[1]
        st.beta.tensor = nodes[2]
        st.running_mean = run_mean
        st.running_var = run_var
        st.mode = "inference"
        return L.batch_norm(nodes[0], st)

    check("batch_norm_infer", bn_infer, [xb.copy(), gamma.copy(), beta.copy()])

    check("relu", lambda n: L.relu(n[0]), [nudged((2, 3, 4, 4))])
    check("max_pool2", lambda n: L.max_pool2(n[0]), [spaced((2, 2, 4, 4))])
    check("avg_pool2", lambda n: L.avg_pool2(n[0]), [0.1 * rng.normal(size=(2, 2, 4, 4))])
    check("global_avg_pool", lambda n: L.global_avg_pool(n[0]), [0.1 * rng.normal(size=(2, 3, 4, 4))])

    # fully_connected: input, weight and bias gradients
    xf = 0.1 * rng.normal(size=(3, 2, 2, 2))
    wf = 0.1 * rng.normal(size=(8, 4, 1, 1))
    bf = 0.1 * rng.normal(size=(1, 4, 1, 1))
    check("fully_connected", lambda n: L.fully_connected(n[0], n[1], n[2]), [xf, wf, bf])

    # softmax cross-entropy: the loss itself is the scalar
    logits = 0.1 * rng.normal(size=(4, 5, 1, 1))
    labels = rng.integers(0, 5, size=4)

    node = T.ActivationTensor(logits.copy())
    loss, _ = L.softmax_cross_entropy(node, labels)
    T.backward(loss)

    def ce_scalar():
        out, _ = L.softmax_cross_entropy(T.ActivationTensor(logits), labels)
        return out.item()

    errors["softmax_cross_entropy[0]"] = max_rel_error(
        node.grad, numeric_grad(ce_scalar, logits, eps=eps)
    )
    return errors


def loop_conv2d(x, w, stride=1, pad=0):
    """Direct six-nested-loop cross-correlation oracle, float64."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    n, c, h, wd = x.shape
    c_out, _, kh, kw = w.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    h_out = (h + 2 * pad - kh) // stride + 1
    w_out = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, c_out, h_out, w_out))
    for b in range(n):
        for o in range(c_out):
            for i in range(h_out):
                for j in range(w_out):
                    acc = 0.0
                    for ci in range(c):
                        for u in range(kh):
                            for v in range(kw):
                                acc += x[b, ci, i * stride + u, j * stride + v] * w[o, ci, u, v]
                    out[b, o, i, j] = acc
    return out
