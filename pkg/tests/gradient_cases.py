"""Per-operation gradient cases shared by the tensor tests and the acceptance suite."""

import numpy as np

from lrw_ood import tensor as T


def leaf(a):
    return T.Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)


def rng_leaf(rng, *shape, positive=False):
    x = rng.standard_normal(shape)
    return leaf(np.abs(x) + 0.5 if positive else x)


def build_cases():
    rng = np.random.default_rng(7)
    cases = {}

    a, b = rng_leaf(rng, 3, 4), rng_leaf(rng, 4, 2)
    cases["matmul"] = (lambda: head(T.matmul(a, b), rng_fixed(1, (3, 2))), [a, b])
    p, q = rng_leaf(rng, 3, 3), rng_leaf(rng, 3, 3, positive=True)
    cases["add"] = (lambda: head(T.add(p, q), rng_fixed(2, (3, 3))), [p, q])
    cases["sub"] = (lambda: head(T.sub(p, q), rng_fixed(3, (3, 3))), [p, q])
    cases["mul"] = (lambda: head(T.mul(p, q), rng_fixed(4, (3, 3))), [p, q])
    cases["div"] = (lambda: head(T.div(p, q), rng_fixed(5, (3, 3))), [p, q])
    r = rng_leaf(rng, 4, 3)
    r.data[np.abs(r.data) < 0.1] = 0.3  # stay away from the relu kink
    cases["relu"] = (lambda: head(T.relu(r), rng_fixed(6, (4, 3))), [r])
    cases["leaky_relu"] = (lambda: head(T.leaky_relu(r, 0.2), rng_fixed(7, (4, 3))), [r])
    cases["tanh"] = (lambda: head(T.tanh(r), rng_fixed(8, (4, 3))), [r])
    pos = rng_leaf(rng, 4, 3, positive=True)
    cases["log"] = (lambda: head(T.log(pos), rng_fixed(9, (4, 3))), [pos])
    cases["exp"] = (lambda: head(T.exp(r), rng_fixed(10, (4, 3))), [r])
    cases["power"] = (lambda: head(T.power(pos, -0.5), rng_fixed(11, (4, 3))), [pos])
    cases["floor"] = (lambda: head(T.floor(pos, 0.1), rng_fixed(12, (4, 3))), [pos])
    cases["softmax_rows"] = (lambda: head(T.softmax_rows(r), rng_fixed(13, (4, 3))), [r])
    cases["log_softmax_rows"] = (lambda: head(T.log_softmax_rows(r), rng_fixed(14, (4, 3))), [r])
    cases["logsumexp"] = (lambda: head(T.logsumexp(r, axis=1), rng_fixed(15, (4,))), [r])
    cases["logsumexp_all"] = (lambda: T.logsumexp(r) * 1.0, [r])
    cases["sum_axis"] = (lambda: head(T.sum(r, axis=0), rng_fixed(16, (3,))), [r])
    cases["mean_axis"] = (lambda: head(T.mean(r, axis=1), rng_fixed(17, (4,))), [r])
    cases["variance"] = (lambda: T.variance(r), [r])
    cases["variance_axis"] = (lambda: head(T.variance(r, axis=0), rng_fixed(18, (3,))), [r])
    c1, c2 = rng_leaf(rng, 2, 3), rng_leaf(rng, 1, 3)
    cases["concat"] = (lambda: head(T.concat([c1, c2], axis=0), rng_fixed(19, (3, 3))), [c1, c2])
    cases["split"] = (lambda: head(T.split(r, [1, 3], axis=0)[1], rng_fixed(20, (3, 3))), [r])
    cases["reshape"] = (lambda: head(T.reshape(r, (3, 4)), rng_fixed(21, (3, 4))), [r])
    cases["transpose"] = (lambda: head(T.transpose(r), rng_fixed(22, (3, 4))), [r])
    idx = np.array([0, 2, 2, 3, 1])
    cases["take"] = (lambda: head(T.take(r, idx), rng_fixed(23, (5, 3))), [r])
    v = rng_leaf(rng, 3)
    cases["broadcast_to"] = (lambda: head(T.broadcast_to(v, (4, 3)), rng_fixed(24, (4, 3))), [v])
    op = np.abs(rng.standard_normal((4, 4)))
    cases["spmm"] = (lambda: head(T.spmm(op, r), rng_fixed(25, (4, 3))), [r])
    seg = np.array([0, 0, 1, 2])
    cases["segment_sum"] = (lambda: head(T.segment_sum(r, seg, 3), rng_fixed(26, (3, 3))), [r])
    lg = rng_leaf(rng, 6)
    seg6 = np.array([0, 0, 0, 1, 1, 2])
    cases["segment_softmax"] = (lambda: head(T.segment_softmax(lg, seg6, 3), rng_fixed(27, (6,))), [lg])
    return cases


def rng_fixed(seed, shape):
    return np.random.default_rng(seed).uniform(0.5, 1.5, shape)


def head(t, w):
    """Positive-weight scalar readout so every output receives an O(1) gradient."""
    return T.sum(T.mul(t, T.Tensor(w)))
