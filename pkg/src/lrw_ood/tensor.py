"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Operations executed inside an active :class:`Tape` whose inputs require
gradients are appended to that tape. :func:`backward` then walks the tape
once, in reverse append order, and accumulates ``dloss/dleaf`` into the
``grad`` attribute of every leaf tensor that requires gradients.

>>> x = Tensor([1.0, 2.0], requires_grad=True)
>>> with Tape() as tape:
...     loss = (x * x).sum()
>>> backward(loss, tape)
>>> x.grad
array([2., 4.])

Gradients accumulate across ``backward`` calls until :func:`zero_grad`
(or ``tensor.grad = None``) resets them.
"""

from __future__ import annotations

import builtins
import itertools

import numpy as np
import scipy.sparse as sp

from .errors import DimensionError, DomainError, UsageError

__all__ = [
    "Tensor",
    "Tape",
    "backward",
    "zero_grad",
    "matmul",
    "add",
    "sub",
    "mul",
    "div",
    "elementwise",
    "relu",
    "leaky_relu",
    "tanh",
    "log",
    "exp",
    "power",
    "floor",
    "softmax_rows",
    "log_softmax_rows",
    "logsumexp",
    "activation",
    "sum",
    "mean",
    "variance",
    "reduce",
    "concat",
    "split",
    "reshape",
    "transpose",
    "take",
    "broadcast_to",
    "spmm",
    "segment_sum",
    "segment_softmax",
]

_ACTIVE_TAPES: list["Tape"] = []
_tape_ids = itertools.count(1)


class Tape:
    """Append-only record of the operations of one forward pass."""

    def __init__(self):
        self.id = next(_tape_ids)
        self.nodes: list[_Node] = []

    def __enter__(self):
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, *exc_info):
        _ACTIVE_TAPES.remove(self)
        return False

    def __len__(self):
        return len(self.nodes)

    def __repr__(self):
        return f"Tape(id={self.id}, nodes={len(self.nodes)})"


class _Node:
    __slots__ = ("op", "inputs", "output", "backward")

    def __init__(self, op, inputs, output, backward):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward = backward


class Tensor:
    """A dense row-major array of 64-bit floats.

    Parameters
    ----------
    values : array_like
        Initial contents; always copied and converted to float64.
    requires_grad : bool
        Whether ``backward`` should populate ``grad`` for this tensor.
    """

    __slots__ = ("data", "requires_grad", "grad", "tape_id")
    __array_priority__ = 1000

    def __init__(self, values, requires_grad=False):
        self.data = np.array(values, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.tape_id = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def values(self):
        """Flat row-major view of the contents."""
        return self.data.reshape(-1)

    @property
    def is_leaf(self):
        return self.tape_id is None

    def numpy(self):
        return self.data

    def item(self):
        if self.data.size != 1:
            raise UsageError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({np.array2string(self.data, precision=4)}{flag})"

    def __len__(self):
        return self.data.shape[0]

    # operator sugar; python scalars become constants
    def __add__(self, other):
        return _shift(self, other) if _is_scalar(other) else add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return _shift(self, -other) if _is_scalar(other) else sub(self, other)

    def __rsub__(self, other):
        return _shift(_scale(self, -1.0), other)

    def __mul__(self, other):
        return _scale(self, other) if _is_scalar(other) else mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return _scale(self, 1.0 / other) if _is_scalar(other) else div(self, other)

    def __neg__(self):
        return _scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return power(self, p)

    @property
    def T(self):
        return transpose(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None):
        return sum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)


def _is_scalar(x):
    return isinstance(x, (int, float, np.floating, np.integer))


def _record(data, op, inputs, backward_fn):
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.tape_id = None
    out.requires_grad = False
    if _ACTIVE_TAPES and any(t.requires_grad for t in inputs):
        tape = _ACTIVE_TAPES[-1]
        out.requires_grad = True
        out.tape_id = tape.id
        tape.nodes.append(_Node(op, inputs, out, backward_fn))
    return out


def backward(loss, tape=None):
    """Back-propagate from a scalar ``loss`` through ``tape``.

    Every leaf reached with ``requires_grad`` receives ``dloss/dleaf``,
    added to any gradient already stored.
    """
    if loss.data.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
    if tape is None:
        tape = next((t for t in _ACTIVE_TAPES if t.id == loss.tape_id), None)
    if loss.tape_id is None:
        if loss.requires_grad:
            _accumulate(loss, np.ones_like(loss.data))
            return
        raise UsageError("loss was not recorded on a tape (run the forward pass inside `with Tape()`)")
    if tape is None or tape.id != loss.tape_id:
        raise UsageError("loss was produced on a different tape")

    grads = {id(loss): np.ones_like(loss.data)}
    leaves = {}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        for t, gi in zip(node.inputs, node.backward(g)):
            if gi is None or not t.requires_grad:
                continue
            key = id(t)
            if t.tape_id is None:
                leaves[key] = t
            prev = grads.get(key)
            grads[key] = gi if prev is None else prev + gi
    for key, leaf in leaves.items():
        _accumulate(leaf, grads[key])


def _accumulate(t, g):
    g = np.asarray(g, dtype=np.float64).reshape(t.data.shape)
    t.grad = g.copy() if t.grad is None else t.grad + g


def zero_grad(tensors):
    for t in tensors:
        t.grad = None


# ---------------------------------------------------------------- linear algebra


def matmul(a, b):
    """Matrix product of two 2-D tensors."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    A, B = a.data, b.data

    def bw(g):
        return g @ B.T, A.T @ g

    return _record(A @ B, "matmul", (a, b), bw)


def spmm(op, a):
    """Apply a constant (scipy sparse or dense) matrix ``op`` to ``a``."""
    if op.shape[1] != a.shape[0]:
        raise DimensionError(f"spmm: cannot apply operator {op.shape} to {a.shape}")
    opT = op.T.tocsr() if sp.issparse(op) else op.T
    out = op @ a.data

    def bw(g):
        return (opT @ g,)

    return _record(np.asarray(out), "spmm", (a,), bw)


# ---------------------------------------------------------------- elementwise


def _same_shape(op, a, b):
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ")


def add(a, b):
    _same_shape("add", a, b)
    return _record(a.data + b.data, "add", (a, b), lambda g: (g, g))


def sub(a, b):
    _same_shape("sub", a, b)
    return _record(a.data - b.data, "sub", (a, b), lambda g: (g, -g))


def mul(a, b):
    _same_shape("mul", a, b)
    A, B = a.data, b.data
    return _record(A * B, "mul", (a, b), lambda g: (g * B, g * A))


def div(a, b):
    _same_shape("div", a, b)
    A, B = a.data, b.data
    out = A / B
    return _record(out, "div", (a, b), lambda g: (g / B, -g * out / B))


def elementwise(a, b, kind):
    """Dispatch ``kind`` in {add, sub, mul, div} on two equal-shape tensors."""
    try:
        fn = {"add": add, "sub": sub, "mul": mul, "div": div}[kind]
    except KeyError:
        raise UsageError(f"unknown elementwise kind {kind!r}") from None
    return fn(a, b)


def _scale(a, c):
    c = float(c)
    return _record(a.data * c, "scale", (a,), lambda g: (g * c,))


def _shift(a, c):
    return _record(a.data + float(c), "shift", (a,), lambda g: (g,))


# ---------------------------------------------------------------- activations


def relu(a):
    mask = a.data > 0
    return _record(np.where(mask, a.data, 0.0), "relu", (a,), lambda g: (g * mask,))


def leaky_relu(a, slope=0.2):
    slope_arr = np.where(a.data > 0, 1.0, slope)
    return _record(a.data * slope_arr, "leaky_relu", (a,), lambda g: (g * slope_arr,))


def tanh(a):
    out = np.tanh(a.data)
    return _record(out, "tanh", (a,), lambda g: (g * (1.0 - out * out),))


def log(a):
    bad = np.flatnonzero(~(a.data > 0))
    if bad.size:
        idx = np.unravel_index(bad[0], a.shape) if a.ndim else ()
        raise DomainError(f"log of non-positive entry {a.data[idx]!r} at index {tuple(int(i) for i in idx)}")
    A = a.data
    return _record(np.log(A), "log", (a,), lambda g: (g / A,))


def exp(a):
    out = np.exp(a.data)
    return _record(out, "exp", (a,), lambda g: (g * out,))


def power(a, p):
    p = float(p)
    A = a.data
    if p != int(p) and np.any(A < 0):
        raise DomainError(f"fractional power {p} of a negative entry")
    out = A**p
    return _record(out, "power", (a,), lambda g: (g * p * A ** (p - 1.0),))


def floor(a, minimum):
    """Elementwise ``max(a, minimum)``; no gradient flows through floored entries."""
    mask = a.data > minimum
    out = np.where(mask, a.data, float(minimum))
    return _record(out, "floor", (a,), lambda g: (g * mask,))


def _check_rows(op, a):
    if a.ndim != 2:
        raise DimensionError(f"{op} expects a 2-D tensor, got {a.shape}")


def softmax_rows(a):
    _check_rows("softmax_rows", a)
    z = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=1, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=1, keepdims=True)),)

    return _record(out, "softmax_rows", (a,), bw)


def log_softmax_rows(a):
    _check_rows("log_softmax_rows", a)
    z = a.data - a.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    out = z - lse
    soft = np.exp(out)

    def bw(g):
        return (g - soft * g.sum(axis=1, keepdims=True),)

    return _record(out, "log_softmax_rows", (a,), bw)


def logsumexp(a, axis=None):
    """Stabilised ``log(sum(exp(a)))`` over ``axis`` (all entries when None)."""
    if a.size == 0:
        raise DomainError("logsumexp of an empty tensor")
    A = a.data
    m = A.max(axis=axis, keepdims=True)
    s = np.exp(A - m).sum(axis=axis, keepdims=True)
    out_keep = m + np.log(s)
    weights = np.exp(A - out_keep)
    out = out_keep.reshape(()) if axis is None else np.squeeze(out_keep, axis=axis)

    def bw(g):
        g = g.reshape(()) if axis is None else np.expand_dims(g, axis)
        return (weights * g,)

    return _record(out, "logsumexp", (a,), bw)


def activation(a, kind):
    """Dispatch ``kind`` in {relu, log, exp, tanh, softmax_rows}."""
    fns = {"relu": relu, "log": log, "exp": exp, "tanh": tanh, "softmax_rows": softmax_rows}
    if kind not in fns:
        raise UsageError(f"unknown activation {kind!r}")
    return fns[kind](a)


# ---------------------------------------------------------------- reductions


def _check_axis(a, axis):
    if a.size == 0:
        raise DomainError("empty reduction")
    if axis is not None and not -a.ndim <= axis < a.ndim:
        raise DimensionError(f"axis {axis} is invalid for shape {a.shape}")


def _expand(g, axis, shape):
    if axis is not None:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def sum(a, axis=None):
    _check_axis(a, axis)
    shape = a.shape
    return _record(np.asarray(a.data.sum(axis=axis)), "sum", (a,), lambda g: (_expand(g, axis, shape),))


def mean(a, axis=None):
    _check_axis(a, axis)
    shape = a.shape
    count = a.size if axis is None else shape[axis]
    return _record(
        np.asarray(a.data.mean(axis=axis)), "mean", (a,), lambda g: (_expand(g, axis, shape) / count,)
    )


def variance(a, axis=None):
    """Population variance (divides by the element count).

    Values are shifted by their first entry before averaging, so constant
    input gives exactly zero.
    """
    _check_axis(a, axis)
    count = a.size if axis is None else a.shape[axis]
    pivot = a.data.reshape(-1)[:1].reshape(()) if axis is None else np.take(a.data, [0], axis=axis)
    shifted = a.data - pivot
    centered = shifted - shifted.mean(axis=axis, keepdims=True)
    out = np.asarray((centered * centered).mean(axis=axis))
    shape = a.shape

    def bw(g):
        return (_expand(g, axis, shape) * (2.0 / count) * centered,)

    return _record(out, "variance", (a,), bw)


def reduce(a, kind, axis=None):
    """Dispatch ``kind`` in {sum, mean, variance}."""
    fns = {"sum": sum, "mean": mean, "variance": variance}
    if kind not in fns:
        raise UsageError(f"unknown reduction {kind!r}")
    return fns[kind](a, axis)


# ---------------------------------------------------------------- structural


def concat(parts, axis=0):
    parts = list(parts)
    if not parts:
        raise DimensionError("concat of an empty list")
    if len(parts) == 1:
        return parts[0]
    ref = parts[0].shape
    ax = axis % len(ref)
    for p in parts[1:]:
        if len(p.shape) != len(ref) or any(p.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise DimensionError(f"concat along axis {axis}: {ref} and {p.shape} disagree off-axis")
    sizes = [p.shape[ax] for p in parts]
    cuts = np.cumsum(sizes)[:-1]
    out = np.concatenate([p.data for p in parts], axis=ax)
    return _record(out, "concat", tuple(parts), lambda g: tuple(np.split(g, cuts, axis=ax)))


def _slice(a, start, stop, axis):
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)
    shape = a.shape

    def bw(g):
        full = np.zeros(shape)
        full[index] = g
        return (full,)

    return _record(a.data[index].copy(), "slice", (a,), bw)


def split(a, sizes, axis=0):
    """Inverse of :func:`concat`: cut ``a`` into pieces of the given extents."""
    ax = axis % a.ndim
    if builtins.sum(sizes) != a.shape[ax]:
        raise DimensionError(f"split sizes {list(sizes)} do not add up to extent {a.shape[ax]}")
    out, start = [], 0
    for size in sizes:
        out.append(_slice(a, start, start + size, ax))
        start += size
    return out


def reshape(a, shape):
    shape = tuple(int(s) for s in shape)
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"cannot reshape {old} into {shape}") from None
    return _record(out, "reshape", (a,), lambda g: (g.reshape(old),))


def transpose(a):
    if a.ndim != 2:
        raise DimensionError(f"transpose expects a 2-D tensor, got {a.shape}")
    return _record(a.data.T.copy(), "transpose", (a,), lambda g: (g.T,))


def take(a, index, axis=0):
    """Gather entries along ``axis``; repeated indices accumulate on backward."""
    index = np.asarray(index, dtype=np.intp)
    ax = axis % a.ndim
    shape = a.shape
    if index.size and (index.min() < -shape[ax] or index.max() >= shape[ax]):
        raise DimensionError(f"take: index out of range for extent {shape[ax]}")

    def bw(g):
        full = np.zeros(shape)
        if ax == 0:
            np.add.at(full, index, g)
        else:
            np.add.at(np.moveaxis(full, ax, 0), index, np.moveaxis(g, ax, 0))
        return (full,)

    return _record(np.take(a.data, index, axis=ax), "take", (a,), bw)


def broadcast_to(a, shape):
    """Repeat ``a`` along new leading axes or along extent-1 axes."""
    shape = tuple(shape)
    try:
        out = np.broadcast_to(a.data, shape).copy()
    except ValueError:
        raise DimensionError(f"cannot broadcast {a.shape} to {shape}") from None
    old = a.shape
    lead = len(shape) - len(old)
    stretched = tuple(i + lead for i, n in enumerate(old) if n == 1 and shape[i + lead] != 1)

    def bw(g):
        if lead:
            g = g.sum(axis=tuple(range(lead)))
        if stretched:
            g = g.sum(axis=tuple(i - lead for i in stretched), keepdims=True)
        return (g,)

    return _record(out, "broadcast_to", (a,), bw)


def segment_sum(a, segments, num_segments):
    """Sum rows of ``a`` that share a segment id; output has ``num_segments`` rows."""
    segments = np.asarray(segments, dtype=np.intp)
    if segments.shape[0] != a.shape[0]:
        raise DimensionError(f"segment_sum: {segments.shape[0]} ids for {a.shape[0]} rows")
    out = np.zeros((num_segments,) + a.shape[1:])
    np.add.at(out, segments, a.data)
    return _record(out, "segment_sum", (a,), lambda g: (g[segments],))


def segment_softmax(logits, segments, num_segments):
    """Softmax of a 1-D tensor taken independently within each segment."""
    if logits.ndim != 1:
        raise DimensionError(f"segment_softmax expects a 1-D tensor, got {logits.shape}")
    segments = np.asarray(segments, dtype=np.intp)
    L = logits.data
    peak = np.full(num_segments, -np.inf)
    np.maximum.at(peak, segments, L)
    e = np.exp(L - peak[segments])
    totals = np.bincount(segments, weights=e, minlength=num_segments)
    out = e / totals[segments]

    def bw(g):
        dot = np.bincount(segments, weights=g * out, minlength=num_segments)
        return (out * (g - dot[segments]),)

    return _record(out, "segment_softmax", (logits,), bw)
