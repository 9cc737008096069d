"""Central finite-difference checks for :mod:`lrw_ood.tensor` gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T


@dataclass
class GradcheckResult:
    max_rel_error: float
    worst: tuple  # (input index, flat element index)
    analytic: list
    numeric: list

    def ok(self, tol=1e-4):
        return self.max_rel_error < tol


def numeric_grad(fn, inputs, h=1e-5):
    """``(f(x + h e_i) - f(x - h e_i)) / 2h`` for every element of every input."""
    grads = []
    for t in inputs:
        flat = t.data.reshape(-1)
        g = np.empty(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = fn().item()
            flat[i] = orig - h
            fm = fn().item()
            flat[i] = orig
            g[i] = (fp - fm) / (2.0 * h)
        grads.append(g.reshape(t.shape))
    return grads


def gradcheck(fn, inputs, h=1e-5, eps=1e-8):
    """Compare autodiff against central differences.

    ``fn`` takes no arguments and builds a scalar tensor from ``inputs``
    (leaf tensors with ``requires_grad``). The error of one element is
    ``|analytic - numeric| / (|numeric| + eps)``; the maximum is reported.
    """
    T.zero_grad(inputs)
    with T.Tape() as tape:
        loss = fn()
    T.backward(loss, tape)
    analytic = [np.zeros(t.shape) if t.grad is None else t.grad.copy() for t in inputs]
    T.zero_grad(inputs)
    numeric = numeric_grad(fn, inputs, h)

    worst, worst_at = 0.0, (-1, -1)
    for idx, (a, n) in enumerate(zip(analytic, numeric)):
        if a.size == 0:
            continue
        err = np.abs(a - n) / (np.abs(n) + eps)
        j = int(np.argmax(err))
        if err.flat[j] > worst:
            worst, worst_at = float(err.flat[j]), (idx, j)
    return GradcheckResult(worst, worst_at, analytic, numeric)
