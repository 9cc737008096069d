"""Gaussian kernel density estimates and the KDE-based mutual-information loss.

Kernel: for a query ``q`` and sample ``x``,
``u^2 = sum_d (q_d - x_d)^2 / (m^2 var_d)`` and the kernel value is
``exp(-u^2/2) / ((2 pi)^(d/2) m^d prod_d sqrt(var_d))``; the density is the
average over samples. ``m`` is the bandwidth (Silverman's rule by default)
and ``var_d`` a diagonal covariance floored at :data:`VAR_FLOOR`.

The sufficiency loss handles categorical labels class-conditionally:
``P(h, y=c) = P_c(h) pi_c`` and ``P(h) = sum_c P_c(h) pi_c``, so the
pointwise ratio ``P(h, y) / (P(h) P(y))`` equals ``P_c(h) / P(h)``.
Embeddings are first whitened with their pooled per-dimension variance,
which makes the loss invariant to rescaling of ``h``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp as _np_logsumexp

from . import tensor as T
from .errors import DimensionError, UsageError

VAR_FLOOR = 1e-5
LN2 = math.log(2.0)


def silverman_bandwidth(N, d_h):
    """Silverman's rule-of-thumb factor ``(4 / (d + 2))^(1/(d+4)) N^(-1/(d+4))``."""
    if N < 2:
        raise UsageError(f"bandwidth needs at least 2 samples, got {N}")
    return (4.0 / (d_h + 2.0)) ** (1.0 / (d_h + 4.0)) * N ** (-1.0 / (d_h + 4.0))


class GaussianKde:
    """Product-Gaussian KDE over the rows of ``samples``.

    Parameters
    ----------
    samples : array, shape (N, d)
    bandwidth : float, optional
        Defaults to :func:`silverman_bandwidth` ``(N, d)``.
    var_diag : array, shape (d,), optional
        Per-dimension variance; defaults to the population variance of the
        samples. Entries are floored at ``VAR_FLOOR``.
    """

    def __init__(self, samples, bandwidth=None, var_diag=None):
        samples = np.asarray(samples, dtype=np.float64)
        if samples.ndim == 1:
            samples = samples[:, None]
        self.samples = samples
        N, d = samples.shape
        if bandwidth is None:
            bandwidth = silverman_bandwidth(N, d)
        if not bandwidth > 0:
            raise UsageError(f"bandwidth must be positive, got {bandwidth}")
        self.bandwidth = float(bandwidth)
        var = samples.var(axis=0) if var_diag is None else np.asarray(var_diag, dtype=np.float64)
        self.var_diag = np.maximum(np.broadcast_to(var, (d,)), VAR_FLOOR)

    @property
    def dim(self):
        return self.samples.shape[1]

    def _log_norm(self):
        d = self.dim
        return (
            0.5 * d * math.log(2.0 * math.pi)
            + d * math.log(self.bandwidth)
            + 0.5 * float(np.sum(np.log(self.var_diag)))
        )

    def log_density(self, query):
        """Log-density at each row of ``query`` (a 1-D query is M points when d = 1, else one point)."""
        q = np.asarray(query, dtype=np.float64)
        if q.ndim <= 1:
            q = q.reshape(-1, 1) if self.dim == 1 else q.reshape(1, -1)
        if q.shape[1] != self.dim:
            raise DimensionError(f"query dimension {q.shape[1]} does not match samples {self.dim}")
        scale = np.sqrt(self.var_diag) * self.bandwidth
        qs, xs = q / scale, self.samples / scale
        sq = (qs * qs).sum(1)[:, None] + (xs * xs).sum(1)[None, :] - 2.0 * qs @ xs.T
        sq = np.maximum(sq, 0.0)
        return _np_logsumexp(-0.5 * sq, axis=1) - math.log(len(xs)) - self._log_norm()

    def density(self, query):
        return np.exp(self.log_density(query))

    __call__ = density


def kde_density(kde, query):
    """Density of ``kde`` at one query point."""
    q = np.asarray(query, dtype=np.float64).reshape(1, -1)
    return float(np.exp(kde.log_density(q))[0])


def estimate_mi_continuous(x, y, bandwidth=None):
    """Resubstitution KDE estimate of ``I(x; y)`` in bits.

    Joint and marginal KDEs use Silverman bandwidths for their own
    dimension unless ``bandwidth`` is given.
    """
    x = np.asarray(x, dtype=np.float64).reshape(len(x), -1)
    y = np.asarray(y, dtype=np.float64).reshape(len(y), -1)
    joint = np.concatenate([x, y], axis=1)
    kj = GaussianKde(joint, bandwidth)
    kx = GaussianKde(x, bandwidth)
    ky = GaussianKde(y, bandwidth)
    ratio = kj.log_density(joint) - kx.log_density(x) - ky.log_density(y)
    return float(np.mean(ratio) / LN2)


# ---------------------------------------------------------------- differentiable loss


def _pairwise_sq(q, r):
    """Squared Euclidean distances between rows of two tensors, shape (len(q), len(r))."""
    nq, nr = q.shape[0], r.shape[0]
    qq = T.broadcast_to(T.reshape(T.sum(q * q, axis=1), (nq, 1)), (nq, nr))
    rr = T.broadcast_to(T.reshape(T.sum(r * r, axis=1), (1, nr)), (nq, nr))
    return qq + rr - 2.0 * T.matmul(q, T.transpose(r))


def _reference_subset(idx, cap):
    if cap is None or len(idx) <= cap:
        return idx
    pick = np.linspace(0, len(idx) - 1, cap).round().astype(np.int64)
    return idx[pick]


@dataclass
class MiTerms:
    """Per-node pieces of the sufficiency loss (all Tensors of shape (N,))."""

    log_joint: T.Tensor
    log_ratio: T.Tensor
    nodes: np.ndarray

    def pointwise_mi_bits(self):
        return self.log_ratio.data / LN2


def mi_terms(h, y, max_reference=None, leave_one_out=False):
    """Class-conditional KDE log-densities for labelled embeddings ``h``.

    Classes with fewer than two samples are dropped (with a warning);
    their nodes do not contribute. ``max_reference`` caps the number of
    kernel centres per class (an evenly strided subset). With
    ``leave_one_out`` a node's own kernel is excluded from every density
    evaluated at that node, which removes the self-match bias that
    otherwise dominates in higher dimensions.
    """
    y = np.asarray(y, dtype=np.int64)
    if h.ndim != 2 or h.shape[0] != len(y):
        raise DimensionError(f"embeddings {h.shape} do not match {len(y)} labels")
    classes, counts = np.unique(y, return_counts=True)
    small = classes[counts < 2]
    if small.size:
        warnings.warn(f"dropping classes with < 2 labelled samples: {small.tolist()}", stacklevel=2)
        keep = np.isin(y, classes[counts >= 2])
        nodes = np.flatnonzero(keep)
        h, y = T.take(h, nodes), y[keep]
        classes, counts = classes[counts >= 2], counts[counts >= 2]
    else:
        nodes = np.arange(len(y))
    if len(classes) == 0:
        raise UsageError("no class has at least two labelled samples")

    N, d = h.shape
    var = T.floor(T.variance(h, axis=0), VAR_FLOOR)
    scale = T.broadcast_to(T.reshape(T.power(var, -0.5), (1, d)), (N, d))
    hw = h * scale

    log_prior = np.log(counts / counts.sum())
    cols = []
    for c, n_c in zip(classes, counts):
        ref = _reference_subset(np.flatnonzero(y == c), max_reference)
        m = silverman_bandwidth(int(n_c), d)
        logits = _pairwise_sq(hw, T.take(hw, ref)) * (-0.5 / (m * m))
        count = np.full(N, float(len(ref)))
        if leave_one_out:
            col = np.full(N, -1)
            col[ref] = np.arange(len(ref))
            rows = np.flatnonzero(col >= 0)
            mask = np.zeros((N, len(ref)))
            mask[rows, col[rows]] = -np.inf
            logits = logits + T.Tensor(mask)
            count[rows] -= 1.0
        log_norm = np.log(count) + 0.5 * d * math.log(2.0 * math.pi) + d * math.log(m)
        cols.append(T.reshape(T.logsumexp(logits, axis=1) - T.Tensor(log_norm), (N, 1)))
    L = T.concat(cols, axis=1)  # L[i, c] = log P_c(h_i)

    C = len(classes)
    log_mix = T.logsumexp(L + T.Tensor(np.broadcast_to(log_prior, (N, C))), axis=1)
    col_of = np.searchsorted(classes, y)
    own = T.take(T.reshape(L, (N * C,)), np.arange(N) * C + col_of)
    log_joint = own + T.Tensor(log_prior[col_of])
    return MiTerms(log_joint, own - log_mix, nodes)


def mi_suff_loss(h, y, max_reference=None, leave_one_out=False):
    """Mean over labelled nodes of ``-P(h_i, y_i) log2[P(h_i, y_i) / (P(h_i) P(y_i))]``."""
    terms = mi_terms(h, y, max_reference, leave_one_out)
    per_node = T.exp(terms.log_joint) * terms.log_ratio * (-1.0 / LN2)
    return T.mean(per_node)


def rem_variance(terms):
    """Population variance of the per-walk sufficiency losses."""
    terms = list(terms)
    if not terms:
        raise UsageError("rem_variance needs at least one term")
    if len(terms) == 1:
        return terms[0] * 0.0
    stacked = T.concat([T.reshape(t, (1,)) for t in terms], axis=0)
    return T.variance(stacked)


@dataclass
class LossBreakdown:
    suff_terms: list
    rem_term: T.Tensor
    total: T.Tensor

    def as_floats(self):
        return {
            "suff_terms": [t.item() for t in self.suff_terms],
            "rem_term": self.rem_term.item(),
            "total": self.total.item(),
        }


def total_loss(h_by_walk, y, use_rem=True, sufficiency=None, max_reference=None, leave_one_out=False):
    """Variance across walk orders plus the mean of the per-walk sufficiency terms.

    ``h_by_walk`` holds one ``(N, d_h)`` tensor per walk index. ``sufficiency``
    replaces :func:`mi_suff_loss` (signature ``(h, y) -> scalar``).
    """
    if sufficiency is None:
        def sufficiency(h, labels):
            return mi_suff_loss(h, labels, max_reference, leave_one_out)

    suff = [sufficiency(h, y) for h in h_by_walk]
    rem = rem_variance(suff) if use_rem else suff[0] * 0.0
    avg = T.mean(T.concat([T.reshape(t, (1,)) for t in suff], axis=0)) if len(suff) > 1 else suff[0]
    return LossBreakdown(suff, rem, rem + avg)
