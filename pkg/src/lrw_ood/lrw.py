"""Learnable random walks: similarity transitions, walk sampling, path encoding.

The pipeline for one graph is

1. soft embeddings ``z = GNN(A, X)`` (:func:`compute_soft_embeddings`);
2. per-node transition distributions over ``N(i)`` from ``cos(z_i, z_j)``
   (:func:`transition_probs`);
3. ``k`` walks of ``s`` steps from every node (:func:`sample_walks`);
4. ``h = MLP(concat(z_j for j on the walk))`` (:func:`encode_paths`).

Sampling is not differentiable; gradients reach the sampler network
through the ``z`` rows the path encoder reads.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import backbone
from . import tensor as T
from .errors import ConfigError, DimensionError, UsageError

UNIFORM_FALLBACK = 1e-12


@dataclass
class TransitionDistribution:
    """Row-stochastic weights aligned with a graph's CSR neighbour lists."""

    indptr: np.ndarray
    indices: np.ndarray
    probs: np.ndarray

    @property
    def n(self):
        return len(self.indptr) - 1

    def row(self, i):
        lo, hi = self.indptr[i], self.indptr[i + 1]
        return self.indices[lo:hi], self.probs[lo:hi]

    def dense(self):
        out = np.zeros((self.n, self.n))
        src = np.repeat(np.arange(self.n), np.diff(self.indptr))
        out[src, self.indices] = self.probs
        return out


@dataclass(frozen=True)
class WalkPath:
    start: int
    nodes: tuple
    walk_index: int


@dataclass
class LrwEmbedding:
    node: int
    walk_index: int
    h: np.ndarray


def _row_normalize(g, scores):
    src = g.edge_sources()
    totals = np.bincount(src, weights=scores, minlength=g.n)
    degenerate = totals < UNIFORM_FALLBACK
    if degenerate.any():
        scores = np.where(degenerate[src], 1.0, scores)
        totals = np.bincount(src, weights=scores, minlength=g.n)
    return scores / totals[src]


def cosine_scores(g, z):
    """``cos(z_i, z_j)`` for every CSR entry; pairs with a zero-norm row score 0."""
    z = z.data if isinstance(z, T.Tensor) else np.asarray(z, dtype=np.float64)
    src, dst = g.edge_sources(), g.indices
    norms = np.linalg.norm(z, axis=1)
    dots = np.einsum("ij,ij->i", z[src], z[dst])
    denom = norms[src] * norms[dst]
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = np.where(denom > 0, dots / np.where(denom > 0, denom, 1.0), 0.0)
    return np.clip(cos, -1.0, 1.0)


def transition_probs(g, z, mode="cosine", temperature=1.0):
    """Transition distribution over each neighbourhood from embedding similarity.

    ``mode="cosine"`` maps ``cos`` to ``(1 + cos) / 2`` and L1-normalises;
    ``mode="softmax"`` takes a softmax of ``cos / temperature``. Rows whose
    scores all vanish fall back to uniform.
    """
    cos = cosine_scores(g, z)
    if mode == "cosine":
        scores = 0.5 * (1.0 + cos)
    elif mode == "softmax":
        src = g.edge_sources()
        logits = cos / temperature
        peak = np.full(g.n, -np.inf)
        np.maximum.at(peak, src, logits)
        scores = np.exp(logits - peak[src])
    else:
        raise ConfigError(f"unknown transition mode {mode!r}", key="transition")
    return TransitionDistribution(g.indptr, g.indices, _row_normalize(g, scores))


def degree_transitions(g):
    """The fixed ``D^-1 A`` walk used when the sampler is not learned."""
    return TransitionDistribution(g.indptr, g.indices, 1.0 / g.degrees[g.edge_sources()].astype(np.float64))


# ---------------------------------------------------------------- sampling

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


def _mix(x):
    x = x ^ (x >> np.uint64(30))
    x = x * _M1
    x = x ^ (x >> np.uint64(27))
    x = x * _M2
    return x ^ (x >> np.uint64(31))


def stream_uniforms(seed, nodes, walk, step):
    """Uniforms in [0, 1) that depend only on ``(seed, node, walk, step)``.

    A counter-based hash (splitmix64 finaliser); any subset of nodes can
    be drawn in any order and gets the same numbers.
    """
    with np.errstate(over="ignore"):
        seed_key = _mix(np.asarray([seed & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64) + _GOLDEN)
        x = _mix(seed_key ^ (np.asarray(nodes, dtype=np.uint64) * _GOLDEN))
        x = _mix(x ^ np.uint64((walk + 1) * 0x632BE59BD9B4E019 & 0xFFFFFFFFFFFFFFFF))
        x = _mix(x ^ np.uint64((step + 1) * 0x85EBCA77C2B2AE63 & 0xFFFFFFFFFFFFFFFF))
    return (x >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


def sample_walks(g, dist, k, s, seed, nodes=None):
    """Sample ``k`` walks of ``s`` steps from each start node.

    Returns an int array of shape ``(len(nodes), k, s + 1)``; entry
    ``[i, r]`` is the walk with index ``r`` (0-based) from ``nodes[i]``,
    starting with ``nodes[i]`` itself.
    """
    if k < 1 or s < 1:
        raise UsageError(f"need k ≥ 1 and s ≥ 1, got k={k}, s={s}")
    nodes = np.arange(g.n) if nodes is None else np.asarray(nodes, dtype=np.int64)
    cum = np.cumsum(dist.probs)
    base = np.concatenate([[0.0], cum])[dist.indptr[:-1]]
    mass = np.concatenate([[0.0], cum])[dist.indptr[1:]] - base
    hi = dist.indptr[1:] - 1

    paths = np.empty((len(nodes), k, s + 1), dtype=np.int64)
    paths[:, :, 0] = nodes[:, None]
    for r in range(k):
        cur = nodes.copy()
        for step in range(s):
            u = stream_uniforms(seed, nodes, r, step)
            pos = np.searchsorted(cum, base[cur] + u * mass[cur], side="right")
            pos = np.clip(pos, dist.indptr[cur], hi[cur])
            cur = dist.indices[pos]
            paths[:, r, step + 1] = cur
    return paths


def iter_walk_paths(paths, nodes=None):
    """Yield :class:`WalkPath` records (1-based ``walk_index``) from a path array."""
    nodes = np.arange(paths.shape[0]) if nodes is None else nodes
    for i, start in enumerate(nodes):
        for r in range(paths.shape[1]):
            yield WalkPath(int(start), tuple(int(v) for v in paths[i, r]), r + 1)


# ---------------------------------------------------------------- encoding


@dataclass
class LrwEncoder:
    """Sampler GNN plus path-encoder MLP for fixed walk length ``s``."""

    sampler: list
    path_encoder: list
    s: int
    backbone: str = "gcn"
    transition: str = "cosine"

    @classmethod
    def init(cls, num_features, d, d_h, s, l1=2, l2=2, backbone_kind="gcn", transition="cosine", seed=0):
        sampler_cfg = backbone.ModelConfig(backbone_kind, [num_features] + [d] * l1, seed=seed)
        hidden = [d] * (l2 - 1)
        encoder_cfg = backbone.ModelConfig("mlp", [(s + 1) * d] + hidden + [d_h], seed=seed + 1)
        return cls(backbone.init_params(sampler_cfg), backbone.init_params(encoder_cfg), s, backbone_kind, transition)

    @property
    def d(self):
        return self.sampler[-1].f_out

    @property
    def d_h(self):
        return self.path_encoder[-1].f_out

    def parameters(self):
        return backbone.parameters(self.sampler) + backbone.parameters(self.path_encoder)

    def named_arrays(self):
        out = {}
        for prefix, layers in (("sampler", self.sampler), ("path_encoder", self.path_encoder)):
            for i, layer in enumerate(layers):
                for name in ("weight", "bias", "att_src", "att_dst"):
                    t = getattr(layer, name)
                    if t is not None:
                        out[f"{prefix}.{i}.{name}"] = t.data
        return out


def compute_soft_embeddings(g, sampler, backbone_kind="gcn"):
    x = T.Tensor(g.features)
    return backbone.graph_forward(backbone_kind, g, x, sampler)


def encode_paths(paths, z, path_encoder):
    """Encode an ``(..., s + 1)`` path array into rows of ``h`` (one per path)."""
    paths = np.asarray(paths)
    s1 = paths.shape[-1]
    flat = paths.reshape(-1)
    d = z.shape[1]
    if path_encoder[0].f_in != s1 * d:
        raise DimensionError(f"path encoder expects width {path_encoder[0].f_in}, paths give {s1} x {d}")
    rows = T.take(z, flat)
    return backbone.mlp_forward(T.reshape(rows, (len(flat) // s1, s1 * d)), path_encoder)


def encode_path(path, z, path_encoder):
    """Embedding of a single walk (a :class:`WalkPath` or a node sequence)."""
    nodes = path.nodes if isinstance(path, WalkPath) else tuple(path)
    out = encode_paths(np.asarray([nodes]), z, path_encoder)
    return T.reshape(out, (out.shape[1],))


@dataclass
class Encoding:
    """All walk embeddings of one graph, ``h`` of shape ``(n * k, d_h)`` node-major."""

    z: T.Tensor
    paths: np.ndarray
    h: T.Tensor
    k: int
    timings: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.paths.shape[0]

    def walk(self, r):
        """Embeddings of walk ``r`` (0-based) for every node, shape ``(n, d_h)``."""
        return T.take(self.h, np.arange(self.n) * self.k + r)

    def by_walk(self):
        return [self.walk(r) for r in range(self.k)]

    def embeddings(self):
        """:class:`LrwEmbedding` records with 1-based walk indices."""
        h = self.h.data
        return [
            LrwEmbedding(i, r + 1, h[i * self.k + r]) for i in range(self.n) for r in range(self.k)
        ]

    def as_array(self):
        return self.h.data.reshape(self.n, self.k, -1)


def lrw_encode(g, encoder, k, seed, paths=None, transitions=None, clock=None):
    """Run the full encoder on ``g``: ``z``, transitions, walks and ``h``.

    ``paths`` skips sampling (used to hold walks fixed); ``transitions``
    overrides the learned distribution (e.g. :func:`degree_transitions`).
    ``clock`` is an optional callable returning seconds, used to time the
    four phases into ``Encoding.timings``.
    """
    timings = {}
    t0 = clock() if clock else 0.0
    z = compute_soft_embeddings(g, encoder.sampler, encoder.backbone)
    t1 = clock() if clock else 0.0
    dist = None
    if paths is None:
        dist = transitions if transitions is not None else transition_probs(g, z, encoder.transition)
    t2 = clock() if clock else 0.0
    if dist is not None:
        paths = sample_walks(g, dist, k, encoder.s, seed)
    t3 = clock() if clock else 0.0
    h = encode_paths(paths, z, encoder.path_encoder)
    if clock:
        t4 = clock()
        timings = {"sampler": t1 - t0, "transitions": t2 - t1, "walks": t3 - t2, "path_encoder": t4 - t3}
    return Encoding(z, paths, h, paths.shape[1], timings)


def write_embedding_csv(encoding, path):
    """CSV with header ``node,walk_index,dim0..dimD``; walk indices are 1-based."""
    arr = encoding.as_array()
    d_h = arr.shape[2]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["node", "walk_index"] + [f"dim{j}" for j in range(d_h)])
        for i in range(arr.shape[0]):
            for r in range(arr.shape[1]):
                writer.writerow([i, r + 1] + [repr(float(v)) for v in arr[i, r]])


def read_embedding_csv(path):
    """Inverse of :func:`write_embedding_csv`: returns an ``(n, k, d_h)`` array."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    d_h = len(header) - 2
    n = max(int(r[0]) for r in body) + 1
    k = max(int(r[1]) for r in body)
    out = np.empty((n, k, d_h))
    for r in body:
        out[int(r[0]), int(r[1]) - 1] = [float(v) for v in r[2:]]
    return out
