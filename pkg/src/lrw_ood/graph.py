"""Graphs, environment families and the synthetic distribution-shift generator.

Graphs are stored in CSR form (``indptr``/``indices``) with symmetric
neighbour lists; self-loops are ordinary entries ``i in neighbors(i)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, ParseError, ValidationError

ROLES = ("train", "val", "test")
GRAPH_SUFFIX = ".graph"
MANIFEST_NAME = "manifest"
FORMAT_VERSION = 1


@dataclass(eq=False)
class Graph:
    """Undirected graph with node features and integer labels.

    Use :meth:`from_edges` rather than the raw constructor; it sorts,
    deduplicates and validates the adjacency.
    """

    indptr: np.ndarray
    indices: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.indptr = np.asarray(self.indptr, dtype=np.int64)
        self.indices = np.asarray(self.indices, dtype=np.int64)
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.num_classes = int(self.num_classes)
        self.validate()

    @classmethod
    def from_edges(cls, n, edges, features, labels, num_classes=None, self_loops=True, symmetrize=True):
        """Build a graph from an ``(m, 2)`` edge array.

        With ``symmetrize`` every edge is mirrored; otherwise the list must
        already contain both directions of each edge. Duplicates and missing
        self-loops are handled according to ``self_loops``.
        """
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if n <= 0:
            raise ValidationError("graph must have at least one node")
        if edges.size and (edges.min() < 0 or edges.max() >= n):
            raise ValidationError(f"edge endpoint out of range [0, {n})")
        src, dst = edges[:, 0], edges[:, 1]
        if symmetrize:
            src, dst = np.concatenate([src, dst]), np.concatenate([dst, src])
        if self_loops:
            loop = np.arange(n)
            src, dst = np.concatenate([src, loop]), np.concatenate([dst, loop])
        adj = sp.csr_matrix((np.ones(len(src)), (src, dst)), shape=(n, n))
        adj.sum_duplicates()
        adj.sort_indices()
        labels = np.asarray(labels, dtype=np.int64)
        if num_classes is None:
            num_classes = int(labels.max()) + 1 if labels.size else 0
        return cls(adj.indptr, adj.indices, features, labels, num_classes)

    # ------------------------------------------------------------ properties
    @property
    def n(self):
        return len(self.indptr) - 1

    @property
    def num_features(self):
        return self.features.shape[1]

    @property
    def edge_count(self):
        """Number of undirected edges, self-loops excluded."""
        src = np.repeat(np.arange(self.n), np.diff(self.indptr))
        return int(np.count_nonzero(src < self.indices))

    @property
    def has_self_loops(self):
        src = np.repeat(np.arange(self.n), np.diff(self.indptr))
        loops = np.zeros(self.n, dtype=bool)
        loops[src[src == self.indices]] = True
        return bool(loops.all())

    @property
    def degrees(self):
        return np.diff(self.indptr)

    def neighbors(self, i):
        return self.indices[self.indptr[i] : self.indptr[i + 1]]

    def edge_sources(self):
        """Source node of every CSR entry (aligned with ``indices``)."""
        return np.repeat(np.arange(self.n), np.diff(self.indptr))

    def adjacency(self):
        ones = np.ones(len(self.indices))
        return sp.csr_matrix((ones, self.indices, self.indptr), shape=(self.n, self.n))

    def normalized(self):
        """Cached :class:`NormalizedAdjacency` of this graph."""
        cached = self.__dict__.get("_normalized")
        if cached is None:
            cached = self.__dict__["_normalized"] = NormalizedAdjacency(self)
        return cached

    def with_features(self, features):
        return Graph(self.indptr.copy(), self.indices.copy(), features, self.labels.copy(), self.num_classes)

    def homophily(self):
        """Fraction of non-loop edges joining same-label endpoints."""
        src = self.edge_sources()
        keep = src != self.indices
        if not keep.any():
            return 1.0
        return float(np.mean(self.labels[src[keep]] == self.labels[self.indices[keep]]))

    # ------------------------------------------------------------ validation
    def validate(self):
        n = self.n
        if n <= 0:
            raise ValidationError("graph must have at least one node")
        if self.features.ndim != 2 or self.features.shape[0] != n:
            raise ValidationError(f"features must be {n} x f, got {self.features.shape}")
        if self.labels.shape != (n,):
            raise ValidationError(f"labels must have length {n}, got {self.labels.shape}")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValidationError(f"labels must lie in [0, {self.num_classes})")
        if self.indices.size and (self.indices.min() < 0 or self.indices.max() >= n):
            raise ValidationError("neighbour index out of range")
        rows = np.diff(self.indptr)
        if np.any(rows < 0):
            raise ValidationError("indptr must be non-decreasing")
        src = np.repeat(np.arange(n), rows)
        key = src * n + self.indices
        if np.any(np.diff(key) <= 0):
            # CSR rows must be sorted without duplicates
            order = np.sort(key)
            if np.any(np.diff(order) == 0):
                raise ValidationError("duplicate edge in neighbour lists")
            raise ValidationError("neighbour lists must be sorted")
        reverse = np.sort(self.indices * n + src)
        if not np.array_equal(reverse, key):
            missing = np.setdiff1d(key, reverse)[0]
            u, v = divmod(int(missing), n)
            raise ValidationError(f"asymmetric edge list: ({u}, {v}) present but ({v}, {u}) missing")

    def __eq__(self, other):
        if not isinstance(other, Graph):
            return NotImplemented
        return (
            self.num_classes == other.num_classes
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
            and self.features.shape == other.features.shape
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
        )

    __hash__ = object.__hash__

    def __repr__(self):
        return (
            f"Graph(n={self.n}, edges={self.edge_count}, features={self.num_features}, "
            f"classes={self.num_classes})"
        )


def add_self_loops(g):
    src = g.edge_sources()
    edges = np.stack([src, g.indices], axis=1)
    return Graph.from_edges(g.n, edges, g.features, g.labels, g.num_classes, self_loops=True, symmetrize=False)


@dataclass
class EnvironmentSet:
    """Graphs that share topology and labels, one per environment."""

    graphs: list
    env_ids: list
    roles: list
    spec: "SyntheticSpec | None" = None

    def __post_init__(self):
        self.env_ids = [int(e) for e in self.env_ids]
        if not len(self.graphs) == len(self.env_ids) == len(self.roles):
            raise ValidationError("graphs, env_ids and roles must have equal length")
        if len(set(self.env_ids)) != len(self.env_ids):
            raise ValidationError(f"environment ids must be unique, got {self.env_ids}")
        for role in self.roles:
            if role not in ROLES:
                raise ValidationError(f"unknown role {role!r}")
        for role in ROLES:
            if role not in self.roles:
                raise ValidationError(f"no environment with role {role!r}")

    def __len__(self):
        return len(self.graphs)

    def by_role(self, role):
        return [(e, g) for e, g, r in zip(self.env_ids, self.graphs, self.roles) if r == role]

    def graph(self, env_id):
        return self.graphs[self.env_ids.index(env_id)]

    def __eq__(self, other):
        if not isinstance(other, EnvironmentSet):
            return NotImplemented
        return (
            self.env_ids == other.env_ids
            and self.roles == other.roles
            and all(a == b for a, b in zip(self.graphs, other.graphs))
        )


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the synthetic multi-environment benchmark.

    ``block_sizes`` gives one block (= one class) per entry. ``p_in`` and
    ``p_out`` are the intra- and inter-block edge probabilities;
    ``class_sep`` scales the class means of the clean features, which are
    drawn with unit noise. ``spu_scale`` multiplies the weights of the
    frozen spurious-feature network (0 removes the environment shift).
    """

    n_env: int = 5
    d_spu: int = 40
    seed: int = 0
    block_sizes: tuple = (100, 100, 100)
    p_in: float = 0.05
    p_out: float = 0.005
    f_clean: int = 16
    class_sep: float = 0.5
    spu_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "block_sizes", tuple(int(b) for b in self.block_sizes))

    def validate(self):
        if self.n_env < 3:
            raise ConfigError("n_env must be ≥ 3", key="n_env")
        if self.d_spu < 1:
            raise ConfigError("d_spu must be ≥ 1", key="d_spu")
        if not self.block_sizes or min(self.block_sizes) < 1:
            raise ConfigError("block_sizes must be non-empty positive integers", key="block_sizes")
        for key in ("p_in", "p_out"):
            p = getattr(self, key)
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"{key} must lie in [0, 1], got {p}", key=key)
        if self.f_clean < 1:
            raise ConfigError("f_clean must be ≥ 1", key="f_clean")
        return self

    @property
    def n(self):
        return sum(self.block_sizes)


def generate_base_graph(spec):
    """Stochastic block model with one block per class and Gaussian class-mean features."""
    spec.validate()
    rng = np.random.default_rng([spec.seed, 0])
    sizes = np.asarray(spec.block_sizes)
    n, num_classes = int(sizes.sum()), len(sizes)
    labels = np.repeat(np.arange(num_classes), sizes)

    iu, ju = np.triu_indices(n, k=1)
    same = labels[iu] == labels[ju]
    prob = np.where(same, spec.p_in, spec.p_out)
    keep = rng.random(len(iu)) < prob
    edges = np.stack([iu[keep], ju[keep]], axis=1)

    means = rng.standard_normal((num_classes, spec.f_clean)) * spec.class_sep
    features = means[labels] + rng.standard_normal((n, spec.f_clean))
    return Graph.from_edges(n, edges, features, labels, num_classes)


def assign_roles(n_env):
    n_train = min(math.ceil(0.6 * n_env), n_env - 2)
    return ["train"] * n_train + ["val"] + ["test"] * (n_env - n_train - 1)


def _frozen_weights(rng, fan_in, fan_out):
    return rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in)


def generate_synthetic_ood(base, spec):
    """Replicate ``base`` once per environment with environment-shifted features.

    Features are ``[X_ori, X_inv + X_spu]`` where ``X_inv`` comes from a frozen
    random graph layer over the one-hot labels (identical in every
    environment) and ``X_spu`` from a frozen random layer over Gaussian
    noise centred on the environment id.
    """
    spec.validate()
    if base.labels.size == 0:
        raise ConfigError("base graph has no labels", key="base")
    rng = np.random.default_rng([spec.seed, 1])
    onehot = np.eye(base.num_classes)[base.labels]
    w_inv = _frozen_weights(rng, base.num_classes, spec.d_spu)
    x_inv = np.tanh(degree_normalize(base).apply(onehot) @ w_inv)
    w_spu = _frozen_weights(rng, spec.d_spu, spec.d_spu) * spec.spu_scale

    graphs, env_ids = [], list(range(spec.n_env))
    for env in env_ids:
        noise = np.random.default_rng([spec.seed, 2, env]).standard_normal((base.n, spec.d_spu)) + env
        x_art = x_inv + np.tanh(noise @ w_spu)
        graphs.append(base.with_features(np.concatenate([base.features, x_art], axis=1)))
    return EnvironmentSet(graphs, env_ids, assign_roles(spec.n_env), spec)


def make_environment_set(spec):
    """Convenience: base graph plus environments in one call."""
    return generate_synthetic_ood(generate_base_graph(spec), spec)


def benchmark_spec(seed=0, **changes):
    """The 300-node, six-block task used for the end-to-end ablation checks.

    Sparse blocks and weak clean-feature means make neighbourhood structure
    the main label signal, while strong spurious weights shift the
    artificial features between environments.
    """
    base = dict(block_sizes=(50,) * 6, p_in=0.06, p_out=0.01, class_sep=0.05, spu_scale=3.0, seed=seed)
    return SyntheticSpec(**{**base, **changes})


class NormalizedAdjacency:
    """Matrix-free access to ``D^-1/2 A D^-1/2`` and ``D^-1 A`` of a self-looped graph."""

    def __init__(self, g):
        if not g.has_self_loops:
            src = g.edge_sources()
            lonely = np.setdiff1d(np.arange(g.n), src[src == g.indices])
            raise ValidationError(f"node {int(lonely[0])} has no self-loop; add self-loops before normalizing")
        self.n = g.n
        deg = g.degrees.astype(np.float64)
        src = g.edge_sources()
        inv_sqrt = 1.0 / np.sqrt(deg)
        sym = inv_sqrt[src] * inv_sqrt[g.indices]
        self.matrix = sp.csr_matrix((sym, g.indices, g.indptr), shape=(g.n, g.n))
        self.row_stochastic = sp.csr_matrix((1.0 / deg[src], g.indices, g.indptr), shape=(g.n, g.n))

    @property
    def shape(self):
        return self.matrix.shape

    def apply(self, x):
        return self.matrix @ np.asarray(x)

    def apply_row_stochastic(self, x):
        return self.row_stochastic @ np.asarray(x)

    def dense(self):
        return self.matrix.toarray()


def degree_normalize(g):
    return NormalizedAdjacency(g)


# ---------------------------------------------------------------- file I/O


def save_graph(g, path):
    """Write ``g`` in the line-oriented text format (see :func:`load_graph`)."""
    path = Path(path)
    lines = [f"{g.n} {g.num_features} {g.num_classes}"]
    lines += [" ".join(f"{v:.17g}" for v in row) for row in g.features]
    lines += [str(int(y)) for y in g.labels]
    src = g.edge_sources()
    lines += [f"{u} {v}" for u, v in zip(src.tolist(), g.indices.tolist())]
    path.write_text("\n".join(lines) + "\n")


def load_graph(path, symmetrize=False):
    """Read a graph file.

    Layout: a header ``n f C``; ``n`` lines of ``f`` floats; ``n`` label
    lines; then one ``u v`` line per directed adjacency entry (both
    directions of every edge, self-loops once). Unless ``symmetrize`` is
    set, an entry without its reverse is rejected.
    """
    path = Path(path)
    raw = path.read_text().splitlines()
    if not raw or not raw[0].strip():
        raise ParseError("missing header 'n f C'", line=1)
    head = raw[0].split()
    if len(head) != 3:
        raise ParseError(f"header must be 'n f C', got {raw[0]!r}", line=1)
    try:
        n, f, num_classes = (int(t) for t in head)
    except ValueError:
        raise ParseError(f"header fields must be integers, got {raw[0]!r}", line=1) from None
    if n <= 0:
        raise ParseError("empty node set (n must be positive)", line=1)
    if len(raw) < 1 + 2 * n:
        raise ParseError(f"expected {n} feature lines and {n} label lines", line=len(raw) + 1)

    features = np.empty((n, f))
    for i in range(n):
        lineno = 2 + i
        tokens = raw[lineno - 1].split()
        if len(tokens) != f:
            raise ParseError(f"expected {f} feature values, got {len(tokens)}", line=lineno)
        try:
            features[i] = [float(t) for t in tokens]
        except ValueError:
            raise ParseError(f"malformed feature value in {raw[lineno - 1]!r}", line=lineno) from None

    labels = np.empty(n, dtype=np.int64)
    for i in range(n):
        lineno = 2 + n + i
        try:
            labels[i] = int(raw[lineno - 1])
        except ValueError:
            raise ParseError(f"malformed label {raw[lineno - 1]!r}", line=lineno) from None

    edges = []
    for lineno in range(2 + 2 * n, len(raw) + 1):
        text = raw[lineno - 1].strip()
        if not text:
            continue
        tokens = text.split()
        if len(tokens) != 2:
            raise ParseError(f"edge line must be 'u v', got {text!r}", line=lineno)
        try:
            u, v = int(tokens[0]), int(tokens[1])
        except ValueError:
            raise ParseError(f"malformed edge {text!r}", line=lineno) from None
        if not (0 <= u < n and 0 <= v < n):
            raise ParseError(f"edge ({u}, {v}) out of range", line=lineno)
        edges.append((u, v))

    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    return Graph.from_edges(n, edges, features, labels, num_classes, self_loops=False, symmetrize=symmetrize)


def _spec_to_dict(spec):
    d = asdict(spec)
    d["block_sizes"] = list(spec.block_sizes)
    return d


def save_environment_set(envs, path):
    """Write ``env_<id>.graph`` files and a JSON ``manifest`` into directory ``path``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    for env, g in zip(envs.env_ids, envs.graphs):
        save_graph(g, path / f"env_{env}{GRAPH_SUFFIX}")
    manifest = {
        "format_version": FORMAT_VERSION,
        "environments": [{"id": e, "role": r} for e, r in zip(envs.env_ids, envs.roles)],
        "seed": envs.spec.seed if envs.spec is not None else None,
        "spec": _spec_to_dict(envs.spec) if envs.spec is not None else None,
    }
    (path / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_environment_set(path):
    path = Path(path)
    manifest_path = path / MANIFEST_NAME
    if not manifest_path.is_file():
        raise ParseError(f"no manifest in {path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"manifest is not valid JSON: {exc.msg}", line=exc.lineno) from None
    spec = None
    if manifest.get("spec") is not None:
        known = {f.name for f in fields(SyntheticSpec)}
        spec = SyntheticSpec(**{k: v for k, v in manifest["spec"].items() if k in known})
    ids = [int(e["id"]) for e in manifest["environments"]]
    roles = [e["role"] for e in manifest["environments"]]
    graphs = [load_graph(path / f"env_{e}{GRAPH_SUFFIX}") for e in ids]
    return EnvironmentSet(graphs, ids, roles, spec)
