"""GCN, single-head GAT and MLP layers on top of :mod:`lrw_ood.tensor`."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError
from .graph import Graph, NormalizedAdjacency

GAT_SLOPE = 0.2


@dataclass
class LayerParams:
    weight: T.Tensor
    bias: T.Tensor
    att_src: T.Tensor | None = None
    att_dst: T.Tensor | None = None

    def tensors(self):
        return [t for t in (self.weight, self.bias, self.att_src, self.att_dst) if t is not None]

    @property
    def f_in(self):
        return self.weight.shape[0]

    @property
    def f_out(self):
        return self.weight.shape[1]


@dataclass(frozen=True)
class ModelConfig:
    kind: str
    widths: tuple
    activation: str = "relu"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if self.kind not in ("gcn", "gat", "mlp"):
            raise ConfigError(f"unknown model kind {self.kind!r}", key="kind")
        if len(self.widths) < 2 or min(self.widths) < 1:
            raise ConfigError(f"widths need ≥ 2 positive entries, got {self.widths}", key="widths")
        if self.activation != "relu":
            raise ConfigError(f"only relu hidden activations are supported, got {self.activation!r}")


def glorot_bound(f_in, f_out):
    return float(np.sqrt(6.0 / (f_in + f_out)))


def init_params(config):
    """Glorot-uniform weights and zero biases, deterministic in ``config.seed``."""
    rng = np.random.default_rng(config.seed)
    layers = []
    for f_in, f_out in zip(config.widths[:-1], config.widths[1:]):
        bound = glorot_bound(f_in, f_out)
        weight = T.Tensor(rng.uniform(-bound, bound, (f_in, f_out)), requires_grad=True)
        bias = T.Tensor(np.zeros(f_out), requires_grad=True)
        att_src = att_dst = None
        if config.kind == "gat":
            a_bound = glorot_bound(f_out, 1)
            att_src = T.Tensor(rng.uniform(-a_bound, a_bound, f_out), requires_grad=True)
            att_dst = T.Tensor(rng.uniform(-a_bound, a_bound, f_out), requires_grad=True)
        layers.append(LayerParams(weight, bias, att_src, att_dst))
    return layers


def parameters(layers):
    return [t for layer in layers for t in layer.tensors()]


def _check_width(x, layers):
    if x.ndim != 2 or x.shape[1] != layers[0].f_in:
        raise DimensionError(f"input of shape {x.shape} does not match first layer width {layers[0].f_in}")


def affine(x, layer):
    out = T.matmul(x, layer.weight)
    return out + T.broadcast_to(layer.bias, out.shape)


def _operator(g):
    if isinstance(g, NormalizedAdjacency):
        return g
    if isinstance(g, Graph):
        return g.normalized()
    raise TypeError(f"expected Graph or NormalizedAdjacency, got {type(g).__name__}")


def gcn_forward(g, x, layers):
    """Stacked ``act(Â H W + b)`` with a linear last layer."""
    _check_width(x, layers)
    adj = _operator(g).matrix
    h = x
    for depth, layer in enumerate(layers):
        h = T.spmm(adj, T.matmul(h, layer.weight))
        h = h + T.broadcast_to(layer.bias, h.shape)
        if depth < len(layers) - 1:
            h = T.relu(h)
    return h


def gat_attention(g, wh, layer):
    """Attention weight of every CSR entry ``(i, j)``, normalised over ``N(i)``."""
    src, dst = g.edge_sources(), g.indices
    f_out = layer.f_out
    score_src = T.reshape(T.matmul(wh, T.reshape(layer.att_src, (f_out, 1))), (g.n,))
    score_dst = T.reshape(T.matmul(wh, T.reshape(layer.att_dst, (f_out, 1))), (g.n,))
    logits = T.leaky_relu(T.take(score_src, src) + T.take(score_dst, dst), GAT_SLOPE)
    return T.segment_softmax(logits, src, g.n)


def gat_forward(g, x, layers, return_attention=False):
    """Single-head GAT: LeakyReLU(0.2) logits, softmax over each neighbourhood."""
    if not isinstance(g, Graph):
        raise TypeError("gat_forward needs the Graph itself (neighbour lists)")
    _check_width(x, layers)
    g.normalized()  # raises if a node lacks its self-loop
    src, dst = g.edge_sources(), g.indices
    h, attentions = x, []
    for depth, layer in enumerate(layers):
        wh = T.matmul(h, layer.weight)
        alpha = gat_attention(g, wh, layer)
        attentions.append(alpha.data)
        messages = T.take(wh, dst) * T.broadcast_to(T.reshape(alpha, (len(dst), 1)), (len(dst), layer.f_out))
        h = T.segment_sum(messages, src, g.n)
        h = h + T.broadcast_to(layer.bias, h.shape)
        if depth < len(layers) - 1:
            h = T.relu(h)
    return (h, attentions) if return_attention else h


def mlp_forward(x, layers):
    _check_width(x, layers)
    h = x
    for depth, layer in enumerate(layers):
        h = affine(h, layer)
        if depth < len(layers) - 1:
            h = T.relu(h)
    return h


def graph_forward(kind, g, x, layers):
    if kind == "gcn":
        return gcn_forward(g, x, layers)
    if kind == "gat":
        return gat_forward(g, x, layers)
    raise ConfigError(f"unknown graph backbone {kind!r}", key="backbone")
