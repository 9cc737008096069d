"""Two-stage training (walk encoder, then classifier), evaluation, ablations and sweeps."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import backbone
from . import tensor as T
from .errors import ConfigError, DivergenceError, UsageError
from .kdemi import total_loss
from .lrw import LrwEncoder, degree_transitions, lrw_encode

logger = logging.getLogger(__name__)

ABLATIONS = ("full", "no_sm", "no_rem", "no_lrw")
AGGREGATORS = ("mean_pool", "concat")
SWEEP_AXES = {"walk_steps": "s", "walk_times": "k"}

# seed-derivation tags
_ENCODER, _WALKS, _EVAL_WALKS, _CLASSIFIER, _AUX, _REPEAT = range(1, 7)


def derive_seed(*parts):
    """Deterministic 63-bit seed from a tuple of non-negative integers.

    The low 32-bit word of every part comes first; higher words follow as
    ``(position, word)`` pairs, so parts below 2**32 keep their old seeds.
    """
    parts = [int(p) for p in parts]
    if any(p < 0 for p in parts):
        raise ConfigError(f"seed parts must be non-negative, got {parts}", key="seed")
    words = [p & 0xFFFFFFFF for p in parts] + [len(parts)]
    for i, p in enumerate(parts):
        p >>= 32
        while p:
            words += [i, p & 0xFFFFFFFF]
            p >>= 32
    state = np.random.SeedSequence(words)
    return int(state.generate_state(1, np.uint64)[0] >> np.uint64(1))


@dataclass(frozen=True)
class TrainConfig:
    k: int = 4
    s: int = 1
    d: int = 64
    d_h: int = 8
    l1: int = 2
    l2: int = 2
    lr: float = 1e-2
    epochs_stage1: int = 100
    epochs_stage2: int = 200
    aggregator: str = "mean_pool"
    backbone: str = "gcn"
    ablation: str = "full"
    seed: int = 0
    repeats: int = 1
    transition: str = "cosine"
    weight_decay: float = 5e-4
    max_kde_reference: int = 512
    embedding_norm: str = "graph"
    kde_leave_one_out: bool = False

    def validate(self):
        for key in ("k", "s", "d", "d_h", "l1", "l2", "epochs_stage1", "epochs_stage2", "repeats"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be ≥ 1, got {getattr(self, key)}", key=key)
        if not self.lr >= 0:
            raise ConfigError(f"lr must be non-negative, got {self.lr}", key="lr")
        if self.aggregator not in AGGREGATORS:
            raise ConfigError(f"aggregator must be one of {AGGREGATORS}", key="aggregator")
        if self.backbone not in ("gcn", "gat"):
            raise ConfigError("backbone must be 'gcn' or 'gat'", key="backbone")
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"unknown ablation {self.ablation!r}; expected one of {ABLATIONS}", key="ablation")
        if self.transition not in ("cosine", "softmax"):
            raise ConfigError("transition must be 'cosine' or 'softmax'", key="transition")
        if self.embedding_norm not in ("none", "graph"):
            raise ConfigError("embedding_norm must be 'none' or 'graph'", key="embedding_norm")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be non-negative", key="weight_decay")
        return self

    def to_dict(self):
        return asdict(self)


def benchmark_config(**changes):
    """Training settings paired with :func:`lrw_ood.graph.benchmark_spec`.

    Library defaults, except that walk embeddings are concatenated rather
    than mean-pooled so the classifier sees each walk separately.
    """
    return TrainConfig(**{"aggregator": "concat", **changes})


# ---------------------------------------------------------------- optimiser


@dataclass
class AdamState:
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    t: int = 0


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    state.t += 1
    c1 = 1.0 - beta1**state.t
    c2 = 1.0 - beta2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise UsageError(f"gradient shape {g.shape} does not match parameter {p.data.shape}")
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


def _step(params, state, lr, weight_decay=0.0):
    grads = []
    for p in params:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if weight_decay and p.data.ndim == 2:
            g = g + weight_decay * p.data
        grads.append(g)
    adam_step(params, grads, state, lr)
    T.zero_grad(params)


def params_digest(tensors):
    """Stable hash of parameter values (used to check stages do not interfere)."""
    import hashlib

    h = hashlib.sha1()
    for t in tensors:
        h.update(np.ascontiguousarray(t.data).tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------- stage 1


@dataclass
class EncoderStage:
    encoder: LrwEncoder
    loss_curve: list
    breakdowns: list
    aux_head: list | None = None
    timings: dict = field(default_factory=dict)


def _cross_entropy(logits, y):
    logp = T.log_softmax_rows(logits)
    n, c = logits.shape
    picked = T.take(T.reshape(logp, (n * c,)), np.arange(n) * c + np.asarray(y))
    return -T.mean(picked)


def _aux_sufficiency(aux_head):
    """Cross-entropy of a linear head on ``h``: the KL-to-label surrogate used by ``no_sm``."""

    def suff(h, y):
        return _cross_entropy(backbone.mlp_forward(h, aux_head), y)

    return suff


def _check_finite(value, epoch, term):
    if not np.all(np.isfinite(value)):
        raise DivergenceError(f"non-finite {term} at stage-1 epoch {epoch}")


def new_encoder(envs, cfg, seed):
    g0 = envs.graphs[0]
    return LrwEncoder.init(
        g0.num_features, cfg.d, cfg.d_h, cfg.s, cfg.l1, cfg.l2, cfg.backbone, cfg.transition,
        seed=derive_seed(seed, _ENCODER),
    )


def train_encoder_stage(envs, cfg, seed=None, clock=time.perf_counter):
    """Fit the walk encoder on every training environment with the MI loss.

    One optimiser step per training graph per epoch; walks are resampled
    every epoch. ``no_lrw`` returns the untrained encoder and an empty trace.
    """
    cfg.validate()
    seed = cfg.seed if seed is None else seed
    train = envs.by_role("train")
    if not train:
        raise UsageError("no training environment")
    encoder = new_encoder(envs, cfg, seed)
    if cfg.ablation == "no_lrw":
        return EncoderStage(encoder, [], [])

    params = encoder.parameters()
    aux_head, sufficiency = None, None
    if cfg.ablation == "no_sm":
        aux_cfg = backbone.ModelConfig("mlp", [cfg.d_h, train[0][1].num_classes], seed=derive_seed(seed, _AUX))
        aux_head = backbone.init_params(aux_cfg)
        params = params + backbone.parameters(aux_head)
        sufficiency = _aux_sufficiency(aux_head)
    state = AdamState()
    use_rem = cfg.ablation != "no_rem"

    curve, breakdowns = [], []
    timings = dict.fromkeys(("sampler", "transitions", "walks", "path_encoder", "loss", "backward"), 0.0)
    for epoch in range(cfg.epochs_stage1):
        totals, parts = [], []
        for env, g in train:
            with T.Tape() as tape:
                enc = lrw_encode(g, encoder, cfg.k, derive_seed(seed, _WALKS, epoch, env), clock=clock)
                t0 = clock()
                bd = total_loss(
                    enc.by_walk(), g.labels, use_rem=use_rem, sufficiency=sufficiency,
                    max_reference=cfg.max_kde_reference, leave_one_out=cfg.kde_leave_one_out,
                )
                t1 = clock()
            for i, term in enumerate(bd.suff_terms):
                _check_finite(term.data, epoch, f"sufficiency term (walk {i + 1})")
            _check_finite(bd.rem_term.data, epoch, "variance term")
            _check_finite(bd.total.data, epoch, "total loss")
            T.backward(bd.total, tape)
            _step(params, state, cfg.lr)
            t2 = clock()
            for key, val in enc.timings.items():
                timings[key] += val
            timings["loss"] += t1 - t0
            timings["backward"] += t2 - t1
            totals.append(bd.total.item())
            parts.append(bd.as_floats())
        curve.append(float(np.mean(totals)))
        breakdowns.append(parts)
    return EncoderStage(encoder, curve, breakdowns, aux_head, timings)


# ---------------------------------------------------------------- stage 2


def aggregate_embeddings(embeddings, aggregator):
    """Parameter-free pooling of each node's ``k`` walk embeddings.

    ``embeddings`` is an ``(n, k, d_h)`` array (or a sequence of per-node
    ``(k, d_h)`` arrays). ``mean_pool`` gives ``(n, d_h)``; ``concat`` gives
    ``(n, k * d_h)`` in walk order.
    """
    if not isinstance(embeddings, np.ndarray):
        ks = {len(e) for e in embeddings}
        if len(ks) != 1:
            raise UsageError(f"inconsistent number of walks per node: {sorted(ks)}")
    arr = np.asarray(embeddings, dtype=np.float64)
    if arr.ndim != 3:
        raise UsageError(f"expected an (n, k, d_h) array, got shape {arr.shape}")
    if aggregator == "mean_pool":
        return arr.mean(axis=1)
    if aggregator == "concat":
        return arr.reshape(arr.shape[0], -1)
    raise ConfigError(f"unknown aggregator {aggregator!r}", key="aggregator")


def embed_graph(g, env, encoder, cfg, seed):
    """Frozen-encoder walk embeddings for ``g`` with the fixed evaluation walk seed."""
    transitions = degree_transitions(g) if cfg.ablation == "no_lrw" else None
    return lrw_encode(g, encoder, cfg.k, derive_seed(seed, _EVAL_WALKS, env), transitions=transitions)


def standardize(x):
    """Per-column zero mean, unit variance (constant columns are only centred)."""
    sd = x.std(axis=0)
    return (x - x.mean(axis=0)) / np.where(sd > 1e-12, sd, 1.0)


def classifier_inputs(g, env, encoder, cfg, seed):
    enc = embed_graph(g, env, encoder, cfg, seed)
    agg = aggregate_embeddings(enc.as_array(), cfg.aggregator)
    if cfg.embedding_norm == "graph":
        agg = standardize(agg)
    return np.concatenate([g.features, agg], axis=1)


def _copy_layers(layers):
    return [
        backbone.LayerParams(*(None if t is None else T.Tensor(t.data) for t in (l.weight, l.bias, l.att_src, l.att_dst)))
        for l in layers
    ]


def predict_logits(g, x, classifier, kind):
    return backbone.graph_forward(kind, g, T.Tensor(x), classifier).data


def accuracy(logits, y):
    return float(np.mean(np.argmax(logits, axis=1) == y))


@dataclass
class ClassifierStage:
    classifier: list
    best_epoch: int
    val_curve: list
    loss_curve: list
    final_val: float


def train_classifier_stage(envs, encoder, cfg, seed=None, inputs=None):
    """Cross-entropy training on all training environments; keeps the best validation epoch."""
    cfg.validate()
    seed = cfg.seed if seed is None else seed
    if inputs is None:
        inputs = {e: classifier_inputs(g, e, encoder, cfg, seed) for e, g in zip(envs.env_ids, envs.graphs)}
    train, val = envs.by_role("train"), envs.by_role("val")
    g0 = train[0][1]
    widths = [inputs[train[0][0]].shape[1], cfg.d, g0.num_classes]
    clf = backbone.init_params(backbone.ModelConfig(cfg.backbone, widths, seed=derive_seed(seed, _CLASSIFIER)))
    params = backbone.parameters(clf)
    x_train = [(g, T.Tensor(inputs[e])) for e, g in train]
    state = AdamState()

    best, best_acc, best_epoch = _copy_layers(clf), -1.0, -1
    val_curve, loss_curve = [], []
    for epoch in range(cfg.epochs_stage2):
        with T.Tape() as tape:
            losses = [_cross_entropy(backbone.graph_forward(cfg.backbone, g, x, clf), g.labels) for g, x in x_train]
            loss = losses[0] if len(losses) == 1 else T.mean(T.concat([T.reshape(l, (1,)) for l in losses]))
        if not np.isfinite(loss.item()):
            raise DivergenceError(f"non-finite classifier loss at stage-2 epoch {epoch}")
        T.backward(loss, tape)
        _step(params, state, cfg.lr, cfg.weight_decay)
        loss_curve.append(loss.item())
        val_acc = float(np.mean([accuracy(predict_logits(g, inputs[e], clf, cfg.backbone), g.labels) for e, g in val]))
        val_curve.append(val_acc)
        if val_acc > best_acc:
            best, best_acc, best_epoch = _copy_layers(clf), val_acc, epoch
    return ClassifierStage(best, best_epoch, val_curve, loss_curve, val_curve[-1])


# ---------------------------------------------------------------- full model


@dataclass
class TrainedModel:
    encoder: LrwEncoder
    classifier: list
    cfg: TrainConfig
    seed: int
    loss_curve: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)

    def inputs(self, g, env):
        return classifier_inputs(g, env, self.encoder, self.cfg, self.seed)

    def predict(self, g, env):
        return np.argmax(predict_logits(g, self.inputs(g, env), self.classifier, self.cfg.backbone), axis=1)

    def accuracy(self, g, env):
        return float(np.mean(self.predict(g, env) == g.labels))


def fit(envs, cfg, seed=None, clock=time.perf_counter):
    cfg.validate()
    seed = cfg.seed if seed is None else seed
    t0 = clock()
    stage1 = train_encoder_stage(envs, cfg, seed, clock=clock)
    t1 = clock()
    digest = params_digest(stage1.encoder.parameters())
    stage2 = train_classifier_stage(envs, stage1.encoder, cfg, seed)
    t2 = clock()
    if params_digest(stage1.encoder.parameters()) != digest:
        raise RuntimeError("classifier training modified the encoder")
    timings = {"stage1": t1 - t0, "stage2": t2 - t1, **{f"stage1_{k}": v for k, v in stage1.timings.items()}}
    return TrainedModel(stage1.encoder, stage2.classifier, cfg, seed, stage1.loss_curve, timings)


@dataclass
class Metrics:
    """Accuracies over repeats; ``worst_case`` is the minimum per-test-environment mean."""

    env_ids: list
    roles: list
    per_repeat: list
    per_env_accuracy: dict
    test_mean: float
    test_std: float
    val_mean: float
    worst_case: float
    loss_curves: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)

    @property
    def repeats(self):
        return len(self.per_repeat)

    def to_dict(self, include_timings=False):
        out = {
            "env_ids": list(self.env_ids),
            "roles": list(self.roles),
            "repeats": self.repeats,
            "per_env_accuracy": {str(e): a for e, a in self.per_env_accuracy.items()},
            "per_repeat": [{str(e): a for e, a in r.items()} for r in self.per_repeat],
            "test_mean": self.test_mean,
            "test_std": self.test_std,
            "val_mean": self.val_mean,
            "worst_case": self.worst_case,
            "loss_curves": self.loss_curves,
        }
        if include_timings:
            out["timings"] = self.timings
        return out


def summarize(env_ids, roles, per_repeat, loss_curves=(), timings=None):
    """Aggregate per-repeat ``{env_id: accuracy}`` dictionaries into :class:`Metrics`."""
    test = [e for e, r in zip(env_ids, roles) if r == "test"]
    val = [e for e, r in zip(env_ids, roles) if r == "val"]
    per_env = {e: float(np.mean([rep[e] for rep in per_repeat])) for e in env_ids}
    test_means = [float(np.mean([rep[e] for e in test])) for rep in per_repeat]
    return Metrics(
        env_ids=list(env_ids),
        roles=list(roles),
        per_repeat=[dict(r) for r in per_repeat],
        per_env_accuracy=per_env,
        test_mean=float(np.mean(test_means)),
        test_std=float(np.std(test_means)),
        val_mean=float(np.mean([per_env[e] for e in val])),
        worst_case=min(per_env[e] for e in test),
        loss_curves=[list(c) for c in loss_curves],
        timings=dict(timings or {}),
    )


def evaluate(envs, cfg, clock=time.perf_counter):
    """Train and score ``cfg.repeats`` independent models with derived seeds."""
    cfg.validate()
    per_repeat, curves, timings = [], [], {}
    for rep in range(cfg.repeats):
        model = fit(envs, cfg, derive_seed(cfg.seed, _REPEAT, rep), clock=clock)
        per_repeat.append({e: model.accuracy(g, e) for e, g in zip(envs.env_ids, envs.graphs)})
        curves.append(model.loss_curve)
        for key, val in model.timings.items():
            timings[key] = timings.get(key, 0.0) + val
        logger.info("repeat %d: %s", rep, per_repeat[-1])
    return summarize(envs.env_ids, envs.roles, per_repeat, curves, timings)


def run_ablation(envs, cfg, variant=None):
    variant = cfg.ablation if variant is None else variant
    if variant not in ABLATIONS:
        raise ConfigError(f"unknown ablation {variant!r}; expected one of {ABLATIONS}", key="ablation")
    return evaluate(envs, replace(cfg, ablation=variant))


def sweep(envs, cfg, axis, values):
    """Re-run :func:`evaluate` with ``s`` (walk_steps) or ``k`` (walk_times) set to each value."""
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; expected one of {sorted(SWEEP_AXES)}", key="axis")
    values = list(values)
    if not values:
        raise ConfigError("sweep needs at least one value", key="values")
    return [(v, evaluate(envs, replace(cfg, **{SWEEP_AXES[axis]: int(v)}))) for v in values]


def sweep_table(axis, results):
    return [
        {"axis": axis, "value": v, "test_mean": m.test_mean, "test_std": m.test_std, "worst_case": m.worst_case}
        for v, m in results
    ]


def config_fields():
    return [f.name for f in fields(TrainConfig)]
