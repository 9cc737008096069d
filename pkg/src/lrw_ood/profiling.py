"""Phase timing and peak-memory probes for one stage-1 training step."""

from __future__ import annotations

import time
import tracemalloc

import numpy as np

from . import tensor as T
from .graph import Graph
from .kdemi import total_loss
from .lrw import lrw_encode

PHASES = ("sampler", "transitions", "walks", "path_encoder", "loss", "backward")


def random_graph(n, mean_degree=8, num_features=16, num_classes=3, seed=0):
    """Uniform random graph with about ``n * mean_degree / 2`` edges and Gaussian features.

    Edge count and feature size are linear in ``n``, so it is the
    workload used for the scaling probes.
    """
    rng = np.random.default_rng(seed)
    m = n * mean_degree // 2
    edges = rng.integers(0, n, size=(m, 2))
    edges = edges[edges[:, 0] != edges[:, 1]]
    labels = np.arange(n) % num_classes
    return Graph.from_edges(n, edges, rng.standard_normal((n, num_features)), labels, num_classes)


def stage1_step(g, encoder, k, seed=0, max_reference=512, clock=time.perf_counter):
    """One forward and backward pass of the encoder loss; returns phase seconds."""
    with T.Tape() as tape:
        enc = lrw_encode(g, encoder, k, seed, clock=clock)
        t0 = clock()
        bd = total_loss(enc.by_walk(), g.labels, max_reference=max_reference)
        t1 = clock()
    T.backward(bd.total, tape)
    t2 = clock()
    T.zero_grad(encoder.parameters())
    return {**enc.timings, "loss": t1 - t0, "backward": t2 - t1}


def phase_times(g, encoder, k, seed=0, repeats=5, **kwargs):
    """Fastest seconds per phase over ``repeats`` steps, after one warm-up step.

    The minimum (as in :mod:`timeit`) is the least disturbed by other load
    on the machine.
    """
    stage1_step(g, encoder, k, seed, **kwargs)
    runs = [stage1_step(g, encoder, k, seed + r + 1, **kwargs) for r in range(repeats)]
    out = {p: min(run[p] for run in runs) for p in PHASES}
    out["step"] = min(sum(run.values()) for run in runs)
    return out


def peak_step_memory(g, encoder, k, seed=0, **kwargs):
    """Peak bytes allocated during one step, as seen by ``tracemalloc``."""
    was_tracing = tracemalloc.is_tracing()
    if not was_tracing:
        tracemalloc.start()
    tracemalloc.reset_peak()
    base = tracemalloc.get_traced_memory()[0]
    try:
        stage1_step(g, encoder, k, seed, **kwargs)
        return tracemalloc.get_traced_memory()[1] - base
    finally:
        if not was_tracing:
            tracemalloc.stop()
