"""
Learning where random walks go
==============================

A sampler GNN embeds every node; transition probabilities follow the
cosine similarity of neighbouring embeddings. Training pushes the walk
embeddings to be informative about the labels, which reshapes the
walks themselves.
"""

import numpy as np

from lrw_ood import trainer as tr
from lrw_ood.graph import benchmark_spec, make_environment_set
from lrw_ood.lrw import compute_soft_embeddings, degree_transitions, transition_probs

envs = make_environment_set(benchmark_spec(seed=0))
g = envs.graphs[0]
print(envs.roles, f"homophily {g.homophily():.2f}")

cfg = tr.TrainConfig(epochs_stage1=40, aggregator="concat", seed=0)
untrained = tr.new_encoder(envs, cfg, cfg.seed)
stage = tr.train_encoder_stage(envs, cfg)
print("loss, first and last epoch:", stage.loss_curve[0], stage.loss_curve[-1])

# %%
# How much walk mass stays inside the node's own class?
# ----------------------------------------------------
# Degree-normalised walks follow the graph only. Learned walks can
# shift mass towards same-label neighbours.


def same_class_mass(dist):
    src = g.edge_sources()
    return float(np.sum(dist.probs * (g.labels[src] == g.labels[dist.indices])) / g.n)


for name, dist in [
    ("degree walk", degree_transitions(g)),
    ("untrained", transition_probs(g, compute_soft_embeddings(g, untrained.sampler).data)),
    ("trained", transition_probs(g, compute_soft_embeddings(g, stage.encoder.sampler).data)),
]:
    print(f"{name:12s} same-class transition mass {same_class_mass(dist):.3f}")
