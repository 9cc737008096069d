"""
Ablations on the synthetic OOD benchmark
========================================

Every environment copies the same graph with its own spurious features.
Three environments train, one selects the checkpoint, one tests. This
script compares the full model against the variants that drop the
learned walks, the MI loss or the variance penalty. Three seeds keep
it quick; the acceptance suite uses ten.
"""

import numpy as np

from lrw_ood import trainer as tr
from lrw_ood.graph import benchmark_spec, make_environment_set

results = {}
for variant in tr.ABLATIONS:
    accs = []
    for seed in range(3):
        envs = make_environment_set(benchmark_spec(seed=seed))
        cfg = tr.benchmark_config(seed=seed, ablation=variant)
        accs.append(tr.evaluate(envs, cfg).test_mean)
    results[variant] = accs
    print(f"{variant:7s} test accuracy {np.mean(accs):.3f}  per seed {np.round(accs, 3)}")

# %%
# Walk length
# -----------
# Sweep walk length on the default task and on a low-homophily variant
# (p_out = 0.04, where most edges cross blocks). A single seed is noisy,
# and with three seeds the ablation ranking above can flip too. The
# acceptance suite uses ten seeds for both comparisons.

for p_out in (0.01, 0.04):
    envs = make_environment_set(benchmark_spec(seed=0, p_out=p_out))
    cfg = tr.benchmark_config(epochs_stage1=50)
    for row in tr.sweep_table("walk_steps", tr.sweep(envs, cfg, "walk_steps", [1, 2, 3])):
        print(f"p_out={p_out}  s={row['value']}  test {row['test_mean']:.3f}")
