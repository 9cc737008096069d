from dataclasses import replace

import numpy as np
import pytest

from lrw_ood import trainer as tr
from lrw_ood.checkpoint import load_checkpoint, model_arrays, save_checkpoint
from lrw_ood.errors import ParseError
from lrw_ood.graph import SyntheticSpec, make_environment_set

SPEC = SyntheticSpec(block_sizes=(8, 8), d_spu=4, f_clean=3, p_in=0.4, seed=5)
CFG = tr.TrainConfig(k=2, s=2, d=6, d_h=3, epochs_stage1=2, epochs_stage2=3, seed=7)


@pytest.fixture(scope="module", params=["gcn", "gat"])
def trained(request):
    envs = make_environment_set(SPEC)
    return envs, tr.fit(envs, replace(CFG, backbone=request.param))


def test_round_trip_is_bit_exact(trained, tmp_path):
    envs, model = trained
    path = tmp_path / "model.ckpt"
    save_checkpoint(model, path, envs.graphs[0].num_features)
    loaded, nf = load_checkpoint(path)
    assert nf == envs.graphs[0].num_features
    assert loaded.cfg == model.cfg and loaded.seed == model.seed
    a, b = model_arrays(model), model_arrays(loaded)
    assert a.keys() == b.keys()
    for name in a:
        assert a[name].tobytes() == b[name].tobytes(), name
    g = envs.graphs[-1]
    assert np.array_equal(model.predict(g, envs.env_ids[-1]), loaded.predict(g, envs.env_ids[-1]))


def test_header_is_versioned(trained, tmp_path):
    envs, model = trained
    path = tmp_path / "model.ckpt"
    save_checkpoint(model, path, 1)
    assert path.read_text().splitlines()[0] == "lrw-ood-checkpoint 1"


@pytest.mark.parametrize(
    "mangle, line",
    [
        (lambda ls: ["lrw-ood-checkpoint 9"] + ls[1:], 1),
        (lambda ls: ls[:2] + ["seed x"] + ls[3:], None),
        (lambda ls: ls[:-1], None),
        (lambda ls: ls[:6] + [ls[6] + " 1.0"] + ls[7:], 7),
    ],
)
def test_corrupt_checkpoints_raise(trained, tmp_path, mangle, line):
    envs, model = trained
    path = tmp_path / "model.ckpt"
    save_checkpoint(model, path, 3)
    path.write_text("\n".join(mangle(path.read_text().splitlines())) + "\n")
    with pytest.raises(ParseError) as info:
        load_checkpoint(path)
    if line is not None:
        assert info.value.line == line
