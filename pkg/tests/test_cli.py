import csv
import json
import subprocess
import sys

import pytest

from lrw_ood import trainer as tr
from lrw_ood.checkpoint import load_checkpoint
from lrw_ood.cli import build_parser, dataset_hash, git_blob_sha1, main, validate_report
from lrw_ood.errors import DivergenceError, ValidationError
from lrw_ood.graph import load_environment_set
from lrw_ood.lrw import read_embedding_csv

TINY = """\
block_sizes = 10, 10, 10
d_spu = 5
f_clean = 3
p_in = 0.3
k = 2
d = 6
d_h = 3
epochs_stage1 = 2
epochs_stage2 = 4
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "tiny.cfg").write_text(TINY)
    assert main(["generate", "--config", str(root / "tiny.cfg"), "--out", str(root / "data"), "--seed", "3"]) == 0
    return root


def run(workspace, *argv):
    return main([argv[0], "--config", str(workspace / "tiny.cfg"), *argv[1:]])


def test_git_blob_hash_matches_git():
    # `printf 'hello\n' | git hash-object --stdin`
    assert git_blob_sha1(b"hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a"


def test_generate_layout_and_determinism(workspace, tmp_path, capsys):
    files = sorted(p.name for p in (workspace / "data").iterdir())
    assert len([f for f in files if f.endswith(".graph")]) == 5 and "manifest" in files
    assert main(["generate", "--config", str(workspace / "tiny.cfg"), "--out", str(tmp_path / "again"), "--seed", "3"]) == 0
    assert "n=30 n_env=5 d_spu=5 seed=3" in capsys.readouterr().out
    for name in files:
        assert (workspace / "data" / name).read_bytes() == (tmp_path / "again" / name).read_bytes()
    assert dataset_hash(workspace / "data") == dataset_hash(tmp_path / "again")


def test_n_env_two_exits_2_without_output(tmp_path, capsys):
    out = tmp_path / "never"
    assert main(["generate", "--set", "n_env=2", "--out", str(out)]) == 2
    assert "n_env must be ≥ 3" in capsys.readouterr().err
    assert not out.exists()


@pytest.mark.parametrize(
    "argv, needle",
    [
        (["eval", "--set", "walk_count=3"], "walk_count"),
        (["eval", "--set", "k=0"], "k"),
        (["eval", "--config", "/nonexistent.cfg"], "/nonexistent.cfg"),
        (["eval", "--data", "/nonexistent/data"], "/nonexistent/data"),
        (["ablate", "--variant", "no_kde"], "variant"),
        (["sweep", "--axis", "depth", "--values", "1"], "axis"),
        (["sweep", "--axis", "walk_steps", "--values", "1,x"], "values"),
    ],
)
def test_config_errors_exit_2(tmp_path, capsys, argv, needle):
    out = tmp_path / "out"
    assert main([*argv, "--out", str(out)]) == 2
    assert needle in capsys.readouterr().err
    assert not out.exists()


def test_train_writes_report_and_checkpoint(workspace):
    out = workspace / "train"
    assert run(workspace, "train", "--data", str(workspace / "data"), "--out", str(out), "--format", "csv") == 0
    report = validate_report(json.loads((out / "report.json").read_text()))
    assert list(report) == ["config", "metrics", "timings", "versions"]
    assert report["versions"]["dataset_sha1"] == dataset_hash(workspace / "data")
    assert report["timings"] == {"wall_clock": False}
    rows = list(csv.reader((out / "report.csv").open()))
    assert rows[0] == ["env_id", "role", "accuracy"] and len(rows) == 6
    assert (out / "model.ckpt").is_file()


def test_eval_repeats_and_wall_clock_flag(workspace):
    out = workspace / "eval10"
    assert run(workspace, "eval", "--data", str(workspace / "data"), "--out", str(out), "--repeats", "3", "--timings") == 0
    report = json.loads((out / "report.json").read_text())
    metrics = report["metrics"]
    assert len(metrics["per_repeat"]) == 3
    assert {"test_mean", "test_std", "worst_case"} <= set(metrics)
    assert report["timings"]["wall_clock"] is True and report["timings"]["stage1_loss"] > 0


def test_ablate_no_rem_matches_train_at_one_walk(workspace):
    data = str(workspace / "data")
    assert run(workspace, "ablate", "--data", data, "--out", str(workspace / "abl"), "--variant", "no_rem", "--set", "k=1") == 0
    assert run(workspace, "train", "--data", data, "--out", str(workspace / "tr1"), "--set", "k=1") == 0
    abl = json.loads((workspace / "abl" / "report.json").read_text())["metrics"]
    trained = json.loads((workspace / "tr1" / "report.json").read_text())["metrics"]
    assert abl.pop("variant") == "no_rem"
    assert abl == trained


def test_sweep_csv_has_one_row_per_value(workspace):
    out = workspace / "sweep"
    argv = ["sweep", "--data", str(workspace / "data"), "--out", str(out), "--axis", "walk_steps", "--values", "1,2,3"]
    assert run(workspace, *argv, "--format", "csv") == 0
    rows = list(csv.DictReader((out / "report.csv").open()))
    assert [r["value"] for r in rows] == ["1", "2", "3"]
    assert all(r["axis"] == "walk_steps" for r in rows)


def test_dump_embeddings_matches_in_process_encoding(workspace, tmp_path):
    data = str(workspace / "data")
    ckpt = workspace / "dump-model" / "model.ckpt"
    assert run(workspace, "train", "--data", data, "--out", str(ckpt.parent)) == 0
    target = tmp_path / "emb.csv"
    assert run(workspace, "dump-embeddings", "--data", data, "--checkpoint", str(ckpt), "--out", str(target), "--env", "4") == 0
    h = read_embedding_csv(target)
    assert h.shape == (30, 2, 3)
    envs = load_environment_set(data)
    model, _ = load_checkpoint(ckpt)
    expected = tr.embed_graph(envs.graph(4), 4, model.encoder, model.cfg, model.seed)
    assert h.tobytes() == expected.as_array().tobytes()


def test_dump_four_nodes_two_walks(tmp_path):
    cfg = tmp_path / "four.cfg"
    cfg.write_text(TINY.replace("10, 10, 10", "2, 2").replace("p_in = 0.3", "p_in = 1.0"))
    data, run_dir, target = tmp_path / "d", tmp_path / "r", tmp_path / "e.csv"
    assert main(["generate", "--config", str(cfg), "--out", str(data)]) == 0
    assert main(["train", "--config", str(cfg), "--data", str(data), "--out", str(run_dir)]) == 0
    assert main(["dump-embeddings", "--config", str(cfg), "--data", str(data), "--checkpoint", str(run_dir / "model.ckpt"), "--out", str(target)]) == 0
    lines = target.read_text().splitlines()
    assert lines[0] == "node,walk_index,dim0,dim1,dim2" and len(lines) == 9


def test_dump_errors(workspace, tmp_path, capsys):
    missing = tmp_path / "missing.ckpt"
    assert main(["dump-embeddings", "--checkpoint", str(missing)]) == 2
    assert str(missing) in capsys.readouterr().err
    ckpt = workspace / "train" / "model.ckpt"
    if not ckpt.exists():
        pytest.skip("needs the train test's checkpoint")
    # default generator has a different feature width than the checkpoint
    assert main(["dump-embeddings", "--checkpoint", str(ckpt), "--out", str(tmp_path / "x.csv")]) == 2
    assert "features" in capsys.readouterr().err


def test_divergence_exits_3(workspace, monkeypatch, capsys):
    def boom(*args, **kwargs):
        raise DivergenceError("non-finite total loss at stage-1 epoch 0")

    monkeypatch.setattr(tr, "fit", boom)
    assert run(workspace, "train", "--data", str(workspace / "data"), "--out", str(workspace / "boom")) == 3
    assert "epoch 0" in capsys.readouterr().err


def test_report_schema_rejects_missing_keys():
    with pytest.raises(ValidationError):
        validate_report({"config": {}, "metrics": {}})


def test_every_command_has_common_flags():
    parser = build_parser()
    for cmd in ("generate", "train", "eval", "ablate", "sweep", "dump-embeddings"):
        extra = ["--axis", "walk_steps", "--values", "1"] if cmd == "sweep" else []
        args = parser.parse_args([cmd, "--config", "c", "--out", "o", "--seed", str(2**64 - 1), "--format", "csv", *extra])
        assert args.seed == 2**64 - 1 and args.format == "csv"


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "lrw_ood", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "dump-embeddings" in proc.stdout
