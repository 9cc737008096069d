"""Command-line entry point.

Exit codes: 0 success, 2 configuration or input error, 3 numeric divergence.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import trainer as tr
from .checkpoint import VERSION as CHECKPOINT_VERSION
from .checkpoint import load_checkpoint, save_checkpoint
from .config import load_config
from .errors import ConfigError, DivergenceError, LrwOodError, ParseError, ValidationError
from .graph import FORMAT_VERSION, load_environment_set, make_environment_set, save_environment_set
from .lrw import write_embedding_csv

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED = 0, 2, 3
REPORT_VERSION = 1

log = logging.getLogger("lrw_ood")


def git_blob_sha1(data):
    """The object id ``git hash-object`` would assign to ``data``."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def dataset_hash(path):
    """sha1 over the sorted ``name blob-id`` lines of every file in the dataset directory."""
    lines = [f"{p.name} {git_blob_sha1(p.read_bytes())}" for p in sorted(Path(path).iterdir()) if p.is_file()]
    return hashlib.sha1("\n".join(lines).encode()).hexdigest()


def _versions(data_dir):
    return {
        "package": __version__,
        "report_format": REPORT_VERSION,
        "graph_format": FORMAT_VERSION,
        "checkpoint_format": CHECKPOINT_VERSION,
        "numpy": np.__version__,
        "dataset_sha1": dataset_hash(data_dir) if data_dir else None,
    }


REPORT_SCHEMA = {
    "config": {"spec": dict, "train": dict},
    "metrics": dict,
    "timings": {"wall_clock": bool},
    "versions": {"package": str, "report_format": int, "graph_format": int, "checkpoint_format": int, "numpy": str},
}


def validate_report(report):
    """Check ``report`` against :data:`REPORT_SCHEMA`; raises ValidationError."""
    if set(report) != set(REPORT_SCHEMA):
        raise ValidationError(f"report keys {sorted(report)} != {sorted(REPORT_SCHEMA)}")
    for key, shape in REPORT_SCHEMA.items():
        value = report[key]
        if not isinstance(value, dict):
            raise ValidationError(f"report field {key!r} must be an object")
        if isinstance(shape, dict):
            for sub, kind in shape.items():
                if not isinstance(value.get(sub), kind):
                    raise ValidationError(f"report field {key}.{sub} must be {kind.__name__}")
    sha = report["versions"].get("dataset_sha1")
    if sha is not None and (not isinstance(sha, str) or len(sha) != 40):
        raise ValidationError("versions.dataset_sha1 must be a 40-character hex digest or null")
    return report


def _write_report(out, cfg, payload, timings, data_dir, csv_rows=None, csv_header=None):
    report = {"config": cfg.to_dict(), "metrics": payload, "timings": timings, "versions": _versions(data_dir)}
    validate_report(report)
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    if cfg.format == "csv" and csv_rows is not None:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(csv_header)
        writer.writerows(csv_rows)
        (out / "report.csv").write_text(buf.getvalue())


def _env_rows(metrics):
    return [
        [e, r, repr(metrics.per_env_accuracy[e])] for e, r in zip(metrics.env_ids, metrics.roles)
    ]


ENV_HEADER = ["env_id", "role", "accuracy"]


def _timings(metrics, wall):
    if not wall:
        return {"wall_clock": False}
    return {"wall_clock": True, **{k: round(v, 6) for k, v in metrics.timings.items()}}


# ---------------------------------------------------------------- commands


def _load_envs(cfg):
    if cfg.data is not None:
        return load_environment_set(cfg.data)
    return make_environment_set(cfg.spec)


def cmd_generate(cfg, args):
    out = Path(cfg.out or "data")
    envs = make_environment_set(cfg.spec)
    save_environment_set(envs, out)
    print(f"wrote {len(envs)} environments to {out}: n={cfg.spec.n} n_env={cfg.spec.n_env} d_spu={cfg.spec.d_spu} seed={cfg.spec.seed}")
    return EXIT_OK


def _prepare_out(cfg):
    out = Path(cfg.out or "run")
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_train(cfg, args):
    envs = _load_envs(cfg)
    out = _prepare_out(cfg)
    t0 = time.perf_counter()
    model = tr.fit(envs, cfg.train, tr.derive_seed(cfg.train.seed, tr._REPEAT, 0))
    per = {e: model.accuracy(g, e) for e, g in zip(envs.env_ids, envs.graphs)}
    metrics = tr.summarize(envs.env_ids, envs.roles, [per], [model.loss_curve], model.timings)
    metrics.timings["total"] = time.perf_counter() - t0
    save_checkpoint(model, out / "model.ckpt", envs.graphs[0].num_features)
    _write_report(out, cfg, metrics.to_dict(), _timings(metrics, args.timings), cfg.data, _env_rows(metrics), ENV_HEADER)
    print(f"test mean {metrics.test_mean:.4f}; worst case {metrics.worst_case:.4f}; checkpoint {out / 'model.ckpt'}")
    return EXIT_OK


def cmd_eval(cfg, args):
    envs = _load_envs(cfg)
    out = _prepare_out(cfg)
    metrics = tr.evaluate(envs, cfg.train)
    _write_report(out, cfg, metrics.to_dict(), _timings(metrics, args.timings), cfg.data, _env_rows(metrics), ENV_HEADER)
    print(f"{metrics.repeats} repeats: test {metrics.test_mean:.4f} ± {metrics.test_std:.4f}; worst case {metrics.worst_case:.4f}")
    return EXIT_OK


def cmd_ablate(cfg, args):
    variant = args.variant or cfg.train.ablation
    if variant not in tr.ABLATIONS:
        raise ConfigError(f"unknown ablation {variant!r}; expected one of {tr.ABLATIONS}", key="variant")
    envs = _load_envs(cfg)
    out = _prepare_out(cfg)
    metrics = tr.run_ablation(envs, cfg.train, variant)
    payload = {"variant": variant, **metrics.to_dict()}
    _write_report(out, cfg, payload, _timings(metrics, args.timings), cfg.data, _env_rows(metrics), ENV_HEADER)
    print(f"{variant}: test {metrics.test_mean:.4f} ± {metrics.test_std:.4f}")
    return EXIT_OK


def _parse_values(text):
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"values must be comma-separated integers, got {text!r}", key="values") from None
    if not values or min(values) < 1:
        raise ConfigError("values must be a non-empty list of positive integers", key="values")
    return values


def cmd_sweep(cfg, args):
    if args.axis not in tr.SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {args.axis!r}; expected one of {sorted(tr.SWEEP_AXES)}", key="axis")
    values = _parse_values(args.values or "")
    envs = _load_envs(cfg)
    out = _prepare_out(cfg)
    results = tr.sweep(envs, cfg.train, args.axis, values)
    table = tr.sweep_table(args.axis, results)
    payload = {"axis": args.axis, "rows": [{**row, "metrics": m.to_dict()} for row, (_, m) in zip(table, results)]}
    timings = {"wall_clock": False}
    if args.timings:
        timings = {"wall_clock": True, "per_value": [{k: round(v, 6) for k, v in m.timings.items()} for _, m in results]}
    rows = [[r["axis"], r["value"], repr(r["test_mean"]), repr(r["test_std"]), repr(r["worst_case"])] for r in table]
    _write_report(out, cfg, payload, timings, cfg.data, rows, ["axis", "value", "test_mean", "test_std", "worst_case"])
    for r in table:
        print(f"{args.axis}={r['value']}: {r['test_mean']:.4f} ± {r['test_std']:.4f}")
    return EXIT_OK


def cmd_dump_embeddings(cfg, args):
    if not args.checkpoint:
        raise ConfigError("dump-embeddings needs --checkpoint", key="checkpoint")
    ckpt = Path(args.checkpoint)
    if not ckpt.is_file():
        raise ConfigError(f"checkpoint not found: {ckpt}", key="checkpoint")
    model, num_features = load_checkpoint(ckpt)
    envs = _load_envs(cfg)
    if envs.graphs[0].num_features != num_features:
        raise ConfigError(
            f"checkpoint expects {num_features} input features, dataset has {envs.graphs[0].num_features}",
            key="checkpoint",
        )
    env = envs.env_ids[0] if args.env is None else args.env
    if env not in envs.env_ids:
        raise ConfigError(f"no environment {env} in dataset (have {envs.env_ids})", key="env")
    target = Path(cfg.out or "embeddings.csv")
    if target.suffix != ".csv":
        target.mkdir(parents=True, exist_ok=True)
        target = target / f"embeddings_env{env}.csv"
    else:
        target.parent.mkdir(parents=True, exist_ok=True)
    encoding = tr.embed_graph(envs.graph(env), env, model.encoder, model.cfg, model.seed)
    write_embedding_csv(encoding, target)
    print(f"wrote {encoding.n * encoding.k} embeddings to {target}")
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "sweep": cmd_sweep,
    "dump-embeddings": cmd_dump_embeddings,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="lrw-ood", description="Learnable random-walk OOD node classification.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--out", help="output directory (file for dump-embeddings)")
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--format", choices=("json", "csv"), help="also write report.csv when csv")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key")
        if name != "generate":
            p.add_argument("--data", help="dataset directory written by generate")
            p.add_argument("--timings", action="store_true", help="record wall-clock timings (reports stop being byte-stable)")
        if name in ("eval", "ablate", "sweep"):
            p.add_argument("--repeats", type=int)
        if name == "ablate":
            p.add_argument("--variant", help="|".join(tr.ABLATIONS))
        if name == "sweep":
            p.add_argument("--axis", required=True, help="walk_steps or walk_times")
            p.add_argument("--values", required=True, help="comma-separated integers")
        if name == "dump-embeddings":
            p.add_argument("--checkpoint", help="model.ckpt written by train")
            p.add_argument("--env", type=int, help="environment id (default: first)")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        overrides = {}
        for item in args.set:
            key, sep, value = item.partition("=")
            if not sep:
                raise ConfigError(f"--set expects KEY=VALUE, got {item!r}", key=item)
            overrides[key.strip()] = value.strip()
        overrides.update(
            {
                "seed": args.seed,
                "out": args.out,
                "format": args.format,
                "data": getattr(args, "data", None),
                "repeats": getattr(args, "repeats", None),
            }
        )
        cfg = load_config(args.config, overrides).validate()
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        where = f" [{exc.key}]" if exc.key and exc.key not in str(exc) else ""
        print(f"config error{where}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ParseError, ValidationError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except LrwOodError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
