"""Command line entry points.

Subcommands: train, pretrain, eval, probe, cluster, bench, viz-embed.
Every run-based command takes --config FILE plus repeatable
--set key=value overrides; outputs land under --out run directories.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .analysis import cosine_map, embedding_table, rgb_map, vector_field
from .bench import format_report, run_bench
from .cluster import ClusterConfig, cluster_events
from .config import ConfigError, load_config
from .events import SensorGeometry
from .io import decode_binary, encode_weighted
from .train import (
    build_datasets,
    evaluate_model,
    linear_probe,
    load_model,
    precluster,
    pretrain,
    train,
)


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--set", action="append", default=[], dest="overrides",
                   metavar="KEY=VALUE", help="override one config key")


def _load_cfg(args):
    return load_config(args.config, args.overrides)


def _cmd_train(args) -> int:
    cfg = _load_cfg(args)
    summary = train(cfg, args.out)
    print(f"done: best test accuracy {summary.get('best_accuracy', 0.0):.4f} "
          f"({args.out})")
    return 0


def _cmd_pretrain(args) -> int:
    cfg = _load_cfg(args)
    summary = pretrain(cfg, args.out)
    print(f"done: final pretrain loss {summary.get('pretrain_loss', 0.0):.4f} "
          f"({args.out})")
    return 0


def _cmd_eval(args) -> int:
    cfg = _load_cfg(args)
    train_set, test_set, geom = build_datasets(cfg)
    dataset = train_set if args.split == "train" else test_set
    if cfg.sampler == "cluster":
        dataset = precluster(dataset, cfg, geom)
    model = load_model(cfg, args.checkpoint, geom)
    loss, acc = evaluate_model(model, dataset, cfg)
    print(f"split={args.split} loss={loss:.6f} accuracy={acc:.6f}")
    return 0


def _cmd_probe(args) -> int:
    cfg = _load_cfg(args)
    result = linear_probe(cfg, args.checkpoint, args.blocks)
    print(f"probe blocks={result['k_blocks']} "
          f"train_accuracy={result['train_accuracy']:.6f} "
          f"test_accuracy={result['test_accuracy']:.6f}")
    return 0


def _cmd_cluster(args) -> int:
    stream, geom = decode_binary(args.input)
    ccfg = ClusterConfig(L=args.length, B=args.batch, I_max=args.iters,
                         seed=args.seed)
    ws = cluster_events(stream, ccfg, geom)
    encode_weighted(ws, geom, args.out)
    print(f"{len(stream)} events -> {len(ws)} weighted events ({args.out})")
    return 0


def _cmd_bench(args) -> int:
    cfg = _load_cfg(args)
    _, test_set, geom = build_datasets(cfg)
    report = run_bench(cfg, test_set.streams, test_set.labels,
                       reps=args.reps, n_single=args.n_single, seed=cfg.seed)
    text = format_report(report)
    print(text, end="")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "bench.txt")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
        print(f"written to {path}")
    return 0


def _cmd_viz_embed(args) -> int:
    cfg = _load_cfg(args)
    geom = SensorGeometry(cfg.sensor_width, cfg.sensor_height)
    model = load_model(cfg, args.checkpoint, geom)
    table = embedding_table(model)
    os.makedirs(args.out, exist_ok=True)
    for pol in (0, 1):
        rgb_map(table, geom, pol, os.path.join(args.out, f"rgb_p{pol}.ppm"))
        vector_field(table, geom, pol,
                     os.path.join(args.out, f"field_p{pol}.csv"))
    cosine_map(table, geom, os.path.join(args.out, "cosine.ppm"))
    print(f"analysis images written under {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="event2vec",
        description="event stream embedding toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="supervised training run")
    _add_config_args(p)
    p.add_argument("--out", default="runs/train", help="run directory")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("pretrain", help="masked self-supervised run")
    _add_config_args(p)
    p.add_argument("--out", default="runs/pretrain", help="run directory")
    p.set_defaults(func=_cmd_pretrain)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    _add_config_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("probe", help="linear probe on frozen features")
    _add_config_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--blocks", type=int, required=True,
                   help="frozen prefix depth k")
    p.set_defaults(func=_cmd_probe)

    p = sub.add_parser("cluster", help="aggregate a stream into <= L events")
    p.add_argument("--in", dest="input", required=True, help="input .ev2v")
    p.add_argument("--out", required=True, help="output .ev2w")
    p.add_argument("--L", dest="length", type=int, required=True)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--iters", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_cluster)

    p = sub.add_parser("bench", help="throughput and latency report")
    _add_config_args(p)
    p.add_argument("--out", default="", help="directory for bench.txt")
    p.add_argument("--reps", type=int, default=10)
    p.add_argument("--n-single", type=int, default=100)
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("viz-embed", help="embedding color maps and fields")
    _add_config_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", default="runs/viz", help="output directory")
    p.set_defaults(func=_cmd_viz_embed)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
