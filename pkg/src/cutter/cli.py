"""Command-line entry point: ``cutter {gen,train,compress,attack,evaluate}``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields
from pathlib import Path
from typing import Sequence, TextIO

import numpy as np

from . import nn
from .attacks import ALL_STRATEGIES, AttackSchedule, AttackStrategy, attack
from .config import ConfigError, RunConfig, build_config, read_config_file
from .evaluation import evaluate, topo_report
from .generators import parse_spec
from .graph import Graph, GraphError, load_edge_list, remove_nodes, write_edge_list
from .models import load_named_params
from .shaping import PenaltyWeights
from .training import Trainer, build_agents, compress

log = logging.getLogger("cutter")

CHECKPOINT_NAME = "checkpoint.ckpt"
CONFIG_SUFFIX = ".cfg"


class UsageError(Exception):
    pass


# --- helpers ----------------------------------------------------------------


def _open_out(path: str | None) -> TextIO:
    if path is None or path == "-":
        return sys.stdout
    return open(path, "w", encoding="utf-8", newline="\n")


def _close_out(fh: TextIO) -> None:
    if fh is not sys.stdout:
        fh.close()


def _load_graph(path: str | None, gen: str | None, seed: int) -> Graph:
    if (path is None) == (gen is None):
        raise UsageError("give exactly one of a graph file or --gen")
    if gen is not None:
        return parse_spec(gen, np.random.default_rng(seed))
    with open(path, encoding="utf-8") as fh:
        return load_edge_list(fh)


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value settings file")
    p.add_argument("--dump-config", action="store_true", help="print the effective settings and exit")
    group = p.add_argument_group("settings (override the config file)")
    for f in fields(RunConfig):
        if f.name == "seed":  # shared with the graph source flags
            continue
        group.add_argument("--" + f.name.replace("_", "-"), dest="cfg_" + f.name, metavar=f.type.upper())


def _resolve_config(args: argparse.Namespace, fallback: Path | None = None) -> RunConfig:
    file_pairs = {}
    source = args.config or (str(fallback) if fallback is not None and fallback.exists() else None)
    if source is not None:
        with open(source, encoding="utf-8") as fh:
            file_pairs = read_config_file(fh)
    overrides = {f.name: getattr(args, "cfg_" + f.name, None) for f in fields(RunConfig)}
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = str(args.seed)
    try:
        return build_config(file_pairs, overrides)
    except ConfigError as exc:
        raise UsageError(str(exc)) from None


def _schedule(args: argparse.Namespace) -> AttackSchedule:
    try:
        return AttackSchedule(args.step, args.max)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


# --- commands ---------------------------------------------------------------


def cmd_gen(args: argparse.Namespace) -> int:
    g = parse_spec(args.spec, np.random.default_rng(args.seed or 0))
    out = _open_out(args.output)
    try:
        write_edge_list(g, out)
    finally:
        _close_out(out)
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    if args.dump_config:
        sys.stdout.write(cfg.dump())
        return 0
    g = _load_graph(args.graph, args.gen, cfg.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    trainer = Trainer(g, cfg)

    def progress(ep: int) -> None:
        if ep % 10 == 0 or ep == cfg.episodes:
            log.info("episode %d/%d", ep, cfg.episodes)

    trainer.train(progress=progress)
    ckpt = out / CHECKPOINT_NAME
    with open(ckpt, "w", encoding="utf-8", newline="\n") as fh:
        nn.save_params(trainer.named_params(), fh)
    (out / (CHECKPOINT_NAME + CONFIG_SUFFIX)).write_text(cfg.dump(), encoding="utf-8")
    (out / "train_log.csv").write_text("\n".join(trainer.train_log) + "\n", encoding="utf-8")
    for kind, lines in trainer.shaping_logs.items():
        (out / f"shaping_{kind}.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    log.info("wrote %s", ckpt)
    return 0


def cmd_compress(args: argparse.Namespace) -> int:
    ckpt = Path(args.checkpoint)
    cfg = _resolve_config(args, fallback=ckpt.with_name(ckpt.name + CONFIG_SUFFIX))
    if args.dump_config:
        sys.stdout.write(cfg.dump())
        return 0
    g = _load_graph(args.graph, args.gen, cfg.seed)
    shared, vda, rda = build_agents(cfg)
    with open(ckpt, encoding="utf-8") as fh:
        load_named_params(nn.load_params(fh), shared, vda.bundle, rda.bundle)
    weights = PenaltyWeights(cfg.w_conn, cfg.w_delete, cfg.w_embed)
    removal = compress(g, vda, rda, cfg.rho, weights)
    out = _open_out(args.output)
    try:
        write_edge_list(remove_nodes(g, removal), out)
    finally:
        _close_out(out)
    with open(args.removed, "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(f"{g.original_label(u)}\n" for u in removal)
    return 0


def cmd_attack(args: argparse.Namespace) -> int:
    g = _load_graph(args.graph, args.gen, args.seed or 0)
    sched = _schedule(args)
    curve = attack(g, args.strategy, sched)
    batch = sched.batch_size(g.alive_count)
    out = _open_out(args.output)
    try:
        out.write("step,frac_removed,connectivity\n")
        for t, value in enumerate(curve.values):
            frac = min(t * batch, g.alive_count) / g.alive_count
            out.write(f"{t},{frac!r},{value!r}\n")
    finally:
        _close_out(out)
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    with open(args.original, encoding="utf-8") as fh:
        original = load_edge_list(fh)
    with open(args.compressed, encoding="utf-8") as fh:
        compressed = load_edge_list(fh)
    names = [s for s in args.strategies.split(",") if s] if args.strategies is not None else [s.value for s in ALL_STRATEGIES]
    if not names:
        raise UsageError("empty strategy list")
    try:
        strategies = [AttackStrategy.parse(s) for s in names]
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    report = evaluate(original, compressed, strategies, _schedule(args))
    out = _open_out(args.output)
    try:
        out.write("strategy,rps\n")
        for s, value in report.per_strategy.items():
            out.write(f"{s.value},{value!r}\n")
        out.write(f"mean,{report.mean!r}\n")
    finally:
        _close_out(out)
    if args.topo is not None:
        topo = topo_report(original, compressed)
        fh = _open_out(args.topo)
        try:
            fh.write("degree_diff,clust_diff,pathlen_diff,sp_kernel\n")
            fh.write(",".join(repr(float(x)) for x in topo.as_tuple()) + "\n")
        finally:
            _close_out(fh)
    return 0


# --- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cutter", description="Robustness-preserving graph compression with cooperating DQN agents.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="count", default=0, help="more log output on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def graph_source(p: argparse.ArgumentParser) -> None:
        p.add_argument("graph", nargs="?", help="edge-list file")
        p.add_argument("--gen", metavar="SPEC", help="synthetic graph instead of a file: er:N,p or ba:N,m")
        p.add_argument("--seed", type=int, help="random seed")

    def schedule(p: argparse.ArgumentParser) -> None:
        p.add_argument("--step", type=float, default=0.01, help="fraction of nodes removed per step")
        p.add_argument("--max", type=float, default=0.40, help="largest fraction removed")

    p = sub.add_parser("gen", parents=[common], help="write a synthetic graph as an edge list")
    p.add_argument("spec", help="er:N,p or ba:N,m")
    p.add_argument("--seed", type=int)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", parents=[common], help="train both agents and write a checkpoint and logs")
    graph_source(p)
    p.add_argument("--out", default="run", help="output directory")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("compress", parents=[common], help="remove ceil((1-rho)N) nodes (set --rho) with a trained checkpoint")
    graph_source(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("-o", "--output", help="compressed edge list (default stdout)")
    p.add_argument("--removed", required=True, help="file for the removed node labels")
    _add_config_flags(p)
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("attack", parents=[common], help="degradation curve of one attack strategy")
    graph_source(p)
    p.add_argument("--strategy", required=True, choices=[s.value for s in AttackStrategy])
    schedule(p)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("evaluate", parents=[common], help="RPS and topology report of a compressed graph")
    p.add_argument("original")
    p.add_argument("compressed")
    p.add_argument("--strategies", help="comma-separated strategy names (default: all)")
    schedule(p)
    p.add_argument("-o", "--output", help="RPS CSV (default stdout)")
    p.add_argument("--topo", help="topology CSV")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except (GraphError, ValueError, OSError, FloatingPointError) as exc:
        print(f"cutter: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
