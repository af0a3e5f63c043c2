"""Command-line entry point: ``fedhgn ingest|split|run|sweep|gradcheck|inspect``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import fields, replace

from .config import ALIASES, ExperimentConfig, convert, load_config
from .errors import ConfigurationError, FedHGNError, ParameterError, ParseError
from .graph import dump_graph, graph_summary, load_graph
from .model import CHECKPOINT_MAGIC, read_checkpoint
from .splitters import dump_manifest, format_stats, manifest_stats, read_manifest, split_graph

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2

log = logging.getLogger("fedhgn")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value config file")
    group = p.add_argument_group("config overrides")
    for f in fields(ExperimentConfig):
        group.add_argument(f"--{f.name}", dest=f"cfg_{f.name}", metavar="V")
    for alias, name in ALIASES.items():
        group.add_argument(f"--{alias}", dest=f"cfg_{name}", metavar="V", help=argparse.SUPPRESS)


def _config(args) -> ExperimentConfig:
    overrides = {}
    for f in fields(ExperimentConfig):
        raw = getattr(args, f"cfg_{f.name}", None)
        if raw is not None:
            overrides[f.name] = convert(f.name, raw)
    return load_config(args.config, overrides)


def _write(path: str, text: str) -> None:
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _need(path: str, what: str) -> None:
    if not os.path.isfile(path):
        raise FileNotFoundError(f"{what} not found: {path}")


# ---------------------------------------------------------------------------


def cmd_ingest(args) -> int:
    from .rdf import IngestConfig, build_hetero_graph, parse_ntriples, read_label_table

    _need(args.triples, "triple file")
    _need(args.labels, "label file")
    with open(args.triples, "rb") as fh:
        try:
            triples = parse_ntriples(fh)
        except ParseError as exc:
            raise ParseError(f"{args.triples}: {exc}") from None
    with open(args.labels, encoding="utf-8") as fh:
        try:
            labels = read_label_table(fh)
        except ParseError as exc:
            raise ParseError(f"{args.labels}: {exc}") from None
    icfg = IngestConfig(args.target_type, add_reverse=not args.no_reverse, seed=args.seed)
    if args.type_predicate:
        icfg = replace(icfg, type_predicate=args.type_predicate)
    g = build_hetero_graph(triples, labels, icfg)
    header = (f"fedhgn ingest triples={args.triples} labels={args.labels} "
              f"target_type={args.target_type} reverse={str(not args.no_reverse).lower()} seed={args.seed}")
    _write(args.out, dump_graph(g, header))
    for k, v in graph_summary(g).items():
        print(f"{k} {v}")
    return EXIT_OK


def cmd_split(args) -> int:
    from .experiment import load_dataset

    cfg = _config(args)
    g = load_dataset(cfg)
    seed = cfg.seeds[0]
    m = split_graph(g, cfg.strategy, cfg.K, cfg.p or None, seed, cfg.p_mode)
    if args.out:
        _write(args.out, dump_manifest(m, cfg.header(seed)[2:]))
    sys.stdout.write(format_stats(manifest_stats(m)))
    return EXIT_OK


def cmd_run(args) -> int:
    from .experiment import run_experiment, write_outputs

    cfg = _config(args)
    result = run_experiment(cfg)
    for path in write_outputs(result):
        log.info("wrote %s", path)
    sys.stdout.write(result.summary_text())
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .experiment import format_sweep, load_dataset, run_sweep

    cfg = _config(args)
    try:
        values = [float(v) for v in args.values.split(",") if v.strip()]
    except ValueError:
        raise ConfigurationError(f"bad sweep values {args.values!r}") from None
    rows = run_sweep(cfg, args.param, values, load_dataset(cfg))
    text = format_sweep(rows, cfg.header() + f" sweep={args.param}:{args.values}")
    if args.out:
        _write(args.out, text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .experiment import gradcheck

    corrupt = {args.corrupt_adjoint: 1.01} if args.corrupt_adjoint else None
    res = gradcheck(seed=args.seed, lam=args.lam, d=args.d, L=args.L, B=args.B, corrupt=corrupt)
    print(f"# fedhgn gradcheck seed={args.seed} lam={args.lam} d={args.d} L={args.L} B={args.B}")
    print("\n".join(res.lines()))
    return EXIT_OK if res.passed else EXIT_FAILURE


def cmd_inspect(args) -> int:
    _need(args.path, "file")
    with open(args.path, "rb") as fh:
        raw = fh.read()
    if raw[:4] == CHECKPOINT_MAGIC:
        import io
        for name, arr in read_checkpoint(io.BytesIO(raw)).items():
            print(f"tensor {name} shape {'x'.join(map(str, arr.shape))}")
        return EXIT_OK
    text = raw.decode("utf-8")
    records = {line.split()[0] for line in text.splitlines() if line.strip() and not line.startswith("#")}
    if "split" in records:
        m = read_manifest(text.splitlines())
        print(f"manifest {m.strategy} K {m.K} p {m.p} seed {m.seed} items {len(m.owners)}")
        for k, grp in enumerate(m.groups):
            print(f"group {k} size {len(grp)}")
    elif "ntypes" in records:
        for k, v in graph_summary(load_graph(text)).items():
            print(f"{k} {v}")
    elif "final" in records:
        for line in text.splitlines():
            if line.startswith(("final", "aggregate", "client")):
                print(line)
    elif "aggregate" in records:
        print(text.splitlines()[-1])
    else:
        raise ConfigurationError(f"{args.path}: not a graph dump, manifest, report or checkpoint")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedhgn", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="N-Triples + label table -> graph dump")
    p.add_argument("--triples", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--target-type", required=True, help="IRI of the target node type")
    p.add_argument("--type-predicate")
    p.add_argument("--no-reverse", action="store_true", help="do not add reverse edge types")
    p.add_argument("--seed", type=int, default=0, help="seed for the train/valid split")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("split", help="write a split manifest and print client statistics")
    _add_config_flags(p)
    p.add_argument("--manifest", dest="out")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("run", help="train over every configured seed")
    _add_config_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="rerun with one hyperparameter varied")
    _add_config_flags(p)
    p.add_argument("--param", required=True, choices=["B", "lambda"])
    p.add_argument("--values", required=True, help="comma separated")
    p.add_argument("--table", dest="out", help="write the table here too")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gradcheck", help="finite-difference check of the client objective")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lam", "--lambda", type=float, default=0.5)
    p.add_argument("--d", type=int, default=8)
    p.add_argument("--L", type=int, default=2)
    p.add_argument("--B", type=int, default=4)
    p.add_argument("--corrupt-adjoint", metavar="PRIMITIVE", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("inspect", help="summarise a graph dump, manifest, report or checkpoint")
    p.add_argument("path")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigurationError, ParameterError, FileNotFoundError) as exc:
        print(f"fedhgn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FedHGNError as exc:
        print(f"fedhgn: error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
