"""Command-line entry point: ``hexembed <command> --config run.toml ...``.

Exit codes: 0 success, 1 configuration or usage error, 2 data error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from threadpoolctl import threadpool_limits

from . import pipeline
from ._version import __version__
from .exceptions import ConfigError, HexEmbedError

log = logging.getLogger("hexembed")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _common():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", required=True, help="run config (TOML or JSON)")
    p.add_argument("--out", help="output directory (overrides [output].dir)")
    p.add_argument("--seed", type=int, help="override all seeds")
    p.add_argument("--threads", type=int, default=1, help="BLAS threads (default 1)")
    p.add_argument("--city", action="append", help="restrict to this city; repeatable")
    p.add_argument("--resolution", type=int, help="override the grid resolution")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="hexembed", description="Hexagonal region embeddings from OSM tags.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("featurize", parents=[common], help="count tags per region")
    sub.add_parser("train", parents=[common], help="train the encoder and embed all regions")
    sub.add_parser("stats", parents=[common], help="print per-city tag coverage")

    an = sub.add_parser("analyze", help="cluster or query the embeddings")
    an_sub = an.add_subparsers(dest="analysis", required=True, parser_class=_Parser)
    c = an_sub.add_parser("cluster", parents=[common], help="Ward clustering cut at k")
    c.add_argument("--k", type=int)
    c.add_argument("--truth", help="CSV with region_id,label columns; reports ARI")
    n = an_sub.add_parser("nearest", parents=[common], help="nearest regions to a region")
    n.add_argument("--region", required=True)
    n.add_argument("--top", type=int)
    n.add_argument("--metric", choices=("cosine", "euclidean"))
    n.add_argument("--include-self", action="store_true")
    for op in ("add", "sub"):
        a = an_sub.add_parser(op, parents=[common], help=f"vector {op} of two regions, cosine search")
        a.add_argument("--a", required=True)
        a.add_argument("--b", required=True)
        a.add_argument("--top", type=int)
        a.add_argument("--keep-inputs", action="store_true", help="allow the inputs among the hits")
    i = an_sub.add_parser("interpolate", parents=[common], help="nearest regions along a straight path")
    i.add_argument("--from", dest="from_", required=True)
    i.add_argument("--to", required=True)
    i.add_argument("--steps", type=int)
    i.add_argument("--metric", choices=("cosine", "euclidean"))

    e = sub.add_parser("export-geojson", parents=[common], help="GeoJSON from an assignment or query file")
    e.add_argument("--input", required=True)
    e.add_argument("--output", required=True)

    s = sub.add_parser("synth", help="write a planted synthetic fixture and a matching config")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--cities", type=int, default=2)
    s.add_argument("--rows", type=int, default=20)
    s.add_argument("--cols", type=int, default=24)
    s.add_argument("--epochs", type=int, default=25)
    return parser


def _setup_logging():
    level = os.environ.get("HEXEMBED_LOG", "WARNING").upper()
    if not isinstance(logging.getLevelName(level), int):
        level = "WARNING"
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _load(args):
    cfg = pipeline.PipelineConfig.load(args.config)
    return cfg.override(out=args.out, seed=args.seed, city=args.city, resolution=args.resolution)


def synth(args):
    from .synthetic import planted_benchmark, write_fixture

    cities = [
        planted_benchmark(seed=args.seed + i, extent=(args.rows, args.cols), name=f"city{i}",
                          origin=(0, i * (args.rows + 4)))
        for i in range(args.cities)
    ]
    paths = write_fixture(cities, args.out)
    lines = ['[input]', 'grid = "synthetic"', '']
    for c in cities:
        lines += ['[[input.cities]]', f'name = "{c.name}"', f'elements = "{c.name}.jsonl"',
                  f'boundary = "{c.name}.boundary.geojson"', '']
    lines += ['[training]', f'epochs = {args.epochs}', f'rng_seed = {args.seed}', '',
              '[sampler]', f'rng_seed = {args.seed + 1}', '',
              '[encoder]', f'init_seed = {args.seed}', '',
              '[output]', 'dir = "out"', '']
    cfg_path = os.path.join(args.out, "config.toml")
    with open(cfg_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines))
    print(f"wrote {len(cities)} planted cities, {paths['truth']} and {cfg_path}")
    return 0


def run(args) -> int:
    if args.command == "synth":
        return synth(args)
    if args.threads is not None and args.threads < 1:
        raise ConfigError("--threads must be >= 1")
    cfg = _load(args)
    with threadpool_limits(limits=args.threads):
        if args.command == "featurize":
            pipeline.featurize(cfg)
        elif args.command == "train":
            pipeline.train_stage(cfg)
        elif args.command == "stats":
            pipeline.stats(cfg)
        elif args.command == "export-geojson":
            pipeline.export_geojson(cfg, args.input, args.output)
        elif args.command == "analyze":
            opts = {k: v for k, v in vars(args).items() if v is not None}
            if "from_" in opts:
                opts["from"] = opts.pop("from_")
            pipeline.analyze(cfg, args.analysis, opts)
    return 0


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return run(args)
    except HexEmbedError as exc:
        print(f"hexembed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        # domain errors from numpy/shapely/h3 that escaped validation
        print(f"hexembed: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"hexembed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
