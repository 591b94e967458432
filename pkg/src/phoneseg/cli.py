"""Command-line entry point: ``phoneseg <subcommand> ...``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure.  Any :class:`RunConfig` key can be given as a flag
(``--lam 0.4``), which overrides the ``--config`` file.
"""
from __future__ import annotations

import argparse
import logging
import sys

from . import pipeline
from .exceptions import ConfigError, DataError, NumericalError

logger = logging.getLogger("phoneseg")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_config_flags(p):
    g = p.add_argument_group("run configuration (overrides --config)")
    g.add_argument("--config", help="TOML key = value file")
    for name, f in pipeline.CONFIG_FIELDS.items():
        g.add_argument("--" + name.replace("_", "-"), dest="cfg_" + name, default=None,
                       metavar=f.type.upper(), help=f"default: {f.default!r}")


def build_parser():
    parser = _Parser(prog="phoneseg", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("split", help="assign 10%% of train utterances to valid")
    p.add_argument("manifest")
    p.add_argument("output", help="path of the new manifest")
    p.add_argument("--valid-fraction", type=float, default=0.1)
    _add_config_flags(p)

    p = sub.add_parser("extract-mel", help="log-Mel features + train-split normalization")
    p.add_argument("manifest")
    _add_config_flags(p)

    p = sub.add_parser("import-features", help="convert .npy feature arrays to FEAT files")
    p.add_argument("manifest")
    p.add_argument("--period", type=float, default=0.020, help="frame period of the arrays (s)")
    _add_config_flags(p)

    p = sub.add_parser("peaks", help="spectral variation peak detection")
    p.add_argument("manifest")
    _add_config_flags(p)

    p = sub.add_parser("kmeans", help="offline k-means on train-split frames")
    p.add_argument("manifest")
    _add_config_flags(p)

    p = sub.add_parser("train", help="segmental k-means HMM training")
    p.add_argument("manifest")
    _add_config_flags(p)

    p = sub.add_parser("decode", help="segment with an HMM model or k-means centroids")
    p.add_argument("manifest")
    p.add_argument("--model", required=True, help="PHMM file (HMM or k-means)")
    _add_config_flags(p)

    p = sub.add_parser("sweep", help="grid search on the valid split")
    p.add_argument("manifest")
    p.add_argument("--grid", required=True, help='e.g. "lam=0,1,2;gamma=0.5,1"')
    p.add_argument("--model", help="k-means file for vq sweeps")
    _add_config_flags(p)

    p = sub.add_parser("evaluate", help="boundary metrics for a boundary file")
    p.add_argument("manifest")
    p.add_argument("boundaries")
    _add_config_flags(p)

    p = sub.add_parser("purity", help="phone and cluster purity for an assignments file")
    p.add_argument("manifest")
    p.add_argument("assignments")
    _add_config_flags(p)
    return parser


def _config(args) -> pipeline.RunConfig:
    overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_") and v is not None}
    return pipeline.load_config(args.config, overrides)


def run(args):
    cfg = _config(args)
    cmd = args.command
    if cmd == "split":
        pipeline.cmd_split(args.manifest, args.output, cfg, args.valid_fraction)
    elif cmd == "extract-mel":
        pipeline.cmd_extract_mel(args.manifest, cfg)
    elif cmd == "import-features":
        pipeline.cmd_import_features(args.manifest, cfg, args.period)
    elif cmd == "peaks":
        res = pipeline.cmd_peaks(args.manifest, cfg)
        print(f"prominence {res['prominence']:.2f}")
        if res["report"] is not None:
            print(res["report"].summary())
    elif cmd == "kmeans":
        model = pipeline.cmd_kmeans(args.manifest, cfg)
        print(f"k-means K={model.K} inertia={model.inertia:.6g}")
    elif cmd == "train":
        model = pipeline.cmd_train(args.manifest, cfg)
        for e in model.history:
            print(f"epoch {e.epoch}: score {e.score:.4f} segments {e.num_segments}")
    elif cmd == "decode":
        res = pipeline.cmd_decode(args.manifest, args.model, cfg)
        if res["report"] is not None:
            print(res["report"].summary())
            print(res["purity"].summary())
        else:
            print("no alignments; evaluation skipped")
    elif cmd == "sweep":
        table = pipeline.cmd_sweep(args.manifest, cfg, args.grid, args.model)
        best = max(table, key=lambda r: r["r_value"])
        print(f"{len(table)} grid points; best R-value {best['r_value']:.4f}")
    elif cmd == "evaluate":
        print(pipeline.cmd_evaluate(args.manifest, args.boundaries, cfg).summary())
    elif cmd == "purity":
        print(pipeline.cmd_purity(args.manifest, args.assignments, cfg).summary())


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        run(args)
    except ConfigError as e:
        print(f"phoneseg: config error: {e}", file=sys.stderr)
        return 1
    except NumericalError as e:
        print(f"phoneseg: numerical failure: {e}", file=sys.stderr)
        return 3
    except (DataError, OSError) as e:
        print(f"phoneseg: data error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
