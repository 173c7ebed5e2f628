"""Command-line entry point: ``lidarkit {odometry,slam,eval,synth,export-map}``.

Exit codes: 0 success, 1 run failed, 2 configuration or parse error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, load_config
from .dataset_io import ParseError, open_dataset, read_groundtruth, write_trajectory_tum
from .evaluation import AssociationError, InsufficientDataError, ape, rpe, write_series_csv, write_stats_csv
from .pipeline import export_map, run_odometry, run_slam, write_diagnostics, write_loops
from .synthetic import SCENES, SyntheticWorld, generate_synthetic

EXIT_OK, EXIT_FAILED, EXIT_CONFIG = 0, 1, 2

log = logging.getLogger("lidarkit")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _add_config_args(p):
    p.add_argument("--config", help="flat 'section.key = value' config file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one config key (repeatable)")


def _add_run_args(p, out_required=True):
    p.add_argument("dataset", help="dataset directory (scans/ or scan files, optional groundtruth.txt)")
    _add_config_args(p)
    p.add_argument("--out", required=out_required, help="output trajectory (TUM)")
    p.add_argument("--diagnostics", help="per-scan diagnostics CSV")
    p.add_argument("--map", dest="map_out", help="also export the labeled map as PLY")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="lidarkit", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("odometry", help="scan-to-map odometry")
    _add_run_args(p)

    p = sub.add_parser("slam", help="odometry with loop closure and pose-graph correction")
    _add_run_args(p)
    p.add_argument("--graph", help="pose graph export (NODE/EDGE lines)")
    p.add_argument("--loops", help="loop-closure events CSV")

    p = sub.add_parser("eval", help="APE/RPE of an estimate against a reference (TUM files)")
    p.add_argument("est")
    p.add_argument("ref")
    _add_config_args(p)
    p.add_argument("--stats", help="write the stats table as CSV")
    p.add_argument("--series", help="write the per-pose APE series as CSV")
    p.add_argument("--ref-format", choices=["tum", "kitti"], default="tum")

    p = sub.add_parser("synth", help="generate a synthetic ray-cast dataset")
    p.add_argument("scene", choices=SCENES)
    p.add_argument("--out", required=True)
    p.add_argument("--scans", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", type=float, default=0.0, help="range noise std-dev (m)")
    _add_config_args(p)

    p = sub.add_parser("export-map", help="run the pipeline and export the labeled map as PLY")
    p.add_argument("dataset")
    _add_config_args(p)
    p.add_argument("--out", required=True, help="output PLY")
    p.add_argument("--slam", action="store_true", help="use loop-corrected poses")
    return ap


def _run(args, cfg, slam: bool) -> int:
    dataset = open_dataset(args.dataset)
    if len(dataset) == 0:
        raise ParseError(f"no scans found in {args.dataset}")
    result = (run_slam if slam else run_odometry)(dataset, cfg)
    out = getattr(args, "out", None)
    if getattr(args, "command", "") != "export-map" and out:
        write_trajectory_tum(result.trajectory, out)
    if getattr(args, "diagnostics", None):
        write_diagnostics(args.diagnostics, result.diagnostics)
    if getattr(args, "graph", None) and result.graph is not None:
        result.graph.export(args.graph)
    if getattr(args, "loops", None):
        write_loops(args.loops, result.loops)
    map_out = args.out if args.command == "export-map" else getattr(args, "map_out", None)
    if map_out:
        n = export_map(result, map_out)
        log.info("map: %d points -> %s", n, map_out)
    if result.failed(cfg["pipeline.max_skip_fraction"]):
        print(f"run failed: {result.n_skipped}/{len(result.diagnostics)} scans skipped", file=sys.stderr)
        return EXIT_FAILED
    return EXIT_OK


def _eval(args, cfg) -> int:
    est = read_groundtruth(args.est, "tum")
    ref = read_groundtruth(args.ref, args.ref_format, cfg["pipeline.scan_period"])
    max_dt, delta = cfg["eval.max_dt"], cfg["eval.rpe_delta"]
    a = ape(est, ref, align=cfg["eval.align"], max_dt=max_dt)
    r = rpe(est, ref, delta=delta, max_dt=max_dt)
    print("metric,mean,max,rmse,std")
    for name, s in (("ape", a), ("rpe", r)):
        print(f"{name},{s.mean:.6f},{s.max:.6f},{s.rmse:.6f},{s.stdev:.6f}")
    if args.stats:
        write_stats_csv(args.stats, {"ape": a, "rpe": r})
    if args.series:
        write_series_csv(args.series, a)
    return EXIT_OK


def _synth(args, cfg) -> int:
    world = SyntheticWorld(args.scene, n_scans=args.scans, seed=args.seed, noise_std=args.noise,
                           projection=cfg.projection())
    ds = generate_synthetic(world, args.out)
    print(f"{len(ds)} scans -> {Path(args.out)}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command in ("odometry", "slam"):
            return _run(args, cfg, args.command == "slam")
        if args.command == "export-map":
            return _run(args, cfg, args.slam)
        if args.command == "eval":
            return _eval(args, cfg)
        return _synth(args, cfg)
    except (ParseError, FileNotFoundError) as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (AssociationError, InsufficientDataError) as exc:
        print(f"evaluation failed: {exc}", file=sys.stderr)
        return EXIT_FAILED
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
