"""Command-line driver for batch fusion runs.

Subcommands:

* ``index``  -- build the descriptor index and report its shape.
* ``fuse``   -- fuse every query frame and persist the results.
* ``eval``   -- per-frame CSV plus a per-condition summary table.
* ``sweep``  -- evaluate across several ell values (retrieval reused).
* ``synth``  -- generate the seeded synthetic suite.

Exit codes: 0 success, 2 bad configuration or flags, 3 unreadable or
malformed data, 4 run finished but some frames failed.

Every run echoes its resolved configuration to ``config.json`` in the
output directory. The worker count is execution detail, not
configuration: outputs are byte-identical for any ``--workers`` value.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .engine import (COVERAGE_SOURCES, EngineConfig, RunContext, run_eval,
                     run_fuse, sweep_ell)
from .errors import ConfigError, DataFormatError, RoadFusionError
from .evaluation import (DEFAULT_METHODS, METHOD_ORDER, METHOD_PRIOR_QUERY,
                         POOLING_MODES, render_summary, write_frame_csv,
                         write_summary)
from .fusion import (DEFAULT_OMEGA_CLAMP, POSTERIOR_MODES, UPDATE_SCOPES,
                     FusionConfig)
from .manifest import DatasetManifest, load_manifest
from .retrieval import DEFAULT_EXCLUSION_RADIUS_M, build_index
from .synth import DEFAULT_SEED, generate

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_PARTIAL = 4

log = logging.getLogger("roadfusion")


def _add_run_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("manifest", help="dataset manifest path")
    sub.add_argument("--out", required=True, help="output directory")
    sub.add_argument("--k", type=int, default=5, help="template size (default 5)")
    sub.add_argument("--ell", type=int, default=10,
                     help="coverage set size, must exceed k (default 10)")
    sub.add_argument("--omega-min", type=float, default=DEFAULT_OMEGA_CLAMP[0])
    sub.add_argument("--omega-max", type=float, default=DEFAULT_OMEGA_CLAMP[1])
    sub.add_argument("--posterior-mode", choices=POSTERIOR_MODES,
                     default="as_published")
    sub.add_argument("--update-scope", choices=UPDATE_SCOPES,
                     default="road_candidates")
    sub.add_argument("--class", dest="target_class", default=None,
                     help="target class name or index (default: schema road class)")
    sub.add_argument("--radius", type=float, default=DEFAULT_EXCLUSION_RADIUS_M,
                     help="geographic exclusion radius in meters (default 50)")
    sub.add_argument("--coverage-source", choices=COVERAGE_SOURCES,
                     default="reference_mean")
    sub.add_argument("--pooling", choices=POOLING_MODES, default="frame_mean",
                     help="how per-condition means pool frames")
    sub.add_argument("--methods", default=",".join(DEFAULT_METHODS),
                     help="comma-separated methods to run")
    sub.add_argument("--workers", type=int, default=1,
                     help="parallel frames (output-invariant)")
    sub.add_argument("--strict", action="store_true",
                     help="verify every manifest path exists up front")


def _resolve_class(manifest: DatasetManifest, raw: str | None) -> int:
    if raw is None:
        return manifest.schema.road_index
    names = manifest.schema.names
    if raw in names:
        return names.index(raw)
    try:
        index = int(raw)
    except ValueError:
        raise ConfigError(f"unknown class {raw!r}; schema has {', '.join(names)}")
    if not 0 <= index < len(names):
        raise ConfigError(f"class index {index} outside schema of {len(names)} classes")
    return index


def _parse_methods(raw: str) -> tuple[str, ...]:
    methods = tuple(m.strip() for m in raw.split(",") if m.strip())
    unknown = [m for m in methods if m not in METHOD_ORDER]
    if unknown:
        raise ConfigError(f"unknown methods: {', '.join(unknown)}")
    return methods


def _build_config(args, manifest: DatasetManifest,
                  methods: tuple[str, ...]) -> EngineConfig:
    fusion = FusionConfig(road_class=_resolve_class(manifest, args.target_class),
                          k=args.k, ell=args.ell,
                          omega_clamp=(args.omega_min, args.omega_max),
                          posterior_mode=args.posterior_mode,
                          update_scope=args.update_scope)
    return EngineConfig(fusion=fusion, methods=methods,
                        exclusion_radius_m=args.radius,
                        coverage_source=args.coverage_source,
                        pooling=args.pooling)


def _echo_config(args, config: EngineConfig, out: Path, command: str,
                 extra: dict | None = None) -> None:
    payload = {
        "command": command,
        "manifest": str(args.manifest),
        "fusion": {
            "road_class": config.fusion.road_class,
            "k": config.fusion.k,
            "ell": config.fusion.ell,
            "omega_clamp": list(config.fusion.omega_clamp),
            "posterior_mode": config.fusion.posterior_mode,
            "update_scope": config.fusion.update_scope,
        },
        "methods": list(config.methods),
        "exclusion_radius_m": config.exclusion_radius_m,
        "coverage_source": config.coverage_source,
        "pooling": config.pooling,
    }
    if extra:
        payload.update(extra)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "config.json", "w") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True)
        handle.write("\n")


def cmd_index(args) -> int:
    manifest = load_manifest(args.manifest, strict=args.strict)
    index = build_index(manifest)
    print(f"indexed {len(index)} descriptors, dims {index.dims}, "
          f"geotags {index.geotag_count}/{len(index)}")
    return EXIT_OK


def cmd_fuse(args) -> int:
    manifest = load_manifest(args.manifest, strict=args.strict)
    config = _build_config(args, manifest, (METHOD_PRIOR_QUERY,))
    out = Path(args.out)
    _echo_config(args, config, out, "fuse")
    ctx = RunContext(manifest, config)
    done, failures = run_fuse(ctx, out, workers=args.workers)
    print(f"fused {len(done)} queries, {len(failures)} failures -> {out}")
    return EXIT_PARTIAL if failures else EXIT_OK


def cmd_eval(args) -> int:
    manifest = load_manifest(args.manifest, strict=args.strict)
    config = _build_config(args, manifest, _parse_methods(args.methods))
    out = Path(args.out)
    _echo_config(args, config, out, "eval")
    ctx = RunContext(manifest, config)
    report, failures = run_eval(ctx, workers=args.workers)
    write_frame_csv(report.frames, out / "frames.csv")
    write_summary(report, out / "summary.txt")
    print(render_summary(report), end="")
    if failures:
        print(f"{len(failures)} frames failed; see log", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_sweep(args) -> int:
    manifest = load_manifest(args.manifest, strict=args.strict)
    config = _build_config(args, manifest, _parse_methods(args.methods))
    try:
        ell_values = [int(v) for v in args.ell_values.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"bad --ell-values {args.ell_values!r}") from None
    if not ell_values:
        raise ConfigError("need at least one ell value")
    out = Path(args.out)
    _echo_config(args, config, out, "sweep", {"ell_values": ell_values})
    ctx = RunContext(manifest, config)
    rows, failures = sweep_ell(ctx, ell_values, workers=args.workers)
    lines = ["ell,mean_iou"]
    for ell, iou in rows:
        lines.append(f"{ell},{'' if iou is None else f'{iou:.6f}'}")
        print(f"ell={ell:4d}  mean_iou={'n/a' if iou is None else f'{iou:.4f}'}")
    (out / "sweep.csv").write_text("\n".join(lines) + "\n")
    return EXIT_PARTIAL if failures else EXIT_OK


def cmd_synth(args) -> int:
    manifest_path = generate(args.out, seed=args.seed)
    manifest = load_manifest(manifest_path)
    refs = len(manifest.references())
    queries = len(manifest.queries())
    print(f"wrote {refs} references, {queries} queries -> {manifest_path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="roadfusion",
        description="Improve road segmentation by fusing retrieved similar-place priors.",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    p_index = commands.add_parser("index", help="build and describe the descriptor index")
    p_index.add_argument("manifest")
    p_index.add_argument("--strict", action="store_true")
    p_index.set_defaults(func=cmd_index)

    p_fuse = commands.add_parser("fuse", help="fuse all query frames")
    _add_run_flags(p_fuse)
    p_fuse.set_defaults(func=cmd_fuse)

    p_eval = commands.add_parser("eval", help="evaluate methods against ground truth")
    _add_run_flags(p_eval)
    p_eval.set_defaults(func=cmd_eval)

    p_sweep = commands.add_parser("sweep", help="evaluate across several ell values")
    _add_run_flags(p_sweep)
    p_sweep.add_argument("--ell-values", default="6,8,10,15,20",
                         help="comma-separated ell values")
    p_sweep.set_defaults(func=cmd_sweep)

    p_synth = commands.add_parser("synth", help="generate the synthetic suite")
    p_synth.add_argument("--out", required=True)
    p_synth.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p_synth.set_defaults(func=cmd_synth)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except (DataFormatError, RoadFusionError) as exc:
        log.error("%s", exc)
        return EXIT_DATA
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
