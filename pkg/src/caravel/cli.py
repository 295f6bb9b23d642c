"""Command-line front-end: extract, cohort, stats, phantom."""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

from .config import RunConfig
from .phantoms import PHANTOM_KINDS, default_spec, generate
from .pipeline import (
    analyze_volume,
    feature_json_payload,
    run_cohort,
    write_csv,
    write_errors_sidecar,
)
from .regional import REGIONAL_COLUMNS, regional_features
from .stats import CohortTable, run_protocol, write_results
from .volume import load_atlas, load_manifest, load_mask, save_cvol

EXIT_OK = 0
EXIT_FATAL = 1
EXIT_PARTIAL = 2


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None,
                        help="JSON run configuration; flags below override it")
    parser.add_argument("--no-prune", action="store_true",
                        help="keep triangle artifacts instead of pruning them")
    parser.add_argument("--strict-literal", action="store_true",
                        help="disable every pragmatic default (pruning, smoothing)")
    parser.add_argument("--jobs", type=int, default=None,
                        help="parallel subjects (default: CARAVEL_JOBS or 1)")


def _resolve_config(args) -> RunConfig:
    config = RunConfig.load(args.config) if args.config else RunConfig()
    overrides = {}
    if getattr(args, "no_prune", False):
        overrides["prune_triangles"] = False
    if getattr(args, "strict_literal", False):
        overrides["strict_literal"] = True
    jobs = args.jobs if getattr(args, "jobs", None) is not None else _env_jobs()
    if jobs is not None:
        overrides["jobs"] = jobs
    return dataclasses.replace(config, **overrides) if overrides else config


def _env_jobs() -> int | None:
    raw = os.environ.get("CARAVEL_JOBS")
    if raw is None or raw.strip() == "":
        return None
    try:
        return int(raw)
    except ValueError:
        raise ValueError(f"CARAVEL_JOBS must be an integer, got {raw!r}") from None


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_extract(args) -> int:
    config = _resolve_config(args)
    volume = load_mask(args.mask)
    subject_id = args.mask.name.split(".")[0]  # strips .cvol and .nii.gz alike
    out = args.out if args.out else args.mask.parent / (subject_id + ".features.json")

    if args.atlas is None:
        features, _graph = analyze_volume(volume, config)
        _write_json(out, feature_json_payload(subject_id, "global", features))
    else:
        atlas = load_atlas(args.atlas, volume.dims)
        report = regional_features(volume, atlas, config)
        _write_json(out, feature_json_payload(subject_id, "global", report.global_features))
        regional_csv = out.parent / (out.stem + ".regional.csv")
        write_csv(regional_csv, REGIONAL_COLUMNS, report.rows(subject_id))
        print(f"wrote {regional_csv}")
    config.write_sidecar(out)
    print(f"wrote {out}")
    return EXIT_OK


def cmd_cohort(args) -> int:
    config = _resolve_config(args)
    manifest = load_manifest(args.manifest)
    if not manifest.rows:
        raise ValueError(f"manifest {args.manifest} lists no subjects")
    result = run_cohort(manifest, config)
    write_csv(args.out, result.columns, result.rows)
    config.write_sidecar(args.out)
    print(f"wrote {args.out} ({len(result.rows)} subjects)")
    if result.errors:
        sidecar = write_errors_sidecar(args.out, result.errors)
        print(
            f"warning: {len(result.errors)} subject(s) failed; see {sidecar}",
            file=sys.stderr,
        )
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_stats(args) -> int:
    table = CohortTable.from_csv(args.table)
    results = run_protocol(
        table,
        variables=args.variable or None,
        features=args.feature or None,
        stratify_by_site=args.by_site,
        exclude_sites=tuple(args.exclude_site),
    )
    write_results(args.out, results)
    print(f"wrote {args.out} ({len(results)} tests)")
    return EXIT_OK


def cmd_phantom(args) -> int:
    kinds = list(PHANTOM_KINDS) if args.kind == "all" else [args.kind]
    if args.kind == "all":
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        manifest_rows = []
        for kind in kinds:
            _emit_phantom(kind, out_dir / f"{kind}.cvol")
            manifest_rows.append({"subject_id": kind, "mask_path": f"{kind}.cvol"})
        manifest = out_dir / "manifest.csv"
        write_csv(manifest, ["subject_id", "mask_path"], manifest_rows)
        print(f"wrote {manifest} ({len(kinds)} phantoms)")
        return EXIT_OK
    _emit_phantom(args.kind, Path(args.out))
    return EXIT_OK


def _emit_phantom(kind: str, out: Path) -> None:
    volume, truth = generate(default_spec(kind))
    save_cvol(volume, out)
    truth_path = out.parent / (out.stem + ".truth.json")
    spec = default_spec(kind)
    _write_json(
        truth_path,
        {
            "kind": kind,
            "dims": list(spec.dims),
            "spacing": list(spec.spacing),
            "ground_truth": truth,
        },
    )
    print(f"wrote {out} and {truth_path}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="caravel",
        description="Vessel-graph morphometrics from 3D binary masks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_extract = sub.add_parser("extract", help="features for one mask (+ atlas regions)")
    p_extract.add_argument("--mask", type=Path, required=True)
    p_extract.add_argument("--atlas", type=Path, default=None)
    p_extract.add_argument("--out", type=Path, default=None,
                           help="feature JSON path (default: next to the mask)")
    _add_config_flags(p_extract)
    p_extract.set_defaults(func=cmd_extract)

    p_cohort = sub.add_parser("cohort", help="batch extraction over a manifest")
    p_cohort.add_argument("--manifest", type=Path, required=True)
    p_cohort.add_argument("--out", type=Path, required=True)
    _add_config_flags(p_cohort)
    p_cohort.set_defaults(func=cmd_cohort)

    p_stats = sub.add_parser("stats", help="association protocol over a cohort CSV")
    p_stats.add_argument("table", type=Path)
    p_stats.add_argument("--out", type=Path, required=True)
    p_stats.add_argument("--exclude-site", action="append", default=[],
                         metavar="SITE", help="drop rows from this site (repeatable)")
    p_stats.add_argument("--by-site", action="store_true",
                         help="run the protocol separately inside each site")
    p_stats.add_argument("--variable", action="append", default=[],
                         help="demographic column to test (repeatable; default all)")
    p_stats.add_argument("--feature", action="append", default=[],
                         help="feature column to test (repeatable; default all)")
    p_stats.set_defaults(func=cmd_stats)

    p_phantom = sub.add_parser("phantom", help="synthetic mask with analytic ground truth")
    p_phantom.add_argument("kind", choices=list(PHANTOM_KINDS) + ["all"])
    p_phantom.add_argument("--out", type=Path, required=True,
                           help=".cvol path, or a directory for 'all'")
    p_phantom.set_defaults(func=cmd_phantom)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"caravel: error: {exc}", file=sys.stderr)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
