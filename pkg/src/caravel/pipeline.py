"""Mask → skeleton → graph → features chains and the cohort batch driver."""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from caravel.config import RunConfig
from caravel.features import FEATURE_COLUMNS, FeatureVector, extract_all
from caravel.graph import VesselGraph, build_graph, prune_spurs, prune_triangles
from caravel.skeleton import estimate_radii, skeletonize
from caravel.volume import CohortManifest, VoxelVolume, load_mask


def derive_graph(volume: VoxelVolume, config: RunConfig) -> VesselGraph:
    """Skeletonize a mask and build its (optionally pruned) vessel graph."""
    skel = skeletonize(volume)
    radii = estimate_radii(volume, skel)
    graph = build_graph(skel, radii)
    if config.effective_prune:
        graph = prune_triangles(graph)
    if config.spur_prune_mm > 0:
        graph = prune_spurs(graph, config.spur_prune_mm)
    return graph


def analyze_volume(volume: VoxelVolume, config: RunConfig) -> tuple[FeatureVector, VesselGraph]:
    """The full single-mask pipeline; every caller goes through here."""
    graph = derive_graph(volume, config)
    features = extract_all(
        volume,
        graph,
        smoothing_factor=config.effective_smoothing,
        sample_factor=config.spline_sample_factor,
        min_box_scale=config.min_box_scale,
        max_box_scale=config.max_box_scale,
    )
    return features, graph


@dataclass
class SubjectOutcome:
    subject_id: str
    features: FeatureVector | None = None
    error: str | None = None


@dataclass
class CohortResult:
    columns: list[str]
    rows: list[dict] = field(default_factory=list)
    errors: list[dict] = field(default_factory=list)


def _analyze_record(record, config: RunConfig) -> SubjectOutcome:
    try:
        volume = load_mask(record.mask_path)
        features, _ = analyze_volume(volume, config)
        return SubjectOutcome(subject_id=record.subject_id, features=features)
    except Exception as exc:  # per-subject isolation: one bad mask never kills the run
        return SubjectOutcome(subject_id=record.subject_id, error=f"{type(exc).__name__}: {exc}")


def run_cohort(manifest: CohortManifest, config: RunConfig) -> CohortResult:
    """Extract global features for every manifest subject.

    Subjects run concurrently up to `config.jobs`, but rows are assembled in
    manifest order from the completed futures, so the output is identical at
    any parallelism degree.
    """
    columns = ["subject_id"] + list(manifest.demographic_columns) + FEATURE_COLUMNS
    result = CohortResult(columns=columns)
    with ThreadPoolExecutor(max_workers=config.jobs) as pool:
        outcomes = list(pool.map(lambda r: _analyze_record(r, config), manifest.rows))
    for record, outcome in zip(manifest.rows, outcomes):
        if outcome.error is not None:
            result.errors.append({"subject_id": outcome.subject_id, "error": outcome.error})
            continue
        row = {"subject_id": outcome.subject_id}
        row.update({k: record.demographics.get(k) for k in manifest.demographic_columns})
        row.update(outcome.features.as_dict())
        result.rows.append(row)
    return result


def format_cell(value) -> str:
    """Stable text form: full-precision floats, empty string for missing."""
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path, columns: list[str], rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([format_cell(row.get(c)) for c in columns])


def read_csv(path) -> tuple[list[str], list[dict]]:
    """Counterpart of write_csv: '' comes back as None, numbers as floats."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = []
        for rec in reader:
            row = {}
            for key, cell in zip(header, rec):
                if cell == "":
                    row[key] = None
                    continue
                try:
                    row[key] = float(cell)
                except ValueError:
                    row[key] = cell
            rows.append(row)
    return header, rows


def feature_json_payload(subject_id: str, scope, features: FeatureVector) -> dict:
    return {
        "subject_id": subject_id,
        "scope": scope,
        "features": features.as_dict(),
        "flags": dict(features.flags),
    }


def write_errors_sidecar(out_path, errors: list[dict]) -> Path:
    out = Path(out_path)
    sidecar = out.with_suffix(out.suffix + ".errors.csv")
    write_csv(sidecar, ["subject_id", "error"], errors)
    return sidecar
