"""The fifteen vascular features: morphometric, topological, fractal, geometric.

Curvature is measured on cubic-spline models of the voxel paths. Raw voxel
centerlines carry quantization jitter whose second derivatives would swamp
the true curvature, so path fitting estimates that jitter from third
differences and applies a matched smoothing budget; a zero smoothing factor
recovers the plain interpolating spline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from threading import Lock

import numpy as np
from scipy.interpolate import CubicSpline, splev, splprep

from caravel.graph import (
    VesselGraph,
    closed_walk,
    components,
    extract_segments,
    fundamental_cycle_lengths,
    select_roots,
)
from caravel.volume import VoxelVolume

FEATURE_COLUMNS = [
    "total_length_mm",
    "volume_mm3",
    "bifurcation_count",
    "bifurcation_density_per_mm",
    "loop_count",
    "mean_loop_length_mm",
    "abnormal_degree_count",
    "component_count",
    "fractal_dimension",
    "lacunarity",
    "mean_geodesic_length_mm",
    "mean_curvature_per_mm",
    "mean_square_curvature_per_mm2",
    "arc_over_chord",
    "max_curvature_per_mm",
]

# FITPACK's curve-fitting routines share static workspace and are not
# thread-safe; every splprep/splev call in this module takes this lock.
_FITPACK_LOCK = Lock()


@dataclass
class FeatureVector:
    total_length_mm: float = 0.0
    volume_mm3: float = 0.0
    bifurcation_count: int = 0
    bifurcation_density_per_mm: float | None = None
    loop_count: int = 0
    loop_lengths_mm: list = field(default_factory=list)
    mean_loop_length_mm: float | None = None
    abnormal_degree_count: int = 0
    component_count: int = 0
    fractal_dimension: float | None = None
    lacunarity: float | None = None
    lacunarity_per_scale: list = field(default_factory=list)
    geodesic_lengths_mm: list = field(default_factory=list)
    mean_geodesic_length_mm: float | None = None
    mean_curvature_per_mm: float | None = None
    mean_square_curvature_per_mm2: float | None = None
    arc_over_chord: float | None = None
    max_curvature_per_mm: float | None = None
    curvature_samples: list | None = None
    flags: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        """The fifteen scalar columns, None where a value is undefined."""
        return {name: getattr(self, name) for name in FEATURE_COLUMNS}


# ---------------------------------------------------------------------------
# Morphometric


def total_length(graph: VesselGraph) -> float:
    return graph.total_length_mm()


def mask_volume(volume: VoxelVolume) -> float:
    return volume.foreground_count() * volume.voxel_volume_mm3()


# ---------------------------------------------------------------------------
# Topological


def topology_features(graph: VesselGraph) -> dict:
    degs = graph.degrees()
    comps = components(graph)
    loop_lengths = fundamental_cycle_lengths(graph)
    length = graph.total_length_mm()
    out = {
        "bifurcation_count": int((degs == 3).sum()),
        "abnormal_degree_count": int((degs > 3).sum()),
        "component_count": len(comps),
        "loop_count": len(loop_lengths),
        "loop_lengths_mm": loop_lengths,
        "bifurcation_density_per_mm": None,
    }
    if length > 0:
        out["bifurcation_density_per_mm"] = out["bifurcation_count"] / length
    return out


# ---------------------------------------------------------------------------
# Fractal


def _box_scales(dims, min_scale: int = 1, max_scale: int | None = None) -> list[int]:
    top = min(dims) // 2
    if max_scale is not None:
        top = min(top, max_scale)
    scales = [1]
    while scales[-1] * 2 <= top:
        scales.append(scales[-1] * 2)
    return [s for s in scales if s >= min_scale]


def _box_counts(mask: np.ndarray, scale: int) -> np.ndarray:
    """Per-box foreground counts on an origin-anchored grid of side `scale`.

    The array is zero-padded up to a multiple of the scale, so partial boxes
    at the far faces participate like any others.
    """
    padded_shape = [int(np.ceil(s / scale)) * scale for s in mask.shape]
    pad = [(0, p - s) for p, s in zip(padded_shape, mask.shape)]
    padded = np.pad(mask.astype(np.int64), pad)
    nx, ny, nz = (p // scale for p in padded_shape)
    boxes = padded.reshape(nx, scale, ny, scale, nz, scale)
    return boxes.sum(axis=(1, 3, 5))


def fractal_dimension(
    volume: VoxelVolume, min_scale: int = 1, max_scale: int | None = None
) -> float:
    """Box-counting dimension: slope of log N(ε) against log (1/ε)."""
    mask = volume.data.astype(bool)
    if not mask.any():
        raise ValueError("fractal dimension of an empty mask is undefined")
    scales = _box_scales(volume.dims, min_scale, max_scale)
    if len(scales) < 3:
        raise ValueError(
            f"volume {volume.dims} too small for box counting (need ≥3 dyadic scales, "
            f"i.e. min dimension ≥ 8)"
        )
    counts = [int((_box_counts(mask, s) > 0).sum()) for s in scales]
    x = np.log(1.0 / np.asarray(scales, dtype=float))
    y = np.log(np.asarray(counts, dtype=float))
    slope = np.polyfit(x, y, 1)[0]
    return float(slope)


def lacunarity(
    volume: VoxelVolume, min_scale: int = 1, max_scale: int | None = None
) -> tuple[float, list[tuple[int, float]]]:
    """Gap variance Var(n)/Mean(n)² + 1 over non-overlapping boxes.

    Uses the dyadic scale set, restricted to scales with ≥8 complete boxes;
    zero-count boxes are part of the statistics. Returns the mean across
    scales and the per-scale values.
    """
    mask = volume.data.astype(bool)
    if not mask.any():
        raise ValueError("lacunarity of an empty mask is undefined")
    per_scale = []
    for scale in _box_scales(volume.dims, min_scale, max_scale):
        full = [s // scale for s in volume.dims]
        if np.prod(full) < 8:
            continue
        trimmed = mask[: full[0] * scale, : full[1] * scale, : full[2] * scale]
        n = _box_counts(trimmed, scale).ravel().astype(float)
        mean = n.mean()
        if mean == 0:
            continue
        per_scale.append((scale, float(np.var(n) / mean**2 + 1.0)))
    if not per_scale:
        raise ValueError(f"volume {volume.dims} has no scale with ≥8 complete boxes")
    return float(np.mean([v for _, v in per_scale])), per_scale


# ---------------------------------------------------------------------------
# Geometric: spline models and curvature


@dataclass
class CurveModel:
    """Sampled cubic-curve model of one centerline path."""

    t: np.ndarray              # (m,) sample parameters in [0, 1]
    x: np.ndarray              # (m, 3) positions, mm
    d1: np.ndarray             # (m, 3) dx/dt
    d2: np.ndarray             # (m, 3) d²x/dt²
    node_params: np.ndarray    # (n,) chord parameter of each input node
    closed: bool

    def kappa(self) -> np.ndarray:
        """Instantaneous curvature ‖x'×x''‖ / ‖x'‖³ at the samples."""
        cross = np.cross(self.d1, self.d2)
        speed = np.linalg.norm(self.d1, axis=1)
        out = np.zeros(len(self.t))
        ok = speed > 1e-12
        out[ok] = np.linalg.norm(cross[ok], axis=1) / speed[ok] ** 3
        return out

    def speed(self) -> np.ndarray:
        return np.linalg.norm(self.d1, axis=1)

    def sample_arc_length(self) -> float:
        return float(np.linalg.norm(np.diff(self.x, axis=0), axis=1).sum())


def _jitter_variance(pts: np.ndarray, closed: bool) -> float:
    """Quantization-noise estimate from third differences.

    For iid noise the expected squared third difference is 20σ² per
    coordinate; curvature of the true curve contributes only O(h³).
    """
    if closed:
        ext = np.vstack([pts, pts[:3]])
    else:
        ext = pts
    if len(ext) < 4:
        return 0.0
    d3 = ext[3:] - 3.0 * ext[2:-1] + 3.0 * ext[1:-2] - ext[:-3]
    return float((d3**2).sum() / (20.0 * len(d3)))


def fit_curve(
    points_mm: np.ndarray,
    closed: bool = False,
    smoothing_factor: float = 2.0,
    sample_factor: int = 10,
) -> CurveModel:
    """Cubic model of a polyline, parameterized by normalized chord length.

    With a positive smoothing factor the spline's residual budget is set to
    factor·n·σ̂² where σ̂² is the third-difference jitter estimate, so clean
    inputs (σ̂ ≈ 0) still get an interpolating fit. End points of open paths
    are pinned. Paths of 2–3 nodes fall back to linear/quadratic models.
    """
    pts = np.asarray(points_mm, dtype=float)
    n = len(pts)
    if n < 2:
        raise ValueError("a curve needs at least 2 nodes")
    poly = np.vstack([pts, pts[:1]]) if closed else pts
    chords = np.linalg.norm(np.diff(poly, axis=0), axis=1)
    total = chords.sum()
    if total == 0:
        raise ValueError("degenerate path: zero total chord length")
    u = np.concatenate([[0.0], np.cumsum(chords)]) / total
    u[-1] = 1.0
    node_params = u[:n]
    m = max(50, sample_factor * n)
    t = np.linspace(0.0, 1.0, m)

    s = smoothing_factor * n * _jitter_variance(pts, closed)
    if n >= 4 and s > 1e-12:
        with _FITPACK_LOCK:
            if closed:
                tck, _ = splprep(poly.T, u=u, s=s, per=1, k=3)
            else:
                w = np.ones(n)
                w[0] = w[-1] = 1e6
                tck, _ = splprep(pts.T, u=u, w=w, s=s, k=3)
            x = np.stack(splev(t, tck), axis=1)
            d1 = np.stack(splev(t, tck, der=1), axis=1)
            d2 = np.stack(splev(t, tck, der=2), axis=1)
        return CurveModel(t=t, x=x, d1=d1, d2=d2, node_params=node_params, closed=closed)

    if n == 2:
        x = pts[0] + np.outer(t, pts[1] - pts[0])
        d1 = np.tile(pts[1] - pts[0], (m, 1)).astype(float)
        d2 = np.zeros((m, 3))
        return CurveModel(t=t, x=x, d1=d1, d2=d2, node_params=node_params, closed=False)
    if n == 3 and not closed:
        coeffs = [np.polyfit(u, pts[:, axis], 2) for axis in range(3)]
        x = np.stack([np.polyval(c, t) for c in coeffs], axis=1)
        d1 = np.stack([np.polyval(np.polyder(c), t) for c in coeffs], axis=1)
        d2 = np.stack([np.polyval(np.polyder(c, 2), t) for c in coeffs], axis=1)
        return CurveModel(t=t, x=x, d1=d1, d2=d2, node_params=node_params, closed=False)

    if closed:
        spline = CubicSpline(u, poly, axis=0, bc_type="periodic")
    else:
        spline = CubicSpline(u, pts, axis=0, bc_type="natural")
    return CurveModel(
        t=t,
        x=spline(t),
        d1=spline(t, 1),
        d2=spline(t, 2),
        node_params=node_params,
        closed=closed,
    )


def _nearest_node_index(model: CurveModel, t: np.ndarray) -> np.ndarray:
    """Index of the input node whose chord parameter is closest to each t."""
    params = model.node_params
    pos = np.searchsorted(params, t)
    pos = np.clip(pos, 1, len(params) - 1)
    left = params[pos - 1]
    right = params[pos]
    choose_left = (t - left) <= (right - t)
    return np.where(choose_left, pos - 1, pos)


@dataclass
class _SegmentGeometry:
    mean_curvature: float
    mean_square_curvature: float
    arc_over_chord: float | None
    geodesic_length: float
    max_curvature: float
    kappa_samples: np.ndarray


def segment_geometry(
    node_coords_mm: np.ndarray,
    geodesic_length: float,
    node_multiplicity: np.ndarray,
    closed: bool = False,
    smoothing_factor: float = 2.0,
    sample_factor: int = 10,
) -> _SegmentGeometry:
    """Curvature integrals and tortuosity for one path.

    κ̄ = (1/L_geo) ∫ κ(t)/n(t) ‖x'(t)‖ dt and the squared version divides by
    n(t)²; both use the composite trapezoid rule on the sample grid. The
    chord is the straight-line distance between the literal end nodes.
    """
    model = fit_curve(node_coords_mm, closed=closed,
                      smoothing_factor=smoothing_factor, sample_factor=sample_factor)
    kappa = model.kappa()
    speed = model.speed()
    n_t = node_multiplicity[_nearest_node_index(model, model.t)].astype(float)
    n_t = np.maximum(n_t, 1.0)
    mean_k = float(np.trapezoid(kappa / n_t * speed, model.t) / geodesic_length)
    mean_k2 = float(np.trapezoid(kappa**2 / n_t**2 * speed, model.t) / geodesic_length)
    if closed:
        aoc = None
    else:
        chord = float(np.linalg.norm(node_coords_mm[-1] - node_coords_mm[0]))
        aoc = geodesic_length / chord if chord > 0 else None
    return _SegmentGeometry(
        mean_curvature=mean_k,
        mean_square_curvature=mean_k2,
        arc_over_chord=aoc,
        geodesic_length=geodesic_length,
        max_curvature=float(kappa.max()) if len(kappa) else 0.0,
        kappa_samples=kappa,
    )


def _cycle_length(graph: VesselGraph, walk: list[int]) -> float:
    total = 0.0
    for a, b in zip(walk, walk[1:] + [walk[0]]):
        total += graph.edge_weight(a, b)
    return total


def curvature_features(
    graph: VesselGraph,
    smoothing_factor: float = 2.0,
    sample_factor: int = 10,
    keep_samples: bool = False,
) -> dict:
    """Per-component curvature descriptors, averaged the three-root way.

    For each component the segments of each root are averaged, the three
    root values are averaged literally (a defaulted R3 = R1 still counts),
    and component values combine into the whole-graph value weighted by
    component total length. Pure one-loop components use the closed walk as
    a single path with multiplicity 1; components with no usable path are
    excluded and flagged.
    """
    spacing = np.asarray(graph.spacing)
    comps = components(graph)
    comp_values = []   # (weight, mean_k, mean_k2, aoc)
    geodesics = []
    max_kappa = None
    samples = [] if keep_samples else None
    flags = {}
    aoc_excluded = False

    for comp in comps:
        roots = select_roots(graph, comp)
        comp_weight = float(graph.edge_w[comp.edge_indices].sum())
        seg_cache = {}
        root_means = []
        for root in roots.as_tuple():
            if root not in seg_cache:
                segments, mult = extract_segments(graph, comp, root)
                geoms = []
                if segments:
                    for seg in segments:
                        coords = graph.coords[list(seg.nodes)] * spacing
                        geoms.append(
                            segment_geometry(
                                coords, seg.geodesic_length_mm, mult[list(seg.nodes)],
                                closed=False, smoothing_factor=smoothing_factor,
                                sample_factor=sample_factor,
                            )
                        )
                else:
                    walk = closed_walk(graph, comp)
                    if walk is not None:
                        coords = graph.coords[walk] * spacing
                        geoms.append(
                            segment_geometry(
                                coords, _cycle_length(graph, walk), np.ones(len(walk)),
                                closed=True, smoothing_factor=smoothing_factor,
                                sample_factor=sample_factor,
                            )
                        )
                seg_cache[root] = geoms
            geoms = seg_cache[root]
            if not geoms:
                continue
            ks = [g.mean_curvature for g in geoms]
            k2s = [g.mean_square_curvature for g in geoms]
            aocs = [g.arc_over_chord for g in geoms if g.arc_over_chord is not None]
            if len(aocs) < len(geoms):
                aoc_excluded = True
            root_means.append(
                (
                    float(np.mean(ks)),
                    float(np.mean(k2s)),
                    float(np.mean(aocs)) if aocs else None,
                )
            )
            geodesics.extend(g.geodesic_length for g in geoms)
            for g in geoms:
                max_kappa = g.max_curvature if max_kappa is None else max(max_kappa, g.max_curvature)
                if samples is not None:
                    samples.append(g.kappa_samples)

        if not root_means:
            flags.setdefault(
                "curvature_components_skipped",
                "components with no end-point and no simple closed walk were excluded",
            )
            continue
        mean_k = float(np.mean([r[0] for r in root_means]))
        mean_k2 = float(np.mean([r[1] for r in root_means]))
        aoc_vals = [r[2] for r in root_means if r[2] is not None]
        aoc = float(np.mean(aoc_vals)) if aoc_vals else None
        comp_values.append((comp_weight, mean_k, mean_k2, aoc))

    out = {
        "geodesic_lengths_mm": geodesics,
        "mean_geodesic_length_mm": float(np.mean(geodesics)) if geodesics else None,
        "mean_curvature_per_mm": None,
        "mean_square_curvature_per_mm2": None,
        "arc_over_chord": None,
        "max_curvature_per_mm": max_kappa,
        "curvature_samples": samples,
        "flags": flags,
    }
    if aoc_excluded:
        flags["arc_over_chord_excluded_closed"] = (
            "closed paths have no chord and were excluded from arc_over_chord"
        )
    weights = np.array([c[0] for c in comp_values])
    if len(comp_values) and weights.sum() > 0:
        w = weights / weights.sum()
        out["mean_curvature_per_mm"] = float((w * [c[1] for c in comp_values]).sum())
        out["mean_square_curvature_per_mm2"] = float((w * [c[2] for c in comp_values]).sum())
        aoc_pairs = [(c[0], c[3]) for c in comp_values if c[3] is not None]
        if aoc_pairs:
            aw = np.array([p[0] for p in aoc_pairs])
            if aw.sum() > 0:
                aw = aw / aw.sum()
                out["arc_over_chord"] = float((aw * [p[1] for p in aoc_pairs]).sum())
    elif comp_values:
        # Components exist but all have zero length (isolated voxels).
        out["mean_curvature_per_mm"] = 0.0
        out["mean_square_curvature_per_mm2"] = 0.0
    return out


# ---------------------------------------------------------------------------
# Assembly


def extract_all(
    volume: VoxelVolume,
    graph: VesselGraph,
    smoothing_factor: float = 2.0,
    sample_factor: int = 10,
    keep_curvature_samples: bool = False,
    min_box_scale: int = 1,
    max_box_scale: int | None = None,
) -> FeatureVector:
    """All fifteen features; failures become undefined values with flags."""
    fv = FeatureVector()
    fv.total_length_mm = total_length(graph)
    fv.volume_mm3 = mask_volume(volume)

    topo = topology_features(graph)
    fv.bifurcation_count = topo["bifurcation_count"]
    fv.abnormal_degree_count = topo["abnormal_degree_count"]
    fv.component_count = topo["component_count"]
    fv.loop_count = topo["loop_count"]
    fv.loop_lengths_mm = topo["loop_lengths_mm"]
    fv.mean_loop_length_mm = (
        float(np.mean(topo["loop_lengths_mm"])) if topo["loop_lengths_mm"] else None
    )
    if fv.mean_loop_length_mm is None:
        fv.flags["mean_loop_length_mm"] = "no loops"
    fv.bifurcation_density_per_mm = topo["bifurcation_density_per_mm"]
    if fv.bifurcation_density_per_mm is None:
        fv.flags["bifurcation_density_per_mm"] = "undefined: zero total length"

    try:
        fv.fractal_dimension = fractal_dimension(volume, min_box_scale, max_box_scale)
    except ValueError as exc:
        fv.flags["fractal_dimension"] = f"undefined: {exc}"
    try:
        fv.lacunarity, fv.lacunarity_per_scale = lacunarity(volume, min_box_scale, max_box_scale)
    except ValueError as exc:
        fv.flags["lacunarity"] = f"undefined: {exc}"

    curv = curvature_features(
        graph,
        smoothing_factor=smoothing_factor,
        sample_factor=sample_factor,
        keep_samples=keep_curvature_samples,
    )
    fv.geodesic_lengths_mm = curv["geodesic_lengths_mm"]
    fv.mean_geodesic_length_mm = curv["mean_geodesic_length_mm"]
    fv.mean_curvature_per_mm = curv["mean_curvature_per_mm"]
    fv.mean_square_curvature_per_mm2 = curv["mean_square_curvature_per_mm2"]
    fv.arc_over_chord = curv["arc_over_chord"]
    fv.max_curvature_per_mm = curv["max_curvature_per_mm"]
    fv.curvature_samples = curv["curvature_samples"]
    fv.flags.update(curv["flags"])
    for name in (
        "mean_geodesic_length_mm",
        "mean_curvature_per_mm",
        "mean_square_curvature_per_mm2",
        "arc_over_chord",
        "max_curvature_per_mm",
    ):
        if getattr(fv, name) is None and name not in fv.flags:
            fv.flags[name] = "undefined: no usable path"
    return fv
