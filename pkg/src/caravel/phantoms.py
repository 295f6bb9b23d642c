"""Synthetic vascular masks with analytically known feature values.

Every generator voxelizes a parametric solid by center inclusion: voxel
(i, j, k) is foreground iff its center ((i+0.5)dx, (j+0.5)dy, (k+0.5)dz)
lies inside the solid. Ground truth travels with each PhantomSpec so
verification can be table-driven.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from caravel.volume import VoxelVolume

PHANTOM_KINDS = (
    "tube",
    "torus",
    "helix",
    "y_junction",
    "cycle_pair",
    "filled_cube",
    "line",
    "scatter",
)


@dataclass(frozen=True)
class PhantomSpec:
    kind: str
    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    params: dict = field(default_factory=dict)
    ground_truth: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in PHANTOM_KINDS:
            raise ValueError(f"unknown phantom kind '{self.kind}'; choose from {PHANTOM_KINDS}")
        if any(d <= 0 for d in self.dims):
            raise ValueError(f"dims must be positive, got {self.dims}")
        if any(s <= 0 for s in self.spacing):
            raise ValueError(f"spacing must be positive, got {self.spacing}")


def _voxel_centers(dims, spacing):
    axes = [(np.arange(n) + 0.5) * d for n, d in zip(dims, spacing)]
    return np.meshgrid(*axes, indexing="ij")


def _volume_center(dims, spacing):
    return tuple(n * d / 2.0 for n, d in zip(dims, spacing))


def _capsule_mask(dims, spacing, a, b, radius):
    """Points within `radius` of segment a-b (a cylinder with spherical caps)."""
    X, Y, Z = _voxel_centers(dims, spacing)
    a = np.asarray(a, dtype=float)
    ab = np.asarray(b, dtype=float) - a
    denom = float(ab @ ab)
    px, py, pz = X - a[0], Y - a[1], Z - a[2]
    t = (px * ab[0] + py * ab[1] + pz * ab[2]) / denom if denom > 0 else 0.0
    t = np.clip(t, 0.0, 1.0)
    d2 = (px - t * ab[0]) ** 2 + (py - t * ab[1]) ** 2 + (pz - t * ab[2]) ** 2
    return d2 <= radius * radius


def _generate_tube(spec):
    p = spec.params
    r, length = p["radius_mm"], p["length_mm"]
    _, cy, cz = _volume_center(spec.dims, spec.spacing)
    x0 = (spec.dims[0] * spec.spacing[0] - length) / 2.0
    if x0 < r:
        raise ValueError("tube does not fit inside dims (caps would be clipped)")
    mask = _capsule_mask(spec.dims, spec.spacing, (x0, cy, cz), (x0 + length, cy, cz), r)
    return mask


def _generate_torus(spec):
    p = spec.params
    big_r, small_r = p["ring_radius_mm"], p["tube_radius_mm"]
    cx, cy, cz = _volume_center(spec.dims, spec.spacing)
    X, Y, Z = _voxel_centers(spec.dims, spec.spacing)
    ring = np.sqrt((X - cx) ** 2 + (Y - cy) ** 2) - big_r
    return ring**2 + (Z - cz) ** 2 <= small_r**2


def _generate_helix(spec):
    p = spec.params
    a, c, r, turns = p["a_mm"], p["c_mm"], p["tube_radius_mm"], p["turns"]
    cx, cy, _ = _volume_center(spec.dims, spec.spacing)
    t_max = 2.0 * math.pi * turns
    # Dense polyline samples; chord spacing well under half a voxel.
    step = 0.2 / math.sqrt(a * a + c * c)
    t = np.arange(0.0, t_max + step, step)
    pts = np.stack([cx + a * np.cos(t), cy + a * np.sin(t), r + 0.5 + c * t], axis=1)
    X, Y, Z = _voxel_centers(spec.dims, spec.spacing)
    centers = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)
    dist, _ = cKDTree(pts).query(centers, k=1)
    return (dist <= r).reshape(spec.dims)


def _generate_y_junction(spec):
    p = spec.params
    r = p["radius_mm"]
    stem, arm, angle = p["stem_mm"], p["arm_mm"], math.radians(p["angle_deg"])
    _, cy, cz = _volume_center(spec.dims, spec.spacing)
    x0 = r + 0.5
    junction = (x0 + stem, cy, cz)
    arm_dx, arm_dy = arm * math.cos(angle), arm * math.sin(angle)
    mask = _capsule_mask(spec.dims, spec.spacing, (x0, cy, cz), junction, r)
    mask |= _capsule_mask(
        spec.dims, spec.spacing, junction, (junction[0] + arm_dx, cy + arm_dy, cz), r
    )
    mask |= _capsule_mask(
        spec.dims, spec.spacing, junction, (junction[0] + arm_dx, cy - arm_dy, cz), r
    )
    return mask


def _generate_cycle_pair(spec):
    p = spec.params
    big_r, small_r, gap = p["ring_radius_mm"], p["tube_radius_mm"], p["gap_mm"]
    cx, cy, cz = _volume_center(spec.dims, spec.spacing)
    X, Y, Z = _voxel_centers(spec.dims, spec.spacing)
    mask = np.zeros(spec.dims, dtype=bool)
    offset = gap / 2.0 + big_r + small_r
    for sign in (-1.0, 1.0):
        ring = np.sqrt((X - (cx + sign * offset)) ** 2 + (Y - cy) ** 2) - big_r
        mask |= ring**2 + (Z - cz) ** 2 <= small_r**2
    return mask


def _generate_filled_cube(spec):
    return np.ones(spec.dims, dtype=bool)


def _generate_line(spec):
    p = spec.params
    n = p["n_voxels"]
    if n > spec.dims[0]:
        raise ValueError(f"line of {n} voxels does not fit in dims {spec.dims}")
    mask = np.zeros(spec.dims, dtype=bool)
    mask[:n, spec.dims[1] // 2, spec.dims[2] // 2] = True
    return mask


def _generate_scatter(spec):
    p = spec.params
    rng = np.random.default_rng(p["seed"])
    return rng.random(spec.dims) < p["density"]


_GENERATORS = {
    "tube": _generate_tube,
    "torus": _generate_torus,
    "helix": _generate_helix,
    "y_junction": _generate_y_junction,
    "cycle_pair": _generate_cycle_pair,
    "filled_cube": _generate_filled_cube,
    "line": _generate_line,
    "scatter": _generate_scatter,
}


def generate(spec: PhantomSpec) -> tuple[VoxelVolume, dict]:
    """Voxelize a PhantomSpec; returns the mask and its analytic ground truth."""
    mask = _GENERATORS[spec.kind](spec)
    if not mask.any():
        raise ValueError(f"phantom '{spec.kind}' with params {spec.params} produced an empty mask")
    volume = VoxelVolume(data=mask.astype(np.uint8), spacing=spec.spacing)
    return volume, dict(spec.ground_truth)


def default_spec(kind: str) -> PhantomSpec:
    """Canonical parameterization of each phantom, with baked-in ground truth.

    Odd transverse dims keep symmetry planes on voxel-center planes, which
    stops the skeleton from zig-zagging between adjacent voxel layers.
    """
    if kind == "tube":
        r, length = 2.0, 100.0
        return PhantomSpec(
            kind="tube",
            dims=(107, 9, 9),
            spacing=(1.0, 1.0, 1.0),
            params={"radius_mm": r, "length_mm": length},
            ground_truth={
                "total_length_mm": {"value": length, "rtol": 0.05},
                "bifurcation_count": {"value": 0},
                "loop_count": {"value": 0},
                "component_count": {"value": 1},
                "mean_curvature_per_mm": {"max": 0.01},
                "arc_over_chord": {"value": 1.0, "atol": 1e-3},
            },
        )
    if kind == "torus":
        big_r, small_r = 20.0, 2.0
        return PhantomSpec(
            kind="torus",
            dims=(51, 51, 7),
            spacing=(1.0, 1.0, 1.0),
            params={"ring_radius_mm": big_r, "tube_radius_mm": small_r},
            ground_truth={
                "loop_count": {"value": 1},
                "mean_loop_length_mm": {"value": 2 * math.pi * big_r, "rtol": 0.10},
                "mean_curvature_per_mm": {"value": 1.0 / big_r, "rtol": 0.15},
                "component_count": {"value": 1},
                "bifurcation_count": {"value": 0},
            },
        )
    if kind == "helix":
        a, c, turns = 10.0, 5.0, 2.0
        return PhantomSpec(
            kind="helix",
            dims=(27, 27, 72),
            spacing=(1.0, 1.0, 1.0),
            params={"a_mm": a, "c_mm": c, "tube_radius_mm": 2.0, "turns": turns},
            ground_truth={
                "mean_curvature_per_mm": {"value": a / (a * a + c * c), "rtol": 0.15},
                "arc_over_chord": {"min": 1.05},
                "component_count": {"value": 1},
                "loop_count": {"value": 0},
            },
        )
    if kind == "y_junction":
        return PhantomSpec(
            kind="y_junction",
            dims=(70, 51, 9),
            spacing=(1.0, 1.0, 1.0),
            params={"radius_mm": 2.0, "stem_mm": 30.0, "arm_mm": 25.0, "angle_deg": 45.0},
            ground_truth={
                "bifurcation_count": {"min": 1, "max": 3},
                "component_count": {"value": 1},
                "loop_count": {"value": 0},
            },
        )
    if kind == "cycle_pair":
        big_r, small_r = 10.0, 2.0
        return PhantomSpec(
            kind="cycle_pair",
            dims=(59, 29, 7),
            spacing=(1.0, 1.0, 1.0),
            params={"ring_radius_mm": big_r, "tube_radius_mm": small_r, "gap_mm": 4.0},
            ground_truth={
                "loop_count": {"value": 2},
                "component_count": {"value": 2},
                "mean_loop_length_mm": {"value": 2 * math.pi * big_r, "rtol": 0.10},
            },
        )
    if kind == "filled_cube":
        dims = (64, 64, 64)
        return PhantomSpec(
            kind="filled_cube",
            dims=dims,
            spacing=(1.0, 1.0, 1.0),
            params={},
            ground_truth={
                "fractal_dimension": {"value": 3.0, "atol": 0.15},
                "lacunarity": {"value": 1.0, "atol": 1e-12},
                "volume_mm3": {"value": float(np.prod(dims)), "atol": 1e-9},
                "component_count": {"value": 1},
            },
        )
    if kind == "line":
        n = 64
        return PhantomSpec(
            kind="line",
            dims=(64, 9, 9),
            spacing=(1.0, 1.0, 1.0),
            params={"n_voxels": n},
            ground_truth={
                "fractal_dimension": {"value": 1.0, "atol": 0.15},
                "total_length_mm": {"value": float(n - 1), "atol": 1e-9},
                "mean_curvature_per_mm": {"max": 1e-9},
                "arc_over_chord": {"value": 1.0, "atol": 1e-9},
                "bifurcation_count": {"value": 0},
                "loop_count": {"value": 0},
                "component_count": {"value": 1},
            },
        )
    if kind == "scatter":
        return PhantomSpec(
            kind="scatter",
            dims=(32, 32, 32),
            spacing=(1.0, 1.0, 1.0),
            params={"density": 0.04, "seed": 42},
            ground_truth={},
        )
    raise ValueError(f"unknown phantom kind '{kind}'; choose from {PHANTOM_KINDS}")


def default_specs() -> list[PhantomSpec]:
    return [default_spec(kind) for kind in PHANTOM_KINDS]


def check_ground_truth(features: dict, ground_truth: dict) -> list[tuple[str, bool, str]]:
    """Compare measured features against bounds; returns (name, ok, detail) rows.

    Bound records support: value (+ rtol/atol, default exact), min, max.
    Missing or undefined (None) features fail their checks.
    """
    results = []
    for name, bound in ground_truth.items():
        got = features.get(name)
        if got is None:
            results.append((name, False, "feature missing or undefined"))
            continue
        ok = True
        parts = []
        if "value" in bound:
            expected = bound["value"]
            tol = bound.get("atol", 0.0) + bound.get("rtol", 0.0) * abs(expected)
            ok &= abs(got - expected) <= tol
            parts.append(f"got {got:.6g}, want {expected:.6g} ± {tol:.3g}")
        if "min" in bound:
            ok &= got >= bound["min"]
            parts.append(f"got {got:.6g}, want ≥ {bound['min']:.6g}")
        if "max" in bound:
            ok &= got <= bound["max"]
            parts.append(f"got {got:.6g}, want ≤ {bound['max']:.6g}")
        results.append((name, bool(ok), "; ".join(parts)))
    return results
