"""Phantom generation: determinism, voxelization rule, ground-truth checker."""

import numpy as np
import pytest

from caravel.phantoms import (
    PHANTOM_KINDS,
    PhantomSpec,
    check_ground_truth,
    default_spec,
    default_specs,
    generate,
)


class TestSpecs:
    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError, match="kind"):
            PhantomSpec(kind="klein_bottle", dims=(8, 8, 8), spacing=(1, 1, 1))

    def test_bad_dims_rejected(self):
        with pytest.raises(ValueError, match="dims"):
            PhantomSpec(kind="tube", dims=(0, 8, 8), spacing=(1, 1, 1))

    def test_default_specs_cover_all_kinds(self):
        specs = default_specs()
        assert [s.kind for s in specs] == list(PHANTOM_KINDS)

    def test_all_defaults_generate_nonempty(self):
        for spec in default_specs():
            vol, gt = generate(spec)
            assert vol.foreground_count() > 0
            assert vol.dims == spec.dims


class TestDeterminism:
    @pytest.mark.parametrize("kind", PHANTOM_KINDS)
    def test_same_spec_same_bytes(self, kind):
        spec = default_spec(kind)
        a, _ = generate(spec)
        b, _ = generate(spec)
        assert np.array_equal(a.data, b.data)

    def test_scatter_seed_changes_mask(self):
        base = default_spec("scatter")
        other = PhantomSpec(
            kind="scatter", dims=base.dims, spacing=base.spacing,
            params={**base.params, "seed": base.params["seed"] + 1},
        )
        a, _ = generate(base)
        b, _ = generate(other)
        assert not np.array_equal(a.data, b.data)


class TestVoxelization:
    def test_center_inclusion_rule_on_thin_tube(self):
        # Capsule of radius 1.2 along x at the volume center: exactly the
        # voxels whose center distance to the axis segment is <= 1.2.
        spec = PhantomSpec(
            kind="tube", dims=(11, 7, 7), spacing=(1.0, 1.0, 1.0),
            params={"radius_mm": 1.2, "length_mm": 6.0},
        )
        vol, _ = generate(spec)
        centers = lambda n: (np.arange(n) + 0.5)
        X, Y, Z = np.meshgrid(centers(11), centers(7), centers(7), indexing="ij")
        ax0, ax1 = (11 - 6.0) / 2.0, (11 + 6.0) / 2.0
        t = np.clip((X - ax0) / 6.0, 0, 1)
        d2 = (X - (ax0 + 6.0 * t)) ** 2 + (Y - 3.5) ** 2 + (Z - 3.5) ** 2
        assert np.array_equal(vol.data.astype(bool), d2 <= 1.2**2)

    def test_torus_symmetric_in_z(self):
        vol, _ = generate(default_spec("torus"))
        assert np.array_equal(vol.data, vol.data[:, :, ::-1])

    def test_tube_that_does_not_fit_rejected(self):
        spec = PhantomSpec(
            kind="tube", dims=(10, 7, 7), spacing=(1.0, 1.0, 1.0),
            params={"radius_mm": 2.0, "length_mm": 100.0},
        )
        with pytest.raises(ValueError, match="fit"):
            generate(spec)

    def test_empty_scatter_rejected(self):
        spec = PhantomSpec(
            kind="scatter", dims=(8, 8, 8), spacing=(1, 1, 1),
            params={"density": 0.0, "seed": 1},
        )
        with pytest.raises(ValueError, match="empty"):
            generate(spec)

    def test_line_count(self):
        vol, gt = generate(default_spec("line"))
        assert vol.foreground_count() == 64
        assert gt["total_length_mm"]["value"] == 63.0


class TestGroundTruthChecker:
    def test_value_with_rtol(self):
        rows = check_ground_truth({"x": 104.0}, {"x": {"value": 100.0, "rtol": 0.05}})
        assert rows == [("x", True, rows[0][2])]
        rows = check_ground_truth({"x": 106.0}, {"x": {"value": 100.0, "rtol": 0.05}})
        assert rows[0][1] is False

    def test_exact_when_no_tolerance(self):
        assert check_ground_truth({"n": 2}, {"n": {"value": 2}})[0][1]
        assert not check_ground_truth({"n": 3}, {"n": {"value": 2}})[0][1]

    def test_min_max_bounds(self):
        gt = {"b": {"min": 1, "max": 3}}
        assert check_ground_truth({"b": 2}, gt)[0][1]
        assert not check_ground_truth({"b": 0}, gt)[0][1]
        assert not check_ground_truth({"b": 4}, gt)[0][1]

    def test_missing_feature_fails(self):
        rows = check_ground_truth({}, {"x": {"value": 1.0}})
        assert rows[0][1] is False
        rows = check_ground_truth({"x": None}, {"x": {"value": 1.0}})
        assert rows[0][1] is False
