"""Topology-preserving thinning and distance-based radius estimation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from skimage.morphology import skeletonize as _thin_3d

from caravel.volume import VoxelVolume

# 26-connectivity structuring element
CONN26 = np.ones((3, 3, 3), dtype=bool)
_CONN6 = ndimage.generate_binary_structure(3, 1)

# 18-neighborhood (face + edge neighbors) of the center of a 3x3x3 patch
_N18 = np.zeros((3, 3, 3), dtype=bool)
for _d in np.ndindex(3, 3, 3):
    _s = abs(_d[0] - 1) + abs(_d[1] - 1) + abs(_d[2] - 1)
    _N18[_d] = 1 <= _s <= 2
_FACES = [(0, 1, 1), (2, 1, 1), (1, 0, 1), (1, 2, 1), (1, 1, 0), (1, 1, 2)]


@dataclass(frozen=True)
class Skeleton:
    """Centerline voxels of a mask, in lexicographic (x, y, z) order."""

    mask: np.ndarray                      # bool, same grid as the source volume
    voxels: np.ndarray                    # (K, 3) int64, lexicographically sorted
    spacing: tuple[float, float, float]

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=bool)
        mask.flags.writeable = False
        voxels = np.asarray(self.voxels, dtype=np.int64)
        voxels.flags.writeable = False
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "voxels", voxels)

    def __len__(self) -> int:
        return len(self.voxels)


@dataclass(frozen=True)
class RadiusField:
    """Inscribed-sphere radius (mm) at each skeleton voxel, aligned with Skeleton.voxels."""

    radii: np.ndarray                     # (K,) float64, > 0 wherever the mask is set

    def __post_init__(self):
        radii = np.asarray(self.radii, dtype=np.float64)
        radii.flags.writeable = False
        object.__setattr__(self, "radii", radii)

    def __len__(self) -> int:
        return len(self.radii)


def skeletonize(volume: VoxelVolume) -> Skeleton:
    """Thin a binary mask to a one-voxel-wide centerline.

    Uses 3D medial-axis thinning that removes simple points only, so the
    26-connected component structure and the loops of the mask are preserved
    and the skeleton is a subset of the mask. The thinning pass can erase a
    component outright; any mask component left without a skeleton voxel is
    re-thinned with a sequential fallback so component counts always match.
    """
    mask = volume.data.astype(bool)
    if mask.any():
        skel = _thin_3d(mask).astype(bool)
        skel = _restore_vanished_components(mask, skel, volume.spacing)
    else:
        skel = np.zeros_like(mask)
    voxels = np.argwhere(skel).astype(np.int64)  # C-order scan == lexicographic
    return Skeleton(mask=skel, voxels=voxels, spacing=volume.spacing)


def _restore_vanished_components(mask, skel, spacing):
    """Re-thin any mask component the parallel pass erased outright.

    Objects with an even mirror symmetry have their medial surface between
    voxels, and the parallel thinning can peel matched voxel pairs until the
    whole object is gone. Those components are redone with a sequential
    simple-point erosion, which provably cannot empty a component.
    """
    labels, n = ndimage.label(mask, structure=CONN26)
    if n == 0:
        return skel
    index = np.arange(1, n + 1)
    survived = ndimage.maximum(skel, labels=labels, index=index)
    missing = index[np.asarray(survived) == 0]
    if len(missing) == 0:
        return skel
    skel = skel.copy()
    slices = ndimage.find_objects(labels)
    for cid in missing:
        box = slices[cid - 1]
        sub = labels[box] == cid
        # max inscribed-ball radius of the component, for the spur threshold
        padded = np.pad(sub, 1, mode="constant", constant_values=False)
        reach = 1.5 * float(ndimage.distance_transform_edt(padded, sampling=spacing).max())
        # alternate: pruning a comb of spurs turns its base voxels simple,
        # so re-thin until neither step changes anything
        thin = _sequential_thin(sub)
        while True:
            pruned = _prune_short_spurs(thin, spacing, reach)
            if pruned.sum() == thin.sum():
                break
            thin = _sequential_thin(pruned)
        skel[box] |= thin
    return skel


def _is_simple_point(patch: np.ndarray) -> bool:
    """Topology test for the center voxel of a 3x3x3 foreground patch.

    Simple iff the other foreground voxels form exactly one 26-component and
    the background voxels of the 18-neighborhood form exactly one
    6-component touching a face neighbor.
    """
    fg = patch.copy()
    fg[1, 1, 1] = False
    _, n_fg = ndimage.label(fg, structure=CONN26)
    if n_fg != 1:
        return False
    bg = (~patch) & _N18
    lab_bg, n_bg = ndimage.label(bg, structure=_CONN6)
    touching = {int(lab_bg[f]) for f in _FACES if lab_bg[f] > 0}
    return len(touching) == 1


# parity classes (x % 2, y % 2, z % 2); voxels of one class are never 26-adjacent
_PARITIES = [p for p in np.ndindex(2, 2, 2)]

# simple-point verdicts keyed by the 27-voxel patch bytes; thick shapes reuse
# a handful of shell patterns, so this turns the labelling cost into a lookup
_SIMPLE_LUT: dict[bytes, bool] = {}


def _sequential_thin(mask: np.ndarray) -> np.ndarray:
    """Erode a mask to a centerline with simple-point checks on parity subfields.

    Each sub-iteration visits the border voxels of one coordinate-parity
    class. Two voxels of the same class are never 26-adjacent, so deletions
    within a sub-iteration cannot affect each other and the outcome does not
    depend on visiting order. Every deletion is a simple point and curve
    end-points (a single neighbor) are kept, so the topology is preserved
    exactly and a component can never be erased outright.
    """
    mask = mask.astype(bool).copy()
    padded = np.pad(mask, 1, mode="constant", constant_values=False)
    while True:
        changed = False
        for px, py, pz in _PARITIES:
            border = mask & ~ndimage.binary_erosion(padded, structure=_CONN6)[1:-1, 1:-1, 1:-1]
            cand = np.argwhere(border)
            cand = cand[(cand[:, 0] % 2 == px) & (cand[:, 1] % 2 == py) & (cand[:, 2] % 2 == pz)]
            for x, y, z in cand:
                patch = padded[x : x + 3, y : y + 3, z : z + 3]
                key = patch.tobytes()
                if key.count(1) <= 2:  # isolated voxel or curve end-point
                    continue
                verdict = _SIMPLE_LUT.get(key)
                if verdict is None:
                    verdict = _SIMPLE_LUT[key] = _is_simple_point(patch)
                if verdict:
                    mask[x, y, z] = False
                    padded[x + 1, y + 1, z + 1] = False
                    changed = True
        if not changed:
            return mask


def _prune_short_spurs(mask: np.ndarray, spacing, max_len_mm: float) -> np.ndarray:
    """Drop terminal branches shorter than ``max_len_mm`` from a thinned mask.

    Blunt or mirror-symmetric shapes thin to a centerline plus short combs
    of protected end-points. A spur is walked from a curve end-point through
    degree-2 voxels to the first voxel with three or more neighbors; if the
    walk is short enough, the chain is deleted and the junction stays. Walks
    that end at another end-point mean the component is a bare path, which is
    kept whole, so no component is lost and loops are untouched. Rounds repeat
    until stable, because removing a branch can expose a new end-point.
    """
    out = mask.copy()
    while True:
        removed = _prune_round(out, spacing, max_len_mm)
        if not removed:
            return out


def _prune_round(mask: np.ndarray, spacing, max_len_mm: float) -> bool:
    """One in-place pass of spur deletion; True if anything was removed."""
    padded = np.pad(mask, 1, mode="constant", constant_values=False)
    nbr_count = ndimage.convolve(
        mask.astype(np.uint8), CONN26.astype(np.uint8), mode="constant", cval=0
    ) - mask.astype(np.uint8)
    step = np.asarray(spacing, dtype=np.float64)
    offsets = [np.array(o) - 1 for o in np.ndindex(3, 3, 3) if o != (1, 1, 1)]

    def neighbors(p):
        hits = []
        for off in offsets:
            q = p + off
            if padded[q[0] + 1, q[1] + 1, q[2] + 1]:
                hits.append(q)
        return hits

    removed = False
    for start in np.argwhere(mask & (nbr_count == 1)):
        chain = [start]
        length = 0.0
        prev, cur = None, start
        while length <= max_len_mm:
            nxt = [q for q in neighbors(cur) if prev is None or (q != prev).any()]
            if len(nxt) != 1:
                break  # re-entered a junction sideways; leave it alone
            prev, cur = cur, nxt[0]
            length += float(np.linalg.norm((cur - prev) * step))
            deg = nbr_count[cur[0], cur[1], cur[2]]
            if deg >= 3:
                if length <= max_len_mm:
                    for p in chain:
                        mask[p[0], p[1], p[2]] = False
                    removed = True
                break
            if deg == 1:
                break  # bare path component, keep it whole
            chain.append(cur)
    return removed


def distance_map(volume: VoxelVolume) -> np.ndarray:
    """Anisotropic Euclidean distance (mm) to the nearest background voxel.

    Everything outside the array bounds counts as background, so foreground
    touching the border still gets a finite, positive distance.
    """
    padded = np.pad(volume.data.astype(bool), 1, mode="constant", constant_values=False)
    dist = ndimage.distance_transform_edt(padded, sampling=volume.spacing)
    return dist[1:-1, 1:-1, 1:-1]


def estimate_radii(volume: VoxelVolume, skeleton: Skeleton) -> RadiusField:
    """Sample the mask's distance map at the skeleton voxels."""
    if skeleton.mask.shape != volume.data.shape:
        raise ValueError(
            f"skeleton grid {skeleton.mask.shape} does not match volume grid {volume.data.shape}"
        )
    dist = distance_map(volume)
    if len(skeleton) == 0:
        return RadiusField(radii=np.zeros(0))
    idx = skeleton.voxels
    return RadiusField(radii=dist[idx[:, 0], idx[:, 1], idx[:, 2]])


def component_count(mask: np.ndarray) -> int:
    """Number of 26-connected foreground components."""
    _, n = ndimage.label(np.asarray(mask, dtype=bool), structure=CONN26)
    return int(n)
