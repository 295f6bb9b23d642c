"""Voxel-grid data model and loaders for masks, atlases, and cohort manifests."""

from __future__ import annotations

import csv
import gzip
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

PathLike = Union[str, Path]

CVOL_MAGIC = b"CVOL"
_CVOL_HEADER = struct.Struct("<4s3I3d")

# NIfTI-1 datatype codes -> numpy dtypes (integer and float types only)
_NIFTI_DTYPES = {
    2: "u1", 4: "i2", 8: "i4", 16: "f4", 64: "f8",
    256: "i1", 512: "u2", 768: "u4", 1024: "i8", 1280: "u8",
}


@dataclass(frozen=True)
class VoxelVolume:
    """Binary 3D mask on a voxel grid with physical spacing in mm."""

    data: np.ndarray                       # uint8, shape (nx, ny, nz), values in {0, 1}
    spacing: tuple[float, float, float]    # mm per voxel along x, y, z

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise ValueError(f"mask data must be 3D, got {data.ndim}D")
        if 0 in data.shape:
            raise ValueError(f"mask has a zero-size dimension: {data.shape}")
        if data.dtype != np.uint8:
            data = data.astype(np.uint8)
        uniq = np.unique(data)
        if not np.all(np.isin(uniq, (0, 1))):
            raise ValueError(f"mask values must be 0 or 1, found {uniq[:10]}")
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 3 or any(s <= 0 for s in spacing):
            raise ValueError(f"spacing must be three positive reals, got {self.spacing}")
        data = data.copy() if data.base is not None or data is self.data else data
        data.flags.writeable = False
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape

    def foreground_count(self) -> int:
        return int(self.data.sum())

    def voxel_volume_mm3(self) -> float:
        dx, dy, dz = self.spacing
        return dx * dy * dz


@dataclass(frozen=True)
class LabelVolume:
    """Integer territory labels on a voxel grid; 0 is background."""

    labels: np.ndarray                     # int32, shape (nx, ny, nz), values >= 0

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 3:
            raise ValueError(f"atlas must be 3D, got {labels.ndim}D")
        if not np.issubdtype(labels.dtype, np.integer):
            if not np.allclose(labels, np.round(labels)):
                raise ValueError("atlas voxels must be integer-valued")
            labels = np.round(labels).astype(np.int32)
        if labels.min() < 0:
            raise ValueError(f"atlas contains negative labels (min {labels.min()})")
        labels = labels.astype(np.int32, copy=True)
        labels.flags.writeable = False
        object.__setattr__(self, "labels", labels)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.labels.shape

    def label_set(self) -> list[int]:
        """Sorted nonzero labels present in the volume."""
        uniq = np.unique(self.labels)
        return [int(v) for v in uniq if v != 0]


@dataclass
class SubjectRecord:
    subject_id: str
    mask_path: Path
    atlas_path: Optional[Path] = None
    demographics: dict[str, object] = field(default_factory=dict)


@dataclass
class CohortManifest:
    rows: list[SubjectRecord]
    demographic_columns: list[str]

    def __len__(self) -> int:
        return len(self.rows)


def bmi_category(bmi: float) -> str:
    """Clinical BMI class; boundary values go to the upper category."""
    if bmi < 18.5:
        return "underweight"
    if bmi < 25.0:
        return "normal"
    if bmi < 30.0:
        return "overweight"
    return "obese"


def _parse_cell(text: str):
    text = text.strip()
    if text == "":
        return None
    try:
        return float(text)
    except ValueError:
        return text


def load_manifest(path: PathLike) -> CohortManifest:
    """Load a cohort manifest CSV.

    Required columns: subject_id, mask_path. An optional atlas_path column and
    any further columns are kept; unknown columns become demographics. BMI and
    its clinical category are derived when height (m) and weight (kg) parse as
    numbers. Relative mask/atlas paths are resolved against the manifest's
    directory.
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ValueError(f"manifest {path} is empty")
        fields = [f.strip() for f in reader.fieldnames]
        for required in ("subject_id", "mask_path"):
            if required not in fields:
                raise ValueError(f"manifest {path} is missing required column '{required}'")
        raw_rows = list(reader)

    base = path.parent
    demo_cols = [c for c in fields if c not in ("subject_id", "mask_path", "atlas_path")]
    derived = []
    if "height" in demo_cols and "weight" in demo_cols:
        derived = ["bmi", "bmi_category"]

    seen: set[str] = set()
    rows: list[SubjectRecord] = []
    for raw in raw_rows:
        sid = (raw.get("subject_id") or "").strip()
        if not sid:
            raise ValueError(f"manifest {path} has a row without subject_id")
        if sid in seen:
            raise ValueError(f"duplicate subject_id '{sid}' in manifest {path}")
        seen.add(sid)

        mask_path = base / (raw.get("mask_path") or "").strip()
        if not mask_path.is_file():
            raise ValueError(f"subject '{sid}': mask file not found: {mask_path}")
        atlas_raw = (raw.get("atlas_path") or "").strip()
        atlas_path = None
        if atlas_raw:
            atlas_path = base / atlas_raw
            if not atlas_path.is_file():
                raise ValueError(f"subject '{sid}': atlas file not found: {atlas_path}")

        demographics = {c: _parse_cell(raw.get(c) or "") for c in demo_cols}
        height = demographics.get("height")
        weight = demographics.get("weight")
        if isinstance(height, float) and isinstance(weight, float) and height > 0:
            bmi = weight / (height * height)
            demographics["bmi"] = bmi
            demographics["bmi_category"] = bmi_category(bmi)
        elif derived:
            demographics.setdefault("bmi", None)
            demographics.setdefault("bmi_category", None)
        rows.append(SubjectRecord(sid, mask_path, atlas_path, demographics))

    return CohortManifest(rows=rows, demographic_columns=demo_cols + derived)


# ---------------------------------------------------------------------------
# Raw .cvol sidecar format


def save_cvol(volume: VoxelVolume, path: PathLike) -> None:
    """Write the little-endian CVOL sidecar format (x-fastest voxel order)."""
    nx, ny, nz = volume.dims
    header = _CVOL_HEADER.pack(CVOL_MAGIC, nx, ny, nz, *volume.spacing)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(volume.data.ravel(order="F").tobytes())


def load_cvol(path: PathLike) -> VoxelVolume:
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < _CVOL_HEADER.size:
        raise ValueError(f"{path}: truncated CVOL header")
    magic, nx, ny, nz, dx, dy, dz = _CVOL_HEADER.unpack_from(blob)
    if magic != CVOL_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}, expected {CVOL_MAGIC!r}")
    if 0 in (nx, ny, nz):
        raise ValueError(f"{path}: zero-size dimension ({nx}, {ny}, {nz})")
    expected = _CVOL_HEADER.size + nx * ny * nz
    if len(blob) != expected:
        raise ValueError(f"{path}: payload is {len(blob)} bytes, expected {expected}")
    spacing = (dx, dy, dz)
    if any(s < 0 for s in spacing):
        raise ValueError(f"{path}: negative spacing in header: {spacing}")
    if any(s == 0 for s in spacing):
        warnings.warn(f"{path}: header has zero spacing, falling back to (1, 1, 1) mm")
        spacing = (1.0, 1.0, 1.0)
    raw = np.frombuffer(blob, dtype=np.uint8, offset=_CVOL_HEADER.size)
    if raw.max(initial=0) > 1:
        raise ValueError(f"{path}: CVOL payload bytes must be 0 or 1")
    data = raw.reshape((nx, ny, nz), order="F")
    return VoxelVolume(data=data, spacing=spacing)


# ---------------------------------------------------------------------------
# Minimal NIfTI-1 support (348-byte header; spacing from pixdim; qform/sform
# orientation is intentionally ignored — volumes are assumed co-registered)


def _read_nifti(path: Path) -> tuple[np.ndarray, tuple[float, float, float]]:
    opener = gzip.open if path.name.endswith(".gz") else open
    try:
        with opener(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise ValueError(f"cannot read {path}: {exc}") from exc
    if len(blob) < 352:
        raise ValueError(f"{path}: too small to be a NIfTI-1 file")

    sizeof_hdr = struct.unpack_from("<i", blob, 0)[0]
    endian = "<"
    if sizeof_hdr != 348:
        sizeof_hdr = struct.unpack_from(">i", blob, 0)[0]
        endian = ">"
        if sizeof_hdr != 348:
            raise ValueError(f"{path}: not a NIfTI-1 file (bad header size)")

    dim = struct.unpack_from(endian + "8h", blob, 40)
    datatype, _bitpix = struct.unpack_from(endian + "2h", blob, 70)
    pixdim = struct.unpack_from(endian + "8f", blob, 76)
    vox_offset = struct.unpack_from(endian + "f", blob, 108)[0]
    scl_slope, scl_inter = struct.unpack_from(endian + "2f", blob, 112)

    if dim[0] != 3:
        raise ValueError(f"{path}: expected a 3D volume, header says dim[0]={dim[0]}")
    shape = (dim[1], dim[2], dim[3])
    if 0 in shape or any(d < 0 for d in shape):
        raise ValueError(f"{path}: invalid dimensions {shape}")
    if datatype not in _NIFTI_DTYPES:
        raise ValueError(f"{path}: unsupported NIfTI datatype code {datatype}")
    spacing = (float(pixdim[1]), float(pixdim[2]), float(pixdim[3]))
    if any(s <= 0 for s in spacing):
        raise ValueError(f"{path}: non-positive spacing in header: {spacing}")

    dtype = np.dtype(endian + _NIFTI_DTYPES[datatype])
    count = shape[0] * shape[1] * shape[2]
    offset = int(vox_offset) if vox_offset >= 348 else 352
    arr = np.frombuffer(blob, dtype=dtype, count=count, offset=offset)
    arr = arr.reshape(shape, order="F")
    if scl_slope not in (0.0, 1.0) or scl_inter != 0.0:
        slope = scl_slope if scl_slope != 0.0 else 1.0
        arr = arr * slope + scl_inter
    return arr, spacing


def save_nifti(volume: VoxelVolume, path: PathLike) -> None:
    """Write a minimal single-file NIfTI-1 (uint8 payload, spacing in pixdim)."""
    path = Path(path)
    nx, ny, nz = volume.dims
    header = bytearray(348)
    struct.pack_into("<i", header, 0, 348)
    struct.pack_into("<8h", header, 40, 3, nx, ny, nz, 1, 1, 1, 1)
    struct.pack_into("<2h", header, 70, 2, 8)  # datatype uint8, bitpix 8
    struct.pack_into("<8f", header, 76, 1.0, *volume.spacing, 0.0, 0.0, 0.0, 0.0)
    struct.pack_into("<f", header, 108, 352.0)
    struct.pack_into("<2f", header, 112, 1.0, 0.0)
    struct.pack_into("<4s", header, 344, b"n+1\x00")
    payload = bytes(header) + b"\x00" * 4 + volume.data.ravel(order="F").tobytes()
    opener = gzip.open if path.name.endswith(".gz") else open
    with opener(path, "wb") as fh:
        fh.write(payload)


# ---------------------------------------------------------------------------
# Public loaders


def load_mask(path: PathLike) -> VoxelVolume:
    """Load a binary mask from .cvol or NIfTI-1; any voxel > 0 maps to 1."""
    path = Path(path)
    if not path.is_file():
        raise ValueError(f"mask file not found: {path}")
    if path.suffix == ".cvol":
        return load_cvol(path)
    arr, spacing = _read_nifti(path)
    data = (arr > 0).astype(np.uint8)
    return VoxelVolume(data=data, spacing=spacing)


def load_atlas(path: PathLike, expected_dims: tuple[int, int, int]) -> LabelVolume:
    """Load an integer territory atlas and require it to match the mask grid."""
    path = Path(path)
    if not path.is_file():
        raise ValueError(f"atlas file not found: {path}")
    if path.suffix == ".cvol":
        vol = load_cvol(path)
        arr = vol.data.astype(np.int32)
    else:
        arr, _spacing = _read_nifti(path)
    atlas = LabelVolume(labels=np.asarray(arr))
    if atlas.dims != tuple(expected_dims):
        raise ValueError(
            f"atlas dims {atlas.dims} do not match mask dims {tuple(expected_dims)}; "
            "the atlas must be co-registered on the same voxel grid"
        )
    return atlas
