"""caravel: skeleton-derived vessel graphs and vascular features from 3D masks."""

from caravel.config import RunConfig
from caravel.features import FEATURE_COLUMNS, FeatureVector, extract_all
from caravel.phantoms import PHANTOM_KINDS, default_spec, generate
from caravel.pipeline import analyze_volume, run_cohort
from caravel.regional import regional_features
from caravel.stats import CohortTable, run_protocol
from caravel.volume import (
    CohortManifest,
    LabelVolume,
    SubjectRecord,
    VoxelVolume,
    load_atlas,
    load_cvol,
    load_manifest,
    load_mask,
    save_cvol,
    save_nifti,
)

__version__ = "0.1.0"

__all__ = [
    "CohortManifest",
    "CohortTable",
    "FEATURE_COLUMNS",
    "FeatureVector",
    "LabelVolume",
    "PHANTOM_KINDS",
    "RunConfig",
    "SubjectRecord",
    "VoxelVolume",
    "analyze_volume",
    "default_spec",
    "extract_all",
    "generate",
    "load_atlas",
    "load_cvol",
    "load_manifest",
    "load_mask",
    "regional_features",
    "run_cohort",
    "run_protocol",
    "save_cvol",
    "save_nifti",
    "__version__",
]
