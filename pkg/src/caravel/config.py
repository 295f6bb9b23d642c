"""Run configuration and its reproducibility sidecar."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path


@dataclass
class RunConfig:
    """Everything that can change a run's numbers, in one serializable place.

    `strict_literal` switches off the pragmatic defaults (triangle pruning
    and spline smoothing) so results follow the interpolating-spline,
    unpruned-graph formulas exactly.
    """

    prune_triangles: bool = True
    spur_prune_mm: float = 0.0            # 0 disables spur pruning
    min_box_scale: int = 1
    max_box_scale: int | None = None      # None = up to min(dims)//2
    spline_sample_factor: int = 10
    spline_smoothing: float = 2.0
    strict_literal: bool = False
    jobs: int = 1

    def __post_init__(self):
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")
        if self.spur_prune_mm < 0:
            raise ValueError("spur_prune_mm must be >= 0")
        if self.min_box_scale < 1:
            raise ValueError("min_box_scale must be >= 1")
        if self.spline_sample_factor < 1:
            raise ValueError("spline_sample_factor must be >= 1")

    @property
    def effective_prune(self) -> bool:
        return self.prune_triangles and not self.strict_literal

    @property
    def effective_smoothing(self) -> float:
        return 0.0 if self.strict_literal else self.spline_smoothing

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        payload = json.loads(text)
        known = {f.name for f in fields(cls)}
        unknown = set(payload) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**payload)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_json(Path(path).read_text())

    def write_sidecar(self, out_path) -> Path:
        """Store the config next to an output file for exact re-runs."""
        out = Path(out_path)
        sidecar = out.with_suffix(out.suffix + ".config.json")
        sidecar.write_text(self.to_json())
        return sidecar
