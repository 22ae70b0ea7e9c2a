"""Pipeline configuration with full-scale defaults and a desk-scale preset."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import InvalidSpec, MissingFile


@dataclass
class PipelineConfig:
    # candidate pool
    k_candidates: int = 128
    ransac_iters: int = 2000
    ransac_samples: int = 2000
    sampson_threshold: float = 2.0
    refine_top: int = 4
    # consensus
    m_samples: int = 10000
    lambda_2d: float = 2.0
    lambda_3d: float = 0.025
    confidence_min: float = 0.2
    hough_resolution: tuple[int, int] = (100, 200)
    x_max: float = 1.0
    ba_iters: int = 200
    ba_lr: float = 5e-4
    epoch_cap: int = 50
    local_refine_deg: tuple[float, ...] = (0.2, 0.1, 0.05)
    local_refine_evals: int = 400
    # frustum field
    rf_grid: tuple[int, int, int] = (240, 320, 128)
    rf_iters: int = 80000
    rf_lr: float = 1e-4
    rf_batch: int = 1024
    depth_loss_weight: float = 0.01
    # verification
    lambda_c: float = 0.01
    n_c: int = 2
    seed: int = 0
    mode: str = "rgb"
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.hough_resolution = tuple(int(v) for v in self.hough_resolution)
        self.rf_grid = tuple(int(v) for v in self.rf_grid)
        self.local_refine_deg = tuple(float(v) for v in self.local_refine_deg)
        self.validate()

    def validate(self) -> None:
        positive = {
            "k_candidates": self.k_candidates,
            "ransac_iters": self.ransac_iters,
            "ransac_samples": self.ransac_samples,
            "sampson_threshold": self.sampson_threshold,
            "m_samples": self.m_samples,
            "lambda_2d": self.lambda_2d,
            "lambda_3d": self.lambda_3d,
            "x_max": self.x_max,
            "ba_iters": self.ba_iters,
            "ba_lr": self.ba_lr,
            "epoch_cap": self.epoch_cap,
            "local_refine_evals": self.local_refine_evals,
            "rf_iters": self.rf_iters,
            "rf_lr": self.rf_lr,
            "rf_batch": self.rf_batch,
            "depth_loss_weight": self.depth_loss_weight,
            "lambda_c": self.lambda_c,
            "n_c": self.n_c,
        }
        for name, value in positive.items():
            if not value > 0:
                raise InvalidSpec(f"{name} must be positive, got {value}")
        if len(self.hough_resolution) != 2 or min(self.hough_resolution) <= 0:
            raise InvalidSpec("hough_resolution must be two positive integers")
        if len(self.rf_grid) != 3 or min(self.rf_grid) <= 0:
            raise InvalidSpec("rf_grid must be three positive integers")
        if any(not d > 0 for d in self.local_refine_deg):
            raise InvalidSpec("local_refine_deg entries must be positive")
        if not 0 <= self.confidence_min <= 1:
            raise InvalidSpec("confidence_min must lie in [0, 1]")
        if self.mode not in ("rgb", "rgbd"):
            raise InvalidSpec(f"mode must be rgb or rgbd, got {self.mode!r}")

    def desk_scale(self) -> "PipelineConfig":
        """Small-grid field preset used for laptop-sized runs."""
        # the default rate barely moves a 4000-step run; see the decisions ledger
        return dataclasses.replace(self, rf_grid=(60, 80, 32), rf_iters=4000, rf_lr=1e-2)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["hough_resolution"] = list(self.hough_resolution)
        d["rf_grid"] = list(self.rf_grid)
        d["local_refine_deg"] = list(self.local_refine_deg)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise InvalidSpec(f"unknown configuration keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path: str | Path) -> "PipelineConfig":
        path = Path(path)
        if not path.exists():
            raise MissingFile(f"configuration file not found: {path}")
        try:
            return cls.from_dict(json.loads(path.read_text()))
        except json.JSONDecodeError as exc:
            raise InvalidSpec(f"{path}: {exc}") from exc
