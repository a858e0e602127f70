"""Run configuration as a single JSON document."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .dynpool import DEFAULT_CHUNK
from .grouping import DEFAULT_FG_THRESHOLD, DEFAULT_RADIUS
from .sir.encoder import DEFAULT_VOXEL
from .sir.model import FSDConfig
from .temporal import DEFAULT_BUDGET, STRATEGIES, RppConfig


@dataclass(frozen=True)
class RunConfig:
    radius: float = DEFAULT_RADIUS
    fg_threshold: float = DEFAULT_FG_THRESHOLD
    chunk_size: int = DEFAULT_CHUNK
    rpp: RppConfig = field(default_factory=RppConfig)
    encoder_width: int = 16
    sir_widths: tuple[int, ...] = (64, 64, 64)
    sir2_widths: tuple[int, ...] = (64,) * 6
    head_hidden: int = 64
    voxel_size: tuple[float, float, float] = DEFAULT_VOXEL
    skeleton_strategy: str = "random"
    budget_per_box: int = DEFAULT_BUDGET
    detector_min_points: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        if not 0 <= self.fg_threshold <= 1:
            raise ValueError("fg_threshold must lie in [0, 1]")
        if self.chunk_size < 1:
            raise ValueError("chunk_size must be >= 1")
        if self.skeleton_strategy not in STRATEGIES:
            raise ValueError(f"skeleton_strategy must be one of {STRATEGIES}")
        if self.budget_per_box < 1 or self.detector_min_points < 1:
            raise ValueError("budget_per_box and detector_min_points must be >= 1")

    def fsd_config(self) -> FSDConfig:
        return FSDConfig(encoder_width=self.encoder_width, sir_widths=self.sir_widths,
                         sir2_widths=self.sir2_widths, head_hidden=self.head_hidden,
                         radius=self.radius, fg_threshold=self.fg_threshold,
                         chunk_size=self.chunk_size, voxel_size=self.voxel_size)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        return json.loads(json.dumps(d))

    @staticmethod
    def from_dict(d: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(RunConfig)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        if "rpp" in d:
            r = d["rpp"]
            extra = set(r) - {f.name for f in dataclasses.fields(RppConfig)}
            if extra:
                raise ValueError(f"unknown rpp keys: {sorted(extra)}")
            if "qsize" in r:
                r = dict(r, qsize=tuple(r["qsize"]))
            d["rpp"] = RppConfig(**r)
        for k in ("sir_widths", "sir2_widths", "voxel_size"):
            if k in d:
                d[k] = tuple(d[k])
        return RunConfig(**d)


def load_config(path) -> RunConfig:
    with open(path) as f:
        return RunConfig.from_dict(json.load(f))
