"""Run configuration stored as flat JSON."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

TASKS = ("balls", "windgrid", "external-csv")


@dataclass
class RunConfig:
    task: str = "windgrid"
    models: list = field(default_factory=lambda: ["PR", "CNN", "LI_CNN"])
    # grid and windows
    W: int = 10
    H: int = 10
    l: int = 12
    horizons: list = field(default_factory=lambda: [1])
    # training
    epochs: int = 30
    seeds: list = field(default_factory=lambda: [0, 1, 2])
    width_scale: float = 0.25
    batch_size: int = 32
    lr: float = 1e-3
    match_params: bool = False
    hidden_activation: str = "relu"
    normalize: bool = True
    # data
    data_seed: int = 1
    data_dir: Optional[str] = None
    n_train: int = 400
    n_test: int = 100
    n_bounce: int = 100
    T: int = 1500
    bias_amplitude: float = 1.0
    csv_path: Optional[str] = None
    split: list = field(default_factory=lambda: [0.6, 0.2, 0.2])
    # output
    output_dir: str = "runs/latest"
    record_wall_time: bool = False
    curve_metric: str = "test_mse"
    save_checkpoints: bool = True
    # grid embedding
    emb_pop: int = 300
    emb_generations: int = 2000
    emb_p_mut: float = 0.2
    emb_p_cx: float = 0.3
    emb_bins: int = 16
    emb_seed: int = 0

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}, got {self.task!r}")
        if isinstance(self.models, str):
            self.models = [m for m in self.models.split(",") if m]
        if isinstance(self.horizons, int):
            self.horizons = [self.horizons]
        if isinstance(self.seeds, int):
            self.seeds = list(range(self.seeds))
        if self.epochs < 0 or self.batch_size < 1 or not self.seeds:
            raise ValueError("epochs >= 0, batch_size >= 1 and at least one seed are required")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        """Hash of everything that affects results (the output location does not)."""
        d = self.to_dict()
        d.pop("output_dir")
        d.pop("record_wall_time")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **{k: v for k, v in changes.items() if v is not None})
