"""Run configuration with plain-text ``dotted.key = value`` files."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .vae import RECONSTRUCTION_METRICS


@dataclass
class TrainConfig:
    # "shapes" renders a synthetic dataset; anything else is an IDX image file path.
    dataset: str = "shapes"
    dataset_count: int = 10_000  # shapes rendered, or MNIST prefix kept (0 keeps all)
    dataset_seed: int = 0
    latent_dim: int = 10
    hidden_layout: tuple[int, ...] = (256, 128)
    metric: str = "sse"
    tau: float = 20.0
    alpha: float = 0.99
    k: float = 7.0
    lambda_min: float = 1e-5
    lambda_max: float = 5.0
    gamma_init: float = 0.42
    lambda_init: float = 1.0
    batch_size: int = 64
    learning_rate: float = 1e-3
    max_batches: int = 1000
    seed: int = 0
    dtype: str = "float32"
    output_dir: str = "runs/default"

    def __post_init__(self):
        self.hidden_layout = tuple(int(h) for h in self.hidden_layout)
        if self.tau < 0:
            raise ValueError("tau must be non-negative")
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be at least 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.max_batches < 0:
            raise ValueError("max_batches must be non-negative")
        if self.metric not in RECONSTRUCTION_METRICS:
            raise ValueError(f"metric must be one of {RECONSTRUCTION_METRICS}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    @property
    def is_shapes(self) -> bool:
        return self.dataset == "shapes"

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["hidden_layout"] = list(self.hidden_layout)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


# dotted file key -> TrainConfig field
CONFIG_KEYS = {
    "data.source": "dataset",
    "data.count": "dataset_count",
    "data.seed": "dataset_seed",
    "model.latent_dim": "latent_dim",
    "model.hidden_layout": "hidden_layout",
    "model.metric": "metric",
    "geco.tau": "tau",
    "geco.alpha": "alpha",
    "geco.lambda_min": "lambda_min",
    "geco.lambda_max": "lambda_max",
    "geco.lambda_init": "lambda_init",
    "gates.k": "k",
    "gates.gamma_init": "gamma_init",
    "train.batch_size": "batch_size",
    "train.learning_rate": "learning_rate",
    "train.max_batches": "max_batches",
    "train.seed": "seed",
    "train.dtype": "dtype",
    "train.output_dir": "output_dir",
}


def _convert(name: str, raw: str):
    kind = {f.name: f.type for f in dataclasses.fields(TrainConfig)}[name]
    if name == "hidden_layout":
        return tuple(int(p) for p in raw.replace(" ", "").split(",") if p)
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    return raw


def parse_config_text(text: str) -> dict:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        name = CONFIG_KEYS[key]
        values[name] = _convert(name, raw)
    return values


def load_config(path, **overrides) -> TrainConfig:
    values = parse_config_text(Path(path).read_text())
    values.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig(**values)


def format_config(cfg: TrainConfig) -> str:
    lines = []
    for key, name in CONFIG_KEYS.items():
        value = getattr(cfg, name)
        if name == "hidden_layout":
            value = ",".join(str(h) for h in value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
