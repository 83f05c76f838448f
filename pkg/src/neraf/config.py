"""Experiment configuration documents with strict key checking."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .dsp import StftConfig
from .encodings import EncodingConfig
from .errors import InvalidInputError
from .nacf import NacfConfig
from .oracle import Pose, ShoeboxRoom
from .training.loop import TrainConfig
from .training.losses import LossWeights


@dataclass
class DatasetConfig:
    spacing: float = 0.5
    orientations: tuple = (0.0, math.pi / 2, math.pi, 3 * math.pi / 2)
    sources: tuple = ((1.1, 0.9, 1.2),)
    split: str = "pair"
    fraction: float = 0.9
    channels: str = "dual_omni"
    sample_rate: int = 16000
    duration: float = 0.25
    margin: float = 0.25
    height: float = 1.5

    def source_poses(self):
        return [Pose(tuple(s[:3]), s[3] if len(s) > 3 else 0.0) for s in self.sources]


@dataclass
class PathsConfig:
    dataset: str | None = None
    checkpoint: str | None = None
    out_dir: str | None = None
    log: str | None = None


def _strict(cls, data, where: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise InvalidInputError(f"{where} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise InvalidInputError(f"unknown keys in {where}: {unknown}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise InvalidInputError(f"invalid {where}: {exc}") from exc


@dataclass
class ExperimentConfig:
    room: ShoeboxRoom = field(default_factory=ShoeboxRoom)
    stft: StftConfig = field(default_factory=lambda: StftConfig(256, 256, 64))
    encoding: EncodingConfig = field(default_factory=EncodingConfig)
    nacf: NacfConfig = field(default_factory=NacfConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)
    seed: int = 0

    _SECTIONS = {
        "stft": StftConfig,
        "encoding": EncodingConfig,
        "train": TrainConfig,
        "weights": LossWeights,
        "dataset": DatasetConfig,
        "paths": PathsConfig,
    }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise InvalidInputError("experiment config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise InvalidInputError(f"unknown top-level keys: {unknown}")
        kw = {name: _strict(c, d.get(name), name) for name, c in cls._SECTIONS.items()}
        room = d.get("room")
        if room is not None:
            extra = sorted(set(room) - {"dims", "absorption", "speed_of_sound", "max_order"})
            if extra:
                raise InvalidInputError(f"unknown keys in room: {extra}")
            kw["room"] = ShoeboxRoom.from_dict(room)
        else:
            kw["room"] = ShoeboxRoom()
        nacf = dict(d.get("nacf") or {})
        nacf.setdefault("encoding", kw["encoding"].to_dict())
        kw["nacf"] = _strict(NacfConfig, nacf, "nacf")
        seed = d.get("seed", 0)
        if not isinstance(seed, int):
            raise InvalidInputError("seed must be an integer")
        kw["seed"] = seed
        return cls(**kw)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except FileNotFoundError as exc:
            raise InvalidInputError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise InvalidInputError(f"config is not valid JSON: {exc}") from exc
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return {
            "room": self.room.to_dict(),
            "stft": self.stft.to_dict(),
            "encoding": self.encoding.to_dict(),
            "nacf": self.nacf.to_dict(),
            "train": self.train.to_dict(),
            "weights": self.weights.to_dict(),
            "dataset": asdict(self.dataset),
            "paths": asdict(self.paths),
            "seed": self.seed,
        }
