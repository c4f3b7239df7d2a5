"""Run configuration read from a YAML file."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import yaml

from .neighborhood import SIDE_GATE
from .training import TrainConfig

DEFAULT_SPLIT = (0.7, 0.1, 0.2)


@dataclass(frozen=True)
class CorpusConfig:
    n_windows: int = 2000
    mix: tuple[float, float, float] = (0.2, 0.4, 0.4)   # straight, left, right
    noise: float = 0.05

    def __post_init__(self):
        if self.n_windows < 1 or len(self.mix) != 3 or min(self.mix) < 0 or self.noise < 0:
            raise ValueError(f"invalid corpus settings: {self}")


@dataclass(frozen=True)
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    side_gate: float = SIDE_GATE
    stride: int = 10
    normalize: bool = True
    variant: str = "full"
    seed: int = 0
    split: tuple[float, float, float] = DEFAULT_SPLIT
    corpus: CorpusConfig | None = None
    scenario: dict | None = None        # raw ScenarioSpec mapping, see synth.ScenarioSpec.from_dict

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, seed=seed, train=replace(self.train, seed=seed))


_KEYS = {"train", "side_gate", "stride", "normalize", "variant", "seed", "split", "corpus", "scenario"}


def config_from_dict(d: dict | None) -> RunConfig:
    d = dict(d or {})
    unknown = set(d) - _KEYS
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    kw = {}
    if "train" in d:
        kw["train"] = TrainConfig.from_dict(d["train"])
    if "side_gate" in d:
        kw["side_gate"] = float(d["side_gate"])
    if "stride" in d:
        kw["stride"] = int(d["stride"])
        if kw["stride"] < 1:
            raise ValueError("stride must be >= 1")
    if "normalize" in d:
        kw["normalize"] = bool(d["normalize"])
    if "variant" in d:
        kw["variant"] = str(d["variant"])
    if "split" in d:
        kw["split"] = tuple(float(v) for v in d["split"])
    if d.get("corpus") is not None:
        c = dict(d["corpus"])
        if "mix" in c:
            c["mix"] = tuple(float(v) for v in c["mix"])
        kw["corpus"] = CorpusConfig(**c)
    if d.get("scenario") is not None:
        kw["scenario"] = dict(d["scenario"])
    cfg = RunConfig(**kw)
    if "seed" in d:
        seed = int(d["seed"])
        cfg = replace(cfg, seed=seed)
        if "seed" not in (d.get("train") or {}):
            cfg = replace(cfg, train=replace(cfg.train, seed=seed))
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    data = yaml.safe_load(path.read_text(encoding="utf-8"))
    if data is not None and not isinstance(data, dict):
        raise ValueError(f"{path}: expected a mapping at the top level")
    return config_from_dict(data)
