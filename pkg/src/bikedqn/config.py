"""Run configuration: one JSON document per experiment, with preset profiles."""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

from .baselines import PolicyKind
from .demand import LAYOUTS, DemandParams, LayoutSpec
from .domain import FillLevels
from .neural import ACTIVATIONS
from .trainer import TrainerConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    name: str = "run"
    seed: int = 0
    network_seed: int = 7
    layout: LayoutSpec = field(default_factory=LayoutSpec)
    instance_path: str | None = None
    demand: DemandParams = field(default_factory=DemandParams)
    day_count: int = 150
    train_fraction: float = 2 / 3
    static_inventory: bool = True
    fill_levels: tuple[float, float, float] = (0.10, 0.50, 0.90)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    policy: str = PolicyKind.FULL_DQN.value
    eval_epsilons: tuple[float, ...] = (0.0, 0.05)
    episodes_per_day: int = 1
    data_dir: str = "data"
    output_dir: str = "runs"

    def validate(self) -> "RunConfig":
        try:
            PolicyKind(self.policy)
        except ValueError:
            raise ConfigError(f"unknown policy {self.policy!r}; choose from {[p.value for p in PolicyKind]}")
        if self.trainer.output_activation not in ACTIVATIONS:
            raise ConfigError(f"unknown output activation {self.trainer.output_activation!r}")
        try:
            FillLevels(tuple(self.fill_levels))
        except ValueError as e:
            raise ConfigError(str(e))
        if self.day_count < 2:
            raise ConfigError("day_count must be at least 2")
        if not 0 < self.train_fraction < 1:
            raise ConfigError("train_fraction must be in (0, 1)")
        if any(not 0 <= e <= 1 for e in self.eval_epsilons):
            raise ConfigError("eval_epsilons must lie in [0, 1]")
        if self.instance_path and not Path(self.instance_path).exists():
            raise ConfigError(f"instance_path {self.instance_path} does not exist")
        errs = self.layout.violations()
        if errs and not self.instance_path:
            raise ConfigError("invalid layout: " + "; ".join(errs))
        return self

    @property
    def fill(self) -> FillLevels:
        return FillLevels(tuple(self.fill_levels))

    def to_dict(self) -> dict:
        d = asdict(self)
        return json.loads(json.dumps(d))

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        doc = copy.deepcopy(doc)
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            if isinstance(doc.get("layout"), str):
                doc["layout"] = asdict(LAYOUTS[doc["layout"]])
            if "layout" in doc:
                doc["layout"] = LayoutSpec(**doc["layout"])
            if "demand" in doc:
                doc["demand"] = DemandParams(**doc["demand"])
            if "trainer" in doc:
                doc["trainer"] = TrainerConfig(**doc["trainer"])
            for key in ("fill_levels", "eval_epsilons"):
                if key in doc:
                    doc[key] = tuple(doc[key])
            return cls(**doc).validate()
        except (TypeError, KeyError, ValueError) as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(str(e)) from e

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


DESK_DEMAND = {"base_rate": 4.0, "commuter_fraction": 0.8}

PROFILES: dict[str, dict[str, Any]] = {
    # CI scale: seconds
    "smoke": {
        "name": "smoke",
        "layout": {**asdict(LAYOUTS["DESK"]), "layout_id": "SMOKE", "total_stations": 5,
                   "stations_per_center": 1, "vehicle_count": 2, "area_km": 2.0},
        "demand": DESK_DEMAND,
        "day_count": 6,
        "train_fraction": 0.5,
        "trainer": {"total_steps": 2_000, "hidden": [32, 16], "batch_size": 32, "buffer_size": 1_000,
                    "learning_starts": 200, "target_sync": 100, "learning_rate": 1e-3},
    },
    # single desktop: minutes per run
    "desk": {
        "name": "desk",
        "layout": "DESK",
        "demand": DESK_DEMAND,
        "day_count": 150,
        "trainer": {"total_steps": 300_000, "hidden": [256, 128]},
    },
    # the published configuration
    "full": {
        "name": "GT1",
        "layout": "GT1",
        "day_count": 150,
        "trainer": {},
    },
}


def set_dotted(doc: dict, key: str, value: Any) -> None:
    parts = key.split(".")
    cur = doc
    for p in parts[:-1]:
        nxt = cur.get(p)
        if isinstance(nxt, str) and p == "layout":
            nxt = asdict(LAYOUTS[nxt])
        if not isinstance(nxt, dict):
            nxt = {}
        cur[p] = nxt
        cur = nxt
    cur[parts[-1]] = value


def parse_override(text: str) -> tuple[str, Any]:
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like key=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def build_config(profile: str | None = None, path: str | None = None, overrides: list[str] = ()) -> RunConfig:
    doc: dict[str, Any] = {}
    if profile:
        if profile not in PROFILES:
            raise ConfigError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
        doc = copy.deepcopy(PROFILES[profile])
    if path:
        loaded = json.loads(Path(path).read_text())
        for k, v in loaded.items():
            if isinstance(v, dict) and isinstance(doc.get(k), dict):
                doc[k] = {**doc[k], **v}
            else:
                doc[k] = v
    for item in overrides:
        set_dotted(doc, *parse_override(item))
    return RunConfig.from_dict(doc)
