"""Flat ``section.key = value`` experiment configuration.

Lines are ``key = value``; blank lines and lines starting with ``#`` are
ignored. Every key must be known, appear once, and parse to its type.
Tasks come either from ``tasks.preset = toy_shift`` (with ``tasks.*``
parameters) or from explicit ``task.<i>.<field>`` entries.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .ddc import DdcConfig
from .detector import TrainConfig
from .harness import MODES, TaskSpec, toy_shift_specs
from .mcr import ScheduleConfig

NONLINEARITIES = ("identity", "tanh")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    mode: str = "full"
    seeds: tuple[int, ...] = (0,)
    output_dir: str = "runs"
    n_replay_per_task: int = 1000
    condense_last: bool = True

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"run.mode must be one of {MODES}")
        if not self.seeds:
            raise ValueError("run.seeds must be nonempty")
        if any(s < 0 for s in self.seeds):
            raise ValueError("run.seeds must be non-negative")
        if self.n_replay_per_task < 1:
            raise ValueError("run.n_replay_per_task must be >= 1")


@dataclass(frozen=True)
class FeatureConfig:
    nonlinearity: str = "identity"
    out_dim: int = 0  # 0 keeps the input dimension

    def __post_init__(self):
        if self.nonlinearity not in NONLINEARITIES:
            raise ValueError(f"features.nonlinearity must be one of {NONLINEARITIES}")
        if self.out_dim < 0:
            raise ValueError("features.out_dim must be >= 0")


@dataclass(frozen=True)
class ToyConfig:
    n_tasks: int = 3
    dim: int = 8
    real_std: float = 0.3
    separation: float = 4.0
    overlap: float = 0.0
    n_train: int = 1000
    n_test: int = 1000
    pattern_seed: int = 7


@dataclass(frozen=True)
class ExperimentConfig:
    tasks: tuple[TaskSpec, ...]
    ddc: DdcConfig = field(default_factory=DdcConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    run: RunConfig = field(default_factory=RunConfig)

    def as_dict(self) -> dict:
        out = {k: asdict(getattr(self, k)) for k in ("ddc", "train", "schedule", "features", "run")}
        out["tasks"] = [asdict(t) for t in self.tasks]
        return out


SECTIONS = {
    "ddc": DdcConfig,
    "train": TrainConfig,
    "schedule": ScheduleConfig,
    "features": FeatureConfig,
    "run": RunConfig,
    "tasks": ToyConfig,
}
_SKIP = {("ddc", "schedule")}  # filled from the schedule section


def _parse_value(key: str, raw: str, default):
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            item = type(default[0]) if default else float
            return tuple(item(v) for v in raw.split(",") if v.strip())
        return raw
    except ValueError:
        kind = "comma-separated list" if isinstance(default, tuple) else type(default).__name__
        raise ConfigError(f"{key}: expected {kind}, got {raw!r}") from None


def _read_pairs(text: str, origin: str) -> dict[str, str]:
    pairs: dict[str, str] = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{n}: expected key = value")
        key, value = (p.strip() for p in line.split("=", 1))
        if key in pairs:
            raise ConfigError(f"{origin}:{n}: duplicate key {key}")
        pairs[key] = value
    return pairs


def _build(cls, section: str, values: dict[str, str], base=None):
    if base is None:
        base = cls()
    known = {f.name for f in fields(cls)} - {name for sec, name in _SKIP if sec == section}
    kwargs = {}
    for name, raw in values.items():
        if name not in known:
            raise ConfigError(f"unknown key {section}.{name}")
        kwargs[name] = _parse_value(f"{section}.{name}", raw, getattr(base, name))
    try:
        return replace(base, **kwargs)
    except ValueError as exc:
        msg = str(exc)
        raise ConfigError(msg if msg.startswith(section) else f"{section}: {msg}") from None


def _explicit_tasks(entries: dict[int, dict[str, str]]) -> tuple[TaskSpec, ...]:
    ids = sorted(entries)
    if ids != list(range(len(ids))):
        raise ConfigError(f"task indices must be 0..n-1 without gaps, got {ids}")
    specs = []
    for i in ids:
        values = dict(entries[i])
        if "dim" not in values:
            raise ConfigError(f"task.{i}.dim is required")
        try:
            base = TaskSpec(i, int(values.pop("dim")))
        except ValueError as exc:
            raise ConfigError(f"task.{i}: {exc}") from None
        specs.append(_build(TaskSpec, f"task.{i}", values, base))
    return tuple(specs)


def config_from_text(text: str, origin: str = "<config>") -> ExperimentConfig:
    pairs = _read_pairs(text, origin)
    grouped: dict[str, dict[str, str]] = {s: {} for s in SECTIONS}
    task_entries: dict[int, dict[str, str]] = {}
    preset = None
    for key, value in pairs.items():
        parts = key.split(".")
        if key == "tasks.preset":
            preset = value
        elif parts[0] == "task" and len(parts) == 3 and parts[1].isdigit():
            if parts[2] == "task_id":
                raise ConfigError(f"unknown key {key}")
            task_entries.setdefault(int(parts[1]), {})[parts[2]] = value
        elif len(parts) == 2 and parts[0] in SECTIONS:
            grouped[parts[0]][parts[1]] = value
        else:
            raise ConfigError(f"unknown key {key}")

    schedule = _build(ScheduleConfig, "schedule", grouped["schedule"])
    ddc = _build(DdcConfig, "ddc", grouped["ddc"], DdcConfig(schedule=schedule))
    train = _build(TrainConfig, "train", grouped["train"])
    features = _build(FeatureConfig, "features", grouped["features"])
    run = _build(RunConfig, "run", grouped["run"])

    if task_entries and (preset is not None or grouped["tasks"]):
        raise ConfigError("use either tasks.preset or explicit task.<i>.* entries, not both")
    if task_entries:
        tasks = _explicit_tasks(task_entries)
        if len({t.dim for t in tasks}) != 1:
            raise ConfigError("all task.<i>.dim values must agree")
    else:
        if preset not in (None, "toy_shift"):
            raise ConfigError(f"tasks.preset: must be toy_shift, got {preset!r}")
        toy = _build(ToyConfig, "tasks", grouped["tasks"])
        try:
            tasks = tuple(toy_shift_specs(**asdict(toy)))
        except ValueError as exc:
            raise ConfigError(f"tasks: {exc}") from None
    return ExperimentConfig(tasks, ddc, train, schedule, features, run)


def parse_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return config_from_text(path.read_text(encoding="utf-8"), str(path))
