"""Run configuration: layered YAML with ``key.path=value`` overrides.

Resolution order is built-in defaults, then the config file, then
overrides. Every resolved config has a fingerprint (truncated SHA-256 of
its canonical JSON) that is stamped into checkpoints, grids and reports.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .backends import ROLES
from .errors import ConfigurationError
from .stylemix import StyleMixSpec
from .trainer import TrainConfig

DTYPES = ("float32", "float64")


@dataclass
class BackendSpec:
    kind: str = "toy"
    path: str | None = None
    options: dict = field(default_factory=dict)


@dataclass
class FlowConfig:
    blocks: int = 8
    hidden: int = 256
    s_max: float = 2.0


@dataclass
class EvalConfig:
    n_samples: int = 2500
    k: int = 3
    resolution: int = 256
    style_truncation: float = 1.0
    batch_size: int = 50


@dataclass
class PathsConfig:
    sketch: str | None = None
    category: str | None = None
    output_dir: str = "runs"
    run_id: str = "run"
    eval_stats: str | None = None


@dataclass
class RunConfig:
    seed: int = 0
    dtype: str = "float64"
    backends: dict = field(default_factory=lambda: {role: BackendSpec() for role in ROLES})
    flow: FlowConfig = field(default_factory=FlowConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    stylemix: StyleMixSpec = field(default_factory=StyleMixSpec)
    eval: EvalConfig = field(default_factory=EvalConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["train"]["betas"] = list(self.train.betas)
        return d

    @property
    def fingerprint(self) -> str:
        return fingerprint(self.to_dict())

    @property
    def run_dir(self) -> Path:
        return Path(self.paths.output_dir) / self.paths.run_id

    def require_paths(self, *names) -> None:
        for name in names:
            value = getattr(self.paths, name)
            if value is None:
                raise ConfigurationError(f"paths.{name} is required but not set")
            if not Path(value).exists():
                raise ConfigurationError(f"paths.{name}: file not found: {value}")


def fingerprint(config: dict) -> str:
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


def _build(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigurationError(f"{where}: expected a mapping, got {type(data).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigurationError(f"{where}: unknown key(s) {sorted(unknown)}")
    try:
        return cls(**data)
    except ConfigurationError as exc:
        raise ConfigurationError(f"{where}: {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"{where}: {exc}") from exc


def _merge(base: dict, update: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def parse_override(item: str) -> dict:
    """``"train.lambda_energy=5000"`` -> ``{"train": {"lambda_energy": 5000}}``."""
    key, sep, raw = item.partition("=")
    if not sep or not key:
        raise ConfigurationError(f"override {item!r} is not of the form key.path=value")
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"override {item!r}: {exc}") from exc
    out = value
    for part in reversed(key.split(".")):
        out = {part: out}
    return out


def merge_overrides(data: dict, overrides) -> dict:
    for item in overrides:
        data = _merge(data, parse_override(item))
    return data


def from_dict(data: dict) -> RunConfig:
    data = _merge(RunConfig().to_dict(), data)
    top_known = {f.name for f in fields(RunConfig)}
    unknown = set(data) - top_known
    if unknown:
        raise ConfigurationError(f"unknown top-level key(s) {sorted(unknown)}")
    if data["dtype"] not in DTYPES:
        raise ConfigurationError(f"dtype must be one of {DTYPES}")
    backends = {}
    for role, spec in data["backends"].items():
        if role not in ROLES:
            raise ConfigurationError(f"backends: unknown role {role!r}")
        backends[role] = _build(BackendSpec, spec, f"backends.{role}")
    train = dict(data["train"])
    train["seed"] = data["seed"]
    return RunConfig(
        seed=int(data["seed"]),
        dtype=data["dtype"],
        backends=backends,
        flow=_build(FlowConfig, data["flow"], "flow"),
        train=_build(TrainConfig, train, "train"),
        stylemix=_build(StyleMixSpec, data["stylemix"], "stylemix"),
        eval=_build(EvalConfig, data["eval"], "eval"),
        paths=_build(PathsConfig, data["paths"], "paths"),
    )


def load_config(path=None, overrides=()) -> RunConfig:
    data = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
        try:
            data = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"{path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigurationError(f"{path}: top level must be a mapping")
    return from_dict(merge_overrides(data, overrides))
