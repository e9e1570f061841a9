"""Run configuration: a YAML document validated into nested dataclasses.

Unknown keys are rejected and every error names the offending field path,
e.g. ``train.candidates``. ``RunConfig.dump`` echoes the document with every
default filled in, so the echo re-launches the identical run.
"""

from __future__ import annotations

import copy
import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml

from .denoiser import Architecture, PromptSet
from .losses import LOSS_NAMES, LossConfig
from .oracles import IntransitiveOracle, ScoreOracle
from .schedule import NoiseSchedule, build_linear_schedule
from .toydata import MixtureSpec

OUTPUT_ROOT_ENV = "DIFFNPO_OUTPUT_ROOT"
REQUIRED = object()


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


@dataclass
class ScheduleSection:
    T: int = 100
    beta_start: float = 1e-3
    beta_end: float = 0.2


@dataclass
class ModelSection:
    hidden: int = 64
    depth: int = 2
    time_dim: int = 8


@dataclass
class DataSection:
    n_prompts: int = 4
    radius: float = 1.5
    std: float = 0.3
    means: Optional[list] = None
    weights: Optional[list] = None


@dataclass
class OracleSection:
    type: str = "score"
    name: Optional[str] = None
    weight: float = 1.0
    # score oracle
    target_component: int = 0
    targets: Optional[list] = None
    kappa: float = 1.0
    # intransitive oracle
    K: int = 3
    centers: Optional[list] = None
    offset: float = 0.0


@dataclass
class LossSection:
    name: str = REQUIRED
    gamma: Optional[float] = None
    tau: Optional[float] = None
    eta: float = 1.0
    beta: float = 1.0
    effective_weight: float = 500.0
    target_margin: Optional[float] = None


@dataclass
class TrainSection:
    seed: int = REQUIRED
    steps: int = 200
    prompts_per_step: int = 16
    candidates: int = 8
    inference_steps: int = 10
    lr: float = 1e-6
    optimizer: str = "sgd"
    momentum: float = 0.9
    inner_iters: int = 1
    pretrain_epochs: int = 60
    pretrain_steps_per_epoch: int = 50
    pretrain_batch: int = 256
    pretrain_lr: float = 3e-3
    pretrain_optimizer: str = "adam"
    checkpoint_every: int = 0
    winrate_every: int = 50
    winrate_samples: int = 64
    workers: int = 1
    log_wallclock: bool = False


@dataclass
class EvalSection:
    n_per_prompt: int = 256
    seed: int = 20240101
    inference_steps: int = 10


@dataclass
class OutputSection:
    dir: str = "runs/default"


@dataclass
class RunConfig:
    loss: LossSection = REQUIRED
    train: TrainSection = REQUIRED
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    model: ModelSection = field(default_factory=ModelSection)
    data: DataSection = field(default_factory=DataSection)
    oracles: list = field(default_factory=lambda: [OracleSection()])
    eval: EvalSection = field(default_factory=EvalSection)
    output: OutputSection = field(default_factory=OutputSection)

    # ---- derived objects -------------------------------------------------
    def build_schedule(self) -> NoiseSchedule:
        s = self.schedule
        return build_linear_schedule(s.T, s.beta_start, s.beta_end)

    def build_mixture(self) -> MixtureSpec:
        d = self.data
        if d.means is None:
            return MixtureSpec.two_component_ring(d.n_prompts, d.radius, d.std)
        means = np.asarray(d.means, dtype=np.float64)
        weights = (np.full(means.shape[:2], 1.0 / means.shape[1])
                   if d.weights is None else np.asarray(d.weights, dtype=np.float64))
        return MixtureSpec(means, d.std, weights)

    def build_architecture(self) -> Architecture:
        mix = self.build_mixture()
        m = self.model
        return Architecture(dim=mix.dim, n_prompts=mix.n_prompts, hidden=m.hidden,
                            depth=m.depth, time_dim=m.time_dim)

    def build_prompts(self) -> PromptSet:
        return PromptSet.uniform(self.build_mixture().n_prompts)

    def build_oracles(self) -> list:
        mix = self.build_mixture()
        out = []
        for i, o in enumerate(self.oracles):
            if o.type == "score":
                targets = (mix.means[:, o.target_component, :] if o.targets is None
                           else np.asarray(o.targets, dtype=np.float64))
                out.append(ScoreOracle(targets, kappa=o.kappa, weight=o.weight,
                                       name=o.name or f"score{i}"))
            else:
                centers = (mix.means.mean(axis=1) if o.centers is None
                           else np.asarray(o.centers, dtype=np.float64))
                out.append(IntransitiveOracle(centers, K=o.K, offset=o.offset, weight=o.weight,
                                              name=o.name or f"intransitive{i}"))
        return out

    def build_loss_config(self) -> LossConfig:
        lo = self.loss
        tau = lo.tau if lo.tau is not None else lo.gamma * lo.eta
        return LossConfig(beta=lo.beta, tau=tau, eta=lo.eta, effective_weight=lo.effective_weight)

    def output_dir(self) -> Path:
        root = os.environ.get(OUTPUT_ROOT_ENV)
        p = Path(self.output.dir)
        return Path(root) / p if root and not p.is_absolute() else p

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)


# ---- parsing and validation --------------------------------------------------

_NESTED = {
    "loss": LossSection, "train": TrainSection, "schedule": ScheduleSection,
    "model": ModelSection, "data": DataSection, "eval": EvalSection, "output": OutputSection,
}


def _as_kind(value, kind, path):
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected true/false, got {value!r}")
        return value
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        return float(value)
    if kind is str:
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    return value


_FIELD_KINDS = {
    "int": int, "float": float, "str": str, "bool": bool,
    "Optional[float]": float, "Optional[int]": int, "Optional[str]": str,
    "Optional[list]": list, "list": list,
}


def _build_section(cls, raw, path):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(path, "expected a mapping")
    names = {f.name: f for f in dataclasses.fields(cls)}
    for key in raw:
        if key not in names:
            raise ConfigError(f"{path}.{key}" if path else str(key), "unknown key")
    kwargs = {}
    for name, f in names.items():
        fpath = f"{path}.{name}" if path else name
        if name not in raw:
            if f.default is REQUIRED:
                raise ConfigError(fpath, "missing required field")
            continue
        value = raw[name]
        kind = _FIELD_KINDS.get(f.type if isinstance(f.type, str) else getattr(f.type, "__name__", ""))
        optional = isinstance(f.type, str) and f.type.startswith("Optional")
        if value is None and optional:
            kwargs[name] = None
        elif kind is list:
            if not isinstance(value, list):
                raise ConfigError(fpath, f"expected a list, got {value!r}")
            kwargs[name] = value
        elif kind is not None:
            kwargs[name] = _as_kind(value, kind, fpath)
        else:
            kwargs[name] = value
    return cls(**kwargs)


def _positive(value, path, strict=True):
    if (value <= 0) if strict else (value < 0):
        raise ConfigError(path, f"must be {'positive' if strict else 'non-negative'}, got {value}")


def _validate(cfg: RunConfig) -> None:
    s = cfg.schedule
    if s.T < 2:
        raise ConfigError("schedule.T", "must be >= 2")
    if not 0 < s.beta_start <= s.beta_end < 1:
        raise ConfigError("schedule.beta_end", "need 0 < beta_start <= beta_end < 1")
    for name in ("hidden", "depth", "time_dim"):
        _positive(getattr(cfg.model, name), f"model.{name}")
    if cfg.model.time_dim % 2:
        raise ConfigError("model.time_dim", "must be even")
    d = cfg.data
    _positive(d.n_prompts, "data.n_prompts")
    _positive(d.std, "data.std", strict=False)
    try:
        mix = cfg.build_mixture()
    except ValueError as exc:
        raise ConfigError("data.means", str(exc)) from None

    if not cfg.oracles:
        raise ConfigError("oracles", "at least one oracle is required")
    for i, o in enumerate(cfg.oracles):
        p = f"oracles[{i}]"
        if o.type not in ("score", "intransitive"):
            raise ConfigError(f"{p}.type", f"unknown oracle type {o.type!r}")
        _positive(o.weight, f"{p}.weight")
        _positive(o.kappa, f"{p}.kappa")
        if o.type == "score" and o.targets is None and not 0 <= o.target_component < mix.means.shape[1]:
            raise ConfigError(f"{p}.target_component", "out of range")
        if o.type == "intransitive" and o.K < 2:
            raise ConfigError(f"{p}.K", "must be >= 2")

    lo = cfg.loss
    if lo.name not in LOSS_NAMES:
        raise ConfigError("loss.name", f"unknown loss {lo.name!r}; expected one of {', '.join(LOSS_NAMES)}")
    if lo.gamma is not None and lo.tau is not None:
        raise ConfigError("loss.tau", "give either tau or gamma, not both")
    if lo.gamma is None and lo.tau is None:
        lo.gamma = 0.5
    if lo.gamma is not None and not 0 <= lo.gamma <= 1:
        raise ConfigError("loss.gamma", "must lie in [0, 1]")
    _positive(lo.eta, "loss.eta")
    _positive(lo.beta, "loss.beta")
    _positive(lo.effective_weight, "loss.effective_weight")
    if lo.tau is not None and not 0 <= lo.tau <= lo.eta:
        raise ConfigError("loss.tau", "need 0 <= tau <= eta")
    if lo.tau is not None:
        lo.gamma = None

    t = cfg.train
    if t.candidates < 2:
        raise ConfigError("train.candidates", "must be >= 2")
    if not 1 <= t.inference_steps <= s.T:
        raise ConfigError("train.inference_steps", f"must lie in [1, {s.T}]")
    _positive(t.lr, "train.lr", strict=False)
    if t.optimizer not in ("sgd", "adam"):
        raise ConfigError("train.optimizer", "expected 'sgd' or 'adam'")
    if t.pretrain_optimizer not in ("sgd", "adam"):
        raise ConfigError("train.pretrain_optimizer", "expected 'sgd' or 'adam'")
    if not 0 <= t.momentum < 1:
        raise ConfigError("train.momentum", "must lie in [0, 1)")
    for name in ("steps", "pretrain_epochs", "checkpoint_every", "winrate_every", "seed"):
        _positive(getattr(t, name), f"train.{name}", strict=False)
    for name in ("prompts_per_step", "inner_iters", "pretrain_steps_per_epoch", "pretrain_batch",
                 "winrate_samples", "workers"):
        _positive(getattr(t, name), f"train.{name}")
    _positive(t.pretrain_lr, "train.pretrain_lr")
    e = cfg.eval
    _positive(e.n_per_prompt, "eval.n_per_prompt")
    if not 1 <= e.inference_steps <= s.T:
        raise ConfigError("eval.inference_steps", f"must lie in [1, {s.T}]")


def parse_config(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("", "configuration must be a mapping")
    names = {f.name for f in dataclasses.fields(RunConfig)}
    for key in raw:
        if key not in names:
            raise ConfigError(str(key), "unknown key")
    kwargs = {}
    for name in names:
        cls = _NESTED.get(name)
        if cls is not None:
            if name not in raw and name in ("loss", "train"):
                raise ConfigError(name, "missing required field")
            if name in raw:
                kwargs[name] = _build_section(cls, raw[name], name)
    if "oracles" in raw:
        if not isinstance(raw["oracles"], list):
            raise ConfigError("oracles", "expected a list")
        kwargs["oracles"] = [_build_section(OracleSection, o, f"oracles[{i}]")
                             for i, o in enumerate(raw["oracles"])]
    cfg = RunConfig(**kwargs)
    _validate(cfg)
    return cfg


def apply_overrides(raw: dict, overrides) -> dict:
    """Apply ``section.key=value`` strings; values are parsed as YAML scalars."""
    raw = copy.deepcopy(raw) if raw else {}
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(item, "override must look like section.key=value")
        key, value = item.split("=", 1)
        parts = key.strip().split(".")
        node = raw
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(key, "cannot override inside a non-mapping")
        node[parts[-1]] = yaml.safe_load(value)
    return raw


def load_config(path, overrides=()) -> RunConfig:
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError("", f"{path}: invalid YAML ({exc})") from None
    return parse_config(apply_overrides(raw or {}, overrides))


def config_from_dict(raw: dict, overrides=()) -> RunConfig:
    return parse_config(apply_overrides(raw, overrides))


def default_config(seed: int = 0, **sections) -> RunConfig:
    """Shipped toy experiment with optional per-section overrides (dicts)."""
    raw: dict[str, Any] = {"loss": {"name": "npo"}, "train": {"seed": seed}}
    for name, values in sections.items():
        if isinstance(values, dict):
            raw.setdefault(name, {}).update(values)
        else:
            raw[name] = values
    return parse_config(raw)
