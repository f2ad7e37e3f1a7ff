"""Run configuration: one YAML file, one global seed, stage settings."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from .classify import ClassifierSpec
from .evaluate import TaskSpec
from .hmm import HmmConfig
from .synth import SynthConfig


class ConfigError(ValueError):
    pass


# stream ids for seed derivation: derive_seed(global_seed, STREAM)
SEED_STREAMS = {"synth": 1, "hmm": 2, "evaluate": 3, "did": 4, "train": 5}


def stage_seed(seed: int, stage: str) -> int:
    return int(np.random.SeedSequence([int(seed), SEED_STREAMS[stage]]).generate_state(1)[0] % (2**31 - 1))


@dataclass
class Paths:
    data: str = "data"
    artifacts: str = "artifacts"
    reports: str = "reports"


@dataclass
class IngestSettings:
    grid_seconds: int = 60
    max_gap_seconds: int = 300
    min_valid_hours: float = 5.0
    min_days: int = 2
    min_atypical: int = 1


@dataclass
class EvalTask:
    name: str
    task: TaskSpec
    classifier: ClassifierSpec


def _default_tasks():
    return [
        {"name": "embedding", "feature_family": "embedding", "classifier": {"kind": "linear_svm"}},
        {"name": "aggregated", "feature_family": "aggregated", "classifier": {"kind": "random_forest"}},
    ]


@dataclass
class RunConfig:
    seed: int = 0
    paths: Paths = field(default_factory=Paths)
    synth: dict = field(default_factory=dict)
    ingest: IngestSettings = field(default_factory=IngestSettings)
    hmm: dict = field(default_factory=lambda: {"n_iterations": 40, "burn_in": 20, "max_sequences": 150})
    target: str = "atypical"
    k_folds: int = 10
    split_modes: list = field(default_factory=lambda: ["random", "by_user"])
    n_select: int = 26
    tasks: list = field(default_factory=_default_tasks)
    did: dict = field(default_factory=lambda: {"n_boot": 10000, "offsets": [0, 1]})
    train: dict = field(default_factory=lambda: {"task": "embedding"})

    # -- typed views ---------------------------------------------------
    def synth_config(self) -> SynthConfig:
        return SynthConfig.from_dict({**self.synth, "seed": stage_seed(self.seed, "synth")})

    def hmm_config(self) -> HmmConfig:
        return HmmConfig.from_dict({**self.hmm, "seed": stage_seed(self.seed, "hmm")})

    def eval_tasks(self, split_mode: str | None = None) -> list[EvalTask]:
        out = []
        modes = self.split_modes if split_mode is None else [split_mode]
        for mode in modes:
            for t in self.tasks:
                t = dict(t)
                name = t.pop("name")
                clf = ClassifierSpec.from_dict({**t.pop("classifier", {}), "seed": stage_seed(self.seed, "train")})
                spec = TaskSpec(target=t.pop("target", self.target), split_mode=mode, k_folds=self.k_folds,
                                seed=stage_seed(self.seed, "evaluate"), n_select=t.pop("n_select", self.n_select),
                                **t)
                out.append(EvalTask(name, spec, clf))
        return out

    def validate(self):
        try:
            self.synth_config()
            self.hmm_config()
            self.eval_tasks()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        names = [t.get("name") for t in self.tasks]
        if None in names or len(set(names)) != len(names):
            raise ConfigError("every evaluate task needs a unique name")
        if self.train.get("task") not in names:
            raise ConfigError(f"train.task must name one of {names}")
        for mode in self.split_modes:
            if mode not in ("random", "by_user"):
                raise ConfigError(f"unknown split mode {mode!r}")
        return self

    # -- io -------------------------------------------------------------
    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "RunConfig":
        if not isinstance(obj, dict):
            raise ConfigError("config must be a mapping")
        if "seed" not in obj:
            raise ConfigError("config must set a global 'seed'")
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        obj = dict(obj)
        try:
            obj["seed"] = int(obj["seed"])
            obj["paths"] = Paths(**(obj.get("paths") or {}))
            obj["ingest"] = IngestSettings(**(obj.get("ingest") or {}))
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        return cls(**obj).validate()

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            obj = yaml.safe_load(path.read_text())
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        return cls.from_dict(obj or {})

    def config_hash(self) -> str:
        """SHA-256 over everything except file locations."""
        d = self.to_dict()
        d.pop("paths")
        return hashlib.sha256(json.dumps(d, sort_keys=True, separators=(",", ":")).encode()).hexdigest()
