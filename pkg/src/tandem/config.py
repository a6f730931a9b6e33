"""Run configuration: one TOML file per experiment.

Layout::

    budgets = [100, 500, 1000]

    [models.mentor]            # likewise [models.intern]
    name = "..."
    param_count = 32000000000
    endpoint = "http://host:8000/v1"   # or "mock:fixture.json"
    [models.mentor.decoding]
    temperature = 0.0

    [thresholds]               # optional
    tau = [0.5, 0.5, 0.5, 0.5]
    router = 0.5

    [classifier]               # grouping plus SufficiencyClassifier params
    [flags]                    # allow_stage0_exit, all_stage_recording, top_k
    [grading]                  # grader, command
    [dataset]                  # format
    [paths]                    # dataset, traces, model_file, report_dir, results

Relative paths resolve against the directory holding the config file.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields
from pathlib import Path

import tomli
import tomli_w

from .backend.base import Decoding, ModelSpec
from .cascade import CascadeConfig
from .classifier import ThresholdSet
from .core import DATASETS, DEFAULT_BUDGETS, make_stages
from .errors import ConfigError
from .harness.grading import GRADERS

ENV_VAR = "TANDEM_CONFIG"
GROUPINGS = ("unified", "per_subject")
CLASSIFIER_KEYS = (
    "hidden_layer_sizes",
    "learning_rate",
    "max_epochs",
    "dropout",
    "batch_size",
    "val_fraction",
    "random_state",
    "patience",
)


@dataclass
class Flags:
    allow_stage0_exit: bool = False
    all_stage_recording: bool = True
    top_k: int = 20


@dataclass
class Paths:
    dataset: str | None = None
    traces: str | None = None
    model_file: str | None = None
    report_dir: str | None = None
    results: str | None = None


@dataclass
class RunConfig:
    mentor: ModelSpec
    intern: ModelSpec
    budgets: tuple[int, ...] = DEFAULT_BUDGETS
    thresholds: ThresholdSet | None = None
    grouping: str = "unified"
    classifier: dict = field(default_factory=dict)
    flags: Flags = field(default_factory=Flags)
    grader: str = "boxed_math"
    grader_command: str | None = None
    dataset_format: str = "custom"
    paths: Paths = field(default_factory=Paths)
    base_dir: Path = field(default_factory=Path.cwd, compare=False)

    def __post_init__(self):
        try:
            make_stages(self.budgets)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.mentor.role != "mentor" or self.intern.role != "intern":
            raise ConfigError("models.mentor/models.intern must carry roles mentor/intern")
        if self.grouping not in GROUPINGS:
            raise ConfigError(f"classifier.grouping must be one of {GROUPINGS}")
        unknown = set(self.classifier) - set(CLASSIFIER_KEYS)
        if unknown:
            raise ConfigError(f"unknown classifier keys {sorted(unknown)}")
        if self.grader not in GRADERS:
            raise ConfigError(f"grading.grader must be one of {GRADERS}")
        if self.dataset_format not in DATASETS:
            raise ConfigError(f"dataset.format must be one of {DATASETS}")
        if self.flags.top_k < 1:
            raise ConfigError("flags.top_k must be positive")
        if self.thresholds is not None:
            n = len(self.budgets) + 1
            if sorted(self.thresholds.tau) != list(range(n)):
                raise ConfigError(f"thresholds.tau needs one value per stage 0..{n - 1}")

    @property
    def models(self) -> tuple[ModelSpec, ModelSpec]:
        return self.mentor, self.intern

    def cascade_config(self) -> CascadeConfig:
        return CascadeConfig(stages=make_stages(self.budgets), allow_stage0_exit=self.flags.allow_stage0_exit)

    def classifier_params(self) -> dict:
        params = dict(self.classifier)
        if "hidden_layer_sizes" in params:
            params["hidden_layer_sizes"] = tuple(params["hidden_layer_sizes"])
        return params

    def path(self, name: str, required: bool = True) -> Path | None:
        raw = getattr(self.paths, name)
        if raw is None:
            if required:
                raise ConfigError(f"paths.{name} is not set")
            return None
        p = Path(raw)
        return p if p.is_absolute() else self.base_dir / p

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        d: dict = {
            "budgets": list(self.budgets),
            "models": {"mentor": _model_to_toml(self.mentor), "intern": _model_to_toml(self.intern)},
        }
        if self.thresholds is not None:
            th = {"tau": [self.thresholds.tau[t] for t in sorted(self.thresholds.tau)]}
            if self.thresholds.router is not None:
                th["router"] = self.thresholds.router
            d["thresholds"] = th
        clf = {"grouping": self.grouping, **self.classifier}
        if "hidden_layer_sizes" in clf:
            clf["hidden_layer_sizes"] = list(clf["hidden_layer_sizes"])
        d["classifier"] = clf
        d["flags"] = {f.name: getattr(self.flags, f.name) for f in fields(Flags)}
        grading = {"grader": self.grader}
        if self.grader_command is not None:
            grading["command"] = self.grader_command
        d["grading"] = grading
        d["dataset"] = {"format": self.dataset_format}
        d["paths"] = {f.name: getattr(self.paths, f.name) for f in fields(Paths) if getattr(self.paths, f.name) is not None}
        return d

    def to_toml(self) -> str:
        return tomli_w.dumps(self.to_dict())

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_toml(), encoding="utf-8")

    @classmethod
    def from_dict(cls, d: dict, base_dir: str | Path = ".") -> "RunConfig":
        d = dict(d)
        known = {"budgets", "models", "thresholds", "classifier", "flags", "grading", "dataset", "paths"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config sections {sorted(unknown)}")
        try:
            models = d["models"]
            mentor = _model_from_toml(models["mentor"], "mentor")
            intern = _model_from_toml(models["intern"], "intern")
        except KeyError as exc:
            raise ConfigError(f"missing config key {exc}") from None
        clf = dict(d.get("classifier", {}))
        grouping = clf.pop("grouping", "unified")
        th = d.get("thresholds")
        try:
            thresholds = ThresholdSet.from_dict(th) if th else None
            flags = Flags(**d.get("flags", {}))
            paths = Paths(**d.get("paths", {}))
        except (TypeError, KeyError, ValueError) as exc:
            raise ConfigError(f"bad config: {exc}") from None
        grading = dict(d.get("grading", {}))
        extra = set(grading) - {"grader", "command"}
        if extra:
            raise ConfigError(f"unknown grading keys {sorted(extra)}")
        return cls(
            mentor=mentor,
            intern=intern,
            budgets=tuple(int(b) for b in d.get("budgets", DEFAULT_BUDGETS)),
            thresholds=thresholds,
            grouping=grouping,
            classifier=clf,
            flags=flags,
            grader=grading.get("grader", "boxed_math"),
            grader_command=grading.get("command"),
            dataset_format=d.get("dataset", {}).get("format", "custom"),
            paths=paths,
            base_dir=Path(base_dir),
        )

    @classmethod
    def from_toml(cls, text: str, base_dir: str | Path = ".") -> "RunConfig":
        try:
            data = tomli.loads(text)
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"config is not valid TOML: {exc}") from None
        return cls.from_dict(data, base_dir)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        return cls.from_toml(path.read_text(encoding="utf-8"), path.resolve().parent)


def _model_to_toml(spec: ModelSpec) -> dict:
    d = spec.to_dict()
    d.pop("role")
    d["decoding"] = {k: v for k, v in d["decoding"].items() if v is not None}
    return d


def _model_from_toml(d: dict, role: str) -> ModelSpec:
    d = dict(d)
    if d.setdefault("role", role) != role:
        raise ConfigError(f"models.{role}.role must be {role!r}")
    try:
        return ModelSpec.from_dict(d)
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"models.{role}: {exc}") from None


def resolve_config_path(flag: str | None) -> Path:
    """``$TANDEM_CONFIG`` wins over ``--config``."""
    env = os.environ.get(ENV_VAR)
    chosen = env or flag
    if not chosen:
        raise ConfigError(f"no config given: pass --config or set {ENV_VAR}")
    return Path(chosen)


__all__ = ["ENV_VAR", "Flags", "Paths", "RunConfig", "resolve_config_path"]
