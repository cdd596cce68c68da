"""Run configuration (YAML, schema version 1)."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

import yaml

from .corpus import Window
from .errors import ConfigError
from .scenario import Candidate, ScenarioKind

SCHEMA_VERSION = 1


@dataclass
class SubredditConfig:
    name: str
    candidate: str
    dumps: list[str]


@dataclass
class GenerationConfig:
    temperatures: list[float] = field(default_factory=lambda: [0.0])
    top_p: float = 1.0
    model: str = "gpt-4"
    token_budget: int | None = None
    max_targets_per_user: int | None = None
    anonymize_salt: str | None = None


@dataclass
class ClassificationConfig:
    n_runs: int = 1
    model: str = "gpt-4"
    temperature: float = 0.0
    classify_context: bool = True


@dataclass
class EmbeddingConfig:
    model: str = "text-embedding-3-small"
    mock_dim: int = 384


@dataclass
class LiveConfig:
    base_url: str = "https://api.openai.com/v1"
    api_key_env: str = "OPENAI_API_KEY"
    timeout: float = 60.0
    max_in_flight: int = 4
    requests_per_minute: int | None = 500
    retry_attempts: int = 5
    retry_base_delay: float = 1.0


@dataclass
class TSNEConfig:
    perplexity: float = 30.0
    iterations: int = 1000
    learning_rate: float = 200.0
    early_exaggeration: float = 12.0
    exaggeration_iters: int = 250


@dataclass
class AnalysisConfig:
    bin_width: int = 250
    histogram_bins: int = 20
    min_count: int = 2
    exceedance_shuffles: int = 100
    share_mode: str = "modal"
    svg: bool = True
    ngram_tsv: bool = False
    tsne: TSNEConfig = field(default_factory=TSNEConfig)


@dataclass
class DetectorConfig:
    C: float = 1.0
    tol: float = 1e-4
    max_epochs: int = 1000
    runs: int = 10
    split_fraction: float = 0.8
    normalize: bool = True


@dataclass
class RunConfig:
    subreddits: list[SubredditConfig]
    out_dir: str = "out"
    schema_version: int = SCHEMA_VERSION
    seed: int = 0
    backend: str = "mock"
    max_calls: int | None = None
    workers: int = 4
    windows: dict = field(default_factory=lambda: {"history": ["2015-01-01", "2016-01-01"],
                                                   "target": ["2016-01-01", "2017-01-01"]})
    scenarios: list[str] = field(default_factory=lambda: [s.value for s in ScenarioKind])
    n_runs: int = 5
    generation: GenerationConfig = field(default_factory=GenerationConfig)
    classification: ClassificationConfig = field(default_factory=ClassificationConfig)
    embedding: EmbeddingConfig = field(default_factory=EmbeddingConfig)
    live: LiveConfig = field(default_factory=LiveConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    detector: DetectorConfig = field(default_factory=DetectorConfig)

    @property
    def history_window(self) -> Window:
        return Window.from_dates(*self.windows["history"])

    @property
    def target_window(self) -> Window:
        return Window.from_dates(*self.windows["target"])

    @property
    def out_path(self) -> Path:
        return Path(self.out_dir)

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def validate(self, check_paths: bool = True) -> "RunConfig":
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {self.schema_version}")
        if self.backend not in ("live", "mock"):
            raise ConfigError(f"backend must be live or mock, got {self.backend!r}")
        if not self.subreddits:
            raise ConfigError("at least one subreddit is required")
        if self.n_runs < 1 or self.classification.n_runs < 1:
            raise ConfigError("n_runs must be >= 1")
        if not self.generation.temperatures:
            raise ConfigError("temperature list must be non-empty")
        for t in self.generation.temperatures:
            if not 0.0 <= t <= 2.0:
                raise ConfigError(f"temperature {t} outside [0, 2]")
        if not 0.0 < self.generation.top_p <= 1.0:
            raise ConfigError("top_p must be in (0, 1]")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.analysis.share_mode not in ("modal", "pooled"):
            raise ConfigError("share_mode must be modal or pooled")
        if not 0.0 < self.detector.split_fraction < 1.0:
            raise ConfigError("split_fraction must be in (0, 1)")
        try:
            [ScenarioKind(s) for s in self.scenarios]
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        for key in ("history", "target"):
            try:
                w = Window.from_dates(*self.windows[key])
            except (KeyError, TypeError, ValueError) as exc:
                raise ConfigError(f"bad {key} window: {exc}") from None
            if w.end <= w.start:
                raise ConfigError(f"{key} window is empty")
        names = set()
        for sub in self.subreddits:
            if sub.name in names:
                raise ConfigError(f"duplicate subreddit {sub.name}")
            names.add(sub.name)
            try:
                Candidate(sub.candidate)
            except ValueError:
                raise ConfigError(f"unknown candidate {sub.candidate!r} for {sub.name}") from None
            if not sub.dumps:
                raise ConfigError(f"{sub.name}: no dump files")
            if check_paths:
                for p in sub.dumps:
                    if not Path(p).is_file():
                        raise ConfigError(f"input path does not exist: {p}")
        return self


def _build(cls, data, where: str):
    if not is_dataclass(cls):
        return data
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping")
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    kwargs = {}
    nested = {
        "generation": GenerationConfig, "classification": ClassificationConfig,
        "embedding": EmbeddingConfig, "live": LiveConfig, "analysis": AnalysisConfig,
        "detector": DetectorConfig, "tsne": TSNEConfig,
    }
    for key, value in data.items():
        if key in nested:
            kwargs[key] = _build(nested[key], value or {}, f"{where}.{key}")
        elif key == "subreddits":
            kwargs[key] = [_build(SubredditConfig, s, f"{where}.subreddits[{i}]") for i, s in enumerate(value or [])]
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def load_config(path: str | Path, check_paths: bool = True, **overrides) -> RunConfig:
    """Read a YAML config; relative dump paths and out_dir resolve against the file's directory."""
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML: {exc}") from None
    cfg = _build(RunConfig, data, "config")
    base = path.resolve().parent
    for sub in cfg.subreddits:
        sub.dumps = [str((base / p).resolve()) if not Path(p).is_absolute() else p for p in sub.dumps]
    if not Path(cfg.out_dir).is_absolute():
        cfg.out_dir = str((base / cfg.out_dir).resolve())
    for key, value in overrides.items():
        if value is not None:
            setattr(cfg, key, value)
    return cfg.validate(check_paths=check_paths)
