"""Pipeline configuration: one TOML file describing corpus, registry, prompt
specs, model endpoints, ensemble settings, cache, and output locations.

All paths in the file are resolved relative to the file's own directory so a
config plus its data directory is a self-contained, reproducible experiment.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .backend import ModelConfig


class ConfigError(ValueError):
    """The config file is malformed or references files that do not exist."""


@dataclass(frozen=True)
class EnsembleSettings:
    rule: str = "majority"
    members: tuple[str, ...] = ()
    stage_order: tuple[str, ...] = ()


@dataclass(frozen=True)
class PipelineConfig:
    corpus_paths: tuple[Path, ...] = ()
    registry_path: Path | None = None
    prompt_spec_paths: tuple[Path, ...] = ()
    models: tuple[ModelConfig, ...] = ()
    ensemble: EnsembleSettings = field(default_factory=EnsembleSettings)
    cache_path: Path | None = None
    output_dir: Path | None = None
    workers: int = 1

    def model_by_id(self, model_id: str) -> ModelConfig:
        for model in self.models:
            if model.model_id == model_id:
                return model
        raise ConfigError(f"model {model_id!r} is not configured")


def _resolve(base: Path, value: str) -> Path:
    path = Path(value)
    return path if path.is_absolute() else (base / path).resolve()


def _require_exists(path: Path, what: str) -> Path:
    if not path.exists():
        raise ConfigError(f"{what} does not exist: {path}")
    return path


def _parse_model(raw: dict) -> ModelConfig:
    try:
        return ModelConfig(
            model_id=str(raw["model_id"]),
            base_url=str(raw["base_url"]) if raw.get("base_url") else None,
            credential_env=raw.get("credential_env"),
            context_window_tokens=int(raw.get("context_window_tokens", 8192)),
            max_retries=int(raw.get("max_retries", 3)),
            timeout=float(raw.get("timeout_seconds", 60.0)),
            max_concurrent=int(raw.get("max_concurrent", 4)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed model entry: {exc}") from exc


def load_config(path: str | Path) -> PipelineConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file does not exist: {path}")
    with open(path, "rb") as fp:
        try:
            raw = tomllib.load(fp)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"config file is not valid TOML: {exc}") from exc
    base = path.parent.resolve()

    corpus_raw = raw.get("corpus", {})
    corpus_paths = tuple(
        _require_exists(_resolve(base, p), "corpus file")
        for p in corpus_raw.get("paths", [])
    )

    registry_raw = raw.get("registry", {})
    registry_path = None
    if registry_raw.get("path"):
        registry_path = _require_exists(
            _resolve(base, registry_raw["path"]), "registry file"
        )

    prompts_raw = raw.get("prompts", {})
    prompt_spec_paths = tuple(
        _require_exists(_resolve(base, p), "prompt spec file")
        for p in prompts_raw.get("paths", [])
    )

    models = tuple(_parse_model(m) for m in raw.get("models", []))
    ids = [m.model_id for m in models]
    if len(set(ids)) != len(ids):
        raise ConfigError(f"duplicate model_id in config: {ids}")

    ensemble_raw = raw.get("ensemble", {})
    ensemble = EnsembleSettings(
        rule=str(ensemble_raw.get("rule", "majority")),
        members=tuple(ensemble_raw.get("members", [])),
        stage_order=tuple(ensemble_raw.get("stage_order", [])),
    )

    cache_raw = raw.get("cache", {})
    cache_path = _resolve(base, cache_raw["path"]) if cache_raw.get("path") else None

    output_raw = raw.get("output", {})
    output_dir = _resolve(base, output_raw["dir"]) if output_raw.get("dir") else None

    run_raw = raw.get("run", {})
    workers = int(run_raw.get("workers", 1))
    if workers < 1:
        raise ConfigError("run.workers must be >= 1")

    return PipelineConfig(
        corpus_paths=corpus_paths,
        registry_path=registry_path,
        prompt_spec_paths=prompt_spec_paths,
        models=models,
        ensemble=ensemble,
        cache_path=cache_path,
        output_dir=output_dir,
        workers=workers,
    )
