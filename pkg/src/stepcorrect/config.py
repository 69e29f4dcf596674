"""Declarative pipeline configuration.

One YAML file drives every stage; ${VAR} references in string values are
interpolated from the environment at load time so secrets never live on
disk.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .assembler import DEFAULT_TRIGGER
from .errors import ConfigInvalid
from .inference import BackendConfig, RetryPolicy
from .prompting import DEFAULT_PROMPT_TEMPLATE

_ENV_RE = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}")


def _interpolate(value: Any) -> Any:
    if isinstance(value, str):
        def sub(m: re.Match) -> str:
            name = m.group(1)
            if name not in os.environ:
                raise ConfigInvalid(f"environment variable {name} is not set")
            return os.environ[name]

        return _ENV_RE.sub(sub, value)
    if isinstance(value, dict):
        return {k: _interpolate(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_interpolate(v) for v in value]
    return value


def _backend_config(raw: dict, base_dir: Path) -> BackendConfig:
    retry_raw = raw.get("retry", {})
    retry = RetryPolicy(
        max_attempts=int(retry_raw.get("max_attempts", 3)),
        base_backoff=float(retry_raw.get("base_backoff", 0.5)),
    )
    script_path = raw.get("script_path")
    if script_path is not None:
        script_path = str(base_dir / script_path)
    return BackendConfig(
        kind=str(raw.get("kind", "")),
        endpoint_url=raw.get("endpoint_url"),
        model_name=raw.get("model_name"),
        auth_token_env=raw.get("auth_token_env"),
        script_path=script_path,
        max_parallel=int(raw.get("max_parallel", 8)),
        retry=retry,
        max_n_per_request=raw.get("max_n_per_request"),
        timeout=float(raw.get("timeout", 120.0)),
    )


@dataclass(frozen=True)
class PipelineConfig:
    base_dir: Path
    corpus_path: Path
    workdir: Path
    fold_k: int
    fold_seed: int
    sampler: dict = field(hash=False)
    sampler_backends: list[BackendConfig] = field(hash=False)
    annotator_backend: BackendConfig | None
    eval_backend: BackendConfig | None
    mcts_backend: BackendConfig | None
    annotate: dict = field(hash=False)
    assemble: dict = field(hash=False)
    mcts: dict = field(hash=False)
    eval: dict = field(hash=False)
    workers: int

    @property
    def prompt_template(self) -> str:
        return self.assemble.get("prompt_template", DEFAULT_PROMPT_TEMPLATE)

    @property
    def trigger(self) -> str:
        return self.assemble.get("trigger", DEFAULT_TRIGGER)

    def annotation_template(self) -> str:
        path = self.annotate.get("template_path")
        if path:
            return (self.base_dir / path).read_text(encoding="utf-8")
        from .annotator import default_template

        return default_template()


def load_config(path: str | Path) -> PipelineConfig:
    """Parse and validate a pipeline config file."""
    path = Path(path)
    if not path.exists():
        raise ConfigInvalid(f"config file {path} does not exist")
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as exc:
        raise ConfigInvalid(f"config is not valid YAML: {exc}") from exc
    raw = _interpolate(raw)
    base_dir = path.parent

    try:
        paths = raw["paths"]
        corpus_path = base_dir / paths["corpus"]
        workdir = base_dir / paths["workdir"]
        folds = raw.get("folds", {})
        fold_k = int(folds.get("k", 5))
        fold_seed = int(folds.get("seed", 0))
        backends = raw.get("backends", {})
        sampler_backends = [
            _backend_config(b, base_dir) for b in backends.get("sampler", [])
        ]
        annotator_backend = (
            _backend_config(backends["annotator"], base_dir)
            if "annotator" in backends
            else None
        )
        eval_backend = (
            _backend_config(backends["eval"], base_dir) if "eval" in backends else None
        )
        mcts_backend = (
            _backend_config(backends["mcts"], base_dir) if "mcts" in backends else None
        )
        config = PipelineConfig(
            base_dir=base_dir,
            corpus_path=corpus_path,
            workdir=workdir,
            fold_k=fold_k,
            fold_seed=fold_seed,
            sampler=dict(raw.get("sampler", {})),
            sampler_backends=sampler_backends,
            annotator_backend=annotator_backend,
            eval_backend=eval_backend,
            mcts_backend=mcts_backend,
            annotate=dict(raw.get("annotate", {})),
            assemble=dict(raw.get("assemble", {})),
            mcts=dict(raw.get("mcts", {})),
            eval=dict(raw.get("eval", {})),
            workers=int(raw.get("concurrency", {}).get("workers", 4)),
        )
    except ConfigInvalid:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigInvalid(f"malformed config: {exc!r}") from exc

    _validate(config)
    return config


def _validate(config: PipelineConfig) -> None:
    if not config.corpus_path.exists():
        raise ConfigInvalid(f"corpus file {config.corpus_path} does not exist")
    if config.fold_k < 2:
        raise ConfigInvalid("folds.k must be >= 2")
    if int(config.sampler.get("k_rollouts", 16)) < 1:
        raise ConfigInvalid("sampler.k_rollouts must be >= 1")
    if config.sampler_backends and len(config.sampler_backends) != config.fold_k:
        raise ConfigInvalid(
            f"need one sampler backend per fold: got {len(config.sampler_backends)}"
            f" for k={config.fold_k}"
        )
    variant = config.assemble.get("variant", "full")
    if variant not in ("full", "no_improvement", "no_ri", "instance_level"):
        raise ConfigInvalid(f"unknown assemble.variant {variant!r}")
    for backend in config.sampler_backends + [
        b
        for b in (config.annotator_backend, config.eval_backend, config.mcts_backend)
        if b is not None
    ]:
        if backend.kind == "scripted" and not Path(backend.script_path).exists():
            raise ConfigInvalid(f"oracle table {backend.script_path} does not exist")
    template_path = config.annotate.get("template_path")
    if template_path and not (config.base_dir / template_path).exists():
        raise ConfigInvalid(f"annotation template {template_path} does not exist")
