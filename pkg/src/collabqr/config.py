"""Pipeline configuration: a flat key=value file with environment overrides.

Precedence is defaults, then file values, then COLLABQR_* environment
variables. World generator settings nest under the "world." prefix
(environment form COLLABQR_WORLD_<KEY>). Relative artifact paths resolve
against the working directory key.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Mapping

from collabqr.synth import WorldConfig

ENV_PREFIX = "COLLABQR_"


@dataclass(frozen=True)
class PipelineConfig:
    workdir: str = "artifacts"
    logs_path: str = "logs.tsv"
    graph_path: str = "graph.jsonl"
    index_path: str = "index.jsonl"
    predictions_path: str = "predictions.jsonl"
    requests_path: str = "prediction_requests.jsonl"
    finetune_path: str = "finetune.jsonl"
    weights_path: str = "weights.json"
    manifest_path: str = "world_manifest.txt"
    metrics_report_path: str = "metrics.jsonl"
    coverage_report_path: str = "coverage.jsonl"

    defect_threshold: float = 0.5
    history_cap: int | None = 100
    collaborative_cap: int = 500
    max_hop: int = 5
    retrieval_k: int = 10
    encoder_dim: int = 256
    encoder_seed: int = 101
    trigger_threshold: float = 0.8
    predictions_per_user: int = 5
    grounding_jaccard: float = 0.5
    guardrail_size: int = 200
    guardrail_seed: int = 7
    finetune_history_weeks: int = 20
    finetune_label_weeks: int = 4

    world: WorldConfig = field(default_factory=WorldConfig)

    def validate(self) -> None:
        if not 0.0 < self.defect_threshold <= 1.0:
            raise ValueError("defect_threshold must be in (0, 1]")
        if not 0.0 < self.trigger_threshold < 1.0:
            raise ValueError("trigger_threshold must be in (0, 1)")
        if self.history_cap is not None and self.history_cap < 1:
            raise ValueError("history_cap must be >= 1 or none")
        for name in (
            "collaborative_cap", "retrieval_k", "predictions_per_user",
            "guardrail_size", "finetune_history_weeks", "finetune_label_weeks",
        ):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 1 <= self.max_hop <= 5:
            raise ValueError("max_hop must be in 1..5")
        if self.encoder_dim < 8:
            raise ValueError("encoder_dim must be >= 8")
        if not 0.0 < self.grounding_jaccard <= 1.0:
            raise ValueError("grounding_jaccard must be in (0, 1]")
        self.world.validate()

    def resolve(self, raw: str) -> Path:
        path = Path(raw)
        if path.is_absolute():
            return path
        return Path(self.workdir) / path

    @property
    def logs_file(self) -> Path:
        return self.resolve(self.logs_path)

    @property
    def graph_file(self) -> Path:
        return self.resolve(self.graph_path)

    @property
    def index_file(self) -> Path:
        return self.resolve(self.index_path)

    @property
    def predictions_file(self) -> Path:
        return self.resolve(self.predictions_path)

    @property
    def requests_file(self) -> Path:
        return self.resolve(self.requests_path)

    @property
    def finetune_file(self) -> Path:
        return self.resolve(self.finetune_path)

    @property
    def weights_file(self) -> Path:
        return self.resolve(self.weights_path)

    @property
    def manifest_file(self) -> Path:
        return self.resolve(self.manifest_path)

    @property
    def metrics_report_file(self) -> Path:
        return self.resolve(self.metrics_report_path)

    @property
    def coverage_report_file(self) -> Path:
        return self.resolve(self.coverage_report_path)


_SCALAR_FIELDS = {f.name: f for f in fields(PipelineConfig) if f.name != "world"}
_WORLD_FIELDS = {f.name: f for f in fields(WorldConfig)}


def _parse_value(key: str, text: str, annotation: str):
    text = text.strip()
    if annotation == "int | None":
        if text.lower() in ("none", ""):
            return None
        return int(text)
    if annotation == "int":
        return int(text)
    if annotation == "float":
        return float(text)
    if annotation == "bool":
        if text.lower() in ("true", "1", "yes"):
            return True
        if text.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"{key}: expected a boolean, got {text!r}")
    return text


def _apply(updates: dict, world_updates: dict, key: str, value: str) -> None:
    if key.startswith("world."):
        name = key[len("world."):]
        f = _WORLD_FIELDS.get(name)
        if f is None:
            raise ValueError(f"unknown config key {key!r}")
        world_updates[name] = _parse_value(key, value, f.type)
        return
    f = _SCALAR_FIELDS.get(key)
    if f is None:
        raise ValueError(f"unknown config key {key!r}")
    updates[key] = _parse_value(key, value, f.type)


def parse_config_text(text: str) -> tuple[dict, dict]:
    """Key=value lines into (pipeline updates, world updates)."""
    updates: dict = {}
    world_updates: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key = value, got {raw!r}")
        key, _, value = line.partition("=")
        _apply(updates, world_updates, key.strip(), value)
    return updates, world_updates


def load_config(
    path: str | os.PathLike | None = None,
    env: Mapping[str, str] | None = None,
) -> PipelineConfig:
    updates: dict = {}
    world_updates: dict = {}
    if path is not None:
        text = Path(path).read_text(encoding="utf-8")
        updates, world_updates = parse_config_text(text)
    if env is None:
        env = os.environ
    for key in sorted(env):
        if not key.startswith(ENV_PREFIX):
            continue
        name = key[len(ENV_PREFIX):].lower()
        if name.startswith("world_"):
            _apply(updates, world_updates, "world." + name[len("world_"):], env[key])
        else:
            _apply(updates, world_updates, name, env[key])
    config = PipelineConfig(**updates)
    if world_updates:
        config = replace(config, world=replace(config.world, **world_updates))
    config.validate()
    return config


def render_config(config: PipelineConfig) -> str:
    """The full configuration in file form, one key per line."""
    lines = []
    for f in fields(PipelineConfig):
        if f.name == "world":
            continue
        value = getattr(config, f.name)
        lines.append(f"{f.name} = {'none' if value is None else value}")
    for f in fields(WorldConfig):
        lines.append(f"world.{f.name} = {getattr(config.world, f.name)}")
    return "\n".join(lines) + "\n"
