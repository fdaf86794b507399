"""One config file drives every pipeline stage; ablations are config diffs.

The nested dataclass tree below is the single source of truth. A JSON Schema
rendering (config_schema.json, shipped as package data) is derived from it and
used to validate files on load; unknown keys are rejected everywhere.
"""

from __future__ import annotations

import dataclasses
import json
import types
import typing
from dataclasses import dataclass, field, fields, is_dataclass
from pathlib import Path

import jsonschema

from .model import ModelConfig
from .proposals import ProposalConfig
from .queries import QueryConfig
from .synthetic import SyntheticSpec
from .training import TrainConfig


class ConfigError(Exception):
    """Config file failed schema validation or construction."""


@dataclass(frozen=True)
class DataConfig:
    """File names of pipeline artifacts, relative to the data root."""

    manifest_train: str = "manifest_train.json"
    manifest_eval: str = "manifest_eval.json"
    detections: str = "detections.jsonl"
    corpus: str = "corpus.txt"
    embeddings: str = "embeddings.txt"
    eval_samples: str = "eval_samples.jsonl"
    cooccurrence: str = "cooccurrence.json"
    proposals: str = "proposals.jsonl"
    queries: str = "queries.jsonl"
    dataset: str = "dataset.jsonl"
    checkpoint: str = "checkpoint.pt"
    history: str = "history.csv"
    metrics: str = "metrics.json"


@dataclass(frozen=True)
class CorpusConfig:
    min_count: int = 5
    stop_verbs: tuple[str, ...] = ("be", "do", "have")


@dataclass(frozen=True)
class EvalConfig:
    thresholds: tuple[float, ...] = (0.3, 0.5, 0.7)
    strict_recall: bool = False


@dataclass(frozen=True)
class SweepConfig:
    factors: tuple[float, ...] = (0.5, 1.0, 2.0)
    reference_size: typing.Optional[int] = None


@dataclass(frozen=True)
class BuildConfig:
    """build-dataset stage: optional trimming to a target size."""

    target_size: typing.Optional[int] = None
    subsample_seed: int = 0


@dataclass(frozen=True)
class PipelineConfig:
    data: DataConfig = field(default_factory=DataConfig)
    proposal: ProposalConfig = field(default_factory=ProposalConfig)
    query: QueryConfig = field(default_factory=QueryConfig)
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    synth: SyntheticSpec = field(default_factory=SyntheticSpec)
    build: BuildConfig = field(default_factory=BuildConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)

    def with_seed(self, seed: int) -> "PipelineConfig":
        """Override every stage seed at once (the --seed CLI flag)."""
        return dataclasses.replace(
            self,
            proposal=dataclasses.replace(self.proposal, seed=seed),
            model=dataclasses.replace(self.model, seed=seed),
            train=dataclasses.replace(self.train, seed=seed),
            synth=dataclasses.replace(self.synth, seed=seed),
        )


# ---------------------------------------------------------------------------
# schema derivation

_SCALARS = {int: "integer", float: "number", str: "string", bool: "boolean"}


def _type_schema(tp) -> dict:
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        return {"anyOf": [_type_schema(a) for a in typing.get_args(tp)]}
    if tp is type(None):
        return {"type": "null"}
    if origin in (tuple, list):
        args = [a for a in typing.get_args(tp) if a is not Ellipsis]
        item = _type_schema(args[0]) if args else {}
        return {"type": "array", "items": item}
    if is_dataclass(tp):
        return _dataclass_schema(tp)
    if tp in _SCALARS:
        return {"type": _SCALARS[tp]}
    raise TypeError(f"no schema mapping for {tp!r}")


def _dataclass_schema(cls) -> dict:
    props = {}
    for f in fields(cls):
        tp = typing.get_type_hints(cls)[f.name]
        props[f.name] = _type_schema(tp)
    return {"type": "object", "properties": props, "additionalProperties": False}


def build_schema() -> dict:
    schema = _dataclass_schema(PipelineConfig)
    schema["$schema"] = "http://json-schema.org/draft-07/schema#"
    schema["title"] = "PSVL pipeline configuration"
    return schema


# ---------------------------------------------------------------------------
# load / save


def _construct(cls, payload: dict):
    kwargs = {}
    hints = typing.get_type_hints(cls)
    names = {f.name for f in fields(cls)}
    unknown = set(payload) - names
    if unknown:
        raise ConfigError(f"unknown config key {sorted(unknown)[0]!r} in {cls.__name__}")
    for f in fields(cls):
        if f.name not in payload:
            continue
        value = payload[f.name]
        tp = hints[f.name]
        if is_dataclass(tp):
            value = _construct(tp, value)
        elif typing.get_origin(tp) is tuple and isinstance(value, list):
            value = tuple(value)
        kwargs[f.name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad {cls.__name__}: {exc}") from exc


def config_from_dict(payload: dict) -> PipelineConfig:
    try:
        jsonschema.validate(payload, build_schema())
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"config schema violation: {exc.message}") from exc
    return _construct(PipelineConfig, payload)


def config_to_dict(cfg: PipelineConfig) -> dict:
    def unwrap(value):
        if is_dataclass(value):
            return {f.name: unwrap(getattr(value, f.name)) for f in fields(value)}
        if isinstance(value, (tuple, list)):
            return [unwrap(v) for v in value]
        return value

    return unwrap(cfg)


def load_config(path) -> PipelineConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return config_from_dict(payload)


def save_config(cfg: PipelineConfig, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config_to_dict(cfg), fh, indent=2)
        fh.write("\n")


def apply_override(cfg: PipelineConfig, dotted_key: str, raw_value: str) -> PipelineConfig:
    """Apply one `section.field=value` override (values parsed as JSON when possible)."""
    parts = dotted_key.split(".")
    try:
        value = json.loads(raw_value)
    except json.JSONDecodeError:
        value = raw_value
    payload = config_to_dict(cfg)
    node = payload
    for part in parts[:-1]:
        if part not in node:
            raise ConfigError(f"unknown config section {part!r}")
        node = node[part]
    if parts[-1] not in node:
        raise ConfigError(f"unknown config key {dotted_key!r}")
    node[parts[-1]] = value
    return config_from_dict(payload)
