"""Loading and validation of scenario, persona and model-config documents.

All three inputs are YAML. Unknown keys are rejected so that typos in
hand-edited files surface immediately instead of silently dropping fields.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any

import yaml

from .errors import EmptyPanel, FileMissing, ParseError, ValidationError

PERSONA_SUFFIXES = (".yaml", ".yml")


@dataclass(frozen=True)
class PolicyOption:
    id: int
    label: str
    description: str


@dataclass(frozen=True)
class ScenarioSpec:
    title: str
    narrative: str
    options: tuple[PolicyOption, ...]

    @property
    def option_ids(self) -> list[int]:
        return [o.id for o in self.options]

    def option(self, option_id: int) -> PolicyOption:
        return self.options[option_id - 1]


@dataclass(frozen=True)
class PersonaSpec:
    name: str
    principle: str
    approach: tuple[str, ...]
    core_questions: tuple[str, ...]
    decision_criteria: tuple[str, ...]
    deliberation_style: str | None = None
    forbidden_moves: tuple[str, ...] = ()
    strengths: tuple[str, ...] | None = None
    challenges: tuple[str, ...] | None = None
    citations: tuple[str, ...] | None = None


class BackendKind(str, Enum):
    LIVE = "live"
    SCRIPTED = "scripted"


@dataclass(frozen=True)
class ModelConfig:
    backend_kind: BackendKind
    model_id: str
    temperature: float = 0.7
    max_output_tokens: int = 4096
    endpoint_url: str | None = None
    request_timeout: float = 120.0
    max_retries: int = 3
    parallel_independent_calls: bool = False

    def __post_init__(self) -> None:
        _check_model_config(self, None)


# -- low level helpers ----------------------------------------------------

def _read_yaml(path: Path) -> Any:
    if not path.is_file():
        raise FileMissing("file does not exist or is not a regular file", path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise ParseError(f"cannot read file: {exc}", path) from exc
    try:
        return yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        line = mark.line + 1 if mark is not None else None
        raise ParseError(f"malformed YAML: {exc.problem or exc}", path, line) from exc
    except yaml.YAMLError as exc:
        raise ParseError(f"malformed YAML: {exc}", path) from exc


def _mapping(doc: Any, path: Path | None, allowed: set[str]) -> dict[str, Any]:
    if not isinstance(doc, dict):
        raise ValidationError("document must be a mapping", path, "<root>")
    unknown = sorted(str(k) for k in doc if k not in allowed)
    if unknown:
        raise ValidationError(f"unknown key (allowed: {sorted(allowed)})", path, unknown[0])
    return doc


def _text(doc: dict, key: str, path: Path | None, *, required: bool = True) -> str | None:
    value = doc.get(key)
    if value is None:
        if required:
            raise ValidationError("required field is missing", path, key)
        return None
    if not isinstance(value, str):
        raise ValidationError(f"expected text, got {type(value).__name__}", path, key)
    if not value.strip():
        raise ValidationError("must not be empty", path, key)
    return value.strip()


def _text_list(doc: dict, key: str, path: Path | None, *, required: bool) -> tuple[str, ...] | None:
    value = doc.get(key)
    if value is None:
        if required:
            raise ValidationError("required field is missing", path, key)
        return None
    if not isinstance(value, list):
        raise ValidationError(f"expected a list of text, got {type(value).__name__}", path, key)
    items = []
    for i, item in enumerate(value):
        if not isinstance(item, str) or not item.strip():
            raise ValidationError(f"entry {i} must be non-empty text", path, key)
        items.append(item.strip())
    if required and not items:
        raise ValidationError("must have at least one entry", path, key)
    return tuple(items)


# -- scenario -------------------------------------------------------------

SCENARIO_KEYS = {"title", "narrative", "options"}
OPTION_KEYS = {"id", "label", "description"}


def parse_scenario(doc: Any, path: Path | None = None) -> ScenarioSpec:
    doc = _mapping(doc, path, SCENARIO_KEYS)
    title = _text(doc, "title", path)
    narrative = _text(doc, "narrative", path)
    raw_options = doc.get("options")
    if not isinstance(raw_options, list):
        raise ValidationError("required list of options is missing", path, "options")
    if len(raw_options) < 2:
        raise ValidationError(
            f"too few options: need at least 2, got {len(raw_options)}", path, "options"
        )
    options = []
    for i, raw in enumerate(raw_options):
        where = f"options[{i}]"
        if not isinstance(raw, dict):
            raise ValidationError("option must be a mapping", path, where)
        unknown = sorted(str(k) for k in raw if k not in OPTION_KEYS)
        if unknown:
            raise ValidationError("unknown key", path, f"{where}.{unknown[0]}")
        oid = raw.get("id")
        if isinstance(oid, bool) or not isinstance(oid, int) or oid < 1:
            raise ValidationError("id must be a positive integer", path, f"{where}.id")
        label = _text(raw, "label", path) if "label" in raw else None
        if label is None:
            raise ValidationError("required field is missing", path, f"{where}.label")
        description = _text(raw, "description", path) if "description" in raw else None
        if description is None:
            raise ValidationError("required field is missing", path, f"{where}.description")
        options.append(PolicyOption(oid, label, description))

    ids = [o.id for o in options]
    seen: set[int] = set()
    for oid in ids:
        if oid in seen:
            raise ValidationError(f"duplicate id {oid}", path, "options.id")
        seen.add(oid)
    if sorted(ids) != list(range(1, len(ids) + 1)):
        raise ValidationError(
            f"option ids must be contiguous 1..{len(ids)}, got {sorted(ids)}", path, "options.id"
        )
    options.sort(key=lambda o: o.id)
    return ScenarioSpec(title=title, narrative=narrative, options=tuple(options))


def load_scenario(path: str | os.PathLike) -> ScenarioSpec:
    path = Path(path)
    return parse_scenario(_read_yaml(path), path)


# -- personas -------------------------------------------------------------

PERSONA_KEYS = {
    "name",
    "principle",
    "approach",
    "core_questions",
    "decision_criteria",
    "deliberation_style",
    "forbidden_moves",
    "strengths",
    "challenges",
    "citations",
}


def parse_persona(doc: Any, path: Path | None = None) -> PersonaSpec:
    doc = _mapping(doc, path, PERSONA_KEYS)
    return PersonaSpec(
        name=_text(doc, "name", path),
        principle=_text(doc, "principle", path),
        approach=_text_list(doc, "approach", path, required=True),
        core_questions=_text_list(doc, "core_questions", path, required=True),
        decision_criteria=_text_list(doc, "decision_criteria", path, required=True),
        deliberation_style=_text(doc, "deliberation_style", path, required=False),
        forbidden_moves=_text_list(doc, "forbidden_moves", path, required=False) or (),
        strengths=_text_list(doc, "strengths", path, required=False),
        challenges=_text_list(doc, "challenges", path, required=False),
        citations=_text_list(doc, "citations", path, required=False),
    )


def load_persona(path: str | os.PathLike) -> PersonaSpec:
    path = Path(path)
    return parse_persona(_read_yaml(path), path)


def persona_files(directory: str | os.PathLike) -> list[Path]:
    """Persona definition files in canonical (byte-wise file name) order."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileMissing("persona directory does not exist", directory)
    files = [
        p for p in directory.iterdir() if p.is_file() and p.suffix.lower() in PERSONA_SUFFIXES
    ]
    return sorted(files, key=lambda p: os.fsencode(p.name))


def check_unique_names(personas: list[PersonaSpec], paths: list[Path] | None = None) -> None:
    seen: dict[str, int] = {}
    for i, persona in enumerate(personas):
        if persona.name in seen:
            where = paths[i] if paths else None
            raise ValidationError(f"duplicate persona name {persona.name!r}", where, "name")
        seen[persona.name] = i


def load_personas(directory: str | os.PathLike) -> list[PersonaSpec]:
    files = persona_files(directory)
    if not files:
        raise EmptyPanel("no persona files (*.yaml, *.yml) found", directory)
    personas = [load_persona(p) for p in files]
    check_unique_names(personas, files)
    return personas


# -- model config ---------------------------------------------------------

MODEL_KEYS = {
    "backend_kind",
    "model_id",
    "temperature",
    "max_output_tokens",
    "endpoint_url",
    "request_timeout",
    "max_retries",
    "parallel_independent_calls",
}


def _check_model_config(cfg: ModelConfig, path: Path | None) -> None:
    if not isinstance(cfg.backend_kind, BackendKind):
        raise ValidationError("must be 'live' or 'scripted'", path, "backend_kind")
    if not isinstance(cfg.model_id, str) or not cfg.model_id.strip():
        raise ValidationError("must be non-empty text", path, "model_id")
    if isinstance(cfg.temperature, bool) or not isinstance(cfg.temperature, (int, float)):
        raise ValidationError("must be a number", path, "temperature")
    if not 0.0 <= cfg.temperature <= 2.0:
        raise ValidationError(f"{cfg.temperature} is outside [0, 2]", path, "temperature")
    if isinstance(cfg.max_output_tokens, bool) or not isinstance(cfg.max_output_tokens, int):
        raise ValidationError("must be an integer", path, "max_output_tokens")
    if cfg.max_output_tokens < 1:
        raise ValidationError("must be positive", path, "max_output_tokens")
    if isinstance(cfg.request_timeout, bool) or not isinstance(cfg.request_timeout, (int, float)):
        raise ValidationError("must be a number of seconds", path, "request_timeout")
    if cfg.request_timeout <= 0:
        raise ValidationError("must be positive", path, "request_timeout")
    if isinstance(cfg.max_retries, bool) or not isinstance(cfg.max_retries, int):
        raise ValidationError("must be an integer", path, "max_retries")
    if not 0 <= cfg.max_retries <= 10:
        raise ValidationError(f"{cfg.max_retries} is outside [0, 10]", path, "max_retries")
    if not isinstance(cfg.parallel_independent_calls, bool):
        raise ValidationError("must be true or false", path, "parallel_independent_calls")
    has_url = isinstance(cfg.endpoint_url, str) and bool(cfg.endpoint_url.strip())
    if cfg.backend_kind is BackendKind.LIVE and not has_url:
        raise ValidationError("required for the live backend", path, "endpoint_url")
    if cfg.backend_kind is BackendKind.SCRIPTED and cfg.endpoint_url is not None:
        raise ValidationError("only allowed for the live backend", path, "endpoint_url")


def parse_model_config(doc: Any, path: Path | None = None) -> ModelConfig:
    doc = _mapping(doc, path, MODEL_KEYS)
    kind = doc.get("backend_kind")
    try:
        backend_kind = BackendKind(kind)
    except ValueError:
        raise ValidationError(f"must be 'live' or 'scripted', got {kind!r}", path, "backend_kind")
    if "model_id" not in doc:
        raise ValidationError("required field is missing", path, "model_id")
    kwargs = {k: v for k, v in doc.items() if k != "backend_kind"}
    for key in ("temperature", "request_timeout"):
        value = kwargs.get(key)
        if isinstance(value, int) and not isinstance(value, bool):
            kwargs[key] = float(value)
    try:
        return ModelConfig(backend_kind=backend_kind, **kwargs)
    except ValidationError as exc:
        raise ValidationError(exc.detail, path, exc.field) from None


def load_model_config(path: str | os.PathLike) -> ModelConfig:
    path = Path(path)
    return parse_model_config(_read_yaml(path), path)
