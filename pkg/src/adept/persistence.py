"""Trace files, plain-text reports and canonical hashing.

A trace file is canonical JSON (sorted keys, UTF-8, fixed indentation)
wrapped in a small header that carries the format version and a SHA-256
digest of the body. The digest is computed with every timestamp and all
token usage replaced by fixed sentinels, so two runs of the same script
hash equal while any change to prompts, responses or votes does not.
"""
from __future__ import annotations

import hashlib
import json
import os
import re
import textwrap
from datetime import datetime
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any

import jsonschema

from .analysis import tally_lines
from .config import BackendKind, ModelConfig, PersonaSpec, PolicyOption, ScenarioSpec
from .errors import HashMismatch, IncompleteTrace, ParseError, TraceIoError, UnsupportedVersion
from .records import (
    TRACE_FORMAT,
    Ballot,
    BallotAttempt,
    BallotStatus,
    ChatMessage,
    DebateTrace,
    Phase,
    PromptBundle,
    Role,
    Tally,
    TraceStatus,
    Utterance,
)

VOLATILE_TIME = "<volatile>"
VOLATILE_TIME_KEYS = frozenset({"created_at", "started_at", "ended_at"})
VOLATILE_NULL_KEYS = frozenset({"token_usage"})
REPORT_WIDTH = 100
DEFAULT_OUT_DIR = "debate_outputs"


# -- to / from plain data -------------------------------------------------

def _bundle_dict(b: PromptBundle) -> dict:
    return {
        "persona_name": b.persona_name,
        "phase": b.phase.value,
        "messages": [{"role": m.role.value, "content": m.content} for m in b.messages],
        "template_version": b.template_version,
    }


def _bundle(d: dict) -> PromptBundle:
    return PromptBundle(
        persona_name=d["persona_name"],
        phase=Phase(d["phase"]),
        messages=tuple(ChatMessage(Role(m["role"]), m["content"]) for m in d["messages"]),
        template_version=d["template_version"],
    )


def _persona_dict(p: PersonaSpec) -> dict:
    def lst(v):
        return None if v is None else list(v)

    return {
        "name": p.name,
        "principle": p.principle,
        "approach": list(p.approach),
        "core_questions": list(p.core_questions),
        "decision_criteria": list(p.decision_criteria),
        "deliberation_style": p.deliberation_style,
        "forbidden_moves": list(p.forbidden_moves),
        "strengths": lst(p.strengths),
        "challenges": lst(p.challenges),
        "citations": lst(p.citations),
    }


def _persona(d: dict) -> PersonaSpec:
    def tup(v):
        return None if v is None else tuple(v)

    return PersonaSpec(
        name=d["name"],
        principle=d["principle"],
        approach=tuple(d["approach"]),
        core_questions=tuple(d["core_questions"]),
        decision_criteria=tuple(d["decision_criteria"]),
        deliberation_style=d["deliberation_style"],
        forbidden_moves=tuple(d["forbidden_moves"]),
        strengths=tup(d["strengths"]),
        challenges=tup(d["challenges"]),
        citations=tup(d["citations"]),
    )


def _config_dict(c: ModelConfig) -> dict:
    return {
        "backend_kind": c.backend_kind.value,
        "model_id": c.model_id,
        "temperature": c.temperature,
        "max_output_tokens": c.max_output_tokens,
        "endpoint_url": c.endpoint_url,
        "request_timeout": c.request_timeout,
        "max_retries": c.max_retries,
        "parallel_independent_calls": c.parallel_independent_calls,
    }


def _config(d: dict) -> ModelConfig:
    return ModelConfig(**{**d, "backend_kind": BackendKind(d["backend_kind"])})


def _attempt_dict(a: BallotAttempt) -> dict:
    return {
        "prompt": _bundle_dict(a.prompt),
        "response": a.response,
        "started_at": a.started_at,
        "ended_at": a.ended_at,
        "finish_reason": a.finish_reason,
        "token_usage": a.token_usage,
    }


def tally_to_dict(t: Tally) -> dict:
    return {
        "counts": [{"option": k, "votes": v} for k, v in sorted(t.counts.items())],
        "valid_count": t.valid_count,
        "abstentions": t.abstentions,
        "majority_option": t.majority_option,
        "plurality_options": list(t.plurality_options),
    }


def trace_to_dict(trace: DebateTrace) -> dict[str, Any]:
    return {
        "format_version": trace.format_version,
        "created_at": trace.created_at,
        "status": trace.status.value,
        "abort_reason": trace.abort_reason,
        "template_version": trace.template_version,
        "scenario": {
            "title": trace.scenario.title,
            "narrative": trace.scenario.narrative,
            "options": [
                {"id": o.id, "label": o.label, "description": o.description}
                for o in trace.scenario.options
            ],
        },
        "personas": [_persona_dict(p) for p in trace.personas],
        "model_config": _config_dict(trace.model_config),
        "utterances": [
            {
                "seq": u.seq,
                "phase": u.phase.value,
                "persona_name": u.persona_name,
                "prompt": _bundle_dict(u.prompt),
                "response": u.response,
                "started_at": u.started_at,
                "ended_at": u.ended_at,
                "finish_reason": u.finish_reason,
                "token_usage": u.token_usage,
            }
            for u in trace.utterances
        ],
        "ballots": [
            {
                "persona_name": b.persona_name,
                "prompt": _bundle_dict(b.prompt),
                "raw_response": b.raw_response,
                "parsed_option": b.parsed_option,
                "justification": b.justification,
                "attempts": b.attempts,
                "status": b.status.value,
                "history": [_attempt_dict(a) for a in b.history],
            }
            for b in trace.ballots
        ],
        "tally": tally_to_dict(trace.tally) if trace.tally is not None else None,
        "summary_prompt": _bundle_dict(trace.summary_prompt) if trace.summary_prompt else None,
        "summary_text": trace.summary_text,
        "warnings": list(trace.warnings),
    }


def trace_from_dict(d: dict[str, Any]) -> DebateTrace:
    tally = d["tally"]
    return DebateTrace(
        format_version=d["format_version"],
        created_at=d["created_at"],
        status=TraceStatus(d["status"]),
        abort_reason=d["abort_reason"],
        template_version=d["template_version"],
        scenario=ScenarioSpec(
            title=d["scenario"]["title"],
            narrative=d["scenario"]["narrative"],
            options=tuple(PolicyOption(**o) for o in d["scenario"]["options"]),
        ),
        personas=[_persona(p) for p in d["personas"]],
        model_config=_config(d["model_config"]),
        utterances=[
            Utterance(
                seq=u["seq"],
                phase=Phase(u["phase"]),
                persona_name=u["persona_name"],
                prompt=_bundle(u["prompt"]),
                response=u["response"],
                started_at=u["started_at"],
                ended_at=u["ended_at"],
                finish_reason=u["finish_reason"],
                token_usage=u["token_usage"],
            )
            for u in d["utterances"]
        ],
        ballots=[
            Ballot(
                persona_name=b["persona_name"],
                prompt=_bundle(b["prompt"]),
                raw_response=b["raw_response"],
                parsed_option=b["parsed_option"],
                justification=b["justification"],
                attempts=b["attempts"],
                status=BallotStatus(b["status"]),
                history=[
                    BallotAttempt(
                        prompt=_bundle(a["prompt"]),
                        response=a["response"],
                        started_at=a["started_at"],
                        ended_at=a["ended_at"],
                        finish_reason=a["finish_reason"],
                        token_usage=a["token_usage"],
                    )
                    for a in b["history"]
                ],
            )
            for b in d["ballots"]
        ],
        tally=None
        if tally is None
        else Tally(
            counts={c["option"]: c["votes"] for c in tally["counts"]},
            valid_count=tally["valid_count"],
            abstentions=tally["abstentions"],
            majority_option=tally["majority_option"],
            plurality_options=tuple(tally["plurality_options"]),
        ),
        summary_prompt=_bundle(d["summary_prompt"]) if d["summary_prompt"] else None,
        summary_text=d["summary_text"],
        warnings=list(d["warnings"]),
    )


# -- hashing --------------------------------------------------------------

def _neutralise(node: Any) -> Any:
    if isinstance(node, dict):
        out = {}
        for k, v in node.items():
            if k in VOLATILE_TIME_KEYS:
                out[k] = VOLATILE_TIME
            elif k in VOLATILE_NULL_KEYS:
                out[k] = None
            else:
                out[k] = _neutralise(v)
        return out
    if isinstance(node, list):
        return [_neutralise(v) for v in node]
    return node


def canonical_bytes(body: dict[str, Any]) -> bytes:
    return json.dumps(
        _neutralise(body), sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False
    ).encode("utf-8")


def canonical_hash(trace: DebateTrace | dict[str, Any]) -> str:
    body = trace if isinstance(trace, dict) else trace_to_dict(trace)
    return hashlib.sha256(canonical_bytes(body)).hexdigest()


# -- files ----------------------------------------------------------------

@lru_cache(maxsize=None)
def trace_schema() -> dict:
    text = (resources.files("adept") / "schemas" / "adept-trace-1.schema.json").read_text("utf-8")
    return json.loads(text)


@lru_cache(maxsize=None)
def _trace_validator() -> jsonschema.protocols.Validator:
    schema = trace_schema()
    cls = jsonschema.validators.validator_for(schema)
    cls.check_schema(schema)
    return cls(schema)


def _dumps(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, indent=2, ensure_ascii=False, allow_nan=False) + "\n"


def trace_document(trace: DebateTrace) -> dict:
    body = trace_to_dict(trace)
    return {
        "format_version": TRACE_FORMAT,
        "created_at": trace.created_at,
        "canonical_hash": canonical_hash(body),
        "trace": body,
    }


def slugify(text: str) -> str:
    slug = re.sub(r"[^a-z0-9]+", "-", text.lower()).strip("-")
    return slug[:60].rstrip("-") or "debate"


def _stamp(created_at: str) -> str:
    try:
        return datetime.fromisoformat(created_at).strftime("%Y%m%dT%H%M%SZ")
    except ValueError:
        return "undated"


def output_basename(trace: DebateTrace, out_dir: Path) -> Path:
    """``<slug>_<timestamp>`` in ``out_dir``, suffixed ``-N`` if already taken."""
    stem = f"{slugify(trace.scenario.title)}_{_stamp(trace.created_at)}"
    candidate, n = stem, 0
    while (out_dir / f"{candidate}.trace.json").exists() or (out_dir / f"{candidate}.report.txt").exists():
        n += 1
        candidate = f"{stem}-{n}"
    return out_dir / candidate


def _write(path: Path, text: str) -> None:
    try:
        with open(path, "x", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise TraceIoError(f"cannot write: {exc.strerror or exc}", path) from exc


def _prepare_dir(out_dir: str | os.PathLike) -> Path:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise TraceIoError(f"cannot create output directory: {exc.strerror or exc}", out) from exc
    return out


def persist_trace(trace: DebateTrace, out_dir: str | os.PathLike = DEFAULT_OUT_DIR) -> Path:
    """Write ``<out_dir>/<slug>_<timestamp>.trace.json`` and return its path."""
    out = _prepare_dir(out_dir)
    path = output_basename(trace, out).with_suffix(".trace.json")
    _write(path, _dumps(trace_document(trace)))
    return path


def persist_outputs(
    trace: DebateTrace, out_dir: str | os.PathLike = DEFAULT_OUT_DIR
) -> tuple[Path, Path | None]:
    """Trace file plus, for complete traces, the report with the same basename."""
    out = _prepare_dir(out_dir)
    base = output_basename(trace, out)
    trace_path = Path(f"{base}.trace.json")
    _write(trace_path, _dumps(trace_document(trace)))
    if not trace.is_complete:
        return trace_path, None
    report_path = Path(f"{base}.report.txt")
    _write(report_path, render_report(trace))
    return trace_path, report_path


def _check_invariants(trace: DebateTrace) -> None:
    names = trace.persona_names
    if len(set(names)) != len(names):
        raise ValueError("duplicate persona names")
    seqs = [u.seq for u in trace.utterances]
    if seqs != sorted(seqs) or len(set(seqs)) != len(seqs):
        raise ValueError("utterance seq numbers are not strictly increasing")
    order = {Phase.OPENING: 0, Phase.REBUTTAL: 1}
    phases = [order[u.phase] for u in trace.utterances]
    if phases != sorted(phases):
        raise ValueError("utterance phases are out of order")
    for b in trace.ballots:
        if b.attempts != len(b.history):
            raise ValueError(f"ballot of {b.persona_name} records {b.attempts} attempts but {len(b.history)} entries")
        if b.parsed_option is not None and b.parsed_option not in trace.scenario.option_ids:
            raise ValueError(f"ballot of {b.persona_name} names an unknown option")
    if trace.status is TraceStatus.COMPLETE:
        for phase in (Phase.OPENING, Phase.REBUTTAL):
            speakers = [u.persona_name for u in trace.utterances if u.phase is phase]
            if sorted(speakers) != sorted(names):
                raise ValueError(f"{phase.value} phase does not have one utterance per persona")
        if sorted(b.persona_name for b in trace.ballots) != sorted(names):
            raise ValueError("ballots do not cover the panel exactly once")
        if trace.tally is None:
            raise ValueError("complete trace without a tally")


def load_trace(path: str | os.PathLike) -> DebateTrace:
    """Read, validate and hash-check a trace file."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise TraceIoError(f"cannot read trace: {exc}", path) from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed JSON: {exc.msg}", path, exc.lineno) from exc
    if not isinstance(doc, dict):
        raise ParseError("trace file must hold a JSON object", path)
    version = doc.get("format_version")
    body_version = doc.get("trace", {}).get("format_version") if isinstance(doc.get("trace"), dict) else None
    if version != TRACE_FORMAT or body_version not in (None, TRACE_FORMAT):
        raise UnsupportedVersion(f"{path}: unsupported trace format {version or body_version!r}")
    error = jsonschema.exceptions.best_match(_trace_validator().iter_errors(doc))
    if error is not None:
        where = "/".join(str(p) for p in error.absolute_path) or "<root>"
        raise ParseError(f"schema violation at {where}: {error.message}", path)
    expected = canonical_hash(doc["trace"])
    if expected != doc["canonical_hash"]:
        raise HashMismatch(
            f"{path}: canonical hash {doc['canonical_hash']} does not match content ({expected})"
        )
    try:
        trace = trace_from_dict(doc["trace"])
        _check_invariants(trace)
    except (ValueError, KeyError, TypeError) as exc:
        raise ParseError(f"invalid trace: {exc}", path) from exc
    return trace


# -- report ---------------------------------------------------------------

def _wrap(text: str) -> list[str]:
    lines: list[str] = []
    for raw in text.splitlines() or [""]:
        stripped = raw.rstrip()
        if not stripped:
            lines.append("")
            continue
        indent = stripped[: len(stripped) - len(stripped.lstrip())]
        bullet = re.match(r"\s*(?:[-*]|\d+[.)])\s+", stripped)
        follow = " " * (bullet.end() if bullet else len(indent))
        lines.extend(
            textwrap.wrap(
                stripped,
                width=REPORT_WIDTH,
                subsequent_indent=follow,
                break_on_hyphens=False,
                replace_whitespace=False,
            )
            or [""]
        )
    return lines


def _section(title: str) -> list[str]:
    return ["", "=" * REPORT_WIDTH, title, "=" * REPORT_WIDTH, ""]


def _vote_text(ballot: Ballot, scenario: ScenarioSpec) -> str:
    if ballot.status is BallotStatus.VALID:
        return f"Option {ballot.parsed_option} - {scenario.option(ballot.parsed_option).label}"
    if ballot.status is BallotStatus.ABSTAINED_NO_TAG:
        return "ABSTAINED (no valid vote tag)"
    return "ABSTAINED (invalid option)"


def render_report(trace: DebateTrace) -> str:
    """Plain-text report. Timestamps are left out so equal traces render equal text."""
    if not trace.is_complete:
        raise IncompleteTrace("report needs a complete trace (all phases, ballots and tally)")
    cfg = trace.model_config
    out = ["ADEPT DEBATE REPORT", "", *_wrap(f"Scenario: {trace.scenario.title}"), "Panel:"]
    out += [f"  {i}. {name}" for i, name in enumerate(trace.persona_names, start=1)]
    out.append(f"Model: {cfg.model_id} ({cfg.backend_kind.value} backend, temperature {cfg.temperature})")
    out.append(f"Template version: {trace.template_version}")

    for phase, title in ((Phase.OPENING, "OPENING STATEMENTS"), (Phase.REBUTTAL, "REBUTTALS")):
        out += _section(title)
        for u in trace.utterances_for(phase):
            out += [f"[{u.persona_name}]", *_wrap(u.response), ""]

    out += _section("BALLOTS")
    for b in trace.ballots:
        out.append(f"[{b.persona_name}]")
        out.append(f"Vote: {_vote_text(b, trace.scenario)}")
        if b.attempts > 1:
            out.append(f"Attempts: {b.attempts}")
        out.append("Justification:")
        out += [*_wrap(b.justification), ""]

    out += _section("TALLY")
    out += tally_lines(trace.tally, trace.scenario.options)
    if trace.warnings:
        out += ["", "Warnings:"] + [f"  - {w}" for w in trace.warnings]

    out += _section("EXECUTIVE SUMMARY")
    out += _wrap(trace.summary_text)
    return "\n".join(line.rstrip() for line in out).rstrip("\n") + "\n"
