"""Command-line entry point: ``adept run | replay | tally | compare | validate``.

Diagnostics go to stderr. Tallies, digests and summary lines go to stdout
so they can be piped.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
from enum import IntEnum
from pathlib import Path
from typing import Any

import yaml

from . import __version__
from .analysis import compare, comparison_to_dict, render_comparison, tally_lines
from .backend import API_KEY_ENV, LiveBackend, load_script
from .config import (
    BackendKind,
    ModelConfig,
    load_model_config,
    load_personas,
    load_scenario,
    parse_model_config,
    parse_persona,
    parse_scenario,
    persona_files,
)
from .engine import run_debate
from .errors import (
    AdeptError,
    BackendError,
    ConfigError,
    HashMismatch,
    IncompleteTrace,
    MissingKey,
    ParseError,
    ScenarioMismatch,
    TraceIoError,
    UnsupportedVersion,
)
from .persistence import DEFAULT_OUT_DIR, canonical_hash, load_trace, persist_outputs
from .records import DebateTrace

log = logging.getLogger("adept")


class ExitStatus(IntEnum):
    OK = 0
    INVALID = 1
    BACKEND = 2
    IO = 3
    INVARIANT = 4


def _err(message: str) -> None:
    print(f"adept: {message}", file=sys.stderr)


def _read_trace(path: str) -> DebateTrace | ExitStatus:
    """Load a trace, mapping failures onto exit codes for read-only commands."""
    try:
        return load_trace(path)
    except (TraceIoError, ParseError) as exc:
        _err(f"cannot load trace: {exc}")
        return ExitStatus.IO
    except UnsupportedVersion as exc:
        _err(str(exc))
        return ExitStatus.INVALID
    except HashMismatch as exc:
        _err(str(exc))
        return ExitStatus.INVARIANT


# -- run ------------------------------------------------------------------

def _model_config(args: argparse.Namespace) -> ModelConfig:
    if args.model_config:
        cfg = load_model_config(args.model_config)
    elif args.backend == BackendKind.LIVE.value:
        raise ConfigError("the live backend needs --model-config with an endpoint_url")
    else:
        cfg = ModelConfig(BackendKind.SCRIPTED, "scripted")
    if args.backend and args.backend != cfg.backend_kind.value:
        kind = BackendKind(args.backend)
        url = None if kind is BackendKind.SCRIPTED else cfg.endpoint_url
        cfg = parse_model_config(
            {**_config_doc(cfg), "backend_kind": kind.value, "endpoint_url": url},
            Path(args.model_config) if args.model_config else None,
        )
    if args.parallel:
        cfg = dataclasses.replace(cfg, parallel_independent_calls=True)
    return cfg


def _config_doc(cfg: ModelConfig) -> dict[str, Any]:
    doc = dataclasses.asdict(cfg)
    doc["backend_kind"] = cfg.backend_kind.value
    return doc


def _persist_partial(exc: BackendError, out_dir: str) -> None:
    if exc.partial_trace is None:
        return
    try:
        trace_path, _ = persist_outputs(exc.partial_trace, out_dir)
    except TraceIoError as io_exc:
        _err(f"could not save partial trace: {io_exc}")
        return
    _err(f"partial trace written to {trace_path}")


def _report_outcome(trace: DebateTrace, paths: tuple[Path, Path | None]) -> None:
    for line in tally_lines(trace.tally, trace.scenario.options):
        print(line)
    print(f"canonical_hash: {canonical_hash(trace)}")
    for p in paths:
        if p is not None:
            _err(f"wrote {p}")


def cmd_run(args: argparse.Namespace) -> ExitStatus:
    wants_live = args.backend == BackendKind.LIVE.value
    try:
        cfg = _model_config(args)
        wants_live = cfg.backend_kind is BackendKind.LIVE
        # Fail fast on the credential before any debate state exists.
        if wants_live and not os.environ.get(API_KEY_ENV):
            _err(f"live backend requires the {API_KEY_ENV} environment variable")
            return ExitStatus.INVALID
        scenario = load_scenario(args.scenario)
        personas = load_personas(args.personas)
        if wants_live:
            backend = LiveBackend(cfg)
        else:
            if not args.script:
                _err("the scripted backend needs --script <fixture or trace>")
                return ExitStatus.INVALID
            backend = load_script(args.script)
    except (ConfigError, MissingKey, UnsupportedVersion) as exc:
        _err(str(exc))
        return ExitStatus.INVALID
    except (TraceIoError, HashMismatch) as exc:
        _err(f"cannot load script: {exc}")
        return ExitStatus.IO

    try:
        trace = run_debate(scenario, personas, cfg, backend)
    except ConfigError as exc:
        _err(str(exc))
        return ExitStatus.INVALID
    except BackendError as exc:
        _err(f"backend failure, debate aborted: {exc}")
        _persist_partial(exc, args.out)
        return ExitStatus.BACKEND
    try:
        paths = persist_outputs(trace, args.out)
    except TraceIoError as exc:
        _err(str(exc))
        return ExitStatus.IO
    _report_outcome(trace, paths)
    return ExitStatus.OK


# -- replay ---------------------------------------------------------------

def cmd_replay(args: argparse.Namespace) -> ExitStatus:
    loaded = _read_trace(args.trace)
    if isinstance(loaded, ExitStatus):
        return loaded
    original = loaded
    if not original.is_complete:
        _err("only complete traces can be replayed")
        return ExitStatus.INVALID
    backend = load_script(original, strict=True)
    try:
        replayed = run_debate(original.scenario, original.personas, original.model_config, backend)
    except BackendError as exc:
        _err(f"replay diverged from the recorded calls: {exc}")
        return ExitStatus.INVARIANT
    before, after = canonical_hash(original), canonical_hash(replayed)
    print(f"original: {before}")
    print(f"replayed: {after}")
    if args.out:
        try:
            paths = persist_outputs(replayed, args.out)
        except TraceIoError as exc:
            _err(str(exc))
            return ExitStatus.IO
        for p in paths:
            if p is not None:
                _err(f"wrote {p}")
    if before != after:
        _err("canonical hashes differ")
        return ExitStatus.INVARIANT
    return ExitStatus.OK


# -- tally ----------------------------------------------------------------

def cmd_tally(args: argparse.Namespace) -> ExitStatus:
    loaded = _read_trace(args.trace)
    if isinstance(loaded, ExitStatus):
        return loaded
    trace = loaded
    if trace.tally is None:
        _err("trace has no tally (the run was aborted before the ballot finished)")
        return ExitStatus.INVALID
    for line in tally_lines(trace.tally, trace.scenario.options):
        print(line)
    if args.figure:
        from .plotting import plot_tally

        try:
            plot_tally(trace.tally, trace.scenario.options, args.figure, title=trace.scenario.title)
        except OSError as exc:
            _err(f"cannot write figure: {exc}")
            return ExitStatus.IO
        _err(f"wrote {args.figure}")
    return ExitStatus.OK


# -- compare --------------------------------------------------------------

COMPARE_SUFFIXES = (".txt", ".json", ".csv", ".png")


def _free_stem(stem: Path) -> Path:
    candidate, n = stem, 0
    while any(Path(f"{candidate}{s}").exists() for s in COMPARE_SUFFIXES):
        n += 1
        candidate = stem.with_name(f"{stem.name}-{n}")
    return candidate


def _write_csv(report, path: Path) -> None:
    with open(path, "x", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["option", "label", report.label_a, report.label_b])
        for o in report.options:
            writer.writerow(
                [o.id, o.label, report.tally_a.counts.get(o.id, 0), report.tally_b.counts.get(o.id, 0)]
            )
        writer.writerow(["abstain", "", report.tally_a.abstentions, report.tally_b.abstentions])


def cmd_compare(args: argparse.Namespace) -> ExitStatus:
    traces = []
    for path in (args.trace_a, args.trace_b):
        loaded = _read_trace(path)
        if isinstance(loaded, ExitStatus):
            return loaded
        traces.append(loaded)
    try:
        report = compare(*traces, label_a=args.label_a, label_b=args.label_b)
    except ScenarioMismatch as exc:
        _err(str(exc))
        return ExitStatus.INVALID

    stem = Path(args.out)
    try:
        stem.parent.mkdir(parents=True, exist_ok=True)
        stem = _free_stem(stem)
        with open(f"{stem}.txt", "x", encoding="utf-8", newline="\n") as fh:
            fh.write(render_comparison(report))
        with open(f"{stem}.json", "x", encoding="utf-8", newline="\n") as fh:
            json.dump(comparison_to_dict(report), fh, indent=2, ensure_ascii=False)
            fh.write("\n")
        _write_csv(report, Path(f"{stem}.csv"))
        if not args.no_figure:
            from .plotting import plot_comparison

            plot_comparison(report, f"{stem}.png")
    except OSError as exc:
        _err(f"cannot write comparison: {exc}")
        return ExitStatus.IO
    _err(f"wrote {stem}.{{txt,json,csv{'' if args.no_figure else ',png'}}}")
    print(report.summary_line)
    return ExitStatus.OK


# -- validate -------------------------------------------------------------

def _detect_kind(doc: Any) -> str:
    if isinstance(doc, dict):
        if "options" in doc:
            return "scenario"
        if "backend_kind" in doc:
            return "model"
    return "persona"


def _validate_file(path: Path, kind: str) -> tuple[str | None, str | None]:
    """(persona name if any, error message if any)."""
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        return None, f"cannot read file: {exc}"
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" (line {mark.line + 1})" if mark is not None else ""
        return None, f"malformed YAML{where}"
    kind = _detect_kind(doc) if kind == "auto" else kind
    try:
        if kind == "scenario":
            parse_scenario(doc)
        elif kind == "model":
            parse_model_config(doc)
        else:
            return parse_persona(doc).name, None
    except ConfigError as exc:
        return None, exc.message
    return None, None


def cmd_validate(args: argparse.Namespace) -> ExitStatus:
    target = Path(args.path)
    if target.is_dir():
        try:
            files = persona_files(target)
        except ConfigError as exc:
            _err(str(exc))
            return ExitStatus.INVALID
        if not files:
            print(f"ERROR {target}: no persona files (*.yaml, *.yml) found")
            return ExitStatus.INVALID
        kind = "persona" if args.kind == "auto" else args.kind
    elif target.is_file():
        files, kind = [target], args.kind
    else:
        _err(f"{target}: no such file or directory")
        return ExitStatus.INVALID

    failures = 0
    seen: dict[str, Path] = {}
    for path in files:
        name, error = _validate_file(path, kind)
        if error is None and name is not None and name in seen:
            error = f"duplicate persona name {name!r} (also in {seen[name].name})"
        if error is None:
            if name is not None:
                seen[name] = path
            print(f"OK    {path}")
        else:
            failures += 1
            print(f"ERROR {path}: {error}")
    print(f"{len(files) - failures} valid, {failures} invalid")
    return ExitStatus.INVALID if failures else ExitStatus.OK


# -- entry point ----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="adept", description="Run and analyse structured persona debates."
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a debate and write trace + report")
    run.add_argument("--scenario", default="options.yaml", help="scenario YAML (default: %(default)s)")
    run.add_argument("--personas", default="personas", help="persona directory (default: %(default)s)")
    run.add_argument(
        "--model-config",
        help="model config YAML; without it a scripted config is assumed",
    )
    run.add_argument("--out", default=DEFAULT_OUT_DIR, help="output directory (default: %(default)s)")
    run.add_argument(
        "--backend",
        choices=[k.value for k in BackendKind],
        help="override the backend named in the model config",
    )
    run.add_argument("--script", help="fixture script or trace file for the scripted backend")
    run.add_argument(
        "--parallel", action="store_true", help="issue independent calls within a phase concurrently"
    )
    run.set_defaults(func=cmd_run)

    replay = sub.add_parser("replay", help="re-run a trace against its own recorded responses")
    replay.add_argument("trace")
    replay.add_argument("--out", help="also write the replayed trace + report here")
    replay.set_defaults(func=cmd_replay)

    tally = sub.add_parser("tally", help="print the tally table of a trace")
    tally.add_argument("trace")
    tally.add_argument("--figure", help="also write a bar chart PNG to this path")
    tally.set_defaults(func=cmd_tally)

    cmp_ = sub.add_parser("compare", help="compare two traces of the same scenario")
    cmp_.add_argument("trace_a")
    cmp_.add_argument("trace_b")
    cmp_.add_argument(
        "--out",
        default=os.path.join(DEFAULT_OUT_DIR, "comparison"),
        help="output path stem; .txt, .json, .csv and .png are appended (default: %(default)s)",
    )
    cmp_.add_argument("--label-a", default="Debate A")
    cmp_.add_argument("--label-b", default="Debate B")
    cmp_.add_argument("--no-figure", action="store_true", help="skip the PNG chart")
    cmp_.set_defaults(func=cmd_compare)

    val = sub.add_parser("validate", help="validate a persona directory or a YAML file")
    val.add_argument("path")
    val.add_argument(
        "--kind",
        choices=["auto", "persona", "scenario", "model"],
        default="auto",
        help="document type; 'auto' infers it from the keys",
    )
    val.set_defaults(func=cmd_validate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return int(args.func(args))
    except IncompleteTrace as exc:
        _err(str(exc))
        return int(ExitStatus.INVARIANT)
    except AdeptError as exc:
        _err(f"unexpected error: {exc}")
        return int(ExitStatus.INVARIANT)


__all__ = ["ExitStatus", "build_parser", "main"]
