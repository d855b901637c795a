"""Message sequences sent to the backend for each persona and phase.

Template text lives in ``adept/templates`` and is fingerprinted into
``TEMPLATE_VERSION``, which every trace records. Editing a template
therefore changes the version automatically.
"""
from __future__ import annotations

import hashlib
from collections.abc import Sequence
from functools import lru_cache
from importlib import resources
from string import Template

from .analysis import tally_lines
from .config import PersonaSpec, ScenarioSpec
from .errors import IncompletePhase, IncompleteTrace
from .records import (
    Ballot,
    BallotStatus,
    ChatMessage,
    DebateTrace,
    Phase,
    PromptBundle,
    Role,
    Utterance,
)

TEMPLATE_SERIES = "1"
SUMMARISER_NAME = "Summariser"

# (field, heading) in schema order; the first five are required fields.
PERSONA_SECTIONS = (
    ("name", "NAME"),
    ("principle", "PRINCIPLE"),
    ("approach", "APPROACH"),
    ("core_questions", "CORE QUESTIONS"),
    ("decision_criteria", "DECISION CRITERIA"),
    ("deliberation_style", "DELIBERATION STYLE"),
    ("forbidden_moves", "FORBIDDEN MOVES"),
    ("strengths", "STRENGTHS"),
    ("challenges", "CHALLENGES"),
    ("citations", "CITATIONS"),
)
HEADING_PREFIX = "### "

_TEMPLATE_NAMES = (
    "system",
    "scenario_block",
    "opening",
    "rebuttal",
    "ballot",
    "ballot_retry",
    "summary_system",
    "summary_user",
)


@lru_cache(maxsize=None)
def _templates() -> dict[str, str]:
    root = resources.files("adept") / "templates"
    return {name: (root / f"{name}.txt").read_text(encoding="utf-8") for name in _TEMPLATE_NAMES}


def _fill(template: str, /, **values: str) -> str:
    return Template(_templates()[template]).substitute(values).strip("\n")


def _template_version() -> str:
    digest = hashlib.sha256()
    for name in _TEMPLATE_NAMES:
        digest.update(name.encode() + b"\0" + _templates()[name].encode("utf-8") + b"\0")
    digest.update(repr((PERSONA_SECTIONS, HEADING_PREFIX)).encode())
    return f"{TEMPLATE_SERIES}+{digest.hexdigest()[:12]}"


TEMPLATE_VERSION = _template_version()


def attribution(name: str, phase: Phase | str) -> str:
    phase = phase.value if isinstance(phase, Phase) else phase
    return f"— {name} ({phase}):"


def render_utterance(u: Utterance) -> str:
    return f"{attribution(u.persona_name, u.phase)}\n{u.response}"


# -- system message -------------------------------------------------------

def build_system_message(persona: PersonaSpec) -> str:
    sections = []
    for field_name, heading in PERSONA_SECTIONS:
        value = getattr(persona, field_name)
        if value is None or value == ():
            continue
        body = value if isinstance(value, str) else "\n".join(f"- {item}" for item in value)
        sections.append(f"{HEADING_PREFIX}{heading}\n{body}")
    forbidden = (
        " Never make any of the moves listed under FORBIDDEN MOVES." if persona.forbidden_moves else ""
    )
    return _fill(
        "system", name=persona.name, forbidden_clause=forbidden, sections="\n\n".join(sections)
    )


# -- dialogue prompts -----------------------------------------------------

def _scenario_block(scenario: ScenarioSpec) -> str:
    options = "\n\n".join(f"Option {o.id} - {o.label}\n{o.description}" for o in scenario.options)
    return _fill(
        "scenario_block", title=scenario.title, narrative=scenario.narrative, options=options
    ) + "\n"


def _bundle(persona_name: str, phase: Phase, system: str, *users: str) -> PromptBundle:
    messages = [ChatMessage(Role.SYSTEM, system)] + [ChatMessage(Role.USER, u) for u in users]
    return PromptBundle(persona_name, phase, tuple(messages), TEMPLATE_VERSION)


def _ordered_phase(
    utterances: Sequence[Utterance], phase: Phase, panel: Sequence[str] | None
) -> list[Utterance]:
    """Check one utterance per panel member for ``phase``; return them in panel order."""
    by_name: dict[str, Utterance] = {}
    for u in utterances:
        if u.phase is not phase:
            raise IncompletePhase(f"expected {phase.value} utterances, got {u.phase.value}")
        if u.persona_name in by_name:
            raise IncompletePhase(f"{u.persona_name} has more than one {phase.value} utterance")
        by_name[u.persona_name] = u
    if panel is None:
        return sorted(by_name.values(), key=lambda u: u.seq)
    missing = [n for n in panel if n not in by_name]
    if missing:
        raise IncompletePhase(f"{phase.value} phase is missing: {', '.join(missing)}")
    extra = sorted(set(by_name) - set(panel))
    if extra:
        raise IncompletePhase(f"{phase.value} utterances from outside the panel: {', '.join(extra)}")
    return [by_name[n] for n in panel]


def _names(panel: Sequence[PersonaSpec] | Sequence[str] | None) -> list[str] | None:
    if panel is None:
        return None
    return [p if isinstance(p, str) else p.name for p in panel]


def compose_opening(scenario: ScenarioSpec, persona: PersonaSpec) -> PromptBundle:
    user = _fill("opening", scenario_block=_scenario_block(scenario))
    return _bundle(persona.name, Phase.OPENING, build_system_message(persona), user)


def compose_rebuttal(
    scenario: ScenarioSpec,
    persona: PersonaSpec,
    openings: Sequence[Utterance],
    panel: Sequence[PersonaSpec] | Sequence[str] | None = None,
) -> PromptBundle:
    """Rebuttal prompt embedding every opening statement, attributed, in panel order.

    Without ``panel`` the check can only confirm that ``persona`` itself
    has an opening; the engine always passes the panel.
    """
    names = _names(panel)
    ordered = _ordered_phase(openings, Phase.OPENING, names)
    if persona.name not in {u.persona_name for u in ordered}:
        raise IncompletePhase(f"opening phase is missing: {persona.name}")
    user = _fill(
        "rebuttal",
        scenario_block=_scenario_block(scenario),
        openings="\n\n".join(render_utterance(u) for u in ordered),
    )
    return _bundle(persona.name, Phase.REBUTTAL, build_system_message(persona), user)


def _legal(scenario: ScenarioSpec) -> str:
    return ", ".join(str(i) for i in scenario.option_ids)


def _transcript(openings: Sequence[Utterance], rebuttals: Sequence[Utterance]) -> str:
    return "\n\n".join(render_utterance(u) for u in [*openings, *rebuttals])


def compose_ballot(
    scenario: ScenarioSpec,
    persona: PersonaSpec,
    openings: Sequence[Utterance],
    rebuttals: Sequence[Utterance],
    panel: Sequence[PersonaSpec] | Sequence[str] | None = None,
) -> PromptBundle:
    names = _names(panel)
    ordered_open = _ordered_phase(openings, Phase.OPENING, names)
    ordered_reb = _ordered_phase(rebuttals, Phase.REBUTTAL, names)
    if names is None:
        if {u.persona_name for u in ordered_open} != {u.persona_name for u in ordered_reb}:
            raise IncompletePhase("opening and rebuttal phases cover different personas")
        if persona.name not in {u.persona_name for u in ordered_open}:
            raise IncompletePhase(f"dialogue is missing {persona.name}")
    user = _fill(
        "ballot",
        scenario_block=_scenario_block(scenario),
        transcript=_transcript(ordered_open, ordered_reb),
        legal=_legal(scenario),
    )
    return _bundle(persona.name, Phase.BALLOT, build_system_message(persona), user)


def compose_ballot_retry(bundle: PromptBundle, scenario: ScenarioSpec, problem: str) -> PromptBundle:
    """The original ballot prompt plus one corrective user message."""
    note = _fill("ballot_retry", problem=problem, legal=_legal(scenario))
    return PromptBundle(
        bundle.persona_name,
        Phase.BALLOT,
        bundle.messages + (ChatMessage(Role.USER, note),),
        bundle.template_version,
    )


# -- summary --------------------------------------------------------------

def _ballot_block(ballot: Ballot) -> str:
    if ballot.status is BallotStatus.VALID:
        verdict = f"Vote: Option {ballot.parsed_option}"
    elif ballot.status is BallotStatus.ABSTAINED_NO_TAG:
        verdict = "Vote: ABSTAINED (no valid vote tag)"
    else:
        verdict = "Vote: ABSTAINED (vote for an option that does not exist)"
    return f"{attribution(ballot.persona_name, Phase.BALLOT)}\n{verdict}\nJustification: {ballot.justification}".rstrip(" ")


def compose_summary(trace: DebateTrace) -> PromptBundle:
    if trace.tally is None:
        raise IncompleteTrace("trace has no tally")
    names = trace.persona_names
    if len(trace.ballots) != len(names):
        raise IncompleteTrace(f"trace has {len(trace.ballots)} ballots for {len(names)} personas")
    try:
        openings = _ordered_phase(trace.utterances_for(Phase.OPENING), Phase.OPENING, names)
        rebuttals = _ordered_phase(trace.utterances_for(Phase.REBUTTAL), Phase.REBUTTAL, names)
    except IncompletePhase as exc:
        raise IncompleteTrace(str(exc)) from exc
    user = _fill(
        "summary_user",
        scenario_block=_scenario_block(trace.scenario),
        transcript=_transcript(openings, rebuttals),
        ballots="\n\n".join(_ballot_block(b) for b in trace.ballots),
        tally="\n".join(tally_lines(trace.tally, trace.scenario.options)),
    )
    return _bundle(SUMMARISER_NAME, Phase.SUMMARY, _fill("summary_system"), user)
