"""Runs the three-phase protocol: openings, rebuttals, secret ballot.

Phases run strictly one after another. Inside a phase the calls are
independent of each other, so they may run on a thread pool when the
model config allows it; results are always assembled in panel order,
which keeps the trace identical either way.
"""
from __future__ import annotations

import logging
import re
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone

from .analysis import compute_tally
from .backend import Backend, CompletionRequest, CompletionResult
from .config import ModelConfig, PersonaSpec, PolicyOption, ScenarioSpec, check_unique_names
from .errors import BackendError, InvalidOption, NoVoteFound, ValidationError
from .prompts import (
    SUMMARISER_NAME,
    TEMPLATE_VERSION,
    compose_ballot,
    compose_ballot_retry,
    compose_opening,
    compose_rebuttal,
    compose_summary,
)
from .records import (
    Ballot,
    BallotAttempt,
    BallotStatus,
    DebateTrace,
    Phase,
    PromptBundle,
    TraceStatus,
    Utterance,
)

log = logging.getLogger(__name__)

Clock = Callable[[], str]

# First well-formed tag wins. Whitespace is the C isspace set.
VOTE_TAG = re.compile(r"<vote>[ \t\n\v\f\r]*([0-9]+)[ \t\n\v\f\r]*</vote>", re.IGNORECASE | re.ASCII)


def utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="microseconds")


# -- vote parsing ---------------------------------------------------------

def _legal_ids(options) -> list[int]:
    if isinstance(options, ScenarioSpec):
        return options.option_ids
    return [o.id if isinstance(o, PolicyOption) else int(o) for o in options]


def parse_vote(text: str, options: ScenarioSpec | Sequence[PolicyOption] | Sequence[int]) -> int:
    """Option id from the first well-formed ``<vote>N</vote>`` tag in ``text``.

    Raises NoVoteFound when there is no well-formed tag and InvalidOption
    when the first tag names an option that does not exist. Later tags are
    ignored, with a logged warning.
    """
    matches = list(VOTE_TAG.finditer(text))
    if not matches:
        raise NoVoteFound("no well-formed vote tag in response")
    if len(matches) > 1:
        log.warning("response contains %d vote tags; counting the first", len(matches))
    choice = int(matches[0].group(1))
    legal = _legal_ids(options)
    if choice not in legal:
        raise InvalidOption(choice, legal)
    return choice


def excise_vote(text: str) -> str:
    """Response text with the counted vote tag removed, trimmed."""
    m = VOTE_TAG.search(text)
    if m is None:
        return text.strip()
    left, right = text[: m.start()].rstrip(), text[m.end() :].lstrip()
    return (left + " " + right if left and right else left or right).strip()


# -- backend calls --------------------------------------------------------

class _Call:
    __slots__ = ("bundle", "result", "error", "started_at", "ended_at")

    def __init__(self, bundle: PromptBundle):
        self.bundle = bundle
        self.result: CompletionResult | None = None
        self.error: BackendError | None = None
        self.started_at = ""
        self.ended_at = ""


def _request(bundle: PromptBundle, config: ModelConfig) -> CompletionRequest:
    return CompletionRequest(
        messages=bundle.messages,
        model_id=config.model_id,
        temperature=config.temperature,
        max_output_tokens=config.max_output_tokens,
        persona_name=bundle.persona_name,
        phase=bundle.phase,
    )


def _invoke(call: _Call, backend: Backend, config: ModelConfig, clock: Clock) -> _Call:
    call.started_at = clock()
    try:
        call.result = backend.complete(_request(call.bundle, config))
    except BackendError as exc:
        call.error = exc
    call.ended_at = clock()
    return call


def _run_calls(
    items: Sequence,
    work: Callable,
    parallel: bool,
) -> list:
    """Apply ``work`` to every item; sequential mode stops after the first failure."""
    if parallel and len(items) > 1:
        with ThreadPoolExecutor(max_workers=len(items)) as pool:
            return list(pool.map(work, items))
    done = []
    for item in items:
        out = work(item)
        done.append(out)
        if _failed(out):
            break
    return done


def _failed(out) -> bool:
    if isinstance(out, _Call):
        return out.error is not None
    return out[1] is not None


# -- dialogue -------------------------------------------------------------

def run_dialogue_phase(
    phase: Phase,
    scenario: ScenarioSpec,
    personas: Sequence[PersonaSpec],
    prior: Sequence[Utterance],
    backend: Backend,
    config: ModelConfig,
    clock: Clock = utc_now,
) -> list[Utterance]:
    """One utterance per persona for ``phase``, in panel order.

    All prompts are composed before the first backend call, so a missing
    opening surfaces as IncompletePhase without touching the backend. On
    failure the raised BackendError carries ``partial_utterances``.
    """
    if phase is Phase.OPENING:
        bundles = [compose_opening(scenario, p) for p in personas]
    elif phase is Phase.REBUTTAL:
        openings = [u for u in prior if u.phase is Phase.OPENING]
        bundles = [compose_rebuttal(scenario, p, openings, personas) for p in personas]
    else:
        raise ValueError(f"{phase.value} is not a dialogue phase")

    calls = _run_calls(
        [_Call(b) for b in bundles],
        lambda c: _invoke(c, backend, config, clock),
        config.parallel_independent_calls,
    )
    utterances = []
    for call in calls:
        if call.error is None:
            utterances.append(
                Utterance(
                    seq=len(prior) + len(utterances),
                    phase=phase,
                    persona_name=call.bundle.persona_name,
                    prompt=call.bundle,
                    response=call.result.text,
                    started_at=call.started_at,
                    ended_at=call.ended_at,
                    finish_reason=call.result.finish_reason,
                    token_usage=call.result.token_usage,
                )
            )
    errors = [c.error for c in calls if c.error is not None]
    if errors:
        errors[0].partial_utterances = utterances
        raise errors[0]
    return utterances


# -- ballots --------------------------------------------------------------

def _judge(text: str, scenario: ScenarioSpec) -> tuple[int | None, BallotStatus, str]:
    try:
        return parse_vote(text, scenario), BallotStatus.VALID, ""
    except NoVoteFound:
        return None, BallotStatus.ABSTAINED_NO_TAG, "it contained no well-formed vote tag"
    except InvalidOption as exc:
        return (
            None,
            BallotStatus.ABSTAINED_INVALID_OPTION,
            f"option {exc.option} is not one of the listed options",
        )


def _attempt(call: _Call) -> BallotAttempt:
    return BallotAttempt(
        prompt=call.bundle,
        response=call.result.text,
        started_at=call.started_at,
        ended_at=call.ended_at,
        finish_reason=call.result.finish_reason,
        token_usage=call.result.token_usage,
    )


def _make_ballot(
    first: PromptBundle,
    history: list[BallotAttempt],
    verdict: tuple[int | None, BallotStatus, str],
) -> Ballot:
    raw = history[-1].response
    option, status, _ = verdict
    return Ballot(
        persona_name=first.persona_name,
        prompt=first,
        raw_response=raw,
        parsed_option=option,
        justification=excise_vote(raw),
        attempts=len(history),
        status=status,
        history=history,
    )


def _cast_ballot(
    bundle: PromptBundle,
    scenario: ScenarioSpec,
    backend: Backend,
    config: ModelConfig,
    clock: Clock,
) -> tuple[Ballot | None, BackendError | None]:
    first = _invoke(_Call(bundle), backend, config, clock)
    if first.error is not None:
        return None, first.error
    history = [_attempt(first)]
    verdict = _judge(first.result.text, scenario)
    if verdict[1] is not BallotStatus.VALID:
        retry = _invoke(_Call(compose_ballot_retry(bundle, scenario, verdict[2])), backend, config, clock)
        if retry.error is not None:
            return _make_ballot(bundle, history, verdict), retry.error
        history.append(_attempt(retry))
        verdict = _judge(retry.result.text, scenario)
    return _make_ballot(bundle, history, verdict), None


def collect_ballots(
    scenario: ScenarioSpec,
    personas: Sequence[PersonaSpec],
    dialogue: Sequence[Utterance],
    backend: Backend,
    config: ModelConfig,
    clock: Clock = utc_now,
) -> list[Ballot]:
    """Secret ballot: each persona sees the dialogue but no other ballot.

    An unparseable vote gets exactly one corrective re-prompt; if that also
    fails the ballot is recorded as an abstention. On backend failure the
    raised error carries ``partial_ballots``.
    """
    openings = [u for u in dialogue if u.phase is Phase.OPENING]
    rebuttals = [u for u in dialogue if u.phase is Phase.REBUTTAL]
    bundles = [compose_ballot(scenario, p, openings, rebuttals, personas) for p in personas]
    results = _run_calls(
        bundles,
        lambda b: _cast_ballot(b, scenario, backend, config, clock),
        config.parallel_independent_calls,
    )
    ballots = [b for b, _ in results if b is not None]
    errors = [e for _, e in results if e is not None]
    if errors:
        errors[0].partial_ballots = ballots
        raise errors[0]
    return ballots


def _duplicate_tag_warnings(ballots: Sequence[Ballot]) -> list[str]:
    out = []
    for b in ballots:
        for i, attempt in enumerate(b.history, start=1):
            n = len(VOTE_TAG.findall(attempt.response))
            if n > 1:
                out.append(
                    f"{b.persona_name}: ballot attempt {i} contains {n} vote tags; the first was counted"
                )
    return out


# -- full run -------------------------------------------------------------

def run_debate(
    scenario: ScenarioSpec,
    personas: Sequence[PersonaSpec],
    config: ModelConfig,
    backend: Backend,
    clock: Clock = utc_now,
) -> DebateTrace:
    """Run openings, rebuttals, ballot, tally and summary for one panel.

    A BackendError aborts the run; the error's ``partial_trace`` then holds
    everything recorded so far, with status ``aborted``.
    """
    personas = list(personas)
    if len(personas) < 2:
        raise ValidationError("a debate needs at least two personas", field="personas")
    check_unique_names(personas)

    trace = DebateTrace(
        scenario=scenario,
        personas=personas,
        model_config=config,
        template_version=TEMPLATE_VERSION,
        created_at=clock(),
    )
    try:
        for phase in (Phase.OPENING, Phase.REBUTTAL):
            try:
                trace.utterances += run_dialogue_phase(
                    phase, scenario, personas, trace.utterances, backend, config, clock
                )
            except BackendError as exc:
                trace.utterances += getattr(exc, "partial_utterances", [])
                raise
        try:
            trace.ballots = collect_ballots(scenario, personas, trace.utterances, backend, config, clock)
        except BackendError as exc:
            trace.ballots = getattr(exc, "partial_ballots", [])
            raise
        trace.warnings += _duplicate_tag_warnings(trace.ballots)
        trace.tally = compute_tally(trace.ballots, scenario.options)

        summary_bundle = compose_summary(trace)
        call = _invoke(_Call(summary_bundle), backend, config, clock)
        trace.summary_prompt = summary_bundle
        if call.error is not None:
            raise call.error
        trace.summary_text = call.result.text
    except BackendError as exc:
        trace.status = TraceStatus.ABORTED
        trace.abort_reason = str(exc)
        exc.partial_trace = trace
        raise
    return trace


__all__ = [
    "SUMMARISER_NAME",
    "VOTE_TAG",
    "collect_ballots",
    "excise_vote",
    "parse_vote",
    "run_debate",
    "run_dialogue_phase",
]
