from __future__ import annotations

import logging
from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adept.backend import CompletionRequest, CompletionResult, script_from_document
from adept.config import BackendKind, ModelConfig, load_personas, load_scenario
from adept.engine import (
    collect_ballots,
    excise_vote,
    parse_vote,
    run_debate,
    run_dialogue_phase,
)
from adept.errors import BackendError, IncompletePhase, InvalidOption, NoVoteFound, ValidationError
from adept.persistence import canonical_hash
from adept.records import BallotStatus, Phase, TraceStatus
from support import (
    PANEL_1,
    PANEL_2,
    SCENARIO_PATH,
    SCRIPTED,
    VIRTUE,
    FakeClock,
    fixture_trace,
    make_persona,
    make_scenario,
    random_debate,
)

SCENARIO = load_scenario(SCENARIO_PATH)


class Counting:
    """Wraps a backend and records every request it forwards."""

    def __init__(self, inner, fail_on: tuple[str, Phase] | None = None):
        self.inner = inner
        self.fail_on = fail_on
        self.requests: list[CompletionRequest] = []

    def complete(self, request: CompletionRequest) -> CompletionResult:
        self.requests.append(request)
        if self.fail_on == (request.persona_name, request.phase):
            raise BackendError("transport", "injected failure")
        return self.inner.complete(request)


def _script(panel: dict[str, list[str]], summary: str | None = "Summary.") -> dict:
    doc = {
        "format": "adept-script/1",
        "responses": {
            name: {"opening": [f"Opening by {name}."], "rebuttal": [f"Rebuttal by {name}."], "ballot": ballots}
            for name, ballots in panel.items()
        },
    }
    if summary:
        doc["summary"] = [summary]
    return doc


# -- parse_vote -----------------------------------------------------------

@pytest.mark.parametrize(
    "text, expected",
    [
        ("…fairness demands it. <vote>2</vote>", 2),
        ("<VOTE> 3 </VOTE>", 3),
        ("<Vote>\n\t1\r\n</vOtE> trailing", 1),
        ("<vote>4</vote><vote>1</vote>", 4),
        ("<vote>02</vote>", 2),
    ],
)
def test_parse_vote_valid(text, expected):
    assert parse_vote(text, SCENARIO) == expected


@pytest.mark.parametrize(
    "text",
    ["I vote for option 2.", "<vote>two</vote>", "<vote>2<vote>", "< vote>2</vote>", "<vote>-1</vote>",
     "<vote>2.0</vote>", "<vote> 2</vote>", "<vote>٢</vote>", ""],
)
def test_parse_vote_no_tag(text):
    with pytest.raises(NoVoteFound):
        parse_vote(text, SCENARIO)


@pytest.mark.parametrize("text", ["<vote>7</vote>", "<vote>0</vote>", "<vote>5</vote> <vote>1</vote>"])
def test_parse_vote_invalid_option(text):
    with pytest.raises(InvalidOption) as info:
        parse_vote(text, SCENARIO)
    assert info.value.legal == [1, 2, 3, 4]


def test_parse_vote_accepts_id_lists_and_options():
    assert parse_vote("<vote>2</vote>", [1, 2]) == 2
    assert parse_vote("<vote>2</vote>", SCENARIO.options) == 2


def test_duplicate_tags_log_warning(caplog):
    with caplog.at_level(logging.WARNING, logger="adept.engine"):
        assert parse_vote("<vote>1</vote> then <vote>2</vote>", SCENARIO) == 1
    assert "2 vote tags" in caplog.text


@settings(max_examples=200, deadline=None)
@given(
    prefix=st.text(alphabet=st.characters(blacklist_characters="<>"), max_size=40),
    suffix=st.text(max_size=40),
    option=st.integers(1, 4),
    ws1=st.text(alphabet=" \t\n\r\v\f", max_size=3),
    ws2=st.text(alphabet=" \t\n\r\v\f", max_size=3),
)
def test_first_tag_wins_property(prefix, suffix, option, ws1, ws2):
    text = f"{prefix}<vote>{ws1}{option}{ws2}</vote>{suffix}"
    assert parse_vote(text, SCENARIO) == option


@settings(max_examples=200, deadline=None)
@given(text=st.text(alphabet=st.characters(blacklist_characters="<"), max_size=200))
def test_text_without_angle_bracket_never_parses(text):
    with pytest.raises(NoVoteFound):
        parse_vote(text, SCENARIO)


def test_excise_vote():
    assert excise_vote("Reason one.  <vote>2</vote>  Reason two.") == "Reason one. Reason two."
    assert excise_vote("<vote>2</vote>\n") == ""
    assert excise_vote("  no tag here ") == "no tag here"
    assert excise_vote("A <vote>1</vote> B <vote>2</vote>") == "A B <vote>2</vote>"


# -- dialogue phases ------------------------------------------------------

def test_opening_phase_order_and_count():
    personas = load_personas(PANEL_1)
    backend = script_from_document(_script({p.name: ["<vote>1</vote>"] for p in personas}))
    utterances = run_dialogue_phase(Phase.OPENING, SCENARIO, personas, [], backend, SCRIPTED, FakeClock())
    assert [u.persona_name for u in utterances] == [p.name for p in personas]
    assert [u.seq for u in utterances] == list(range(6))


def test_rebuttal_prompts_contain_all_openings():
    personas = load_personas(PANEL_1)
    backend = script_from_document(_script({p.name: ["<vote>1</vote>"] for p in personas}))
    openings = run_dialogue_phase(Phase.OPENING, SCENARIO, personas, [], backend, SCRIPTED, FakeClock())
    rebuttals = run_dialogue_phase(Phase.REBUTTAL, SCENARIO, personas, openings, backend, SCRIPTED, FakeClock())
    assert [u.seq for u in rebuttals] == list(range(6, 12))
    for r in rebuttals:
        for o in openings:
            assert o.response in r.prompt.text


def test_incomplete_openings_fail_before_any_call():
    personas = load_personas(PANEL_1)
    inner = script_from_document(_script({p.name: ["<vote>1</vote>"] for p in personas}))
    openings = run_dialogue_phase(Phase.OPENING, SCENARIO, personas, [], inner, SCRIPTED, FakeClock())
    counting = Counting(inner)
    with pytest.raises(IncompletePhase):
        run_dialogue_phase(Phase.REBUTTAL, SCENARIO, personas, openings[:-1], counting, SCRIPTED, FakeClock())
    assert counting.requests == []


def test_ballot_is_not_a_dialogue_phase():
    with pytest.raises(ValueError):
        run_dialogue_phase(Phase.BALLOT, SCENARIO, [], [], None, SCRIPTED)


# -- ballots --------------------------------------------------------------

def test_virtue_ethicist_votes_three_in_debate_two():
    trace = fixture_trace(2)
    assert trace.ballot_for(VIRTUE).parsed_option == 3


def _two_person(ballots_a: list[str], ballots_b: list[str] | None = None, k: int = 2):
    personas = [make_persona("A"), make_persona("B")]
    doc = _script({"A": ballots_a, "B": ballots_b or ["<vote>1</vote> Fine."]})
    return run_debate(make_scenario(k), personas, SCRIPTED, script_from_document(doc), FakeClock())


def test_retry_then_valid():
    trace = _two_person(["I prefer the second.", "Sorry. <vote>2</vote>"])
    ballot = trace.ballot_for("A")
    assert (ballot.status, ballot.attempts, ballot.parsed_option) == (BallotStatus.VALID, 2, 2)
    assert ballot.justification == "Sorry."
    assert len(ballot.history[1].prompt.messages) == len(ballot.history[0].prompt.messages) + 1


def test_two_tagless_responses_abstain():
    trace = _two_person(["No tag.", "Still no tag."])
    ballot = trace.ballot_for("A")
    assert (ballot.status, ballot.attempts, ballot.parsed_option) == (BallotStatus.ABSTAINED_NO_TAG, 2, None)
    assert ballot.raw_response == "Still no tag."
    assert trace.tally.abstentions == 1 and trace.tally.valid_count == 1


def test_invalid_option_twice_abstains():
    trace = _two_person(["<vote>9</vote>", "<vote>9</vote> again"])
    ballot = trace.ballot_for("A")
    assert ballot.status is BallotStatus.ABSTAINED_INVALID_OPTION
    assert "option 9" in ballot.history[1].prompt.messages[-1].content


def test_no_second_retry():
    with pytest.raises(BackendError) as info:
        _two_person(["No tag."])
    assert info.value.kind == "script_exhausted"


def test_ballot_secrecy_in_prompts():
    trace = _two_person(["<vote>1</vote> Secret reason alpha."], ["<vote>2</vote> Secret reason beta."])
    a, b = trace.ballot_for("A"), trace.ballot_for("B")
    assert b.raw_response not in a.prompt.text
    assert a.raw_response not in b.prompt.text


def test_duplicate_tag_recorded_as_trace_warning():
    trace = _two_person(["<vote>1</vote> and also <vote>2</vote>"])
    assert trace.ballot_for("A").parsed_option == 1
    assert any("A: ballot attempt 1 contains 2 vote tags" in w for w in trace.warnings)


def test_collect_ballots_directly():
    trace = fixture_trace(1)
    doc = {"format": "adept-script/1", "responses": {
        b.persona_name: {"opening": ["x"], "rebuttal": ["y"], "ballot": [b.raw_response]} for b in trace.ballots}}
    ballots = collect_ballots(
        trace.scenario, trace.personas, trace.utterances, script_from_document(doc), SCRIPTED, FakeClock()
    )
    assert [b.parsed_option for b in ballots] == [b.parsed_option for b in trace.ballots]


# -- full runs ------------------------------------------------------------

def test_debate_one_tally():
    t = fixture_trace(1)
    assert t.tally.counts == {1: 2, 2: 4, 3: 0, 4: 0}
    assert t.tally.majority_option == 2
    assert t.status is TraceStatus.COMPLETE and t.is_complete


def test_debate_two_tally():
    t = fixture_trace(2)
    assert t.tally.counts == {1: 0, 2: 4, 3: 2, 4: 0}
    assert t.tally.majority_option == 2


def test_two_persona_cardinality():
    trace = _two_person(["<vote>2</vote>"])
    assert len(trace.utterances) == 4 and len(trace.ballots) == 2
    assert trace.summary_text == "Summary."


def test_panel_too_small_or_duplicated():
    with pytest.raises(ValidationError):
        run_debate(make_scenario(2), [make_persona("A")], SCRIPTED, None)
    with pytest.raises(ValidationError):
        run_debate(make_scenario(2), [make_persona("A"), make_persona("A")], SCRIPTED, None)


def test_every_call_is_in_the_trace():
    for seed in range(20):
        debate = random_debate(seed)
        counting = Counting(debate.backend())
        trace = run_debate(debate.scenario, debate.personas, SCRIPTED, counting, FakeClock())
        recorded = [u.prompt for u in trace.utterances]
        recorded += [a.prompt for b in trace.ballots for a in b.history]
        recorded.append(trace.summary_prompt)
        assert [r.messages for r in counting.requests] == [p.messages for p in recorded]


def test_parallel_matches_sequential():
    """Only the recorded config flag differs between the two execution modes."""
    for seed in range(10):
        debate = random_debate(seed)
        sequential, parallel = debate.run(parallel=False), debate.run(parallel=True)
        assert parallel.model_config.parallel_independent_calls
        parallel.model_config = sequential.model_config
        assert canonical_hash(parallel) == canonical_hash(sequential)


def test_phase_monotonic_timestamps_with_real_clock():
    personas = load_personas(PANEL_2)
    from adept.backend import load_script
    from support import SCRIPT_2

    trace = run_debate(SCENARIO, personas, SCRIPTED, load_script(SCRIPT_2))
    stamps = [(u.started_at, u.ended_at) for u in trace.utterances]
    openings_end = max(e for (s, e), u in zip(stamps, trace.utterances) if u.phase is Phase.OPENING)
    rebuttals_start = min(s for (s, e), u in zip(stamps, trace.utterances) if u.phase is Phase.REBUTTAL)
    assert openings_end <= rebuttals_start
    assert max(u.ended_at for u in trace.utterances) <= min(b.started_at for b in trace.ballots)


@pytest.mark.parametrize("parallel", [False, True])
def test_backend_failure_aborts_with_partial_trace(parallel):
    debate = random_debate(3)
    victim = debate.personas[-1].name
    counting = Counting(debate.backend(), fail_on=(victim, Phase.REBUTTAL))
    cfg = replace(SCRIPTED, parallel_independent_calls=parallel)
    with pytest.raises(BackendError) as info:
        run_debate(debate.scenario, debate.personas, cfg, counting, FakeClock())
    partial = info.value.partial_trace
    assert partial.status is TraceStatus.ABORTED
    assert "injected failure" in partial.abort_reason
    assert len(partial.utterances_for(Phase.OPENING)) == len(debate.personas)
    assert len(partial.utterances_for(Phase.REBUTTAL)) == len(debate.personas) - 1
    assert partial.ballots == [] and partial.tally is None
    assert not partial.is_complete


def test_sequential_abort_stops_at_first_failure():
    debate = random_debate(5)
    first = debate.personas[0].name
    counting = Counting(debate.backend(), fail_on=(first, Phase.OPENING))
    with pytest.raises(BackendError):
        run_debate(debate.scenario, debate.personas, SCRIPTED, counting, FakeClock())
    assert len(counting.requests) == 1


def test_summary_failure_keeps_ballots():
    debate = random_debate(8)
    counting = Counting(debate.backend(), fail_on=("Summariser", Phase.SUMMARY))
    with pytest.raises(BackendError) as info:
        run_debate(debate.scenario, debate.personas, SCRIPTED, counting, FakeClock())
    partial = info.value.partial_trace
    assert len(partial.ballots) == len(debate.personas)
    assert partial.tally is not None and partial.summary_prompt is not None
    assert partial.status is TraceStatus.ABORTED


def test_live_config_records_in_trace():
    cfg = ModelConfig(BackendKind.LIVE, "o3", endpoint_url="https://x")
    debate = random_debate(1)
    trace = run_debate(debate.scenario, debate.personas, cfg, debate.backend(), FakeClock())
    assert trace.model_config == cfg
