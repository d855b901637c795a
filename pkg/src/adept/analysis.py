"""Tallies, outcomes and two-debate comparison reports."""
from __future__ import annotations

from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field

from .config import PolicyOption
from .errors import ScenarioMismatch
from .records import Ballot, BallotStatus, DebateTrace, Tally

COMPARE_FORMAT = "adept-compare/1"

ABSTAIN = "abstain"


def compute_tally(ballots: Iterable[Ballot], options: Sequence[PolicyOption]) -> Tally:
    """Count valid votes per option.

    A majority needs strictly more than half of the *valid* ballots, so
    abstentions never block an otherwise clear majority. Ties at the top
    leave ``majority_option`` empty and list every tied option as plurality.
    """
    counts = {o.id: 0 for o in options}
    abstentions = 0
    for ballot in ballots:
        if ballot.status is BallotStatus.VALID:
            counts[ballot.parsed_option] += 1
        else:
            abstentions += 1
    valid = sum(counts.values())
    majority = None
    for oid, n in counts.items():
        if 2 * n > valid:
            majority = oid
    top = max(counts.values(), default=0)
    plurality = tuple(oid for oid, n in counts.items() if top > 0 and n == top)
    return Tally(
        counts=counts,
        valid_count=valid,
        abstentions=abstentions,
        majority_option=majority,
        plurality_options=plurality,
    )


def outcome_line(tally: Tally) -> str:
    if tally.majority_option is not None:
        return f"Outcome: majority for Option {tally.majority_option}"
    top = tally.plurality_options
    if len(top) > 1:
        return "Outcome: no majority (tie between options " + ", ".join(map(str, top)) + ")"
    if top:
        return f"Outcome: no majority (plurality for Option {top[0]})"
    return "Outcome: no majority (no valid votes)"


def tally_lines(tally: Tally, options: Sequence[PolicyOption]) -> list[str]:
    lines = [f"{f'Option {o.id}:':<9} {tally.describe(o.id):<14} {o.label}" for o in options]
    if tally.abstentions:
        lines.append(f"Abstained: {tally.abstentions}")
    lines.append(outcome_line(tally))
    return lines


# -- comparison -----------------------------------------------------------

@dataclass(frozen=True)
class VoteShift:
    persona_name: str
    from_option: int | str
    to_option: int | str

    def __post_init__(self) -> None:
        if self.from_option == self.to_option:
            raise ValueError("a vote shift must change the vote")


@dataclass(frozen=True)
class StableVote:
    persona_name: str
    option: int | str


@dataclass
class ComparisonReport:
    options: tuple[PolicyOption, ...]
    retained_personas: list[str]
    added_personas: list[str]
    removed_personas: list[str]
    shifts: list[VoteShift]
    stable: list[StableVote]
    tally_a: Tally
    tally_b: Tally
    coalition_a: dict[int, list[str]]
    coalition_b: dict[int, list[str]]
    label_a: str = "Debate A"
    label_b: str = "Debate B"
    panel_a: list[str] = field(default_factory=list)
    panel_b: list[str] = field(default_factory=list)

    @property
    def summary_line(self) -> str:
        n = len(self.shifts)
        noun = "shift" if n == 1 else "shifts"
        return f"{n} vote {noun} among {len(self.retained_personas)} retained personas"


def _vote(trace: DebateTrace, name: str) -> int | str:
    ballot = trace.ballot_for(name)
    if ballot is None or ballot.parsed_option is None:
        return ABSTAIN
    return ballot.parsed_option


def coalitions(trace: DebateTrace) -> dict[int, list[str]]:
    groups: dict[int, list[str]] = {o.id: [] for o in trace.scenario.options}
    for ballot in trace.ballots:
        if ballot.parsed_option is not None:
            groups[ballot.parsed_option].append(ballot.persona_name)
    return {oid: sorted(names) for oid, names in groups.items()}


def compare(
    trace_a: DebateTrace,
    trace_b: DebateTrace,
    label_a: str = "Debate A",
    label_b: str = "Debate B",
) -> ComparisonReport:
    """Membership diff, per-persona vote shifts, tallies and coalitions.

    Personas are matched by exact name. Both traces must offer the same
    options (ids, labels and descriptions).
    """
    if trace_a.scenario.options != trace_b.scenario.options:
        raise ScenarioMismatch("the two traces do not share the same option set")
    names_a = trace_a.persona_names
    names_b = trace_b.persona_names
    in_b = set(names_b)
    in_a = set(names_a)
    retained = [n for n in names_a if n in in_b]
    shifts: list[VoteShift] = []
    stable: list[StableVote] = []
    for name in retained:
        before, after = _vote(trace_a, name), _vote(trace_b, name)
        if before == after:
            stable.append(StableVote(name, before))
        else:
            shifts.append(VoteShift(name, before, after))
    tally_a = trace_a.tally or compute_tally(trace_a.ballots, trace_a.scenario.options)
    tally_b = trace_b.tally or compute_tally(trace_b.ballots, trace_b.scenario.options)
    return ComparisonReport(
        options=trace_a.scenario.options,
        retained_personas=retained,
        added_personas=[n for n in names_b if n not in in_a],
        removed_personas=[n for n in names_a if n not in in_b],
        shifts=shifts,
        stable=stable,
        tally_a=tally_a,
        tally_b=tally_b,
        coalition_a=coalitions(trace_a),
        coalition_b=coalitions(trace_b),
        label_a=label_a,
        label_b=label_b,
        panel_a=list(names_a),
        panel_b=list(names_b),
    )


def _option_name(value: int | str) -> str:
    return "abstained" if value == ABSTAIN else f"Option {value}"


def render_comparison(report: ComparisonReport) -> str:
    out: list[str] = [
        f"COMPARISON: {report.label_a} vs {report.label_b}",
        "",
        "TALLIES",
        f"Option | {report.label_a} | {report.label_b} | Label",
    ]
    for o in report.options:
        out.append(
            f"Option {o.id} | {report.tally_a.describe(o.id)} | {report.tally_b.describe(o.id)}"
            f" | {o.label}"
        )
    if report.tally_a.abstentions or report.tally_b.abstentions:
        out.append(f"Abstained | {report.tally_a.abstentions} | {report.tally_b.abstentions} |")
    out.append(f"{report.label_a}: {outcome_line(report.tally_a)}")
    out.append(f"{report.label_b}: {outcome_line(report.tally_b)}")

    out += ["", "MEMBERSHIP"]
    out.append("Retained: " + (", ".join(report.retained_personas) or "(none)"))
    out.append(f"Only in {report.label_a}: " + (", ".join(report.removed_personas) or "(none)"))
    out.append(f"Only in {report.label_b}: " + (", ".join(report.added_personas) or "(none)"))

    out += ["", "VOTE SHIFTS"]
    if report.shifts:
        for s in report.shifts:
            out.append(f"{s.persona_name}: {_option_name(s.from_option)} -> {_option_name(s.to_option)}")
    else:
        out.append("No vote shifts among retained personas.")
    if report.stable:
        out.append("Stable:")
        for s in report.stable:
            out.append(f"  {s.persona_name}: {_option_name(s.option)}")
    out.append(report.summary_line)

    for label, groups in ((report.label_a, report.coalition_a), (report.label_b, report.coalition_b)):
        out += ["", f"COALITIONS ({label})"]
        for o in report.options:
            members = groups.get(o.id, [])
            out.append(f"Option {o.id}: " + (", ".join(members) if members else "(none)"))
    return "\n".join(out) + "\n"


def _tally_dict(t: Tally) -> dict:
    return {
        "counts": [{"option": oid, "votes": n} for oid, n in sorted(t.counts.items())],
        "valid_count": t.valid_count,
        "abstentions": t.abstentions,
        "majority_option": t.majority_option,
        "plurality_options": list(t.plurality_options),
    }


def comparison_to_dict(report: ComparisonReport) -> dict:
    return {
        "schema": COMPARE_FORMAT,
        "labels": {"a": report.label_a, "b": report.label_b},
        "options": [{"id": o.id, "label": o.label} for o in report.options],
        "panel_a": report.panel_a,
        "panel_b": report.panel_b,
        "retained_personas": report.retained_personas,
        "added_personas": report.added_personas,
        "removed_personas": report.removed_personas,
        "shifts": [
            {"persona": s.persona_name, "from": s.from_option, "to": s.to_option}
            for s in report.shifts
        ],
        "stable": [{"persona": s.persona_name, "option": s.option} for s in report.stable],
        "tally_a": _tally_dict(report.tally_a),
        "tally_b": _tally_dict(report.tally_b),
        "coalition_a": {str(k): v for k, v in sorted(report.coalition_a.items())},
        "coalition_b": {str(k): v for k, v in sorted(report.coalition_b.items())},
    }
