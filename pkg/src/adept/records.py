"""Data records that make up a debate trace.

These live in one module because prompts, the engine, analysis and
persistence all pass them around; the behaviour lives elsewhere.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from .config import ModelConfig, PersonaSpec, ScenarioSpec

TRACE_FORMAT = "adept-trace/1"


class Phase(str, Enum):
    OPENING = "opening"
    REBUTTAL = "rebuttal"
    BALLOT = "ballot"
    SUMMARY = "summary"


DIALOGUE_PHASES = (Phase.OPENING, Phase.REBUTTAL)


class Role(str, Enum):
    SYSTEM = "system"
    USER = "user"


@dataclass(frozen=True)
class ChatMessage:
    role: Role
    content: str

    def __post_init__(self) -> None:
        if not self.content:
            raise ValueError("chat message content must be non-empty")


@dataclass(frozen=True)
class PromptBundle:
    persona_name: str
    phase: Phase
    messages: tuple[ChatMessage, ...]
    template_version: str

    def __post_init__(self) -> None:
        if not self.messages or self.messages[0].role is not Role.SYSTEM:
            raise ValueError("a prompt bundle must start with a system message")

    @property
    def text(self) -> str:
        return "\n".join(m.content for m in self.messages)


@dataclass
class Utterance:
    seq: int
    phase: Phase
    persona_name: str
    prompt: PromptBundle
    response: str
    started_at: str
    ended_at: str
    finish_reason: str = "stop"
    token_usage: dict | None = None


class BallotStatus(str, Enum):
    VALID = "valid"
    ABSTAINED_NO_TAG = "abstained_no_tag"
    ABSTAINED_INVALID_OPTION = "abstained_invalid_option"


@dataclass
class BallotAttempt:
    prompt: PromptBundle
    response: str
    started_at: str
    ended_at: str
    finish_reason: str = "stop"
    token_usage: dict | None = None


@dataclass
class Ballot:
    persona_name: str
    prompt: PromptBundle
    raw_response: str
    parsed_option: int | None
    justification: str
    attempts: int
    status: BallotStatus
    history: list[BallotAttempt] = field(default_factory=list)

    def __post_init__(self) -> None:
        if (self.parsed_option is not None) != (self.status is BallotStatus.VALID):
            raise ValueError("parsed_option must be present exactly when status is valid")
        if self.attempts < 1:
            raise ValueError("a ballot needs at least one attempt")

    @property
    def started_at(self) -> str:
        return self.history[0].started_at if self.history else ""

    @property
    def ended_at(self) -> str:
        return self.history[-1].ended_at if self.history else ""


@dataclass(frozen=True)
class Tally:
    counts: dict[int, int]
    valid_count: int
    abstentions: int
    majority_option: int | None
    plurality_options: tuple[int, ...]

    @property
    def panel_size(self) -> int:
        return self.valid_count + self.abstentions

    def describe(self, option_id: int) -> str:
        """Vote count as printed in tables, e.g. ``4 (majority)``."""
        n = self.counts.get(option_id, 0)
        return f"{n} (majority)" if option_id == self.majority_option else str(n)


class TraceStatus(str, Enum):
    COMPLETE = "complete"
    ABORTED = "aborted"


@dataclass
class DebateTrace:
    scenario: ScenarioSpec
    personas: list[PersonaSpec]
    model_config: ModelConfig
    template_version: str
    utterances: list[Utterance] = field(default_factory=list)
    ballots: list[Ballot] = field(default_factory=list)
    tally: Tally | None = None
    summary_prompt: PromptBundle | None = None
    summary_text: str = ""
    created_at: str = ""
    status: TraceStatus = TraceStatus.COMPLETE
    abort_reason: str | None = None
    warnings: list[str] = field(default_factory=list)
    format_version: str = TRACE_FORMAT

    @property
    def persona_names(self) -> list[str]:
        return [p.name for p in self.personas]

    def utterances_for(self, phase: Phase) -> list[Utterance]:
        return [u for u in self.utterances if u.phase is phase]

    def ballot_for(self, name: str) -> Ballot | None:
        for b in self.ballots:
            if b.persona_name == name:
                return b
        return None

    @property
    def is_complete(self) -> bool:
        return (
            self.status is TraceStatus.COMPLETE
            and self.tally is not None
            and len(self.ballots) == len(self.personas)
            and len(self.utterances) == 2 * len(self.personas)
        )
