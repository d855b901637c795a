"""Shared builders for tests: bundled data paths, a fake clock and random debates."""
from __future__ import annotations

import itertools
import random
import threading
from dataclasses import dataclass, replace
from datetime import datetime, timedelta, timezone

from adept import data_dir
from adept.backend import ScriptedBackend, script_from_document
from adept.config import (
    BackendKind,
    ModelConfig,
    PersonaSpec,
    PolicyOption,
    ScenarioSpec,
    load_model_config,
    load_personas,
    load_scenario,
)
from adept.engine import run_debate
from adept.records import DebateTrace

DATA = data_dir()
SCENARIO_PATH = DATA / "scenarios" / "ventilator_triage.yaml"
PANEL_1 = DATA / "panels" / "debate_1"
PANEL_2 = DATA / "panels" / "debate_2"
SCRIPT_1 = DATA / "fixtures" / "debate_1.script.yaml"
SCRIPT_2 = DATA / "fixtures" / "debate_2.script.yaml"
SCRIPTED_CONFIG = DATA / "configs" / "scripted.yaml"

SCRIPTED = ModelConfig(BackendKind.SCRIPTED, "scripted-test")

DRA = "The Disability-Rights Advocate"
NURSE = "The Front-Line ICU Nurse"
CATHOLIC = "The Catholic Bioethicist"
CARE = "The Care Ethicist"
VIRTUE = "The Virtue Ethicist"
CONSEQ = "The Consequentialist"
DEONT = "The Deontologist"
LEGAL = "The Legal Arbiter"


class FakeClock:
    """Strictly increasing ISO timestamps; safe to call from worker threads."""

    def __init__(self, start: datetime | None = None):
        self._start = start or datetime(2025, 6, 1, tzinfo=timezone.utc)
        self._n = itertools.count()
        self._lock = threading.Lock()

    def __call__(self) -> str:
        with self._lock:
            n = next(self._n)
        return (self._start + timedelta(milliseconds=n)).isoformat(timespec="microseconds")


def fixture_trace(n: int, parallel: bool = False) -> DebateTrace:
    """Run the bundled debate ``n`` (1 or 2) against its fixture script."""
    from adept.backend import load_script

    panel, script = {1: (PANEL_1, SCRIPT_1), 2: (PANEL_2, SCRIPT_2)}[n]
    cfg = load_model_config(SCRIPTED_CONFIG)
    if parallel:
        cfg = replace(cfg, parallel_independent_calls=True)
    return run_debate(load_scenario(SCENARIO_PATH), load_personas(panel), cfg, load_script(script), FakeClock())


# -- random debates -------------------------------------------------------

WORDS = (
    "triage capacity fairness prognosis lottery duty care equity trust law review "
    "benefit harm survival dignity resource priority consent burden risk"
).split()


def make_scenario(k: int, title: str = "Random scenario") -> ScenarioSpec:
    return ScenarioSpec(
        title=title,
        narrative="A shortage forces a choice between fixed policies.",
        options=tuple(PolicyOption(i, f"Policy {i}", f"Description of policy {i}.") for i in range(1, k + 1)),
    )


def make_persona(name: str, forbidden: bool = True) -> PersonaSpec:
    return PersonaSpec(
        name=name,
        principle=f"{name} reasons from a single stated principle.",
        approach=("Weigh the options.",),
        core_questions=("What matters most here?",),
        decision_criteria=("Pick the defensible option.",),
        forbidden_moves=("Inventing new options.",) if forbidden else (),
    )


def _sentence(rng: random.Random, n: int = 8) -> str:
    return " ".join(rng.choice(WORDS) for _ in range(n)).capitalize() + "."


def _tag(rng: random.Random, option: int) -> str:
    opener = "".join(c.upper() if rng.random() < 0.3 else c for c in "<vote>")
    closer = "".join(c.upper() if rng.random() < 0.3 else c for c in "</vote>")
    pad = lambda: rng.choice(["", " ", "\n", "\t ", "  "])  # noqa: E731
    return f"{opener}{pad()}{option}{pad()}{closer}"


BALLOT_MODES = ("valid", "valid", "valid", "duplicate", "retry_ok", "no_tag", "invalid")


@dataclass
class RandomDebate:
    seed: int
    scenario: ScenarioSpec
    personas: list[PersonaSpec]
    script: dict
    expected: dict[str, int | None]   # persona -> counted option (None = abstained)
    expected_attempts: dict[str, int]

    def backend(self) -> ScriptedBackend:
        return script_from_document(self.script, f"<seed {self.seed}>")

    def run(self, parallel: bool = False, clock=None) -> DebateTrace:
        cfg = ModelConfig(
            BackendKind.SCRIPTED, "scripted-test", parallel_independent_calls=parallel
        )
        return run_debate(self.scenario, self.personas, cfg, self.backend(), clock or FakeClock())


def random_debate(seed: int) -> RandomDebate:
    """A scripted debate with 2-8 personas and 2-6 options.

    Every response carries a unique marker so containment and secrecy can
    be checked by substring search.
    """
    rng = random.Random(seed)
    k = rng.randint(2, 6)
    n = rng.randint(2, 8)
    names = [f"Persona {i} {rng.choice(WORDS).title()}" for i in range(n)]
    personas = [make_persona(name, forbidden=rng.random() < 0.7) for name in names]
    responses: dict[str, dict] = {}
    expected: dict[str, int | None] = {}
    attempts: dict[str, int] = {}
    for i, name in enumerate(names):
        mark = f"s{seed}p{i}"
        opening = f"{_sentence(rng)} [open-{mark}]"
        rebuttal = f"{_sentence(rng)} [reb-{mark}]"
        mode = rng.choice(BALLOT_MODES)
        choice = rng.randint(1, k)
        body = f"{_sentence(rng, 12)} [ballot-{mark}]"
        if mode == "valid":
            ballots = [f"{_tag(rng, choice)} {body}"]
            expected[name], attempts[name] = choice, 1
        elif mode == "duplicate":
            other = rng.randint(1, k)
            ballots = [f"{_tag(rng, choice)} {body} {_tag(rng, other)}"]
            expected[name], attempts[name] = choice, 1
        elif mode == "retry_ok":
            ballots = [body, f"{body} [retry-{mark}] {_tag(rng, choice)}"]
            expected[name], attempts[name] = choice, 2
        elif mode == "no_tag":
            ballots = [body, f"{body} [retry-{mark}]"]
            expected[name], attempts[name] = None, 2
        else:
            bad = k + rng.randint(1, 5)
            ballots = [f"<vote>{bad}</vote> {body}", f"<vote>{bad}</vote> {body} [retry-{mark}]"]
            expected[name], attempts[name] = None, 2
        responses[name] = {"opening": [opening], "rebuttal": [rebuttal], "ballot": ballots}
    script = {
        "format": "adept-script/1",
        "responses": responses,
        "summary": [f"Summary for seed {seed}. {_sentence(rng)}"],
    }
    return RandomDebate(seed, make_scenario(k, f"Random scenario {seed}"), personas, script, expected, attempts)


# -- acceptance bookkeeping -----------------------------------------------

ACCEPTANCE: dict[int, tuple[str, str]] = {}


class criterion:
    """Context manager recording one PASS/FAIL/SKIP line per acceptance criterion."""

    def __init__(self, number: int, title: str):
        self.number = number
        self.title = title
        self.detail = ""

    def __enter__(self) -> "criterion":
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        if exc_type is None:
            status = "PASS"
        elif exc_type.__name__ == "Skipped":
            status, self.detail = "SKIP", str(exc)
        else:
            status = "FAIL"
            self.detail = self.detail or f"{exc_type.__name__}: {exc}".splitlines()[0][:160]
        ACCEPTANCE[self.number] = (status, f"{self.title}" + (f" ({self.detail})" if self.detail else ""))
        line = f"ACCEPTANCE {self.number}: {status} - {ACCEPTANCE[self.number][1]}"
        print(line)
        return False
