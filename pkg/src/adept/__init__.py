"""Structured persona debates: openings, rebuttals, secret ballot, tally.

The bundled scenario, personas, panels and fixture scripts live under
``data_dir()``.
"""
from __future__ import annotations

from importlib import resources
from pathlib import Path

from .analysis import compare, compute_tally, render_comparison
from .backend import LiveBackend, ScriptedBackend, load_script
from .config import load_model_config, load_personas, load_scenario
from .engine import parse_vote, run_debate
from .persistence import canonical_hash, load_trace, persist_outputs, render_report

__version__ = "0.1.0"


def data_dir() -> Path:
    """Directory holding the bundled YAML data."""
    return Path(str(resources.files("adept") / "data"))


__all__ = [
    "LiveBackend",
    "ScriptedBackend",
    "canonical_hash",
    "compare",
    "compute_tally",
    "data_dir",
    "load_model_config",
    "load_personas",
    "load_scenario",
    "load_script",
    "load_trace",
    "parse_vote",
    "persist_outputs",
    "render_comparison",
    "render_report",
    "run_debate",
]
