"""Uncertainty-relation witnesses for superposition size and EPR correlations.

Submodules: :mod:`hilbert` (spaces, operators, states), :mod:`states`
(standard state factories and specs), :mod:`inference` (conditioning on
remote outcomes), :mod:`criteria` (reports), :mod:`sampling` (finite-sample
estimation), :mod:`oracles` (independent checks) and :mod:`cli`.
"""

from . import criteria, errors, hilbert, inference, oracles, sampling, states
from .criteria import CRITERION_IDS, CriterionReport, evaluate, evaluate_spec
from .states import StateSpec, build

__version__ = "0.1.0"

__all__ = [
    "CRITERION_IDS",
    "CriterionReport",
    "StateSpec",
    "build",
    "criteria",
    "errors",
    "evaluate",
    "evaluate_spec",
    "hilbert",
    "inference",
    "oracles",
    "sampling",
    "states",
]
