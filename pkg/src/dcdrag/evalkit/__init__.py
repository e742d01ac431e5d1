"""Strict-binary evaluation suite: metrics, judges, corpus/QAC generation
and the experiment runner comparing the hierarchical and naive pipelines."""

from .metrics import Aggregates, ArcVerdict, CrVerdict, FaVerdict, RcsVerdict, aggregate
from .runner import EvalRecord, EvalReport, JudgeSuite, run_eval

__all__ = [
    "Aggregates",
    "ArcVerdict",
    "CrVerdict",
    "FaVerdict",
    "RcsVerdict",
    "aggregate",
    "EvalRecord",
    "EvalReport",
    "JudgeSuite",
    "run_eval",
]
