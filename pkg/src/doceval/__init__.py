"""Evaluation engine and scenario simulator for dynamic object comprehension."""

from .errors import (
    ConfigError,
    DocEvalError,
    EmptyTrajectory,
    InvariantViolation,
    ParseError,
    PlacementError,
    SchemaError,
    ValidationError,
)
from .metrics_doc import EvaluationConfig
from .report import evaluate
from .scenario import OOS, load_predictions, load_scenario, save_predictions, save_scenario

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DocEvalError",
    "EmptyTrajectory",
    "EvaluationConfig",
    "InvariantViolation",
    "OOS",
    "ParseError",
    "PlacementError",
    "SchemaError",
    "ValidationError",
    "evaluate",
    "load_predictions",
    "load_scenario",
    "save_predictions",
    "save_scenario",
]
