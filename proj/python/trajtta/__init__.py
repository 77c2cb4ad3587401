"""Trajectory-conditioned test-time adaptation core."""

from ._core import (
    ArgumentError,
    ConfigError,
    DomainError,
    Error,
    IoError,
    ShapeError,
    TrainingError,
    adjoint_operator,
    apply_operator,
    dice,
    ece,
    ensemble,
    entropy,
    generate_case,
    operator_ids,
    prauc,
    reconstruct,
    schedule,
)

__all__ = [
    "ArgumentError",
    "ConfigError",
    "DomainError",
    "Error",
    "IoError",
    "ShapeError",
    "TrainingError",
    "adjoint_operator",
    "apply_operator",
    "dice",
    "ece",
    "ensemble",
    "entropy",
    "generate_case",
    "operator_ids",
    "prauc",
    "reconstruct",
    "schedule",
]
