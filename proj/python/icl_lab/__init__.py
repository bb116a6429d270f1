"""Masked-prediction transformer laboratory."""

from ._core import (
    ConfigError,
    InfiniteDivergence,
    ShapeError,
    TrainingDiverged,
    canonical_config,
    closed_form_value_matrix,
    command_names,
    config_keys,
    encode,
    exact_posterior,
    forward,
    kl_divergence,
    parse_sequence_line,
    position_weights,
    run_command,
    sample_train_sequence,
)

__all__ = [
    "ConfigError",
    "InfiniteDivergence",
    "ShapeError",
    "TrainingDiverged",
    "canonical_config",
    "closed_form_value_matrix",
    "command_names",
    "config_keys",
    "encode",
    "exact_posterior",
    "forward",
    "kl_divergence",
    "parse_sequence_line",
    "position_weights",
    "run_command",
    "sample_train_sequence",
]
