from ._core import (
    ConfigError,
    DataError,
    Error,
    TransportError,
    align_probs,
    apply_platt,
    auc_roc,
    brier,
    brier_ref,
    build_reflective_prompt,
    ece,
    eta_squared,
    fit_platt,
    kept_labels,
    multisample_token_confidence,
    parse_reflective_response,
    skill_score,
    token_diff,
    tokenize,
)

__all__ = [
    "ConfigError",
    "DataError",
    "Error",
    "TransportError",
    "align_probs",
    "apply_platt",
    "auc_roc",
    "brier",
    "brier_ref",
    "build_reflective_prompt",
    "ece",
    "eta_squared",
    "fit_platt",
    "kept_labels",
    "multisample_token_confidence",
    "parse_reflective_response",
    "skill_score",
    "token_diff",
    "tokenize",
]
