from ._relkit import (
    ConfigError,
    Error,
    LookupError,
    ParseError,
    StateError,
    ValidationError,
    canonical_config,
    load_checkpoint,
    one_shot_image_ids,
    recall_at_k,
    run,
)

__all__ = [
    "ConfigError",
    "Error",
    "LookupError",
    "ParseError",
    "StateError",
    "ValidationError",
    "canonical_config",
    "load_checkpoint",
    "one_shot_image_ids",
    "recall_at_k",
    "run",
]
