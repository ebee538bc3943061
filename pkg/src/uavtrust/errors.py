"""Errors shared across modules."""

from __future__ import annotations


class ConfigError(ValueError):
    """Invalid configuration; ``field`` is a dotted path into the config."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field
        self.message = message
