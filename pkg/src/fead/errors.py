"""Shared exception hierarchy; the CLI maps these onto exit codes."""


class FeadError(Exception):
    """Base class for all package errors."""


class InputError(FeadError):
    """Malformed or inconsistent input data (CLI exit code 2)."""


class ConfigError(FeadError):
    """Invalid configuration or parameters (CLI exit code 3)."""
