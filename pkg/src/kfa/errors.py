"""Exception hierarchy. Each class carries the CLI exit code for its error class."""


class KfaError(Exception):
    exit_code = 4


class InputError(KfaError, ValueError):
    """Malformed or inconsistent input (shapes, ranges, schema)."""

    exit_code = 2


class DegenerateDataError(KfaError, ValueError):
    """Input is well-formed but the requested quantity is undefined on it."""

    exit_code = 3
