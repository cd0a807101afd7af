"""Shared exception types.

DataError marks problems with user-supplied inputs (malformed files, bad
dimensions, unknown IDs); the CLI maps it to exit code 2. Everything else
is treated as an internal failure (exit code 1).
"""


class DataError(ValueError):
    """Invalid or inconsistent user-supplied data."""
