"""Shared exception base for the package.

Every error raised on purpose by audiochain derives from AudiochainError, so
callers (and the CLI) can tell deliberate failures from genuine bugs.
"""


class AudiochainError(Exception):
    pass
