"""Error type shared across the package.

Every failure that callers may want to handle programmatically carries a
stable string code (e.g. ``SPAN_OUT_OF_BOUNDS``) next to the human-readable
message. The CLI serializes these codes into its machine-readable error
output.
"""

from __future__ import annotations


class EvinferError(Exception):
    """Exception with a stable machine-readable error code."""

    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code
        self.message = message
