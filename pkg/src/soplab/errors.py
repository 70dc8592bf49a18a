"""Exception types shared across the package."""


class SoplabError(Exception):
    """Base class for all package-specific errors."""


class ParameterError(SoplabError, ValueError):
    """An argument is outside its documented domain."""


class MembershipError(SoplabError, KeyError):
    """A node, token, or map was referenced outside the structure that owns it."""

    def __str__(self) -> str:  # KeyError quotes its repr; keep messages readable
        return str(self.args[0]) if self.args else ""


class CapacityError(SoplabError, RuntimeError):
    """A generation request cannot be satisfied; the message names the binding constraint."""


class DecodeError(SoplabError, ValueError):
    """A token line failed to decode.

    ``position`` is the index of the first offending token (-1 when the
    whole line is unusable) and ``reason`` states what was expected there.
    """

    def __init__(self, position: int, reason: str):
        super().__init__(f"token {position}: {reason}" if position >= 0 else reason)
        self.position = position
        self.reason = reason
