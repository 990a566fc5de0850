"""
Error types for catlab.

Every error raised on purpose by the library derives from CatlabError so that
command entry points can report it and exit nonzero.
"""


class CatlabError(Exception):
    """Base class for all catlab errors."""


class ZeroRow(CatlabError):
    """A row could not be normalized because its norm is below the floor."""

    def __init__(self, index: int, norm: float = 0.0):
        self.index = index
        self.norm = norm
        super().__init__(f"Row {index} has norm {norm:.3e}, cannot normalize")


class EmptyVocab(CatlabError):
    """A vocabulary with no tokens was supplied."""


class TooLarge(CatlabError):
    """An exhaustive enumeration would exceed its guard."""


class InfeasibleSpec(CatlabError):
    """A task or vocabulary request cannot be satisfied."""


class LengthMismatch(CatlabError):
    """Predicted answers do not line up with the expected answers."""


class NonTermination(CatlabError):
    """Autoregressive decoding did not stop within its step budget."""


class StructureViolation(CatlabError):
    """A model is not of the form an audit requires."""


class DegenerateVocab(CatlabError):
    """A vocabulary violates the separation assumption (Δ = 0 or δ = 0)."""


class SignatureNotUnique(CatlabError):
    """Two N-grams share a signature under the chosen query filter."""


class InvalidConfig(CatlabError):
    """An experiment configuration is malformed or out of range."""
