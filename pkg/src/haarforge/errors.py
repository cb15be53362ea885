"""Typed errors shared across the package.

Every failure mode that callers are expected to branch on gets its own class;
plain ValueError/TypeError are reserved for programming mistakes.
"""

from __future__ import annotations


class HaarforgeError(Exception):
    """Base class for all package errors."""


class EmptySymbolOrderError(HaarforgeError):
    """The empty symbol has no order position; it is ordered first externally."""


class UnsupportedDimensionError(HaarforgeError):
    """Operation defined only for a specific number of parameters."""


class InvalidCollectionError(HaarforgeError):
    """A collection violates a structural requirement (overlap, depth, kind)."""


class InvalidArgumentError(HaarforgeError, ValueError):
    """An argument is outside its documented domain."""


class DepthExhaustedError(HaarforgeError):
    """The depth cap is too small for the requested construction."""


class PruneBudgetError(HaarforgeError):
    """A requested drop exceeds the per-layer measure-loss budget."""


class SerializationError(HaarforgeError):
    """Malformed serialized payload."""


class ResolutionError(HaarforgeError):
    """Grid resolution too coarse to represent the requested object."""


class MeanNotZeroError(HaarforgeError):
    """A mean-zero convention was requested for data with nonzero axis means."""


class UnsupportedExactError(InvalidArgumentError):
    """Exact operator norms exist only for the endpoint exponents 1 and sup."""


class IncompleteMultiplierError(HaarforgeError):
    """A multiplier symbol is missing entries on the requested truncation."""


class GameContractError(HaarforgeError):
    """A game move violates the rules of the reproduction game."""


class StrategyFailedError(HaarforgeError):
    """A responder strategy cannot satisfy its round obligations."""


class PersistenceUnattainableError(StrategyFailedError):
    """No partition side retains enough persistent measure."""


class StabilizationError(HaarforgeError):
    """No subtree satisfies the diagonal stabilization threshold."""


class NeumannCorrectionError(HaarforgeError):
    """The composed operator is too far from the identity to invert."""


class ConfigError(HaarforgeError, ValueError):
    """Invalid run configuration (depth caps, missing seed, bad flags)."""
