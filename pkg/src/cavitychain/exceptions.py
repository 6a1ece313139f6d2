"""Error types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, NumericError and its
subclasses -> 3, CapacityError -> 4.
"""

from __future__ import annotations


class CavityChainError(Exception):
    """Base class for all package-specific errors."""


class CapacityError(CavityChainError):
    """Requested object would exceed the addressable-memory guard."""


class ConfigError(CavityChainError):
    """Invalid configuration input. Carries every detected problem."""

    def __init__(self, problems: list[str] | str):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("\n".join(self.problems))


class NumericError(CavityChainError):
    """Numerical failure during integration or statistics."""


class IntegrationError(NumericError):
    """Non-finite amplitudes produced by a time step."""


class DegenerateJumpError(NumericError):
    """Every jump-channel weight vanished at a triggered jump."""


class SupportError(NumericError):
    """Divergence evaluated where absolute continuity fails."""


class DegenerateReferenceError(NumericError):
    """Fidelity reference divergence is numerically zero."""


class InsufficientSamplesError(NumericError):
    """Fewer qualifying trajectories than the configured floor."""

    def __init__(self, needed: int, got: int):
        self.needed = needed
        self.got = got
        super().__init__(f"need at least {needed} qualifying trajectories, got {got}")
