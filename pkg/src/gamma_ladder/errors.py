"""Exception types raised by the public API.

Every error that callers are expected to catch derives from GammaLadderError,
so `except GammaLadderError` separates domain failures from genuine bugs.
"""

from __future__ import annotations


class GammaLadderError(Exception):
    """Base class for all domain errors raised by this package."""


# ---------------------------------------------------------------------------
# chain construction and chain-level functionals


class NotIrreducibleError(GammaLadderError):
    """The positive-rate digraph is not strongly connected."""


class NegativeRateError(GammaLadderError):
    """A jump rate was negative."""


class NotReversibleError(GammaLadderError):
    """An operation requiring detailed balance was given a non-reversible chain."""


class NonPositiveTestFunctionError(GammaLadderError):
    """A test function that must be strictly positive had a non-positive entry."""


class EmptySubsetError(GammaLadderError):
    """A state subset that must be nonempty was empty."""


class DisconnectedSubsetError(GammaLadderError):
    """A subset that must induce a connected subgraph does not."""


class TooLargeError(GammaLadderError):
    """Input exceeds the documented size cap of an exact (dense) routine."""


# ---------------------------------------------------------------------------
# trace chains, harmonic solves, capacities


class EmptyTraceSetError(GammaLadderError):
    """The trace target set was empty."""


class SingularInteriorBlockError(GammaLadderError):
    """The interior block of the generator was singular; the complement of the
    trace set does not drain into it (should not happen for irreducible input)."""


class OverlappingSetsError(GammaLadderError):
    """Two state sets that must be disjoint overlap."""


class SingularSystemError(GammaLadderError):
    """A linear system that should be uniquely solvable was singular."""


# ---------------------------------------------------------------------------
# hierarchy / ladder


class NotClosedClassError(GammaLadderError):
    """The given subset is not a closed irreducible class of the chain."""


class H2ViolationError(GammaLadderError):
    """Closed classes of one ladder level do not match the states of the next."""


class H3ViolationError(GammaLadderError):
    """The top ladder level does not have a unique closed irreducible class."""


class OptimizerNotConvergedError(GammaLadderError):
    """The variational optimizer failed to converge; carries the best bound."""

    def __init__(self, message: str, best_value: float):
        super().__init__(message)
        self.best_value = best_value


class InfeasibleLiftError(GammaLadderError):
    """A measure admits no valley-mixture representation (reported, not raised
    by lift_functional, which returns +inf instead)."""


# ---------------------------------------------------------------------------
# potentials and landscape analysis


class PotentialSyntaxError(GammaLadderError):
    """Expression could not be parsed; carries the offending position."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class UnknownSymbolError(GammaLadderError):
    """Expression used a symbol outside the allowed vocabulary."""


class NotPeriodicError(GammaLadderError):
    """Expression is not 1-periodic in every coordinate."""


class DegenerateCriticalError(GammaLadderError):
    """A critical point has a Hessian eigenvalue below the nondegeneracy floor."""


class DescentAmbiguousError(GammaLadderError):
    """Steepest descent from a saddle could not be attached to a well."""


class NotASaddleError(GammaLadderError):
    """The given point is not a critical point of the potential."""


class EpsilonTooLargeError(GammaLadderError):
    """Well radius parameter violates 0 < eps < h - max_k F(m_k)."""


class GridTooLargeError(GammaLadderError):
    """Requested lattice exceeds the documented size cap."""


class ValidationFailedError(GammaLadderError):
    """A downstream operation refused to run on a failed assumption report."""


# ---------------------------------------------------------------------------
# verification tables and CLI


class InsufficientRowsError(GammaLadderError):
    """A fit was requested on fewer than three table rows."""


class ConfigError(GammaLadderError):
    """Run configuration is malformed; the message names the offending field."""


class IoError(GammaLadderError):
    """Report artifacts could not be written to the output directory."""
