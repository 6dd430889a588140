class ErgolabError(Exception):
    """Base class for numerical failures reported by the library."""


class DomainError(ErgolabError, ValueError):
    """An argument lies outside the domain of the operation."""


class NoWitness(ErgolabError):
    """No finite witness exists at the given truncation."""


class WitnessUnavailable(ErgolabError):
    """The hypotheses needed to build a witness fail at this truncation."""


class NoSolution(ErgolabError):
    """A linear equation has no solution within tolerance."""


class FixedSpaceObstruction(ErgolabError):
    """The vector has a component in the fixed space of the operator."""


class Undecided(ErgolabError):
    """No candidate model explains the data within the residual threshold."""
