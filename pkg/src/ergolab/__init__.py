"""Desk-scale laboratory for nonsingular dynamics: product measures, odometers,
Gaussian affine actions and skew products."""

from ergolab.errors import (
    DomainError,
    ErgolabError,
    FixedSpaceObstruction,
    NoSolution,
    NoWitness,
    Undecided,
    WitnessUnavailable,
)

__version__ = "0.1.0"

__all__ = [
    "DomainError",
    "ErgolabError",
    "FixedSpaceObstruction",
    "NoSolution",
    "NoWitness",
    "Undecided",
    "WitnessUnavailable",
]
