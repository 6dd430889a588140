"""Shared numerical plumbing: compensated sums, seed streams, trace classification."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np


class Neumaier:
    """Compensated running sum (Kahan-Babuska / Neumaier variant)."""

    __slots__ = ("total", "comp")

    def __init__(self, total: float = 0.0, comp: float = 0.0):
        self.total = float(total)
        self.comp = float(comp)

    def add(self, x: float) -> None:
        t = self.total + x
        if abs(self.total) >= abs(x):
            self.comp += (self.total - t) + x
        else:
            self.comp += (x - t) + self.total
        self.total = t

    @property
    def value(self) -> float:
        return self.total + self.comp


def rng_for(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for stream ``key`` under root ``seed``.

    Streams are addressed by key rather than drawn sequentially, so the
    partition of work across processes never changes the numbers produced.
    """
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def normal_cdf(x):
    from scipy.special import ndtr

    return ndtr(x)


class TraceClass(str, enum.Enum):
    CONVERGENT = "ConvergentLike"
    DIVERGENT = "DivergentLike"
    UNDECIDED = "Undecided"


# last-half increment below this (absolute) counts as a converged series
CONVERGENCE_TOL = 1e-3
# log-log slope of S_K over the last half at or above this counts as divergence
DIVERGENCE_SLOPE = 0.75


@dataclass
class HopfTrace:
    """Partial sums S_K of a positive series, stored in log space."""

    log_partials: np.ndarray
    classification: TraceClass = TraceClass.UNDECIDED
    slope: float = float("nan")
    tail_increment: float = float("nan")
    meta: dict = field(default_factory=dict)

    @property
    def partials(self) -> np.ndarray:
        with np.errstate(over="ignore"):
            return np.exp(self.log_partials)

    @property
    def K(self) -> int:
        return len(self.log_partials)


def classify_log_partials(log_partials, tol: float = CONVERGENCE_TOL) -> HopfTrace:
    """Label a Hopf trace.

    ConvergentLike when the sum added over the last half of the trace is below
    ``tol``; otherwise DivergentLike when the log-log slope of S_K over the
    last half is at least ``DIVERGENCE_SLOPE``; otherwise Undecided.

    The convergence test is absolute on purpose: every summand in a tail
    smaller than ``tol`` is below 1, which is what makes the label monotone
    under the scaling ``f -> t f``.
    """
    lp = np.asarray(log_partials, dtype=float)
    K = len(lp)
    if K == 0:
        raise ValueError("empty trace")
    half = K // 2
    if half == 0:
        return HopfTrace(lp, TraceClass.UNDECIDED)
    hi, lo = lp[-1], lp[half - 1]
    # S_K - S_half computed without overflow
    if hi == lo:
        tail = 0.0
    else:
        tail = math.exp(hi + math.log(-math.expm1(lo - hi))) if hi < 700 else math.inf
    ks = np.arange(half, K + 1, dtype=float)
    if len(ks) >= 2 and K >= 4:
        slope = float(np.polyfit(np.log(ks), lp[half - 1 :], 1)[0])
    else:
        slope = float("nan")
    if tail < tol:
        cls = TraceClass.CONVERGENT
    elif slope >= DIVERGENCE_SLOPE:
        cls = TraceClass.DIVERGENT
    else:
        cls = TraceClass.UNDECIDED
    return HopfTrace(lp, cls, slope, tail)


def log_cumsum_exp(log_terms, axis: int = -1) -> np.ndarray:
    """log of the running sums of exp(log_terms) along ``axis``."""
    return np.logaddexp.accumulate(np.asarray(log_terms, dtype=float), axis=axis)
