"""Laws on the line and on finite cyclic groups: Hellinger distance, convolution,
Kakutani's product test and asymptotic translation (quasi-)invariance of
normal families."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from numbers import Rational
from typing import Callable, Sequence, Union

import numpy as np

from ergolab._numerics import normal_cdf
from ergolab.errors import DomainError, NoWitness

Weight = Union[float, Fraction]


@dataclass(frozen=True)
class Normal:
    mean: float
    variance: float

    def __post_init__(self):
        if not self.variance > 0:
            raise DomainError(f"variance must be positive, got {self.variance}")

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        return -0.5 * (x - self.mean) ** 2 / self.variance - 0.5 * math.log(2 * math.pi * self.variance)

    def pdf(self, x):
        return np.exp(self.logpdf(x))


def _is_exact(w) -> bool:
    return isinstance(w, Rational)


@dataclass(frozen=True)
class FiniteMeasure:
    """Probability on Z/dZ. Weights stay exact when given as Fractions."""

    modulus: int
    weights: tuple

    def __post_init__(self):
        w = tuple(self.weights)
        object.__setattr__(self, "weights", w)
        if self.modulus < 1 or len(w) != self.modulus:
            raise DomainError(f"need {self.modulus} weights, got {len(w)}")
        if any(x < 0 for x in w):
            raise DomainError("weights must be nonnegative")
        if self.exact:
            if sum(w) != 1:
                raise DomainError(f"weights sum to {sum(w)}, not 1")
        elif abs(math.fsum(float(x) for x in w) - 1.0) > 1e-12:
            raise DomainError("weights must sum to 1 within 1e-12")

    @property
    def exact(self) -> bool:
        return all(_is_exact(x) for x in self.weights)

    @classmethod
    def uniform(cls, d: int, exact: bool = True) -> "FiniteMeasure":
        if exact:
            return cls(d, (Fraction(1, d),) * d)
        return cls(d, (1.0 / d,) * d)

    @classmethod
    def point_mass(cls, d: int, j: int) -> "FiniteMeasure":
        return cls(d, tuple(Fraction(int(i == j % d)) for i in range(d)))

    @classmethod
    def from_array(cls, p) -> "FiniteMeasure":
        p = np.asarray(p, dtype=float)
        return cls(len(p), tuple(float(x) for x in p / p.sum()))

    def __getitem__(self, j: int) -> Weight:
        return self.weights[j % self.modulus]

    def shifted(self, k: int = 1) -> "FiniteMeasure":
        """The image measure under x -> x + k, i.e. j -> mu(j - k)."""
        d = self.modulus
        return FiniteMeasure(d, tuple(self.weights[(j - k) % d] for j in range(d)))

    def mass(self, points) -> Weight:
        return sum((self.weights[j] for j in points), Fraction(0) if self.exact else 0.0)

    def as_array(self) -> np.ndarray:
        return np.array([float(x) for x in self.weights])


@dataclass(frozen=True)
class HellingerReport:
    h2: float
    tv_lower: float
    tv_upper: float

    @classmethod
    def from_h2(cls, h2: float) -> "HellingerReport":
        lo, hi = tv_bounds(h2)
        return cls(h2, lo, hi)


def hellinger_sq_normal(p: Normal, q: Normal) -> float:
    """Squared Hellinger distance between two normal laws (closed form)."""
    s2 = p.variance + q.variance
    log_aff = 0.5 * math.log(2 * p.std * q.std / s2) - (p.mean - q.mean) ** 2 / (4 * s2)
    return min(max(-math.expm1(log_aff), 0.0), 1.0)


def _check_same_modulus(p: FiniteMeasure, q: FiniteMeasure) -> None:
    if p.modulus != q.modulus:
        raise DomainError(f"modulus mismatch: {p.modulus} vs {q.modulus}")


def hellinger_sq_discrete(p: FiniteMeasure, q: FiniteMeasure) -> float:
    _check_same_modulus(p, q)
    aff = math.fsum(math.sqrt(float(a) * float(b)) for a, b in zip(p.weights, q.weights))
    return min(max(1.0 - aff, 0.0), 1.0)


def tv_bounds(h2: float) -> tuple[float, float]:
    """Bounds H^2 <= ||p - q|| <= sqrt(2) H on the total variation."""
    if not 0.0 <= h2 <= 1.0:
        raise DomainError(f"squared Hellinger distance must lie in [0, 1], got {h2}")
    return h2, math.sqrt(2.0 * h2)


def total_variation(p: FiniteMeasure, q: FiniteMeasure) -> float:
    """sup_C |p(C) - q(C)|, which for finite measures is half the l1 distance."""
    _check_same_modulus(p, q)
    return 0.5 * math.fsum(abs(float(a) - float(b)) for a, b in zip(p.weights, q.weights))


def convolve_normal(p: Normal, q: Normal) -> Normal:
    return Normal(p.mean + q.mean, p.variance + q.variance)


def convolve_discrete(p: FiniteMeasure, q: FiniteMeasure) -> FiniteMeasure:
    _check_same_modulus(p, q)
    d = p.modulus
    if p.exact and q.exact:
        out = [Fraction(0)] * d
        for j, a in enumerate(p.weights):
            if a:
                for i, b in enumerate(q.weights):
                    out[(i + j) % d] += a * b
        return FiniteMeasure(d, tuple(out))
    pa, qa = p.as_array(), q.as_array()
    out = np.real(np.fft.ifft(np.fft.fft(pa) * np.fft.fft(qa)))
    out = np.clip(out, 0.0, None)
    return FiniteMeasure(d, tuple(float(x) for x in out / out.sum()))


# --- tails of infinite sequences -------------------------------------------
#
# Verdicts about infinite products need the behaviour of the terms beyond the
# supplied list. A tail model is anchored at the last supplied term and
# returns an integral-test bound for the sum of everything after it.

@dataclass(frozen=True)
class ZeroTail:
    def tail_sum(self, terms: Sequence[float]) -> float:
        return 0.0


@dataclass(frozen=True)
class GeometricTail:
    ratio: float

    def tail_sum(self, terms: Sequence[float]) -> float:
        last = float(terms[-1]) if len(terms) else 0.0
        if last == 0.0:
            return 0.0
        if self.ratio >= 1.0:
            return math.inf
        return last * self.ratio / (1.0 - self.ratio)


@dataclass(frozen=True)
class PowerTail:
    """Terms decaying like k^-exponent; summable iff exponent > 1."""

    exponent: float
    margin: float = 0.02

    def tail_sum(self, terms: Sequence[float]) -> float:
        last = float(terms[-1]) if len(terms) else 0.0
        if last == 0.0:
            return 0.0
        if self.exponent <= 1.0 + self.margin:
            return math.inf
        return last * len(terms) / (self.exponent - 1.0)


TailModel = Union[ZeroTail, GeometricTail, PowerTail]


def fit_tail(terms: Sequence[float], zero_tol: float = 0.0) -> TailModel:
    """Pick a tail model from the last half of ``terms``.

    Fits log t_k against log k (power law) and against k (geometric) and keeps
    the one with the smaller residual.
    """
    t = np.asarray([float(x) for x in terms], dtype=float)
    if len(t) == 0:
        return ZeroTail()
    half = t[len(t) // 2 :]
    if np.all(half <= zero_tol):
        return ZeroTail()
    if len(t) < 4 or np.any(half <= 0):
        # too short to fit, or a tail with sporadic zeros: no decay evidence
        return PowerTail(0.0)
    k = np.arange(len(t) - len(half) + 1, len(t) + 1, dtype=float)
    y = np.log(half)
    pw, pres = np.polyfit(np.log(k), y, 1, full=True)[:2]
    gw, gres = np.polyfit(k, y, 1, full=True)[:2]
    pres = float(pres[0]) if len(pres) else 0.0
    gres = float(gres[0]) if len(gres) else 0.0
    if gres < pres and gw[0] < 0:
        return GeometricTail(float(math.exp(gw[0])))
    return PowerTail(float(-pw[0]))


def _resolve_tail(terms, tail, zero_tol) -> TailModel:
    if tail == "auto" or tail is None:
        return fit_tail(terms, zero_tol)
    if isinstance(tail, str):
        raise DomainError(f"unknown tail model {tail!r}")
    return tail


@dataclass
class KakutaniVerdict:
    equivalent: bool
    h2_terms: list
    product_partial: list
    sum_partial: list
    tail: TailModel = field(default_factory=ZeroTail)
    tail_sum: float = 0.0
    # 1 - H^2(mu, nu) for the full products; 0 when singular
    affinity: float = 0.0


def kakutani_test(h2_terms: Sequence[float], tail="auto", tol: float = 1e-15) -> KakutaniVerdict:
    """Decide equivalence of two infinite product measures from per-factor H^2.

    ``tail`` is a tail model or ``"auto"``; terms not above ``tol`` count as
    zero when the tail is fitted.
    """
    terms = [float(h) for h in h2_terms]
    for h in terms:
        if not 0.0 <= h <= 1.0:
            raise DomainError(f"H^2 term outside [0, 1]: {h}")
    prods, sums = [], []
    log_p, s = 0.0, 0.0
    for h in terms:
        s += h
        log_p = log_p + math.log1p(-h) if h < 1.0 else -math.inf
        sums.append(s)
        prods.append(math.exp(log_p))
    if any(h == 1.0 for h in terms):
        return KakutaniVerdict(False, terms, prods, sums, ZeroTail(), math.inf, 0.0)
    model = _resolve_tail(terms, tail, tol)
    rest = model.tail_sum(terms)
    if math.isinf(rest):
        return KakutaniVerdict(False, terms, prods, sums, model, rest, 0.0)
    # prod(1 - h) over the tail is at most exp(-sum h)
    return KakutaniVerdict(True, terms, prods, sums, model, rest, math.exp(log_p - rest))


def h2_terms(fn: Callable[[int], float], n_terms: int) -> list:
    """Evaluate a closed-form term generator at n = 1..n_terms."""
    return [float(fn(n)) for n in range(1, n_terms + 1)]


def ati_normals(variances: Sequence[float], a: float, n: int = 1, tail="auto") -> float:
    """Limit in m of H^2 between the tail convolution from index n and its
    translate by a, for independent normal factors.

    Equals 1 - exp(-a^2 / (8 S)) with S the variance sum from n on, and 0
    when that sum diverges (the family is then ATI at a).
    """
    v = [float(x) for x in variances]
    if any(x <= 0 for x in v):
        raise DomainError("variances must be positive")
    if n < 1 or n > len(v):
        raise DomainError(f"index n={n} outside 1..{len(v)}")
    if a == 0:
        return 0.0
    model = _resolve_tail(v, tail, 0.0)
    S = math.fsum(v[n - 1 :]) + model.tail_sum(v)
    if math.isinf(S):
        return 0.0
    return -math.expm1(-a * a / (8.0 * S))


def normal_translate_log_rn(b: float, sigma2: float, t):
    if not sigma2 > 0:
        raise DomainError(f"sigma2 must be positive, got {sigma2}")
    return b * np.asarray(t, dtype=float) / sigma2 + b * (sigma2 - b) / (2.0 * sigma2)


def normal_translate_rn(b: float, sigma2: float, t):
    """Density of N(b - s/2, s) with respect to N(-s/2, s) at t, s = sigma2."""
    out = np.exp(normal_translate_log_rn(b, sigma2, t))
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class ATQIWitness:
    m: int
    zeta: float
    window: tuple
    window_mass: float
    partial_sum: float


def atqi_witness_normals(block_norms: Sequence[float], a: float, n: int = 0) -> ATQIWitness:
    """Finite ATQI witness for the laws N(-s_r/2, s_r), r = 1, 2, ...

    ``block_norms[r-1]`` holds s_r. Returns the least m > n with
    s_{n+1} + ... + s_m > 2a, the constant exp(-3a/4), the window
    [-S, inf) for that partial sum S and its mass under N(-S/2, S).
    """
    s = [float(x) for x in block_norms]
    if any(x <= 0 for x in s):
        raise DomainError("block norms must be positive")
    if a < 0:
        raise DomainError("translation a must be nonnegative")
    if n < 0:
        raise DomainError("n must be nonnegative")
    S = 0.0
    for m in range(n + 1, len(s) + 1):
        S += s[m - 1]
        if S > 2 * a:
            mass = float(normal_cdf(math.sqrt(S) / 2.0))
            return ATQIWitness(m, math.exp(-0.75 * a), (-S, math.inf), mass, S)
    raise NoWitness(f"sum of block norms after n={n} never exceeds 2a={2 * a}")
