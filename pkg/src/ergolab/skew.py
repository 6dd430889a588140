"""Skew products (y, g) -> (T y, g + f(y)) and Maharam extensions.

Bases are small objects with ``step`` (one application of T), ``log_rn``
(log d(mu o T)/d(mu) at a point) and, where it makes sense, vectorized
``sample``/``step_many``/``log_rn_many`` for Monte Carlo.
"""

from __future__ import annotations

import csv
import hashlib
import io
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Callable, Optional, Sequence

import numpy as np

from ergolab._numerics import Neumaier
from ergolab.errors import DomainError
from ergolab.gaussian import AffineMap, GaussianSpace, apply_T, cm_log_density, drift_orbit
from ergolab.products import ProductSystem, lattice_exponent, rn_log, rn_ratio


# --- bases ------------------------------------------------------------------------

@dataclass(frozen=True)
class RotationBase:
    """Circle rotation y -> y + alpha mod 1 with Lebesgue measure."""

    alpha: float
    preserves_probability = True

    def step(self, y):
        return (y + self.alpha) % 1

    def log_rn(self, y) -> float:
        return 0.0

    def sample(self, rng, n):
        return rng.random(n)

    def step_many(self, y):
        return self.step(y)

    def log_rn_many(self, y):
        return np.zeros(len(y))


@dataclass(frozen=True)
class OdometerBase:
    """A truncated product of rotations with its product measure."""

    system: ProductSystem
    lam: Optional[Fraction] = None
    preserves_probability = False

    def step(self, y):
        return self.system.apply(y, 1)

    def log_rn(self, y) -> float:
        return rn_log(self.system, 1, y)

    def rn_exponent(self, y) -> Optional[int]:
        """j with d(mu o T)/d(mu)(y) = lam**j."""
        if self.lam is None:
            raise DomainError("base has no lambda")
        return lattice_exponent(rn_ratio(self.system, 1, y), self.lam)

    def sample(self, rng, n):
        return self.system.sample(rng, n)

    def step_many(self, y):
        mods = np.array(self.system.moduli)
        steps = np.array([f.step for f in self.system.factors])
        return (y + steps) % mods

    def log_rn_many(self, y):
        out = np.zeros(len(y))
        for j, f in enumerate(self.system.factors):
            out += f.log_weights[(y[:, j] + f.step) % f.modulus] - f.log_weights[y[:, j]]
        return out


@dataclass(frozen=True)
class GaussianBase:
    """T_(f,V) on the Gaussian space; points in H coordinates."""

    space: GaussianSpace
    A: AffineMap

    @property
    def preserves_probability(self) -> bool:
        return not np.any(self.A.f)

    def step(self, x):
        return apply_T(self.A, x, self.space)

    def log_rn(self, x):
        # phi(T xi) / phi(xi) for the standard normal density phi, V orthogonal
        xi = self.space.whiten(x)
        return -(xi @ self.A.V.T) @ self.A.f - 0.5 * float(self.A.f @ self.A.f)

    def sample(self, rng, n):
        return self.space.embed(rng.standard_normal((n, self.space.dim)))

    def step_many(self, x):
        return self.step(x)

    def log_rn_many(self, x):
        return self.log_rn(x)


# --- cocycles ---------------------------------------------------------------------

GROUPS = ("real", "int", "mod")


@dataclass(frozen=True)
class CocycleSpec:
    """A function f on the base, valued in the fiber group.

    kind is one of "zero", "gaussian_linear" (needs ``w`` and a GaussianBase),
    "log_rn" and "custom" (``fn`` maps a base point to a value, or ``table``
    maps a hashable base point to a value). ``group`` is "real", "int" or
    "mod" with modulus ``d``.
    """

    kind: str
    group: str = "real"
    d: Optional[int] = None
    w: Optional[np.ndarray] = None
    fn: Optional[Callable] = None
    table: Optional[dict] = None

    def __post_init__(self):
        if self.kind not in ("zero", "gaussian_linear", "log_rn", "custom"):
            raise DomainError(f"unknown cocycle kind {self.kind!r}")
        if self.group not in GROUPS:
            raise DomainError(f"unknown group {self.group!r}")
        if self.group == "mod" and (self.d is None or self.d < 1):
            raise DomainError("mod group needs a positive modulus d")
        if self.kind == "gaussian_linear" and self.w is None:
            raise DomainError("gaussian_linear cocycle needs w")
        if self.kind == "custom" and self.fn is None and self.table is None:
            raise DomainError("custom cocycle needs fn or table")
        if self.kind in ("gaussian_linear", "log_rn") and self.group != "real":
            raise DomainError(f"{self.kind} cocycles are real valued")

    @classmethod
    def zero(cls, group="real", d=None):
        return cls("zero", group, d)

    @classmethod
    def gaussian_linear(cls, w):
        return cls("gaussian_linear", w=np.asarray(w, dtype=float))

    @classmethod
    def log_radon_nikodym(cls):
        return cls("log_rn")

    @classmethod
    def custom(cls, fn=None, table=None, group="real", d=None):
        return cls("custom", group, d, fn=fn, table=table)

    @classmethod
    def coboundary(cls, base, h: Callable, group="real", d=None):
        """f = h o T - h."""
        return cls.custom(lambda y: h(base.step(y)) - h(y), group=group, d=d)

    def value(self, base, y):
        if self.kind == "zero":
            return 0.0 if self.group == "real" else 0
        if self.kind == "gaussian_linear":
            if not isinstance(base, GaussianBase):
                raise DomainError("gaussian_linear cocycle needs a Gaussian base")
            return float(base.space.whiten(y) @ self.w)
        if self.kind == "log_rn":
            return base.log_rn(y)
        if self.table is not None:
            return self.table[_key(y)]
        return self.fn(y)


def _key(y):
    if isinstance(y, np.ndarray):
        return tuple(y.tolist())
    return y


# --- orbits -----------------------------------------------------------------------

@dataclass(frozen=True)
class SkewState:
    base_point: Any
    fiber: Any


def _reduce(cocycle: CocycleSpec, g):
    return g % cocycle.d if cocycle.group == "mod" else g


def skew_step(base, cocycle: CocycleSpec, s: SkewState) -> SkewState:
    return SkewState(base.step(s.base_point), _reduce(cocycle, s.fiber + cocycle.value(base, s.base_point)))


def maharam_step(base, s: SkewState) -> SkewState:
    return skew_step(base, CocycleSpec.log_radon_nikodym(), s)


def point_hash(y) -> str:
    if isinstance(y, np.ndarray):
        data = np.ascontiguousarray(y, dtype=float).tobytes()
    elif isinstance(y, (tuple, list)):
        data = repr(tuple(v.item() if hasattr(v, "item") else v for v in y)).encode()
    else:
        data = repr(y.item() if hasattr(y, "item") else y).encode()
    return hashlib.blake2b(data, digest_size=8).hexdigest()


@dataclass
class SkewOrbit:
    steps: list
    fibers: list
    hashes: list
    final: SkewState

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "fiber", "base_hash"])
        for row in zip(self.steps, self.fibers, self.hashes):
            w.writerow([row[0], _fmt(row[1]), row[2]])
        return buf.getvalue()


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def skew_orbit(base, cocycle: CocycleSpec, s: SkewState, n: int, stride: int = 1) -> SkewOrbit:
    """Run n steps. Real fibers use compensated summation; others are exact.

    Records step 0 and every ``stride``-th step, plus the last one.
    """
    if n < 0 or stride < 1:
        raise DomainError("need n >= 0 and stride >= 1")
    y = s.base_point
    real = cocycle.group == "real" and not isinstance(s.fiber, Fraction)
    acc = Neumaier(s.fiber) if real else None
    g = s.fiber
    steps, fibers, hashes = [0], [s.fiber], [point_hash(y)]
    for k in range(1, n + 1):
        v = cocycle.value(base, y)
        if real:
            acc.add(float(v))
            g = acc.value
        else:
            g = _reduce(cocycle, g + v)
        y = base.step(y)
        if k % stride == 0 or k == n:
            steps.append(k)
            fibers.append(g)
            hashes.append(point_hash(y))
    return SkewOrbit(steps, fibers, hashes, SkewState(y, g))


def fiber_after(base, cocycle: CocycleSpec, s: SkewState, n: int):
    return skew_orbit(base, cocycle, s, n, stride=max(n, 1)).final.fiber


def maharam_orbit(base, s: SkewState, n: int, stride: int = 1, exact: bool = False) -> SkewOrbit:
    """Maharam extension orbit. With ``exact`` over an odometer base the fiber is
    the integer j such that the real fiber equals j * log(lambda)."""
    if not exact:
        return skew_orbit(base, CocycleSpec.log_radon_nikodym(), s, n, stride)
    if not isinstance(base, OdometerBase):
        raise DomainError("exact Maharam fibers need an odometer base with lambda")

    def j(y):
        e = base.rn_exponent(y)
        if e is None:
            raise DomainError(f"RN value at {y} is off the lambda lattice")
        return e

    return skew_orbit(base, CocycleSpec.custom(j, group="int"), s, n, stride)


def gaussian_maharam_fiber(space: GaussianSpace, A: AffineMap, x, n: int) -> tuple[float, float]:
    """Two closed forms for the Maharam fiber after n steps from (x, 0).

    The first is -cm(f^(n), T^n x); the second telescopes the density
    d(mu o T^-1)/d(mu) = exp_f along the orbit, -sum_{k=1..n} log exp_f(T^k x).
    """
    orb = drift_orbit(A, n)
    y = np.asarray(x, dtype=float)
    tel = Neumaier()
    for _ in range(n):
        y = apply_T(A, y, space)
        tel.add(float(cm_log_density(space, A.f, y)))
    return -float(cm_log_density(space, orb.terms[-1], y)), -tel.value


@dataclass(frozen=True)
class MaharamCheck:
    before: float
    after: float
    se: float
    box_weight: float

    @property
    def z(self) -> float:
        if self.se == 0:
            return 0.0 if self.before == self.after else math.inf
        return abs(self.after - self.before) / self.se

    def passes(self, k: float = 4.0) -> bool:
        return self.z <= k


def maharam_invariance_mc(base, g: Callable, c: float, d: float, seed: int, n: int = 100_000) -> MaharamCheck:
    """Test invariance of mu x e^{-t} dt under one Maharam step for G(y,t) = g(y) 1[c<=t<=d].

    The t-integral is done in closed form, int 1[c <= t + rho <= d] e^{-t} dt =
    e^{rho} (e^{-c} - e^{-d}), leaving a paired Monte Carlo comparison of
    E[g(T y) e^{rho(y)}] with E[g(y)].
    """
    from ergolab._numerics import rng_for

    if not d > c:
        raise DomainError("need d > c")
    rng = rng_for(seed, 4)
    y = base.sample(rng, n)
    rho = base.log_rn_many(y)
    a = g(base.step_many(y)) * np.exp(rho)
    b = g(y)
    w = math.exp(-c) - math.exp(-d)
    diff = a - b
    return MaharamCheck(float(b.mean()) * w, float(a.mean()) * w, float(diff.std(ddof=1) / math.sqrt(n)) * w, w)


# --- recurrence -------------------------------------------------------------------

@dataclass
class RecurrenceReport:
    checkpoints: list
    min_abs_fiber_after: list
    returns_to_window: list
    window: float
    mean_increment: float
    first_return: Optional[int] = None
    notes: list = field(default_factory=list)

    def to_rows(self) -> list:
        return [
            {"step": k, "min_abs_fiber": m, "returns": r}
            for k, m, r in zip(self.checkpoints, self.min_abs_fiber_after, self.returns_to_window)
        ]


def atkinson_diagnostic(base, cocycle: CocycleSpec, y0, n_steps: int, window: float,
                        checkpoints: Optional[Sequence[int]] = None) -> RecurrenceReport:
    """Track min |fiber| and visits to (-window, window) along one orbit from (y0, 0).

    Evidence only: a finite orbit cannot establish recurrence.
    """
    if n_steps < 1 or window <= 0:
        raise DomainError("need n_steps >= 1 and window > 0")
    if checkpoints is None:
        checkpoints = sorted({max(1, n_steps // 10**k) for k in range(6, -1, -1)} | {n_steps})
    checkpoints = [c for c in checkpoints if 1 <= c <= n_steps]
    acc = Neumaier()
    y = y0
    best = math.inf
    returns = 0
    first = None
    mins, rets = [], []
    ci = 0
    for k in range(1, n_steps + 1):
        acc.add(float(cocycle.value(base, y)))
        y = base.step(y)
        a = abs(acc.value)
        best = min(best, a)
        if a < window:
            returns += 1
            if first is None:
                first = k
        while ci < len(checkpoints) and checkpoints[ci] == k:
            mins.append(best)
            rets.append(returns)
            ci += 1
    notes = []
    if not getattr(base, "preserves_probability", True):
        notes.append("base does not preserve a probability measure")
    return RecurrenceReport(list(checkpoints), mins, rets, window, acc.value / n_steps, first, notes)
