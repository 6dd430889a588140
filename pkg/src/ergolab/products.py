"""Finite truncations of infinite products of cyclic rotations.

A point of the depth-N truncation is a tuple ``x = (x_1, ..., x_N)`` with
``x_n`` in Z/p_nZ, and T moves every coordinate by its step. The explicit
odometer family puts weight c on the lower half of each Z/p_nZ and lambda*c on
the upper half, which makes every Radon-Nikodym value an integer power of
lambda.
"""

from __future__ import annotations

import enum
import itertools
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Iterable, Optional, Sequence

import numpy as np

from ergolab._numerics import HopfTrace, classify_log_partials, log_cumsum_exp, rng_for
from ergolab.errors import DomainError, WitnessUnavailable
from ergolab.measures import FiniteMeasure, GeometricTail, hellinger_sq_discrete

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class FactorSystem:
    """Rotation x -> x + step on Z/pZ with a quasi-invariant law ``mu``.

    The invariant law is the uniform one. ``y_set``, ``z_set`` and ``l`` are
    filled in for odometer factors only.
    """

    modulus: int
    mu: FiniteMeasure
    step: int = 1
    y_set: Optional[frozenset] = None
    z_set: Optional[frozenset] = None
    l: Optional[int] = None

    def __post_init__(self):
        if self.mu.modulus != self.modulus:
            raise DomainError("measure lives on a different group")
        if any(w <= 0 for w in self.mu.weights):
            raise DomainError("mu must charge every point")
        if math.gcd(self.step, self.modulus) != 1:
            raise DomainError(f"step {self.step} is not a unit mod {self.modulus}")

    @cached_property
    def log_weights(self) -> np.ndarray:
        return np.log(self.mu.as_array())

    def ratio(self, k: int, x: int):
        """mu(x + k*step) / mu(x), exact for rational weights."""
        w = self.mu.weights
        return w[(x + k * self.step) % self.modulus] / w[x % self.modulus]


@dataclass(frozen=True)
class OdometerSpec:
    lam: Fraction
    moduli: tuple

    def __post_init__(self):
        lam = Fraction(self.lam)
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "moduli", tuple(int(p) for p in self.moduli))
        if not 0 < lam < 1:
            raise DomainError(f"lambda must lie in (0, 1), got {lam}")
        ps = self.moduli
        if not ps:
            raise DomainError("need at least one modulus")
        if any(p < 2 for p in ps):
            raise DomainError("moduli must be at least 2")
        if any(a >= b for a, b in zip(ps, ps[1:])):
            raise DomainError("moduli must be strictly increasing")
        for a, b in itertools.combinations(ps, 2):
            if math.gcd(a, b) != 1:
                raise DomainError(f"moduli {a} and {b} are not coprime")

    def prefix_product(self, n: int) -> int:
        """p_1 * ... * p_{n-1} for the 1-based index n."""
        return math.prod(self.moduli[: n - 1])

    def to_dict(self) -> dict:
        return {"lambda": f"{self.lam.numerator}/{self.lam.denominator}", "moduli": list(self.moduli)}

    @classmethod
    def from_dict(cls, d: dict) -> "OdometerSpec":
        return cls(Fraction(str(d["lambda"])), tuple(d["moduli"]))


@dataclass(frozen=True)
class ProductSystem:
    factors: tuple

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(self.factors))

    @property
    def depth(self) -> int:
        return len(self.factors)

    @property
    def moduli(self) -> tuple:
        return tuple(f.modulus for f in self.factors)

    @property
    def size(self) -> int:
        return math.prod(self.moduli)

    @property
    def period(self) -> int:
        return math.lcm(*self.moduli)

    def apply(self, x: Sequence[int], k: int = 1) -> tuple:
        return tuple((xi + k * f.step) % f.modulus for xi, f in zip(x, self.factors))

    def points(self) -> Iterable[tuple]:
        return itertools.product(*(range(p) for p in self.moduli))

    def measure(self, x: Sequence[int]):
        return math.prod((f.mu[xi] for f, xi in zip(self.factors, x)), start=Fraction(1))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        cols = [rng.choice(f.modulus, size=n, p=f.mu.as_array()) for f in self.factors]
        return np.stack(cols, axis=1)

    def check_point(self, x: Sequence[int]) -> None:
        if len(x) != self.depth or any(not 0 <= xi < p for xi, p in zip(x, self.moduli)):
            raise DomainError(f"{tuple(x)} is not a point of the truncation")


# --- the explicit odometer ---------------------------------------------------

def odometer_sets(p: int, prefix_product: int) -> tuple[frozenset, frozenset, int]:
    """Return (Y, Z, l) for a factor of modulus p with P = prefix_product.

    Y = {x < p/2 - P} u {p/2 < x < p - P}, Z = {P < x < p/2}, and l is the
    integer with l*P <= p/2 < (l+1)*P (it may be 0 when P > p/2).
    """
    P = prefix_product
    # comparisons with p/2 done as 2x vs p to stay in integers
    Y = frozenset(x for x in range(p) if 2 * (x + P) < p or (p < 2 * x and x < p - P))
    Z = frozenset(x for x in range(p) if P < x and 2 * x < p)
    l = p // (2 * P)
    return Y, Z, l


def odometer_factor(p: int, lam, prefix_product: int = 1) -> FactorSystem:
    """Factor with mu(j) = c for j <= p/2 and lam*c above, normalized exactly.

    The point p - 1 always carries lam*c, so for p = 2 the weights are
    (1, lam) / (1 + lam).
    """
    lam = Fraction(lam)
    if not 0 < lam < 1:
        raise DomainError(f"lambda must lie in (0, 1), got {lam}")
    if p < 2:
        raise DomainError("modulus must be at least 2")
    low = [2 * j <= p and j != p - 1 for j in range(p)]
    c = 1 / (sum(low) + lam * (p - sum(low)))
    w = tuple(c if lo else lam * c for lo in low)
    Y, Z, l = odometer_sets(p, prefix_product)
    return FactorSystem(p, FiniteMeasure(p, w), 1, Y, Z, l)


def build_odometer(spec: OdometerSpec) -> ProductSystem:
    return ProductSystem(
        tuple(odometer_factor(p, spec.lam, spec.prefix_product(i + 1)) for i, p in enumerate(spec.moduli))
    )


# --- Radon-Nikodym cocycle ---------------------------------------------------

def rn_ratio(sys: ProductSystem, k: int, x: Sequence[int]):
    """d(mu o T^k)/d(mu) at x, i.e. mu(T^k x) / mu(x); exact for rational weights."""
    r = Fraction(1)
    for f, xi in zip(sys.factors, x):
        r *= f.ratio(k, xi)
    return r


def rn_log(sys: ProductSystem, k: int, x: Sequence[int]) -> float:
    """log d(mu o T^k)/d(mu) at x, summed over the factors of the truncation."""
    return math.fsum(
        f.log_weights[(xi + k * f.step) % f.modulus] - f.log_weights[xi] for f, xi in zip(sys.factors, x)
    )


def rn_log_orbit(sys: ProductSystem, x: Sequence[int], K: int) -> np.ndarray:
    """rn_log(k, x) for k = 1..K, vectorized."""
    ks = np.arange(1, K + 1)
    out = np.zeros(K)
    for f, xi in zip(sys.factors, x):
        out += f.log_weights[(xi + ks * f.step) % f.modulus] - f.log_weights[xi]
    return out


def lattice_exponent(ratio: Fraction, lam: Fraction) -> Optional[int]:
    """The integer j with ratio == lam**j, or None when there is none."""
    ratio, lam = Fraction(ratio), Fraction(lam)
    if ratio <= 0:
        return None
    if ratio == 1:
        return 0
    # work with a target below 1 so that powers of lam decrease toward it
    target, sign = (ratio, 1) if ratio < 1 else (1 / ratio, -1)
    j, r = 0, Fraction(1)
    while r > target:
        r *= lam
        j += 1
    return sign * j if r == target else None


def hopf_partial_sums(sys: ProductSystem, x: Sequence[int], K: int, tol: float | None = None) -> HopfTrace:
    """Partial sums of d(mu o T^k)/d(mu)(x) for k = 1..K, computed in log space."""
    if K < 1:
        raise DomainError("K must be at least 1")
    sys.check_point(x)
    lp = log_cumsum_exp(rn_log_orbit(sys, x, K))
    trace = classify_log_partials(lp) if tol is None else classify_log_partials(lp, tol)
    trace.meta["x"] = tuple(int(v) for v in x)
    return trace


# --- conditions on the moduli ladder -----------------------------------------

@dataclass
class ConditionRow:
    n: int
    modulus: int
    h2: float
    mu_y: Fraction
    y_holds: bool
    mu_z: Fraction
    z_holds: bool

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "modulus": self.modulus,
            "h2": self.h2,
            "mu_Y": f"{self.mu_y.numerator}/{self.mu_y.denominator}",
            "mu_Y_float": float(self.mu_y),
            "Y_holds": self.y_holds,
            "mu_Z": f"{self.mu_z.numerator}/{self.mu_z.denominator}",
            "mu_Z_float": float(self.mu_z),
            "Z_holds": self.z_holds,
        }


@dataclass
class ConditionReport:
    spec: OdometerSpec
    cond_circ: tuple  # (holds, extrapolated sum of H^2(mu_n, mu_n o T_n^-1))
    rows: list = field(default_factory=list)

    @property
    def cond_bullet(self) -> list:
        return [(r.n, r.mu_y) for r in self.rows]

    @property
    def cond_star(self) -> list:
        return [(r.n, r.mu_z) for r in self.rows]

    @property
    def all_hold(self) -> bool:
        return self.cond_circ[0] and all(r.y_holds and r.z_holds for r in self.rows)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "spec": self.spec.to_dict(),
            "cond_circ": {"holds": self.cond_circ[0], "value": self.cond_circ[1]},
            "rows": [r.to_dict() for r in self.rows],
            "all_hold": self.all_hold,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def y_threshold(n: int) -> Fraction:
    return 1 - Fraction(1, 2 ** (n + 1))


def z_threshold(lam: Fraction) -> Fraction:
    return 1 / (2 * (lam + 1))


def condition_report(spec: OdometerSpec) -> ConditionReport:
    """Per-level check of the three growth conditions on the moduli.

    The H^2 series is extrapolated with a geometric tail whose ratio is the
    largest ratio of consecutive observed terms; a ratio >= 1 gives no
    evidence of summability and the condition is reported as failing.
    """
    sys = build_odometer(spec)
    rows, h2s = [], []
    zt = z_threshold(spec.lam)
    for n, f in enumerate(sys.factors, start=1):
        h2 = hellinger_sq_discrete(f.mu, f.mu.shifted(1))
        h2s.append(h2)
        mu_y, mu_z = f.mu.mass(f.y_set), f.mu.mass(f.z_set)
        rows.append(ConditionRow(n, f.modulus, h2, mu_y, mu_y > y_threshold(n), mu_z, mu_z > zt))
    ratios = [b / a for a, b in zip(h2s, h2s[1:]) if a > 0]
    if ratios:
        tail = GeometricTail(max(ratios)).tail_sum(h2s)
    else:
        tail = 0.0
    value = math.fsum(h2s) + tail
    return ConditionReport(spec, (math.isfinite(value), value), rows)


# --- essential value witness -------------------------------------------------

@dataclass(frozen=True)
class Cylinder:
    """Subset of X_1 x ... x X_n given by its admissible prefixes.

    ``prefixes=None`` stands for the whole product.
    """

    n: int
    prefixes: Optional[frozenset] = None

    def contains(self, x: Sequence[int]) -> bool:
        return self.prefixes is None or tuple(x[: self.n]) in self.prefixes

    def mass(self, sys: ProductSystem) -> Fraction:
        if self.prefixes is None:
            return Fraction(1)
        head = ProductSystem(sys.factors[: self.n])
        return sum((head.measure(b) for b in self.prefixes), Fraction(0))


@dataclass
class WitnessReport:
    n: int
    m: int
    lam: Fraction
    mode: str
    checked: int
    failures: int
    cylinder_invariant: bool
    mass_A: Fraction
    mass_B: Fraction
    mass_bound: float
    rn_values: dict = field(default_factory=dict)

    @property
    def confirmed(self) -> bool:
        return self.failures == 0 and self.checked > 0 and self.cylinder_invariant

    @property
    def bound_holds(self) -> bool:
        return float(self.mass_A) >= self.mass_bound

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "n": self.n,
            "m": self.m,
            "lambda": f"{self.lam.numerator}/{self.lam.denominator}",
            "log_lambda": math.log(self.lam),
            "mode": self.mode,
            "checked": self.checked,
            "failures": self.failures,
            "lattice_confirmed": self.confirmed,
            "cylinder_invariant": self.cylinder_invariant,
            "mass_A": float(self.mass_A),
            "mass_B": float(self.mass_B),
            "mass_bound": self.mass_bound,
            "bound_holds": self.bound_holds,
            "rn_exponents": {str(k): v for k, v in sorted(self.rn_values.items())},
        }


def _witness_sets(sys: ProductSystem, n: int, B: Cylinder) -> list:
    sets = []
    for i, f in enumerate(sys.factors):
        if i < n:
            sets.append(None)
        elif i == n:
            sets.append(sorted(f.z_set))
        else:
            sets.append(sorted(f.y_set))
    return sets


def essential_value_witness(
    spec: OdometerSpec,
    n: int,
    B: Optional[Cylinder] = None,
    exhaustive_limit: int = 10**6,
    n_samples: int = 10**4,
    seed: int = 0,
    require_conditions: bool = True,
) -> WitnessReport:
    """Check that log(lambda) is realised on A = B x Z_{n+1} x Y_{n+2} x ... .

    Uses m = p_1...p_n * l_{n+1} iterations. Every point of A (or a sample of
    ``n_samples`` points drawn from mu conditioned on A when A has more than
    ``exhaustive_limit`` points) must satisfy mu(T^m x)/mu(x) = lambda exactly.
    """
    N = len(spec.moduli)
    if n < 0 or N < n + 2:
        raise DomainError(f"depth {N} too small for n={n}; need at least n+2")
    B = B if B is not None else Cylinder(n)
    if B.n != n:
        raise DomainError("cylinder must live on the first n coordinates")
    report = condition_report(spec)
    bad = [r.n for r in report.rows[n + 1 :] if not r.y_holds]
    if not report.rows[n].z_holds:
        bad.insert(0, n + 1)
    if require_conditions and bad:
        raise WitnessUnavailable(f"growth conditions fail at levels {bad}")
    sys = build_odometer(spec)
    lam = spec.lam
    m = math.prod(spec.moduli[:n]) * sys.factors[n].l
    if m == 0:
        raise WitnessUnavailable(f"l_{n + 1} = 0: p_{n + 1}/2 is below p_1...p_{n}")

    head = spec.moduli[:n]
    if B.prefixes is None:
        invariant = all(m % p == 0 for p in head)
    else:
        invariant = all(tuple((b + m) % p for b, p in zip(pre, head)) == tuple(pre) for pre in B.prefixes)

    tail_sets = _witness_sets(sys, n, B)[n:]
    mass_B = B.mass(sys)
    mass_A = mass_B
    for f, s in zip(sys.factors[n:], tail_sets):
        mass_A *= f.mu.mass(s)
    bound = float(mass_B) * float(z_threshold(lam)) * math.prod(1 - 2.0 ** (-k - 1) for k in range(n + 2, N + 1))

    prefixes = [tuple(pre) for pre in B.prefixes] if B.prefixes is not None else None
    head_size = len(prefixes) if prefixes is not None else math.prod(head)
    size_A = head_size * math.prod(len(s) for s in tail_sets)
    counts: dict = {}
    checked = failures = 0

    def check(x):
        nonlocal checked, failures
        j = lattice_exponent(rn_ratio(sys, m, x), lam)
        counts[j] = counts.get(j, 0) + 1
        checked += 1
        failures += j != 1

    if size_A == 0:
        mode = "empty"
    elif size_A <= exhaustive_limit:
        mode = "exhaustive"
        heads = prefixes if prefixes is not None else itertools.product(*(range(p) for p in head))
        for h in heads:
            for t in itertools.product(*tail_sets):
                check(tuple(h) + t)
    else:
        mode = "sampled"
        rng = rng_for(seed, 0)
        head_pts = prefixes if prefixes is not None else None
        cols = []
        for f, s in zip(sys.factors[n:], tail_sets):
            w = np.array([float(f.mu[j]) for j in s])
            cols.append(np.asarray(s)[rng.choice(len(s), size=n_samples, p=w / w.sum())])
        if head_pts is None:
            hcols = [rng.choice(f.modulus, size=n_samples, p=f.mu.as_array()) for f in sys.factors[:n]]
        else:
            hw = np.array([float(ProductSystem(sys.factors[:n]).measure(b)) for b in head_pts])
            idx = rng.choice(len(head_pts), size=n_samples, p=hw / hw.sum())
            hcols = [np.array([head_pts[i][c] for i in idx]) for c in range(n)]
        pts = np.stack(hcols + cols, axis=1) if (hcols or cols) else np.zeros((n_samples, 0), int)
        for row in pts:
            check(tuple(int(v) for v in row))
    return WitnessReport(n, m, lam, mode, checked, failures, invariant, mass_A, mass_B, bound, counts)


# --- subgroup classification -------------------------------------------------

class SubgroupKind(str, enum.Enum):
    TRIVIAL = "Trivial"
    CYCLIC = "Cyclic"
    DENSE = "Dense"


@dataclass(frozen=True)
class Subgroup:
    kind: SubgroupKind
    generator: Optional[float] = None


def _fgcd(a: float, b: float, tol: float) -> float:
    a, b = max(a, b), min(a, b)
    while b > tol:
        r = math.fmod(a, b)
        if b - r <= tol:
            r = 0.0
        a, b = b, r
    return a


def subgroup_detect(values: Sequence[float], tol: float = 1e-9) -> Subgroup:
    """Coarsest closed subgroup of R explaining ``values`` at tolerance ``tol``.

    A Euclid-style reduction finds a candidate generator g. The values are
    called Dense when g is smaller than min|v| / Q with Q = tol**(-1/4), i.e.
    when only denominators beyond Q would make them commensurable: any real
    ratio is approximable to within 1/q^2 by p/q, so accepting larger
    denominators would make every finite set look cyclic.
    """
    vals = [abs(float(v)) for v in values]
    if not vals:
        raise DomainError("need at least one value")
    nz = [v for v in vals if v > tol]
    if not nz:
        return Subgroup(SubgroupKind.TRIVIAL)
    g = nz[0]
    for v in nz[1:]:
        g = _fgcd(g, v, tol)
    q_max = max(2.0, tol ** -0.25)
    if g <= tol or g < min(nz) / q_max:
        return Subgroup(SubgroupKind.DENSE)
    # refine g as the least-squares fit of the integer multiples
    ks = [round(v / g) for v in nz]
    g = sum(k * v for k, v in zip(ks, nz)) / sum(k * k for k in ks)
    if any(abs(v - k * g) > tol * max(1, k) for k, v in zip(ks, nz)):
        return Subgroup(SubgroupKind.DENSE)
    return Subgroup(SubgroupKind.CYCLIC, g)


# --- heavy slices of a nonnegative function ----------------------------------

@dataclass(frozen=True)
class SliceReport:
    threshold: float
    slice_fraction: float  # share of the total carried by the heaviest delta-slice
    slice_sum: float
    total: float
    delta: float

    @property
    def holds(self) -> bool:
        return self.slice_sum >= 0.5 * self.delta * self.total * (1 - 1e-12)


def top_slice_mass(phi_samples: Sequence[float], delta: float) -> SliceReport:
    """Largest integral of phi over a set of empirical measure delta.

    Samples carry equal weight 1/N; the set may take a fraction of the
    boundary sample, which is what the empirical measure needs to be
    nonatomic at the threshold.
    """
    phi = np.sort(np.asarray(phi_samples, dtype=float))[::-1]
    if phi.size == 0:
        raise DomainError("no samples")
    if np.any(phi < 0):
        raise DomainError("samples must be nonnegative")
    if not 0 < delta < 1:
        raise DomainError("delta must lie in (0, 1)")
    N = phi.size
    k_full = int(math.floor(delta * N))
    frac = delta * N - k_full
    top = math.fsum(phi[:k_full]) + (frac * phi[k_full] if k_full < N else 0.0)
    total = math.fsum(phi)
    threshold = float(phi[min(k_full, N - 1)])
    s = top / N
    t = total / N
    return SliceReport(threshold, float(s / t) if t > 0 else 0.0, float(s), float(t), float(delta))
