"""Finite-dimensional Gaussian spaces and nonsingular affine dynamics.

Coordinates
-----------
Points x live in R^d with the covariance B = diag(eigs). Vectors of the
Cameron-Martin space (drifts f, exponents h, transfer vectors a) are given in
the orthonormal basis sqrt(lambda_i) e_i of H_0, so that ||h||_0 is the plain
Euclidean norm and an orthogonal matrix V acts isometrically on H_0. The map
``whiten`` sends x to xi = x / sqrt(eigs), which is standard normal under the
Gaussian measure, and ``embed`` goes back. With eigs all equal to 1 the two
coordinate systems coincide.

In these coordinates T_(f,V) acts on whitened points as xi -> f + V xi.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg

from ergolab._numerics import HopfTrace, TraceClass, classify_log_partials, log_cumsum_exp, normal_cdf, rng_for
from ergolab.errors import DomainError, FixedSpaceObstruction, NoSolution, Undecided

ORTHO_TOL = 1e-10
FIXED_TOL = 1e-12


@dataclass(frozen=True)
class GaussianSpace:
    eigs: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.eigs, dtype=float).ravel()
        if e.size == 0:
            raise DomainError("dimension must be positive")
        if not np.all(np.isfinite(e)) or np.any(e <= 0):
            raise DomainError("covariance eigenvalues must be positive and finite")
        e.setflags(write=False)
        object.__setattr__(self, "eigs", e)

    @classmethod
    def standard(cls, d: int) -> "GaussianSpace":
        return cls(np.ones(d))

    @property
    def dim(self) -> int:
        return self.eigs.size

    @property
    def trace(self) -> float:
        return float(self.eigs.sum())

    def whiten(self, x):
        return np.asarray(x, dtype=float) / np.sqrt(self.eigs)

    def embed(self, v):
        return np.asarray(v, dtype=float) * np.sqrt(self.eigs)

    def to_dict(self) -> dict:
        return {"eigs": self.eigs.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "GaussianSpace":
        return cls(np.asarray(d["eigs"], dtype=float))


def inner0(h, k) -> float:
    return float(np.dot(h, k))


def norm0_sq(h) -> float:
    h = np.asarray(h, dtype=float)
    return float(np.dot(h, h))


def sample(space: GaussianSpace, seed: int, n: Optional[int] = None, stream: int = 0):
    """Draw from the Gaussian measure; a single point when ``n`` is None."""
    rng = rng_for(seed, stream)
    z = rng.standard_normal(space.dim if n is None else (n, space.dim))
    return space.embed(z)


# --- affine maps ---------------------------------------------------------------

@dataclass(frozen=True)
class AffineMap:
    f: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.f, dtype=float).ravel()
        V = np.asarray(self.V, dtype=float)
        if V.shape != (f.size, f.size):
            raise DomainError(f"V has shape {V.shape}, expected {(f.size, f.size)}")
        err = np.max(np.abs(V.T @ V - np.eye(f.size))) if f.size else 0.0
        if err > ORTHO_TOL:
            raise DomainError(f"V is not orthogonal (max |V^T V - I| = {err:.3g})")
        f.setflags(write=False)
        V.setflags(write=False)
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "V", V)

    @property
    def dim(self) -> int:
        return self.f.size

    def compose(self, other: "AffineMap") -> "AffineMap":
        """self o other = (f + V f', V V')."""
        return AffineMap(self.f + self.V @ other.f, self.V @ other.V)

    def inverse(self) -> "AffineMap":
        return AffineMap(-self.V.T @ self.f, self.V.T)

    def scaled(self, t: float) -> "AffineMap":
        """The member (t f, V) of the scaling family."""
        return AffineMap(t * self.f, self.V)

    def to_dict(self) -> dict:
        return {"f": self.f.tolist(), "V": self.V.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "AffineMap":
        return cls(np.asarray(d["f"], dtype=float), np.asarray(d["V"], dtype=float))


def rotation2(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def negacyclic_shift(d: int) -> np.ndarray:
    """V e_k = e_{k+1}, V e_d = -e_1. Orthogonal with no eigenvalue 1."""
    V = np.zeros((d, d))
    for k in range(d - 1):
        V[k + 1, k] = 1.0
    V[0, d - 1] = -1.0
    return V


def random_orthogonal(d: int, rng: np.random.Generator, avoid_one: bool = True, gap: float = 1e-6) -> np.ndarray:
    """Haar-ish orthogonal matrix from a QR factorization.

    With ``avoid_one`` the determinant is set to (-1)^d, which generically
    leaves no eigenvalue at 1, and draws are repeated until every eigenvalue is
    at distance at least ``gap`` from 1.
    """
    for _ in range(1000):
        Q, R = np.linalg.qr(rng.standard_normal((d, d)))
        Q = Q * np.sign(np.diag(R))
        if avoid_one:
            want = 1.0 if d % 2 == 0 else -1.0
            if np.sign(np.linalg.det(Q)) != want:
                Q[:, 0] = -Q[:, 0]
            if np.min(np.abs(np.linalg.eigvals(Q) - 1)) < gap:
                continue
        # one Newton-Schulz step tidies the last few ulps
        Q = 1.5 * Q - 0.5 * Q @ Q.T @ Q
        return Q
    raise RuntimeError("could not draw an orthogonal matrix away from 1")


def apply_T(A: AffineMap, x, space: Optional[GaussianSpace] = None):
    """T_(f,V) on points. Without a space, x is taken in whitened coordinates."""
    if space is None:
        return A.f + np.asarray(x, dtype=float) @ A.V.T
    return space.embed(A.f + space.whiten(x) @ A.V.T)


def apply_T_inv(A: AffineMap, x, space: Optional[GaussianSpace] = None):
    return apply_T(A.inverse(), x, space)


def translate(f, x, space: Optional[GaussianSpace] = None):
    """L_f x = x + f."""
    return apply_T(AffineMap(f, np.eye(len(f))), x, space)


# --- exponential vectors -------------------------------------------------------

def cm_log_density(space: GaussianSpace, y, x):
    """log of the Cameron-Martin density of the measure translated by y, at x.

    Equals sum_i y_i x_i / lambda_i - ||y||_0^2 / 2 when y is written in H
    coordinates; here y is in the H_0 basis, so it reads <y, whiten(x)> - |y|^2/2.
    Vectorized over rows of x.
    """
    y = np.asarray(y, dtype=float)
    return space.whiten(x) @ y - 0.5 * norm0_sq(y)


def exp_log(space: GaussianSpace, h, x):
    return cm_log_density(space, h, x)


def exp_eval(space: GaussianSpace, h, x):
    return np.exp(cm_log_density(space, h, x))


@dataclass(frozen=True)
class ExpVector:
    h: np.ndarray
    log_prefactor: float = 0.0

    def log_eval(self, space: GaussianSpace, x):
        return self.log_prefactor + cm_log_density(space, self.h, x)

    def __call__(self, space: GaussianSpace, x):
        return np.exp(self.log_eval(space, x))


def exp_translate(space: GaussianSpace, h, f, x):
    """(exp_h o L_f^{-1})(x) = exp_h(x - f)."""
    return exp_eval(space, h, np.asarray(x, dtype=float) - space.embed(f))


def exp_inner(h, k) -> float:
    """<exp_h, exp_k> in L^2 of the Gaussian measure."""
    return math.exp(inner0(h, k))


def weyl_apply(A: AffineMap, h) -> tuple[float, np.ndarray]:
    """W_(f,V) exp_h = e^{log_coeff} exp_vector."""
    Vh = A.V @ np.asarray(h, dtype=float)
    return -inner0(A.f, Vh) - 0.5 * norm0_sq(A.f), A.f + Vh


def koopman_consistency(space: GaussianSpace, A: AffineMap, h, x) -> tuple[float, float]:
    """Evaluate U_T exp_h at x in two ways.

    lhs is the Koopman formula exp_h(T^{-1} x) * sqrt(exp_f(x)), using that
    the push-forward of the measure under T_(f,V) has density exp_f.
    rhs is the Weyl operator of (f/2, V) applied to exp_h.
    """
    lhs_log = cm_log_density(space, h, apply_T_inv(A, x, space)) + 0.5 * cm_log_density(space, A.f, x)
    c, v = weyl_apply(A.scaled(0.5), h)
    rhs_log = c + cm_log_density(space, v, x)
    return float(np.exp(lhs_log)), float(np.exp(rhs_log))


def sqrt_exp_norm(h) -> float:
    """||sqrt(exp_h)||_1 = exp(-||h||_0^2 / 8)."""
    return math.exp(-norm0_sq(h) / 8)


@dataclass(frozen=True)
class MCEstimate:
    mean: float
    se: float
    n: int

    def within(self, target: float, k: float = 4.0) -> bool:
        return abs(self.mean - target) <= k * self.se + 1e-15


def _mc(values) -> MCEstimate:
    v = np.asarray(values, dtype=float)
    return MCEstimate(float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size)), v.size)


def exp_mean_mc(space: GaussianSpace, h, seed: int, n: int = 100_000) -> MCEstimate:
    return _mc(exp_eval(space, h, sample(space, seed, n)))


def sqrt_exp_norm_mc(space: GaussianSpace, h, seed: int, n: int = 100_000) -> MCEstimate:
    return _mc(np.exp(0.5 * cm_log_density(space, h, sample(space, seed, n))))


def exp_inner_mc(space: GaussianSpace, h, k, seed: int, n: int = 100_000) -> MCEstimate:
    x = sample(space, seed, n)
    return _mc(np.exp(cm_log_density(space, h, x) + cm_log_density(space, k, x)))


def identity_suite(space: GaussianSpace, seed: int, n: int = 1000, scale: float = 0.5) -> dict:
    """Max relative residuals of the pointwise exp identities on n random tuples.

    (viii) exp_h exp_k = e^{<h,k>} exp_{h+k}; (ix) sqrt(exp_h) = e^{-|h|^2/8} exp_{h/2};
    (x) exp_h(x - f) = e^{-<h,f>} exp_h(x); plus the Weyl Gram identity
    <W exp_h, W exp_k> = <exp_h, exp_k> and the Koopman dual path.
    """
    rng = rng_for(seed, 1)
    d = space.dim
    res = {"viii": 0.0, "ix": 0.0, "x": 0.0, "weyl_gram": 0.0, "koopman": 0.0}
    s = scale / math.sqrt(d)
    for i in range(n):
        h, k, f = (rng.normal(scale=s, size=d) for _ in range(3))
        x = space.embed(rng.standard_normal(d))
        V = random_orthogonal(d, rng, avoid_one=False)
        A = AffineMap(f, V)

        def rel(a_log, b_log):
            return abs(math.expm1(a_log - b_log))

        res["viii"] = max(res["viii"], rel(exp_log(space, h, x) + exp_log(space, k, x),
                                           inner0(h, k) + exp_log(space, h + k, x)))
        res["ix"] = max(res["ix"], rel(0.5 * exp_log(space, h, x), -norm0_sq(h) / 8 + exp_log(space, h / 2, x)))
        res["x"] = max(res["x"], rel(math.log(exp_translate(space, h, f, x)),
                                     -inner0(h, f) + exp_log(space, h, x)))
        ch, vh = weyl_apply(A, h)
        ck, vk = weyl_apply(A, k)
        res["weyl_gram"] = max(res["weyl_gram"], rel(ch + ck + inner0(vh, vk), inner0(h, k)))
        lhs, rhs = koopman_consistency(space, A, h, x)
        res["koopman"] = max(res["koopman"], abs(lhs - rhs) / max(abs(rhs), 1e-300))
    res["max"] = max(res.values())
    return res


# --- drift orbit and coboundaries ------------------------------------------------

@dataclass
class DriftOrbit:
    terms: np.ndarray  # row k-1 holds f^(k)
    norms0_sq: np.ndarray

    @property
    def n(self) -> int:
        return len(self.terms)


def drift_orbit(A: AffineMap, n: int) -> DriftOrbit:
    """f^(1) = f, f^(k+1) = f + V f^(k)."""
    if n < 1:
        raise DomainError("n must be at least 1")
    out = np.empty((n, A.dim))
    cur = A.f.copy()
    out[0] = cur
    for k in range(1, n):
        cur = A.f + A.V @ cur
        out[k] = cur
    return DriftOrbit(out, np.einsum("ij,ij->i", out, out))


def fixed_space(V, tol: float = FIXED_TOL) -> np.ndarray:
    """Orthonormal basis (columns) of the eigenvalue-1 space of orthogonal V."""
    d = V.shape[0]
    _, s, vt = np.linalg.svd(np.eye(d) - V)
    return vt[s <= tol * max(1.0, d)].T


def solve_coboundary(V, f, tol: float = 1e-9) -> np.ndarray:
    """Return a with f = a - V a, or raise NoSolution."""
    V = np.asarray(V, dtype=float)
    f = np.asarray(f, dtype=float)
    d = f.size
    N = fixed_space(V)
    if N.shape[1]:
        c = N.T @ f
        if np.linalg.norm(c) > tol:
            raise NoSolution(f"f has a component of norm {np.linalg.norm(c):.3g} in the fixed space of V")
        a = np.linalg.lstsq(np.eye(d) - V, f - N @ c, rcond=None)[0]
        a = a - N @ (N.T @ a)
    else:
        a = np.linalg.solve(np.eye(d) - V, f)
    r = np.linalg.norm(f - (a - V @ a))
    if not r < tol:
        raise NoSolution(f"residual {r:.3g} above tolerance {tol:g}")
    return a


def invariant_density(a) -> ExpVector:
    return ExpVector(np.asarray(a, dtype=float))


def box_indicator(lo, hi):
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)

    def g(x):
        x = np.atleast_2d(x)
        return np.all((x >= lo) & (x <= hi), axis=1).astype(float)

    return g


@dataclass(frozen=True)
class InvarianceCheck:
    before: float
    after: float
    se: float

    @property
    def z(self) -> float:
        return abs(self.after - self.before) / self.se if self.se > 0 else (0.0 if self.after == self.before else math.inf)

    def passes(self, k: float = 4.0) -> bool:
        return self.z <= k


def invariance_mc(space: GaussianSpace, A: AffineMap, a, g, seed: int, n: int = 100_000) -> InvarianceCheck:
    """Paired estimate of the integrals of g o T and g against exp_a times the Gaussian measure."""
    x = sample(space, seed, n)
    w = exp_eval(space, a, x)
    d = (g(apply_T(A, x, space)) - g(x)) * w
    return InvarianceCheck(float(np.mean(g(x) * w)), float(np.mean(g(apply_T(A, x, space)) * w)),
                           float(d.std(ddof=1) / math.sqrt(n)))


# --- spectral shells -------------------------------------------------------------

@dataclass
class ShellBlock:
    shell: Optional[int]  # None for the fixed space
    eigenvalues: np.ndarray
    basis: np.ndarray
    f_block: np.ndarray
    a_block: np.ndarray

    @property
    def bound_ok(self) -> bool:
        if self.shell is None:
            return True
        return np.linalg.norm(self.a_block) <= (self.shell + 1) * np.linalg.norm(self.f_block) * (1 + 1e-12) + 1e-15


def shell_index(z: complex) -> int:
    """n with 1/(n+1) < |z-1| <= 1/n; 0 collects |z-1| > 1."""
    r = abs(z - 1)
    n = int(math.floor(1 / r))
    # guard the closed right end |z-1| = 1/n against rounding
    if n >= 1 and r > 1 / n:
        n -= 1
    if r <= 1 / (n + 1):
        n += 1
    return n


def shell_split(V, f, tol: float = 1e-10) -> list:
    """Split f along spectral shells of V and solve f_b = a_b - V a_b per shell."""
    V = np.asarray(V, dtype=float)
    f = np.asarray(f, dtype=float)
    d = f.size
    T, Z = scipy.linalg.schur(V, output="real")
    groups: dict = {}
    i = 0
    while i < d:
        if i + 1 < d and abs(T[i + 1, i]) > 1e-14:
            idx = [i, i + 1]
            ev = np.linalg.eigvals(T[i : i + 2, i : i + 2])
            i += 2
        else:
            idx = [i]
            ev = np.array([T[i, i]], dtype=complex)
            i += 1
        z = ev[0]
        key = None if abs(z - 1) <= FIXED_TOL else shell_index(z)
        grp = groups.setdefault(key, ([], []))
        grp[0].extend(idx)
        grp[1].extend(ev.tolist())
    blocks = []
    for key in sorted(groups, key=lambda k: -1 if k is None else k):
        idx, ev = groups[key]
        Q = Z[:, idx]
        fb = Q @ (Q.T @ f)
        if key is None:
            if np.linalg.norm(fb) > tol:
                raise FixedSpaceObstruction(f"f has a component of norm {np.linalg.norm(fb):.3g} on eigenvalue 1")
            ab = np.zeros(d)
        else:
            M = np.eye(len(idx)) - Q.T @ V @ Q
            ab = Q @ np.linalg.solve(M, Q.T @ f)
        blocks.append(ShellBlock(key, np.asarray(ev), Q, fb, ab))
    return blocks


# --- Poincare exponent and dissipativity threshold -------------------------------

@dataclass(frozen=True)
class PoincareFit:
    delta: float
    model: str
    residual: float
    coef: tuple = ()


def _rel_rms(y, yhat) -> float:
    scale = max(float(np.sqrt(np.mean(y**2))), 1e-300)
    return float(np.sqrt(np.mean((y - yhat) ** 2)) / scale)


def poincare_exponent(norms0_sq: Sequence[float], tail_model: str = "auto", resid_tol: float = 0.15,
                      min_terms: int = 8) -> PoincareFit:
    """Critical exponent of sum_n exp(-alpha s_n) for s_n = ||f^(n)||_0^2.

    Models: "bounded" (delta = +inf), "log" with s_n ~ a + c log n (delta = 1/c)
    and "power" with s_n ~ b n^beta, beta > 0 (delta = 0). "auto" first tests
    for a significant log-trend; without one the sequence is bounded, otherwise
    the better of the log and power fits is taken. Fits use the indices
    n >= sqrt(N): this drops the transient start while keeping a wide enough
    range of log n to tell a logarithm from a small power.
    """
    s = np.asarray(norms0_sq, dtype=float)
    if s.size < min_terms:
        raise Undecided(f"need at least {min_terms} terms, got {s.size}")
    if not np.all(np.isfinite(s)):
        raise DomainError("norms must be finite")
    n = np.arange(1, s.size + 1, dtype=float)
    lo = math.isqrt(s.size) - 1
    ns, ss = n[lo:], s[lo:]
    ln = np.log(ns)

    X = np.column_stack([np.ones_like(ln), ln])
    coef, *_ = np.linalg.lstsq(X, ss, rcond=None)
    resid = ss - X @ coef
    dof = max(ss.size - 2, 1)
    sigma2 = float(resid @ resid) / dof
    cov = sigma2 * np.linalg.inv(X.T @ X)
    c, c_se = float(coef[1]), math.sqrt(max(cov[1, 1], 0.0))
    log_fit = PoincareFit(1 / c if c > 0 else math.inf, "log", _rel_rms(ss, X @ coef), (float(coef[0]), c))

    def bounded_fit():
        return PoincareFit(math.inf, "bounded", 0.0, (float(np.max(s)),))

    def power_fit():
        pos = ss > 0
        if pos.sum() < 3:
            raise Undecided("power model needs positive norms")
        beta, b = np.polyfit(ln[pos], np.log(ss[pos]), 1)
        pred = np.exp(b) * ns**beta
        return PoincareFit(0.0 if beta > 0 else math.inf, "power", _rel_rms(ss, pred), (float(np.exp(b)), float(beta)))

    if tail_model == "bounded":
        return bounded_fit()
    if tail_model == "log":
        if log_fit.residual > resid_tol:
            raise Undecided(f"log model residual {log_fit.residual:.3g}")
        return log_fit
    if tail_model == "power":
        p = power_fit()
        if p.residual > resid_tol:
            raise Undecided(f"power model residual {p.residual:.3g}")
        return p
    if tail_model != "auto":
        raise DomainError(f"unknown tail model {tail_model!r}")

    # a trend smaller than its noise, or smaller than one unit over the fitted
    # range, is no evidence against boundedness
    if c <= 4 * c_se or c * (ln[-1] - ln[0]) < 1e-9 * max(1.0, float(np.max(np.abs(ss)))):
        return bounded_fit()
    cands = [log_fit]
    try:
        cands.append(power_fit())
    except Undecided:
        pass
    best = min(cands, key=lambda p: p.residual)
    if best.residual > resid_tol:
        raise Undecided(f"no model fits: residuals {[round(p.residual, 4) for p in cands]}")
    return best


def t_diss_bounds(delta: float) -> tuple[float, float]:
    if math.isnan(delta) or delta < 0:
        raise DomainError("delta must be nonnegative")
    if math.isinf(delta):
        return math.inf, math.inf
    lo = math.sqrt(2 * delta)
    return lo, 2 * lo


def _orbit_of(A_or_orbit, K: int) -> DriftOrbit:
    if isinstance(A_or_orbit, DriftOrbit):
        if A_or_orbit.n < K:
            raise DomainError(f"orbit has {A_or_orbit.n} terms, need {K}")
        return DriftOrbit(A_or_orbit.terms[:K], A_or_orbit.norms0_sq[:K])
    return drift_orbit(A_or_orbit, K)


def warn_if_fixed_overlap(A: AffineMap, tol: float = 1e-9) -> bool:
    N = fixed_space(A.V)
    if N.shape[1] and np.linalg.norm(N.T @ A.f) > tol:
        warnings.warn("V has invariant vectors overlapping f; the dissipativity criterion does not apply",
                      RuntimeWarning, stacklevel=3)
        return True
    return False


def hopf_log_partials(orbit: DriftOrbit, t: float, xi: np.ndarray) -> np.ndarray:
    """Rows: log S_K for each whitened sample in ``xi`` (shape (m, d))."""
    logs = t * (np.atleast_2d(xi) @ orbit.terms.T) - 0.5 * t * t * orbit.norms0_sq
    return log_cumsum_exp(logs, axis=1)


def whitened_samples(seed: int, d: int, ids) -> np.ndarray:
    """Sample i is drawn from its own stream, so any subset is reproducible alone."""
    return np.array([rng_for(seed, 2, int(i)).standard_normal(d) for i in ids]).reshape(-1, d)


def hopf_mc(space: GaussianSpace, A, t: float, seed: int, K: int, n_samples: int,
            sample_ids: Optional[Sequence[int]] = None) -> list:
    """Per-sample Hopf traces for the member (t f, V) of the scaling family.

    Summands are exp(t <f^(n), xi> - t^2 |f^(n)|^2 / 2) with xi whitened. Samples
    are common across t for a fixed seed.
    """
    if K < 1:
        raise DomainError("K must be at least 1")
    if isinstance(A, AffineMap):
        warn_if_fixed_overlap(A)
    orbit = _orbit_of(A, K)
    ids = range(n_samples) if sample_ids is None else sample_ids
    xi = whitened_samples(seed, space.dim, ids)
    out = []
    for i, lp in zip(ids, hopf_log_partials(orbit, t, xi)):
        tr = classify_log_partials(lp)
        tr.meta.update(t=float(t), sample_id=int(i))
        out.append(tr)
    return out


@dataclass
class TdissScan:
    t_grid: list
    frac_convergent: list
    counts: list  # per t: (convergent, divergent, undecided)
    band: tuple
    delta_hat: float
    delta_model: str
    bounds: tuple
    inconsistent: list = field(default_factory=list)

    @property
    def intersects(self) -> bool:
        lo, hi = self.band
        return self.bounds[0] <= hi and lo <= self.bounds[1]


def transition_band(t_grid, counts) -> tuple[float, float]:
    """Undecided band [t_lo, t_hi] of a scan, from (convergent, divergent, undecided) counts.

    t_hi is the first grid point where most traces look convergent (inf if
    none). t_lo is the last grid point below t_hi where every trace looks
    divergent; it defaults to 0, where every trace grows linearly. Grid points
    with undecided traces therefore sit inside the band.
    """
    t_hi = next((t for t, (c, dv, u) in zip(t_grid, counts) if c >= 0.5 * (c + dv + u)), math.inf)
    t_lo = 0.0
    for t, (c, dv, u) in zip(t_grid, counts):
        if t < t_hi and c == 0 and u == 0:
            t_lo = t
    return t_lo, t_hi


def tdiss_scan(space: GaussianSpace, A, t_grid: Sequence[float], K: int, n_samples: int, seed: int,
               traces_by_t: Optional[list] = None) -> TdissScan:
    """Fraction of ConvergentLike traces per t, with the bracket where it crosses 1/2.

    ``traces_by_t`` lets a caller pass traces it computed elsewhere (for example
    in worker processes); they must come in grid order.
    """
    t_grid = [float(t) for t in t_grid]
    if not t_grid:
        raise DomainError("empty t grid")
    if any(t < 0 for t in t_grid) or any(b <= a for a, b in zip(t_grid, t_grid[1:])):
        raise DomainError("t grid must be nonnegative and strictly increasing")
    orbit = _orbit_of(A, K)
    if traces_by_t is None:
        traces_by_t = [hopf_mc(space, orbit, t, seed, K, n_samples) for t in t_grid]
    frac, counts = [], []
    for trs in traces_by_t:
        c = sum(tr.classification is TraceClass.CONVERGENT for tr in trs)
        dv = sum(tr.classification is TraceClass.DIVERGENT for tr in trs)
        counts.append((c, dv, len(trs) - c - dv))
        frac.append(c / len(trs))
    # per-sample labels are monotone in t, so any drop is a defect, not noise
    bad = [t_grid[i + 1] for i in range(len(frac) - 1) if frac[i + 1] < frac[i]]
    try:
        fit = poincare_exponent(orbit.norms0_sq)
        delta, model = fit.delta, fit.model
    except Undecided:
        delta, model = math.nan, "undecided"
    bounds = t_diss_bounds(delta) if not math.isnan(delta) else (math.nan, math.nan)
    return TdissScan(t_grid, frac, counts, transition_band(t_grid, counts), delta, model, bounds, bad)


# --- independent slabs -----------------------------------------------------------

@dataclass(frozen=True)
class SlabReport:
    index: int
    mass: float
    mass_mc: float
    mass_se: float
    membership_matches: bool
    max_corr_z: float

    @property
    def independent(self) -> bool:
        return self.max_corr_z < 4.0


def independent_slab_witness(space: GaussianSpace, n: int, a: float, eps: float, seed: int = 0,
                             n_samples: int = 100_000) -> SlabReport:
    """Slab D_n on coordinate n+1 (1-based) where the log-RN of a unit translation lies in (a-eps, a+eps)."""
    if not 0 <= n < space.dim:
        raise DomainError(f"need n+1 <= d = {space.dim}, got n = {n}")
    if eps <= 0:
        raise DomainError("eps must be positive")
    x = sample(space, seed, n_samples, stream=3)
    xi = space.whiten(x)
    in_slab = (a + 0.5 - eps < xi[:, n]) & (xi[:, n] < a + 0.5 + eps)
    e = np.zeros(space.dim)
    e[n] = 1.0
    lr = cm_log_density(space, e, x)
    in_window = (a - eps < lr) & (lr < a + eps)
    mass = float(normal_cdf(a + 0.5 + eps) - normal_cdf(a + 0.5 - eps))
    ind = in_slab.astype(float)
    zmax = 0.0
    for j in range(n):
        r = np.corrcoef(ind, xi[:, j])[0, 1] if ind.std() > 0 else 0.0
        zmax = max(zmax, abs(r) * math.sqrt(n_samples))
    return SlabReport(n, mass, float(ind.mean()), float(ind.std(ddof=1) / math.sqrt(n_samples)),
                      bool(np.array_equal(in_slab, in_window)), zmax)
