"""Batch runner: ``ergolab <subcommand> [--config FILE] [--seed N] [--out PATH] [--format csv|json] [--strict]``.

A config file is a JSON document::

    {"subcommand": "odometer witness", "seed": 3, "format": "json",
     "params": {"lam": "1/2", "moduli": [9, 157], "n": 0}}

Command-line flags override config fields. Exit codes: 0 success, 1 numerical
failure, 2 invalid configuration.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Callable, Optional

import numpy as np

from ergolab import gaussian as G
from ergolab import measures as M
from ergolab import products as P
from ergolab import skew as S
from ergolab._numerics import TraceClass, rng_for
from ergolab.errors import (DomainError, FixedSpaceObstruction, NoSolution, NoWitness, Undecided,
                            WitnessUnavailable)

SCHEMA_VERSION = 1
TOP_LEVEL = {"subcommand", "seed", "out", "format", "strict", "workers", "params"}


class ConfigError(Exception):
    """Invalid configuration; reported with exit code 2."""


@dataclass
class Result:
    payload: dict
    rows: Optional[list] = None  # CSV table; defaults to field,value pairs of payload
    undecided: Optional[str] = None  # reason, fails the run under --strict
    failure: Optional[str] = None  # reason, always fails the run (after writing output)


# --- parameter sets ----------------------------------------------------------------

@dataclass
class HellingerParams:
    mean1: float = 0.0
    var1: float = 1.0
    mean2: float = 1.0
    var2: float = 1.0


@dataclass
class KakutaniParams:
    scale: float = 1.0
    shift_exponent: float = 1.0  # factor n compares N(scale * n^-p, 1) with N(0, 1)
    n_terms: int = 1000
    tail: str = "auto"


@dataclass
class AtiParams:
    a: float = 1.0
    n: int = 1
    variances: list = field(default_factory=list)
    var_exponent: float = 2.0  # used when variances is empty: sigma_k^2 = k^-q
    n_terms: int = 1000
    tail: str = "auto"


@dataclass
class AtqiParams:
    a: float = 1.0
    n: int = 0
    block_norms: list = field(default_factory=list)
    norm_exponent: float = 1.0  # used when block_norms is empty: s_r = r^-q
    n_terms: int = 1000


@dataclass
class OdometerBuildParams:
    lam: str = "1/2"
    moduli: list = field(default_factory=lambda: [9, 157, 45217])


@dataclass
class OdometerWitnessParams:
    lam: str = "1/2"
    moduli: list = field(default_factory=lambda: [9, 157])
    n: int = 0
    samples: int = 10_000
    exhaustive_limit: int = 1_000_000


@dataclass
class OdometerHopfParams:
    lam: str = "1/2"
    moduli: list = field(default_factory=lambda: [5, 7, 11])
    x: list = field(default_factory=list)
    K: int = 2000


@dataclass
class GaussianIdentitiesParams:
    eigs: list = field(default_factory=lambda: [1.0, 0.5, 0.25])
    n: int = 1000
    scale: float = 0.5


@dataclass
class GaussianKoopmanParams:
    eigs: list = field(default_factory=lambda: [1.0, 0.5, 0.25])
    n: int = 100


@dataclass
class GaussianMapParams:
    """Shared by drift, coboundary and shells."""

    eigs: list = field(default_factory=list)
    f: list = field(default_factory=lambda: [1.0, 0.0])
    V: Any = "rotation:1.5707963267948966"
    n: int = 64


@dataclass
class GaussianSlabParams:
    eigs: list = field(default_factory=lambda: [1.0, 0.5, 0.25, 0.125])
    n: int = 2
    a: float = 0.0
    eps: float = 0.1
    samples: int = 100_000


@dataclass
class PoincareParams:
    norms: list = field(default_factory=list)
    model: str = "log"  # synthetic generator when norms is empty: log, linear, bounded
    c: float = 2.0
    N: int = 10_000
    noise: float = 0.0
    tail_model: str = "auto"


@dataclass
class TdissParams:
    dim: int = 400
    f: list = field(default_factory=list)
    V: Any = "negacyclic"
    eigs: list = field(default_factory=list)
    t_grid: list = field(default_factory=lambda: [0.0, 0.25, 0.5, 1.0, 2.0])
    K: int = 400
    samples: int = 100


@dataclass
class SkewOrbitParams:
    alpha: float = 0.41421356237309503
    cocycle: str = "cos"  # cos, zero, const, centered
    x0: float = 0.1
    n: int = 100_000
    stride: int = 1000


@dataclass
class SkewMaharamParams:
    base: str = "odometer"  # odometer or gaussian
    lam: str = "1/2"
    moduli: list = field(default_factory=lambda: [5, 7, 11])
    x0: list = field(default_factory=list)
    eigs: list = field(default_factory=lambda: [1.0, 1.0])
    f: list = field(default_factory=lambda: [0.3, -0.2])
    V: Any = "rotation:1.0"
    n: int = 1000
    stride: int = 100
    exact: bool = True


@dataclass
class SkewAtkinsonParams:
    alpha: float = 0.41421356237309503
    cocycle: str = "centered"
    x0: float = 0.1
    n: int = 100_000
    window: float = 0.5


# --- helpers -----------------------------------------------------------------------

def _lam(s) -> Fraction:
    try:
        return Fraction(str(s))
    except (ValueError, ZeroDivisionError) as e:
        raise ConfigError(f"params.lam: cannot read {s!r} as a fraction") from e


def _frac_str(q: Fraction) -> str:
    return f"{q.numerator}/{q.denominator}"


def build_V(spec, d: int, seed: Optional[int]) -> np.ndarray:
    """V from a matrix (list of rows) or a name: identity, minus_identity,
    negacyclic, random, rotation:THETA (2x2 blocks on consecutive pairs)."""
    if isinstance(spec, list):
        V = np.asarray(spec, dtype=float)
        if V.shape != (d, d):
            raise ConfigError(f"params.V: expected a {d}x{d} matrix, got shape {V.shape}")
        return V
    name, _, arg = str(spec).partition(":")
    if name == "identity":
        return np.eye(d)
    if name == "minus_identity":
        return -np.eye(d)
    if name == "negacyclic":
        return G.negacyclic_shift(d)
    if name == "random":
        return G.random_orthogonal(d, rng_for(0 if seed is None else seed, 9))
    if name == "rotation":
        try:
            theta = float(arg)
        except ValueError as e:
            raise ConfigError(f"params.V: bad angle in {spec!r}") from e
        V = np.eye(d)
        for i in range(0, d - 1, 2):
            V[i : i + 2, i : i + 2] = G.rotation2(theta)
        return V
    raise ConfigError(f"params.V: unknown matrix spec {spec!r}")


def _space(eigs, d: int) -> G.GaussianSpace:
    e = [float(x) for x in eigs] if eigs else [1.0] * d
    if len(e) != d:
        raise ConfigError(f"params.eigs: expected {d} values, got {len(e)}")
    return G.GaussianSpace(e)


def _affine(p, seed) -> tuple[G.GaussianSpace, G.AffineMap]:
    f = np.asarray([float(x) for x in p.f])
    if f.size == 0:
        raise ConfigError("params.f: must be nonempty")
    return _space(p.eigs, f.size), G.AffineMap(f, build_V(p.V, f.size, seed))


def _trace_rows(trace, stride: int = 1) -> list:
    lp = trace.log_partials
    ks = sorted(set(range(stride, len(lp) + 1, stride)) | {len(lp)})
    return [{"K": k, "log_S_K": float(lp[k - 1])} for k in ks]


# --- handlers ----------------------------------------------------------------------

def run_hellinger(p: HellingerParams, seed) -> Result:
    h2 = M.hellinger_sq_normal(M.Normal(p.mean1, p.var1), M.Normal(p.mean2, p.var2))
    lo, hi = M.tv_bounds(h2)
    return Result({"h2": h2, "hellinger": math.sqrt(h2), "tv_lower": lo, "tv_upper": hi})


def run_kakutani(p: KakutaniParams, seed) -> Result:
    if p.n_terms < 1:
        raise ConfigError("params.n_terms: must be positive")
    terms = M.h2_terms(lambda n: M.hellinger_sq_normal(M.Normal(p.scale * n ** -p.shift_exponent, 1.0),
                                                       M.Normal(0.0, 1.0)), p.n_terms)
    v = M.kakutani_test(terms, tail=p.tail)
    rows = [{"n": i + 1, "h2": h, "product_partial": q, "sum_partial": s}
            for i, (h, q, s) in enumerate(zip(v.h2_terms, v.product_partial, v.sum_partial))]
    return Result({"verdict": "equivalent" if v.equivalent else "singular", "tail_model": type(v.tail).__name__,
                   "tail_sum": v.tail_sum, "affinity": v.affinity, "sum_partial": v.sum_partial[-1],
                   "product_partial": v.product_partial[-1]}, rows)


def run_ati(p: AtiParams, seed) -> Result:
    var = [float(x) for x in p.variances] or [k ** -p.var_exponent for k in range(1, p.n_terms + 1)]
    h2 = M.ati_normals(var, p.a, p.n, tail=p.tail)
    return Result({"a": p.a, "n": p.n, "h2_limit": h2, "ati_at_a": h2 == 0.0})


def run_atqi(p: AtqiParams, seed) -> Result:
    s = [float(x) for x in p.block_norms] or [r ** -p.norm_exponent for r in range(1, p.n_terms + 1)]
    w = M.atqi_witness_normals(s, p.a, p.n)
    return Result({"m": w.m, "zeta": w.zeta, "window_lower": w.window[0], "window_upper": w.window[1],
                   "window_mass": w.window_mass, "partial_sum": w.partial_sum})


def _spec(p) -> P.OdometerSpec:
    return P.OdometerSpec(_lam(p.lam), tuple(int(m) for m in p.moduli))


def run_odometer_build(p: OdometerBuildParams, seed) -> Result:
    rep = P.condition_report(_spec(p))
    d = rep.to_dict()
    d.pop("schema_version")
    return Result(d, [r.to_dict() for r in rep.rows])


def run_odometer_witness(p: OdometerWitnessParams, seed) -> Result:
    w = P.essential_value_witness(_spec(p), p.n, exhaustive_limit=p.exhaustive_limit, n_samples=p.samples,
                                  seed=seed)
    d = w.to_dict()
    d.pop("schema_version")
    return Result(d, failure=None if w.confirmed else f"{w.failures} of {w.checked} points off log(lambda)")


def run_odometer_hopf(p: OdometerHopfParams, seed) -> Result:
    spec = _spec(p)
    sys_ = P.build_odometer(spec)
    x = tuple(int(v) for v in p.x) or (0,) * sys_.depth
    tr = P.hopf_partial_sums(sys_, x, p.K)
    return Result({"x": list(x), "K": p.K, "log_S_K": float(tr.log_partials[-1]),
                   "classification": tr.classification.value, "slope": tr.slope},
                  _trace_rows(tr, max(1, p.K // 100)),
                  undecided="trace undecided" if tr.classification is TraceClass.UNDECIDED else None)


def run_gaussian_identities(p: GaussianIdentitiesParams, seed) -> Result:
    res = G.identity_suite(G.GaussianSpace(p.eigs), seed, p.n, p.scale)
    return Result(res, failure=None if res["max"] < 1e-10 else f"max residual {res['max']:.3g}")


def run_gaussian_koopman(p: GaussianKoopmanParams, seed) -> Result:
    sp = G.GaussianSpace(p.eigs)
    rng = rng_for(seed, 5)
    worst, rows = 0.0, []
    for i in range(p.n):
        d = sp.dim
        A = G.AffineMap(rng.normal(scale=0.5 / math.sqrt(d), size=d), G.random_orthogonal(d, rng, avoid_one=False))
        h = rng.normal(scale=0.5 / math.sqrt(d), size=d)
        x = sp.embed(rng.standard_normal(d))
        lhs, rhs = G.koopman_consistency(sp, A, h, x)
        worst = max(worst, abs(lhs - rhs))
        rows.append({"instance": i, "lhs": lhs, "rhs": rhs, "abs_diff": abs(lhs - rhs)})
    return Result({"instances": p.n, "max_abs_diff": worst}, rows,
                  failure=None if worst < 1e-8 else f"max difference {worst:.3g}")


def run_gaussian_drift(p: GaussianMapParams, seed) -> Result:
    _, A = _affine(p, seed)
    orb = G.drift_orbit(A, p.n)
    rows = [{"n": k + 1, "norm0_sq": float(s)} for k, s in enumerate(orb.norms0_sq)]
    return Result({"n": p.n, "sup_norm0": float(np.sqrt(orb.norms0_sq.max())),
                   "last_norm0_sq": float(orb.norms0_sq[-1])}, rows)


def run_gaussian_coboundary(p: GaussianMapParams, seed) -> Result:
    _, A = _affine(p, seed)
    a = G.solve_coboundary(A.V, A.f)
    orb = G.drift_orbit(A, p.n)
    return Result({"a": a.tolist(), "residual": float(np.linalg.norm(A.f - (a - A.V @ a))),
                   "norm_a": float(np.linalg.norm(a)), "sup_drift_norm": float(np.sqrt(orb.norms0_sq.max()))})


def run_gaussian_shells(p: GaussianMapParams, seed) -> Result:
    _, A = _affine(p, seed)
    blocks = G.shell_split(A.V, A.f)
    rows = [{"shell": -1 if b.shell is None else b.shell, "size": b.basis.shape[1],
             "norm_f_block": float(np.linalg.norm(b.f_block)), "norm_a_block": float(np.linalg.norm(b.a_block)),
             "bound_ok": b.bound_ok} for b in blocks]
    recon = sum(b.a_block - A.V @ b.a_block for b in blocks)
    return Result({"blocks": rows, "reassembly_error": float(np.abs(recon - A.f).max())}, rows)


def run_gaussian_slab(p: GaussianSlabParams, seed) -> Result:
    r = G.independent_slab_witness(G.GaussianSpace(p.eigs), p.n, p.a, p.eps, seed, p.samples)
    return Result({"index": r.index, "mass": r.mass, "mass_mc": r.mass_mc, "mass_se": r.mass_se,
                   "membership_matches": r.membership_matches, "max_corr_z": float(r.max_corr_z),
                   "independent": r.independent})


def _synthetic_norms(p: PoincareParams, seed) -> np.ndarray:
    n = np.arange(1, p.N + 1, dtype=float)
    if p.model == "log":
        s = p.c * np.log(n)
    elif p.model == "linear":
        s = p.c * n
    elif p.model == "bounded":
        s = p.c * (1 + np.cos(n)) / 2
    else:
        raise ConfigError(f"params.model: unknown synthetic model {p.model!r}")
    if p.noise:
        s = s + rng_for(seed, 6).normal(0.0, p.noise, s.size)
    return s


def run_poincare(p: PoincareParams, seed) -> Result:
    s = np.asarray([float(x) for x in p.norms]) if p.norms else _synthetic_norms(p, seed)
    try:
        fit = G.poincare_exponent(s, p.tail_model)
    except Undecided as e:
        return Result({"delta": None, "model": "undecided", "reason": str(e)}, undecided=str(e))
    lo, hi = G.t_diss_bounds(fit.delta)
    return Result({"delta": fit.delta, "model": fit.model, "residual": fit.residual, "coef": list(fit.coef),
                   "t_diss_lower": lo, "t_diss_upper": hi})


def _tdiss_setup(p: TdissParams, seed):
    d = len(p.f) if p.f else p.dim
    f = np.asarray([float(x) for x in p.f]) if p.f else np.eye(d)[0]
    return _space(p.eigs, d), G.AffineMap(f, build_V(p.V, d, seed))


def _tdiss_worker(args):
    p, seed, t = args
    sp, A = _tdiss_setup(p, seed)
    orb = G.drift_orbit(A, p.K)
    return [(tr.log_partials[-1], tr.classification.value) for tr in G.hopf_mc(sp, orb, t, seed, p.K, p.samples)]


def run_tdiss_scan(p: TdissParams, seed, workers: int = 1) -> Result:
    if not p.t_grid:
        raise ConfigError("params.t_grid: must be nonempty")
    grid = [float(t) for t in p.t_grid]
    sp, A = _tdiss_setup(p, seed)
    jobs = [(p, seed, t) for t in grid]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            per_t = list(ex.map(_tdiss_worker, jobs))
    else:
        per_t = [_tdiss_worker(j) for j in jobs]
    # rebuild light traces for the table
    traces = [[_Light(TraceClass(c)) for _, c in res] for res in per_t]
    scan = G.tdiss_scan(sp, A, grid, p.K, p.samples, seed, traces_by_t=traces)
    rows = [{"t": t, "sample_id": i, "K": p.K, "log_S_K": float(ls), "classification": c}
            for t, res in zip(grid, per_t) for i, (ls, c) in enumerate(res)]
    payload = {
        "t_grid": grid,
        "frac_convergent": scan.frac_convergent,
        "counts": [list(c) for c in scan.counts],
        "band": list(scan.band),
        "delta_hat": scan.delta_hat,
        "delta_model": scan.delta_model,
        "t_diss_bounds": list(scan.bounds),
        "band_meets_bounds": scan.intersects,
        "inconsistent_at": scan.inconsistent,
    }
    return Result(payload, rows, failure=f"non-monotone fractions at t={scan.inconsistent}" if scan.inconsistent else None)


@dataclass
class _Light:
    classification: TraceClass


def _rotation_cocycle(name: str) -> S.CocycleSpec:
    table = {
        "cos": lambda y: math.cos(2 * math.pi * y),
        "centered": lambda y: y - 0.5,
        "const": lambda y: 1.0,
    }
    if name == "zero":
        return S.CocycleSpec.zero()
    if name not in table:
        raise ConfigError(f"params.cocycle: unknown cocycle {name!r}")
    return S.CocycleSpec.custom(table[name])


def run_skew_orbit(p: SkewOrbitParams, seed) -> Result:
    o = S.skew_orbit(S.RotationBase(p.alpha), _rotation_cocycle(p.cocycle), S.SkewState(p.x0, 0.0), p.n, p.stride)
    rows = [{"step": k, "fiber": g, "base_hash": h} for k, g, h in zip(o.steps, o.fibers, o.hashes)]
    return Result({"n": p.n, "final_fiber": o.final.fiber, "final_base": o.final.base_point}, rows)


def run_skew_maharam(p: SkewMaharamParams, seed) -> Result:
    if p.base == "odometer":
        spec = _spec(p)
        base = S.OdometerBase(P.build_odometer(spec), spec.lam)
        x0 = tuple(int(v) for v in p.x0) or (0,) * len(spec.moduli)
        o = S.maharam_orbit(base, S.SkewState(x0, 0), p.n, p.stride, exact=p.exact)
        logl = math.log(spec.lam)
        rows = [{"step": k, "fiber": (g * logl + 0.0 if p.exact else g), "lattice_index": g if p.exact else "",
                 "base_hash": h} for k, g, h in zip(o.steps, o.fibers, o.hashes)]
        return Result({"base": "odometer", "n": p.n, "final_fiber": rows[-1]["fiber"]}, rows)
    if p.base == "gaussian":
        sp, A = _affine(p, seed)
        x0 = np.asarray([float(v) for v in p.x0]) if p.x0 else G.sample(sp, seed)
        o = S.maharam_orbit(S.GaussianBase(sp, A), S.SkewState(x0, 0.0), p.n, p.stride)
        closed, telescoped = S.gaussian_maharam_fiber(sp, A, x0, p.n)
        rows = [{"step": k, "fiber": g, "base_hash": h} for k, g, h in zip(o.steps, o.fibers, o.hashes)]
        return Result({"base": "gaussian", "n": p.n, "final_fiber": o.final.fiber, "closed_form": closed,
                       "telescoped": telescoped}, rows)
    raise ConfigError(f"params.base: unknown base {p.base!r}")


def run_skew_atkinson(p: SkewAtkinsonParams, seed) -> Result:
    r = S.atkinson_diagnostic(S.RotationBase(p.alpha), _rotation_cocycle(p.cocycle), p.x0, p.n, p.window)
    return Result({"window": r.window, "mean_increment": r.mean_increment, "first_return": r.first_return,
                   "checkpoints": r.to_rows()}, r.to_rows())


@dataclass(frozen=True)
class Command:
    params: type
    handler: Callable
    stochastic: bool = False
    parallel: bool = False


COMMANDS = {
    "hellinger": Command(HellingerParams, run_hellinger),
    "kakutani": Command(KakutaniParams, run_kakutani),
    "ati": Command(AtiParams, run_ati),
    "atqi": Command(AtqiParams, run_atqi),
    "odometer build": Command(OdometerBuildParams, run_odometer_build),
    "odometer witness": Command(OdometerWitnessParams, run_odometer_witness, stochastic=True),
    "odometer hopf": Command(OdometerHopfParams, run_odometer_hopf),
    "gaussian identities": Command(GaussianIdentitiesParams, run_gaussian_identities, stochastic=True),
    "gaussian koopman": Command(GaussianKoopmanParams, run_gaussian_koopman, stochastic=True),
    "gaussian drift": Command(GaussianMapParams, run_gaussian_drift),
    "gaussian coboundary": Command(GaussianMapParams, run_gaussian_coboundary),
    "gaussian shells": Command(GaussianMapParams, run_gaussian_shells),
    "gaussian slab": Command(GaussianSlabParams, run_gaussian_slab, stochastic=True),
    "poincare": Command(PoincareParams, run_poincare),
    "tdiss-scan": Command(TdissParams, run_tdiss_scan, stochastic=True, parallel=True),
    "skew orbit": Command(SkewOrbitParams, run_skew_orbit),
    "skew maharam": Command(SkewMaharamParams, run_skew_maharam),
    "skew atkinson": Command(SkewAtkinsonParams, run_skew_atkinson),
}


# --- config handling ---------------------------------------------------------------

def _coerce(name: str, value, default):
    where = f"params.{name}"
    try:
        if isinstance(default, bool):
            if isinstance(value, bool):
                return value
            if isinstance(value, str) and value.lower() in ("true", "false", "1", "0", "yes", "no"):
                return value.lower() in ("true", "1", "yes")
            raise ValueError
        if isinstance(default, int):
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError
            return int(value)
        if isinstance(default, float):
            if isinstance(value, bool):
                raise ValueError
            return float(value)
        if isinstance(default, list):
            if isinstance(value, str):
                value = json.loads(value) if value.strip().startswith("[") else [v for v in value.split(",") if v.strip()]
            if not isinstance(value, list):
                raise ValueError
            out = []
            for v in value:
                if isinstance(v, (int, float)) and not isinstance(v, bool):
                    out.append(v)
                elif isinstance(v, str):
                    out.append(int(v) if v.strip().lstrip("-").isdigit() else float(v))
                else:
                    raise ValueError
            return out
        if name == "V" and isinstance(value, str) and value.strip().startswith("["):
            return json.loads(value)
        if isinstance(default, str) and not isinstance(value, str):
            if isinstance(value, list) and name == "V":
                return value
            raise ValueError
        return value
    except (ValueError, TypeError, json.JSONDecodeError) as e:
        kind = type(default).__name__
        raise ConfigError(f"{where}: expected {kind}, got {value!r}") from e


def load_config(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        raise ConfigError(f"config: cannot read {path}: {e.strerror}") from e
    if not text.strip():
        raise ConfigError(f"config: {path} is empty")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"config: {path}:{e.lineno}:{e.colno}: {e.msg}") from e
    if not isinstance(doc, dict):
        raise ConfigError("config: top level must be an object")
    unknown = sorted(set(doc) - TOP_LEVEL)
    if unknown:
        raise ConfigError(f"config: unknown field {unknown[0]!r} (allowed: {', '.join(sorted(TOP_LEVEL))})")
    return doc


def resolve(command: str, doc: dict, overrides: dict, flags: dict) -> tuple[Any, dict]:
    cmd = COMMANDS[command]
    if "subcommand" in doc and doc["subcommand"] != command:
        raise ConfigError(f"subcommand: config is for {doc['subcommand']!r}, not {command!r}")
    params_doc = doc.get("params", {})
    if not isinstance(params_doc, dict):
        raise ConfigError("params: must be an object")
    fields = {f.name: f for f in dataclasses.fields(cmd.params)}
    unknown = sorted(set(params_doc) - set(fields))
    if unknown:
        raise ConfigError(f"params.{unknown[0]}: unknown field for {command!r} (allowed: {', '.join(fields)})")
    defaults = cmd.params()
    values = {}
    for name in fields:
        default = getattr(defaults, name)
        raw = overrides.get(name, params_doc.get(name, default))
        values[name] = _coerce(name, raw, default) if raw is not default else default
    params = cmd.params(**values)

    run = {}
    for key, kind in (("seed", int), ("out", str), ("format", str), ("strict", bool), ("workers", int)):
        v = flags.get(key)
        if v is None:
            v = doc.get(key)
        if v is not None:
            if kind is int and (isinstance(v, bool) or not isinstance(v, int)):
                raise ConfigError(f"{key}: expected integer, got {v!r}")
            if kind is str and not isinstance(v, str):
                raise ConfigError(f"{key}: expected string, got {v!r}")
            if kind is bool and not isinstance(v, bool):
                raise ConfigError(f"{key}: expected boolean, got {v!r}")
        run[key] = v
    run["format"] = run["format"] or "json"
    if run["format"] not in ("csv", "json"):
        raise ConfigError(f"format: must be csv or json, got {run['format']!r}")
    run["strict"] = bool(run["strict"])
    run["workers"] = run["workers"] or 1
    if run["workers"] < 1:
        raise ConfigError("workers: must be at least 1")
    if run["seed"] is not None and not 0 <= run["seed"] < 2**64:
        raise ConfigError("seed: must be a 64-bit unsigned integer")
    if cmd.stochastic and run["seed"] is None:
        raise ConfigError(f"seed: required for {command!r}")
    return params, run


# --- output ------------------------------------------------------------------------

def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.floating, float)):
        v = float(v)
        if math.isnan(v):
            return None
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, Fraction):
        return _frac_str(v)
    return v


def _cell(v) -> str:
    v = _jsonable(v)
    if isinstance(v, bool):
        return "true" if v else "false"
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, dict)):
        return json.dumps(v, separators=(",", ":"))
    return str(v)


def render(command: str, params, run: dict, res: Result) -> str:
    if run["format"] == "json":
        doc = {
            "schema_version": SCHEMA_VERSION,
            "subcommand": command,
            "seed": run["seed"],
            "params": dataclasses.asdict(params),
            "result": res.payload,
        }
        if res.rows is not None:
            doc["rows"] = res.rows
        return json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n"
    rows = res.rows if res.rows is not None else [{"field": k, "value": v} for k, v in res.payload.items()]
    buf = io.StringIO()
    if rows:
        w = csv.writer(buf, lineterminator="\n")
        header = list(rows[0].keys())
        w.writerow(header)
        for r in rows:
            w.writerow([_cell(r.get(h)) for h in header])
    return buf.getvalue()


def write_output(text: str, out: Optional[str]) -> None:
    if out:
        with open(out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


# --- argparse ----------------------------------------------------------------------

def _flag_type(default):
    if isinstance(default, bool):
        return None
    if isinstance(default, int):
        return int
    if isinstance(default, float):
        return float
    return str


def _add_common(ap: argparse.ArgumentParser, params_cls) -> None:
    ap.add_argument("--config", help="JSON config file")
    ap.add_argument("--seed", type=int, help="root seed")
    ap.add_argument("--out", help="output file (default: stdout)")
    ap.add_argument("--format", choices=["csv", "json"], help="output format (default json)")
    ap.add_argument("--strict", action="store_const", const=True, help="treat Undecided as a failure")
    ap.add_argument("--workers", type=int, help="worker processes where supported")
    ap.add_argument("--dry-run", action="store_true", help="print the resolved parameters and exit")
    g = ap.add_argument_group("parameters")
    defaults = params_cls()
    for f in dataclasses.fields(params_cls):
        d = getattr(defaults, f.name)
        flag = "--" + f.name.replace("_", "-")
        dest = "param_" + f.name
        if isinstance(d, bool):
            g.add_argument(flag, dest=dest, action=argparse.BooleanOptionalAction, default=None)
        else:
            g.add_argument(flag, dest=dest, type=_flag_type(d), default=None,
                           help="comma-separated list or JSON" if isinstance(d, list) else None)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="ergolab", description="Nonsingular dynamics laboratory.")
    sub = ap.add_subparsers(dest="cmd", required=True, parser_class=_Parser)
    groups: dict = {}
    for name, cmd in COMMANDS.items():
        head, _, tail = name.partition(" ")
        if tail:
            if head not in groups:
                gp = sub.add_parser(head)
                groups[head] = gp.add_subparsers(dest="sub", required=True, parser_class=_Parser)
            leaf = groups[head].add_parser(tail)
        else:
            leaf = sub.add_parser(head)
        leaf.set_defaults(command=name)
        _add_common(leaf, cmd.params)
    return ap


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        ns = build_parser().parse_args(argv)
        command = ns.command
        doc = load_config(ns.config) if ns.config else {}
        overrides = {k[len("param_"):]: v for k, v in vars(ns).items() if k.startswith("param_") and v is not None}
        flags = {k: getattr(ns, k) for k in ("seed", "out", "format", "strict", "workers")}
        params, run = resolve(command, doc, overrides, flags)
        if ns.dry_run:
            sys.stdout.write(json.dumps(_jsonable({"subcommand": command, "params": dataclasses.asdict(params),
                                                   **run}), indent=2, sort_keys=True) + "\n")
            return 0
        cmd = COMMANDS[command]
        if cmd.parallel:
            res = cmd.handler(params, run["seed"], workers=run["workers"])
        else:
            res = cmd.handler(params, run["seed"])
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except DomainError as e:
        print(f"error: invalid parameters: {e}", file=sys.stderr)
        return 2
    except (NoWitness, WitnessUnavailable, NoSolution, FixedSpaceObstruction, Undecided) as e:
        print(f"numerical failure: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    except SystemExit as e:  # --help
        return int(e.code or 0)
    write_output(render(command, params, run, res), run["out"])
    if res.failure:
        print(f"numerical failure: {res.failure}", file=sys.stderr)
        return 1
    if res.undecided and run["strict"]:
        print(f"numerical failure: Undecided: {res.undecided}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
