"""Acceptance criteria. Each test prints one PASS/FAIL line with its runtime."""

import itertools
import json
import math
import subprocess
import sys
import time
from contextlib import contextmanager
from fractions import Fraction

import numpy as np
import pytest
from scipy import integrate, stats

from ergolab._numerics import rng_for
from ergolab.errors import NoSolution
from ergolab.gaussian import (AffineMap, GaussianSpace, box_indicator, drift_orbit, exp_eval, exp_inner_mc,
                              exp_log, exp_mean_mc, exp_translate, inner0, invariance_mc, koopman_consistency,
                              negacyclic_shift, norm0_sq, poincare_exponent, random_orthogonal, sample, shell_split,
                              solve_coboundary, sqrt_exp_norm, sqrt_exp_norm_mc, t_diss_bounds, tdiss_scan)
from ergolab.measures import (FiniteMeasure, Normal, ZeroTail, ati_normals, h2_terms, hellinger_sq_discrete,
                              hellinger_sq_normal, kakutani_test, normal_translate_rn, tv_bounds)
from ergolab.products import (OdometerSpec, build_odometer, essential_value_witness, lattice_exponent, rn_log,
                              rn_ratio, top_slice_mass)
from ergolab.skew import CocycleSpec, OdometerBase, RotationBase, SkewState, fiber_after, maharam_orbit, skew_orbit


@pytest.fixture
def gate(capsys):
    @contextmanager
    def run(num, title, limit):
        t0 = time.perf_counter()
        ok = False
        try:
            yield
            ok = True
        finally:
            dt = time.perf_counter() - t0
            in_time = dt < limit
            tag = "PASS" if ok and in_time else "FAIL"
            note = "" if in_time else " (over time limit)"
            with capsys.disabled():
                print(f"\n[{tag}] criterion {num:2d}: {title} ({dt:.2f} s, limit {limit} s){note}")
        assert in_time, f"criterion {num} took {dt:.2f} s (limit {limit} s)"

    return run


def test_01_hellinger_closed_form_vs_quadrature(gate):
    with gate(1, "Hellinger closed form vs quadrature", 5):
        rng = np.random.default_rng(101)
        for _ in range(50):
            p = Normal(rng.uniform(-3, 3), rng.uniform(0.2, 5))
            q = Normal(rng.uniform(-3, 3), rng.uniform(0.2, 5))
            s = max(p.std, q.std)
            lo, hi = min(p.mean, q.mean) - 40 * s, max(p.mean, q.mean) + 40 * s
            bc = integrate.quad(lambda x: math.sqrt(p.pdf(x) * q.pdf(x)), lo, hi, points=sorted({p.mean, q.mean}),
                                limit=400, epsabs=1e-14, epsrel=1e-13)[0]
            assert abs(hellinger_sq_normal(p, q) - (1 - bc)) < 1e-8


def test_02_tv_sandwich(gate):
    with gate(2, "TV sandwich H^2 <= TV <= sqrt(2) H on 200 discrete pairs", 10):
        rng = np.random.default_rng(102)
        for _ in range(200):
            d = int(rng.integers(1, 13))
            p = rng.dirichlet(np.full(d, rng.uniform(0.2, 3)))
            q = rng.dirichlet(np.full(d, rng.uniform(0.2, 3)))
            masks = np.array(list(itertools.product([0, 1], repeat=d)), dtype=float)
            tv = float(np.max(np.abs(masks @ (p - q))))
            h2 = hellinger_sq_discrete(FiniteMeasure.from_array(p), FiniteMeasure.from_array(q))
            lo, hi = tv_bounds(h2)
            assert lo - 1e-12 <= tv <= hi + 1e-12
            assert hi == pytest.approx(math.sqrt(2) * math.sqrt(h2))


def test_03_kakutani_dichotomy(gate):
    with gate(3, "Kakutani dichotomy on N(1/n,1) and N(1/sqrt n,1)", 1):
        fam = lambda mean: h2_terms(lambda n: hellinger_sq_normal(Normal(mean(n), 1), Normal(0, 1)), 2000)
        eq = kakutani_test(fam(lambda n: 1 / n))
        sg = kakutani_test(fam(lambda n: n ** -0.5))
        assert eq.equivalent and not sg.equivalent
        for v in (eq, sg):
            assert all(b <= a for a, b in zip(v.product_partial, v.product_partial[1:]))
            assert all(b >= a for a, b in zip(v.sum_partial, v.sum_partial[1:]))


def test_04_ati_limit(gate):
    with gate(4, "ATI limit 1 - exp(-a^2/(8S))", 1):
        rng = np.random.default_rng(104)
        for _ in range(50):
            v = list(rng.uniform(0.01, 2, size=int(rng.integers(2, 40))))
            a = rng.uniform(0.1, 5)
            n = int(rng.integers(1, len(v) + 1))
            S = math.fsum(v[n - 1 :])
            assert ati_normals(v, a, n, tail=ZeroTail()) == pytest.approx(1 - math.exp(-a * a / (8 * S)), rel=1e-14)
        assert ati_normals([1.0] * 500, 2.0) == 0.0
        assert ati_normals([1 / k for k in range(1, 500)], 2.0) == 0.0


def test_05_translate_rn_lower_bound(gate):
    with gate(5, "normal_translate_rn >= exp(-3b/4) and density-ratio oracle", 2):
        rng = np.random.default_rng(105)
        b = rng.uniform(0, 5, 1000)
        s2 = 2 * b + rng.uniform(1e-6, 10, 1000)
        t = -s2 + rng.uniform(0, 20, 1000)
        rn = np.array([normal_translate_rn(*z) for z in zip(b, s2, t)])
        assert np.all(rn >= np.exp(-0.75 * b) * (1 - 1e-12))
        sd = np.sqrt(s2)
        oracle = stats.norm.pdf(t, b - s2 / 2, sd) / stats.norm.pdf(t, -s2 / 2, sd)
        np.testing.assert_allclose(rn, oracle, rtol=1e-10)


def test_06_odometer_lattice_and_witness(gate):
    with gate(6, "odometer RN values on the lambda lattice; witness on all of A", 60):
        lam = Fraction(1, 2)
        sys_ = build_odometer(OdometerSpec(lam, (5, 7, 11)))
        pts = list(sys_.points())
        assert len(pts) == 385
        # exact per-factor ratio tables, multiplied in rational arithmetic
        tables = [[[f.ratio(k, x) for x in range(f.modulus)] for k in range(f.modulus)] for f in sys_.factors]
        log_l = math.log(lam)
        for x in pts:
            for k in range(1, 1001):
                r = Fraction(1)
                for tab, f, xi in zip(tables, sys_.factors, x):
                    r *= tab[k % f.modulus][xi]
                j = lattice_exponent(r, lam)
                assert j is not None
                if k % 97 == 0:
                    assert r == rn_ratio(sys_, k, x)
                    assert rn_log(sys_, k, x) == pytest.approx(j * log_l, abs=1e-12)
        w = essential_value_witness(OdometerSpec(lam, (9, 157)), 0)
        assert w.mode == "exhaustive" and w.checked > 0 and w.failures == 0 and w.confirmed and w.bound_holds
        w = essential_value_witness(OdometerSpec(lam, (9, 157, 45217)), 1, seed=6)
        assert w.mode == "sampled" and w.failures == 0 and w.confirmed and w.bound_holds


def test_07_gaussian_identity_suite(gate):
    with gate(7, "Gaussian exp identities and Monte Carlo normalizations", 30):
        rng = np.random.default_rng(107)
        for i in range(20):
            d = int(rng.integers(1, 9))
            sp = GaussianSpace(rng.uniform(0.2, 3, d))
            h, k, f = (rng.normal(size=d) * rng.uniform(0.1, 0.8) / math.sqrt(d) for _ in range(3))
            for x in sample(sp, 1000 + i, 50):
                assert math.isclose(exp_log(sp, h, x) + exp_log(sp, k, x), inner0(h, k) + exp_log(sp, h + k, x),
                                    rel_tol=1e-10, abs_tol=1e-10)
                assert math.isclose(0.5 * exp_log(sp, h, x), -norm0_sq(h) / 8 + exp_log(sp, h / 2, x),
                                    rel_tol=1e-10, abs_tol=1e-10)
                assert math.isclose(exp_translate(sp, h, f, x), math.exp(-inner0(h, f)) * exp_eval(sp, h, x),
                                    rel_tol=1e-10)
            assert exp_inner_mc(sp, h, k, 2000 + i).within(math.exp(inner0(h, k)))
            assert exp_mean_mc(sp, h, 3000 + i).within(1.0)
            assert sqrt_exp_norm_mc(sp, h, 4000 + i).within(sqrt_exp_norm(h))


def test_08_koopman_weyl(gate):
    with gate(8, "Koopman and Weyl dual paths agree", 5):
        rng = np.random.default_rng(108)
        for i in range(100):
            d = int(rng.integers(1, 7))
            sp = GaussianSpace(rng.uniform(0.2, 3, d))
            V = random_orthogonal(d, rng, avoid_one=False)
            A = AffineMap(rng.normal(scale=0.7, size=d), V)
            h = rng.normal(scale=0.7, size=d)
            x = sp.embed(rng.standard_normal(d))
            lhs, rhs = koopman_consistency(sp, A, h, x)
            assert abs(lhs - rhs) < 1e-8 * max(1.0, abs(rhs))
            # pure translation: e^{-|f|^2/8 - <f,h>/2} exp_{f/2+h}
            T = AffineMap(A.f, np.eye(d))
            lhs, rhs = koopman_consistency(sp, T, h, x)
            expect = math.exp(-norm0_sq(A.f) / 8 - inner0(A.f, h) / 2) * exp_eval(sp, A.f / 2 + h, x)
            assert abs(lhs - expect) < 1e-8 * max(1.0, expect) and abs(rhs - expect) < 1e-8 * max(1.0, expect)


def test_09_coboundary_equivalences(gate):
    with gate(9, "coboundary solve, bounded drift, invariant density; V=I unbounded", 60):
        rng = np.random.default_rng(109)
        for i in range(50):
            d = int(rng.integers(2, 7))
            V = random_orthogonal(d, rng, gap=0.2)
            f = rng.normal(size=d)
            a = solve_coboundary(V, f)
            # rescale so that the invariant density has moderate variance
            f, a = f * (0.8 / np.linalg.norm(a)), a * (0.8 / np.linalg.norm(a))
            assert np.linalg.norm(f - (a - V @ a)) < 1e-9
            A = AffineMap(f, V)
            orb = drift_orbit(A, 10_000)
            assert np.sqrt(orb.norms0_sq.max()) <= 2 * np.linalg.norm(a) + 1e-9
            sp = GaussianSpace(np.ones(d))
            lo = -np.ones(d) * 0.3
            g = box_indicator(lo, lo + 1.5)
            assert invariance_mc(sp, A, a, g, 500 + i).passes()
        f = np.array([1.0, -2.0, 0.5])
        with pytest.raises(NoSolution):
            solve_coboundary(np.eye(3), f)
        norms = np.sqrt(drift_orbit(AffineMap(f, np.eye(3)), 1000).norms0_sq)
        np.testing.assert_allclose(norms, np.arange(1, 1001) * np.linalg.norm(f), rtol=1e-12)


def test_10_shell_split(gate):
    with gate(10, "shell split reassembly and per-shell bound", 5):
        rng = np.random.default_rng(110)
        for _ in range(50):
            d = int(rng.integers(2, 11))
            V = random_orthogonal(d, rng)
            f = rng.normal(size=d)
            blocks = shell_split(V, f)
            total = sum(b.a_block - V @ b.a_block for b in blocks)
            assert np.abs(total - f).max() < 1e-10
            for b in blocks:
                assert np.linalg.norm(b.a_block) <= (b.shell + 1) * np.linalg.norm(b.f_block) * (1 + 1e-12) + 1e-15


def test_11_poincare_and_tdiss(gate):
    with gate(11, "Poincare exponent models and t_diss band", 120):
        n = np.arange(1, 10_001, dtype=float)
        for c in (0.5, 1.0, 3.0):
            assert poincare_exponent(c * n).delta == 0.0
            assert poincare_exponent(c * np.log(n)).delta == pytest.approx(1 / c, rel=1e-9)
            assert poincare_exponent(c * (1 + np.cos(n))).delta == math.inf
            noisy = c * np.log(n) + rng_for(111, int(c * 10)).normal(0, 0.1, n.size)
            assert abs(poincare_exponent(noisy).delta - 1 / c) < 0.1 / c
        d = 400
        sp = GaussianSpace(np.ones(d))
        A = AffineMap(np.eye(d)[0], negacyclic_shift(d))
        scan = tdiss_scan(sp, A, [0.0, 0.1, 0.25, 0.5, 1.0, 2.0], d, 100, 11)
        assert scan.frac_convergent[0] == 0.0
        assert scan.delta_hat == 0.0
        assert scan.bounds == t_diss_bounds(scan.delta_hat)
        assert scan.intersects and not scan.inconsistent


def test_12_top_slice(gate):
    with gate(12, "top-slice mass >= (delta/2) total on 10^4 sample sets", 5):
        rng = np.random.default_rng(112)
        for i in range(10_000):
            n = int(rng.integers(1, 60))
            kind = i % 4
            if kind == 0:
                phi = rng.exponential(size=n)
            elif kind == 1:
                phi = rng.pareto(0.7, size=n)
            elif kind == 2:  # two spikes over a floor of zeros
                phi = np.zeros(n + 2)
                phi[:2] = rng.uniform(0, 1e6, 2)
            else:  # one giant spike, one small
                phi = np.concatenate([[1e12], [rng.uniform(0, 1)], np.zeros(n)])
            delta = float(rng.uniform(0.001, 0.999))
            r = top_slice_mass(phi, delta)
            assert r.holds and r.slice_sum >= 0.5 * delta * r.total * (1 - 1e-12)


def test_13_cocycle_equations(gate):
    with gate(13, "skew cocycle composition over 10^5 steps; exact telescoping", 30):
        base = RotationBase(math.sqrt(2) - 1)
        c = CocycleSpec.custom(lambda y: math.cos(2 * math.pi * y) + 0.3 * math.sin(6 * math.pi * y))
        s = SkewState(0.123, 0.0)
        for n, m in ((60_000, 40_000), (1, 99_999)):
            mid = skew_orbit(base, c, s, m, stride=m).final
            whole = fiber_after(base, c, s, n + m)
            rest = fiber_after(base, c, SkewState(mid.base_point, 0.0), n)
            assert abs(whole - (rest + mid.fiber)) < 1e-9
        # exact telescoping for an explicit coboundary over a rational rotation
        qb = RotationBase(Fraction(5, 13))
        h = lambda y: Fraction(7 * y.numerator - 3, y.denominator)
        y0 = Fraction(2, 13)
        o = skew_orbit(qb, CocycleSpec.coboundary(qb, h), SkewState(y0, Fraction(0)), 100_000, stride=100_000)
        assert o.final.fiber == h(o.final.base_point) - h(y0)
        # Maharam fiber over the odometer: integer lattice index, exact composition
        ob = OdometerBase(build_odometer(OdometerSpec(Fraction(1, 2), (5, 7, 11))), Fraction(1, 2))
        s0 = SkewState((1, 4, 9), 0)
        mid = maharam_orbit(ob, s0, 3000, stride=3000, exact=True).final
        rest = maharam_orbit(ob, SkewState(mid.base_point, 0), 2000, stride=2000, exact=True).final
        whole = maharam_orbit(ob, s0, 5000, stride=5000, exact=True).final
        assert whole.fiber == mid.fiber + rest.fiber


def _cli(args):
    r = subprocess.run([sys.executable, "-m", "ergolab", *args], capture_output=True)
    assert r.returncode == 0, r.stderr.decode()


def test_14_determinism(gate, tmp_path):
    with gate(14, "byte-identical outputs across runs and worker counts", 10):
        cfg = tmp_path / "scan.json"
        cfg.write_text(json.dumps({"subcommand": "tdiss-scan", "seed": 42, "format": "csv",
                                   "params": {"dim": 120, "K": 120, "samples": 40, "t_grid": [0, 0.5, 1, 2]}}))
        outs = []
        for i, w in enumerate((1, 1, 3)):
            out = tmp_path / f"scan{i}.csv"
            _cli(["tdiss-scan", "--config", str(cfg), "--workers", str(w), "--out", str(out)])
            outs.append(out.read_bytes())
        assert outs[0] == outs[1] == outs[2]
        for args in (["gaussian", "identities", "--seed", "7", "--n", "200"],
                     ["odometer", "witness", "--seed", "5", "--moduli", "9,157,45217", "--n", "1", "--samples", "500"],
                     ["skew", "maharam", "--base", "gaussian", "--seed", "8", "--format", "csv"]):
            got = []
            for j in range(2):
                out = tmp_path / f"o{j}.out"
                _cli(args + ["--out", str(out)])
                got.append(out.read_bytes())
            assert got[0] == got[1]
