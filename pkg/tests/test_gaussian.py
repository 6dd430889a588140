import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ergolab._numerics import TraceClass
from ergolab.errors import DomainError, FixedSpaceObstruction, NoSolution, Undecided
from ergolab.gaussian import (AffineMap, GaussianSpace, apply_T, box_indicator, cm_log_density, drift_orbit,
                              exp_eval, exp_inner_mc, exp_mean_mc, exp_translate, hopf_mc, identity_suite,
                              independent_slab_witness, invariance_mc, invariant_density, koopman_consistency,
                              negacyclic_shift, poincare_exponent, random_orthogonal, rotation2, sample,
                              shell_index, shell_split, solve_coboundary, sqrt_exp_norm, sqrt_exp_norm_mc,
                              t_diss_bounds, tdiss_scan, translate, weyl_apply)

SPACE = GaussianSpace([1.0, 0.5, 2.0])


def test_space_validation_and_json():
    with pytest.raises(DomainError):
        GaussianSpace([1.0, 0.0])
    assert GaussianSpace.from_dict(SPACE.to_dict()).eigs.tolist() == SPACE.eigs.tolist()
    A = AffineMap([1.0, 2.0], rotation2(0.3))
    B = AffineMap.from_dict(A.to_dict())
    assert np.array_equal(A.V, B.V) and np.array_equal(A.f, B.f)
    with pytest.raises(DomainError):
        AffineMap([1.0, 0.0], [[1.0, 0.1], [0.0, 1.0]])


def test_sampling_moments():
    x = sample(GaussianSpace([1.0]), 1, 100_000)[:, 0]
    assert abs(x.var() - 1) < 0.02
    assert abs(x.mean()) < 4 / math.sqrt(x.size)
    x = sample(SPACE, 2, 100_000)
    sq = (x**2).sum(axis=1)
    assert abs(sq.mean() - SPACE.trace) < 4 * sq.std() / math.sqrt(sq.size)
    assert np.array_equal(sample(SPACE, 9), sample(SPACE, 9))


def test_cm_density():
    x = sample(SPACE, 3, 100_000)
    assert np.all(cm_log_density(SPACE, np.zeros(3), x) == 0)
    y = np.array([0.3, -0.2, 0.5])
    # H coordinates: sum y_i x_i / lambda_i - sum y_i^2 / (2 lambda_i)
    yH = SPACE.embed(y)
    direct = (x * yH / SPACE.eigs).sum(axis=1) - 0.5 * (yH**2 / SPACE.eigs).sum()
    np.testing.assert_allclose(cm_log_density(SPACE, y, x), direct, atol=1e-12)
    est = exp_mean_mc(SPACE, y, 4)
    assert est.within(1.0)


def test_change_of_variables():
    y = np.array([0.4, 0.1, -0.3])
    x = sample(SPACE, 5, 200_000)
    g = box_indicator([-0.5, -1.0, -1.0], [1.5, 0.5, 2.0])
    lhs = g(translate(y, x, SPACE))
    rhs = g(x) * exp_eval(SPACE, y, x)
    # paired samples would be wrong here: compare independent means
    se = math.sqrt(lhs.var() / lhs.size + rhs.var() / rhs.size)
    assert abs(lhs.mean() - rhs.mean()) < 4 * se


vectors3 = st.lists(st.floats(-1, 1), min_size=3, max_size=3).map(np.array)


@settings(max_examples=100, deadline=None)
@given(vectors3, vectors3, vectors3, vectors3)
def test_exp_identities(h, k, f, z):
    x = SPACE.embed(z * 2)
    assert exp_eval(SPACE, h, x) > 0
    assert exp_eval(SPACE, h, x) * exp_eval(SPACE, k, x) == pytest.approx(
        math.exp(h @ k) * exp_eval(SPACE, h + k, x), rel=1e-10)
    assert math.sqrt(exp_eval(SPACE, h, x)) == pytest.approx(math.exp(-(h @ h) / 8) * exp_eval(SPACE, h / 2, x), rel=1e-10)
    assert exp_translate(SPACE, h, f, x) == pytest.approx(math.exp(-(h @ f)) * exp_eval(SPACE, h, x), rel=1e-10)


def test_exp_translate_orthogonal_is_invariant():
    x = sample(SPACE, 1)
    assert exp_translate(SPACE, [1.0, 0, 0], [0, 2.0, 0], x) == pytest.approx(exp_eval(SPACE, [1.0, 0, 0], x))


def test_exp_inner_mc():
    h, k = np.array([0.3, 0.1, -0.2]), np.array([-0.1, 0.4, 0.2])
    assert exp_inner_mc(SPACE, h, k, 11).within(math.exp(h @ k))


def test_weyl():
    V = rotation2(0.7)
    h = np.array([0.2, -0.5])
    c, v = weyl_apply(AffineMap([0, 0], V), h)
    assert c == 0 and np.allclose(v, V @ h)
    c, v = weyl_apply(AffineMap([1.0, 2.0], np.eye(2)), [0, 0])
    assert c == pytest.approx(-2.5) and np.allclose(v, [1, 2])


def test_apply_T_composition_and_commutation():
    rng = np.random.default_rng(0)
    A = AffineMap(rng.normal(size=3), random_orthogonal(3, rng))
    B = AffineMap(rng.normal(size=3), random_orthogonal(3, rng))
    x = sample(SPACE, 1)
    np.testing.assert_allclose(apply_T(A, apply_T(B, x, SPACE), SPACE), apply_T(A.compose(B), x, SPACE), atol=1e-12)
    assert np.max(np.abs(A.compose(B).V.T @ A.compose(B).V - np.eye(3))) < 1e-10
    np.testing.assert_allclose(apply_T(AffineMap(np.zeros(3), np.eye(3)), x, SPACE), x)
    # L_f and T_(0,V) commute exactly when V f = f
    V = np.eye(3)
    V[1:, 1:] = rotation2(1.0)
    for f, commute in (([2.0, 0, 0], True), ([0, 1.0, 0], False)):
        Lf, R = AffineMap(f, np.eye(3)), AffineMap(np.zeros(3), V)
        diff = apply_T(Lf, apply_T(R, x, SPACE), SPACE) - apply_T(R, apply_T(Lf, x, SPACE), SPACE)
        assert (np.abs(diff).max() < 1e-12) == commute


def test_koopman_examples():
    x = sample(SPACE, 3)
    h = np.array([0.2, 0.1, -0.4])
    lhs, rhs = koopman_consistency(SPACE, AffineMap(np.zeros(3), np.eye(3)), h, x)
    assert lhs == pytest.approx(exp_eval(SPACE, h, x)) and rhs == pytest.approx(lhs)
    f = np.array([0.5, -0.3, 0.8])
    lhs, rhs = koopman_consistency(SPACE, AffineMap(f, np.eye(3)), np.zeros(3), x)
    expect = math.exp(-(f @ f) / 8) * exp_eval(SPACE, f / 2, x)
    assert lhs == pytest.approx(expect, rel=1e-12) and rhs == pytest.approx(expect, rel=1e-12)


def test_identity_suite():
    assert identity_suite(SPACE, 7, 300)["max"] < 1e-10


def test_drift_orbit():
    f = np.array([1.0, 0.0])
    assert np.allclose(drift_orbit(AffineMap(f, np.eye(2)), 5).terms[-1], 5 * f)
    o = drift_orbit(AffineMap(f, -np.eye(2)), 6)
    assert np.allclose(o.norms0_sq, [1, 0, 1, 0, 1, 0])
    o = drift_orbit(AffineMap(f, rotation2(math.pi / 2)), 12)
    assert np.allclose(o.terms[3::4], 0) and np.sqrt(o.norms0_sq).max() <= 2 + 1e-12
    rng = np.random.default_rng(4)
    A = AffineMap(rng.normal(size=4), random_orthogonal(4, rng))
    o = drift_orbit(A, 130)
    for m, n in ((3, 7), (64, 64), (10, 1)):
        Vm = np.linalg.matrix_power(A.V, m)
        np.testing.assert_allclose(o.terms[m + n - 1], o.terms[m - 1] + Vm @ o.terms[n - 1], atol=1e-10)


def test_solve_coboundary_examples():
    np.testing.assert_allclose(solve_coboundary(rotation2(math.pi / 2), [1.0, 0.0]), [0.5, 0.5], atol=1e-15)
    np.testing.assert_allclose(solve_coboundary(-np.eye(3), [1.0, 2.0, 3.0]), [0.5, 1.0, 1.5])
    with pytest.raises(NoSolution):
        solve_coboundary(np.eye(2), [1.0, 0.0])
    # fixed space present but f orthogonal to it
    V = np.eye(3)
    V[1:, 1:] = rotation2(2.0)
    a = solve_coboundary(V, [0.0, 1.0, -1.0])
    np.testing.assert_allclose(a - V @ a, [0.0, 1.0, -1.0], atol=1e-12)


def test_invariant_density():
    V = rotation2(math.pi / 2)
    a = np.array([0.5, 0.5])
    A = AffineMap(a - V @ a, V)
    sp = GaussianSpace([1.0, 1.0])
    g = box_indicator([-0.3, -1.0], [1.2, 0.7])
    assert invariance_mc(sp, A, a, g, 3).passes()
    assert exp_mean_mc(sp, invariant_density(a).h, 8).within(1.0)
    assert invariant_density(np.zeros(2))(sp, [0.3, 0.1]) == 1.0


def test_sqrt_exp_norm():
    assert sqrt_exp_norm([0, 0]) == 1.0
    assert sqrt_exp_norm([2.0, 2.0]) == pytest.approx(math.exp(-1))
    h = np.array([0.5, -0.4, 0.3])
    est = sqrt_exp_norm_mc(SPACE, h, 6, 1_000_000)
    assert est.mean == pytest.approx(sqrt_exp_norm(h), rel=1e-3)


def test_shell_split():
    th = 2 * math.asin(0.375)  # |e^{i th} - 1| = 0.75, in shell 1
    V = rotation2(th)
    blocks = shell_split(V, [1.0, 0.0])
    assert [b.shell for b in blocks] == [1]
    np.testing.assert_allclose(blocks[0].a_block, solve_coboundary(V, [1.0, 0.0]), atol=1e-12)
    assert all(np.allclose(b.a_block, 0) for b in shell_split(V, [0.0, 0.0]))
    with pytest.raises(FixedSpaceObstruction):
        shell_split(np.eye(2), [1.0, 0.0])
    assert shell_index(1 + 0.5) == 2 and shell_index(3.5) == 0 and shell_index(1 - 1.0) == 1 and shell_index(1 + 1 / 3 + 0j) == 3


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32), st.integers(2, 8))
def test_shell_reassembly(seed, d):
    rng = np.random.default_rng(seed)
    V = random_orthogonal(d, rng)
    f = rng.normal(size=d)
    blocks = shell_split(V, f)
    total = sum(b.a_block - V @ b.a_block for b in blocks)
    np.testing.assert_allclose(total, f, atol=1e-10)
    assert all(b.bound_ok for b in blocks)


def test_poincare_models():
    n = np.arange(1, 5001)
    assert poincare_exponent(3.0 * n).delta == 0.0
    assert poincare_exponent(2 * np.log(n)).delta == pytest.approx(0.5, rel=1e-12)
    assert poincare_exponent(np.full(100, 4.0)).delta == math.inf
    assert poincare_exponent(np.tile([1.0, 0.0], 100)).delta == math.inf
    assert poincare_exponent(2 * np.log(n), "log").model == "log"
    assert poincare_exponent(n * 1.0, "bounded").delta == math.inf
    with pytest.raises(Undecided):
        poincare_exponent(np.sin(n / 300.0) * n, "log")
    with pytest.raises(Undecided):
        poincare_exponent([1.0, 2.0])


def test_poincare_noisy_log():
    n = np.arange(1, 20001)
    rng = np.random.default_rng(12)
    for c in (0.5, 2.0, 5.0):
        fit = poincare_exponent(c * np.log(n) + rng.normal(0, 0.1, n.size))
        assert fit.delta == pytest.approx(1 / c, rel=0.1)


def test_t_diss_bounds():
    assert t_diss_bounds(0) == (0, 0)
    assert t_diss_bounds(2) == (2, 4)
    assert t_diss_bounds(0.5) == (1, 2)
    assert t_diss_bounds(math.inf) == (math.inf, math.inf)
    with pytest.raises(DomainError):
        t_diss_bounds(-1)


def test_hopf_mc():
    sp = GaussianSpace([1.0, 1.0])
    A = AffineMap([1.0, 0.0], rotation2(1.0))
    trs = hopf_mc(sp, A, 0.0, 1, 50, 5)
    assert all(np.allclose(t.partials, np.arange(1, 51)) for t in trs)
    trs = hopf_mc(sp, AffineMap([1.0, 0.0], -np.eye(2)), 1.0, 1, 2000, 20)
    assert all(t.classification is TraceClass.DIVERGENT for t in trs)
    big = GaussianSpace(np.ones(300))
    trs = hopf_mc(big, AffineMap(np.eye(300)[0], negacyclic_shift(300)), 1.5, 2, 300, 40)
    assert sum(t.classification is TraceClass.CONVERGENT for t in trs) > 20
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        hopf_mc(sp, AffineMap([1.0, 0.0], np.eye(2)), 1.0, 1, 10, 2)
    assert any("invariant vectors" in str(x.message) for x in w)


def test_hopf_mc_monotone_in_t():
    sp = GaussianSpace(np.ones(200))
    A = AffineMap(np.eye(200)[0] * 0.7, negacyclic_shift(200))
    prev = None
    for t in np.linspace(0.05, 2.0, 12):
        cur = [tr.classification is TraceClass.CONVERGENT for tr in hopf_mc(sp, A, t, 4, 200, 60)]
        if prev is not None:
            assert all(c or not p for p, c in zip(prev, cur))
        prev = cur


def test_hopf_mc_sample_subsets_reproducible():
    sp = GaussianSpace(np.ones(4))
    A = AffineMap([1.0, 0, 0, 0], random_orthogonal(4, np.random.default_rng(1)))
    full = hopf_mc(sp, A, 0.8, 3, 100, 10)
    part = hopf_mc(sp, A, 0.8, 3, 100, 3, sample_ids=[7, 8, 9])
    for a, b in zip(full[7:], part):
        assert np.array_equal(a.log_partials, b.log_partials)


def test_tdiss_scan_linear_growth():
    sp = GaussianSpace(np.ones(300))
    A = AffineMap(np.eye(300)[0], negacyclic_shift(300))
    scan = tdiss_scan(sp, A, [0.0, 0.25, 0.5, 1.0, 2.0], 300, 60, 1)
    assert scan.frac_convergent[0] == 0.0
    assert scan.delta_hat == 0.0 and scan.bounds == (0.0, 0.0)
    assert scan.intersects and not scan.inconsistent
    with pytest.raises(DomainError):
        tdiss_scan(sp, A, [], 300, 10, 1)
    with pytest.raises(DomainError):
        tdiss_scan(sp, A, [1.0, 0.5], 300, 10, 1)


def test_slab_witness():
    sp = GaussianSpace([1.0, 0.5, 0.25, 2.0])
    r = independent_slab_witness(sp, 2, 0.0, 0.1, seed=3)
    from scipy.stats import norm

    assert r.mass == pytest.approx(norm.cdf(0.6) - norm.cdf(0.4))
    assert abs(r.mass_mc - r.mass) < 4 * r.mass_se
    assert r.membership_matches and r.independent
    r0 = independent_slab_witness(sp, 0, 0.0, 0.1, seed=3)
    assert r0.mass == r.mass
    with pytest.raises(DomainError):
        independent_slab_witness(sp, 4, 0.0, 0.1)
