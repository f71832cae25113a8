import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pinchflow.algebra import AmbientSphere, SffPoint, ValidationError, sample_sff
from pinchflow.exact import CliffordEmbedding, sff_of
from pinchflow.pinching import (PinchingParams, Q, acylindrical_membership, bernstein_times, codim_epsilon,
                                default_eta, eta0, monitor_ratios, poincare_F, poincare_inf, reaction_Q,
                                reaction_Q_bound, strict_pinching_rhs)

S8 = AmbientSphere(8, 2, 1.0)


def test_Q_umbilic_and_zero():
    p = SffPoint.from_slots(np.eye(8), np.zeros((8, 8)))
    assert Q(p, PinchingParams(2, 0.0), S8) == pytest.approx(-10 / 3, rel=1e-14)
    zero = SffPoint(np.zeros((8, 8, 2)))
    assert Q(zero, PinchingParams(2, 0.3), S8) == pytest.approx(-PinchingParams(2, 0.3).b / 2)


def test_Q_on_clifford_counterexample():
    eps = 0.1
    p = sff_of(CliffordEmbedding(2, eps, AmbientSphere(8, 1, 1.0)))
    q = Q(p, PinchingParams(2, 0.0), AmbientSphere(8, 1, 1.0))
    assert q == pytest.approx(2 * eps**2 / 3, rel=1e-9)
    assert q > 0


def test_strict_pinching_rhs():
    assert strict_pinching_rhs(8) == pytest.approx((1 / 6, 4))
    assert strict_pinching_rhs(7) == pytest.approx((4 / 21, 3.5))
    assert strict_pinching_rhs(5) == pytest.approx((9 / 35, 20 / 9))
    with pytest.raises(ValidationError):
        strict_pinching_rhs(4)


def test_admissibility():
    assert PinchingParams(2, 0.01).admissible(8)
    assert not PinchingParams(2, 0.1).admissible(6)  # alpha_6 = 0.5
    assert PinchingParams(2, 0.51).admissible(6)
    with pytest.raises(ValidationError):
        PinchingParams(2, 1.0)


def test_acylindrical_membership_cases():
    n, alpha, eta = 8, 0.01, default_eta(8)
    sp = AmbientSphere(n, 1, 1.0)
    cyl = SffPoint.hypersurface([100.0] * (n - 1) + [0.0])
    assert not acylindrical_membership(cyl, alpha, eta, sp)
    assert acylindrical_membership(SffPoint(np.zeros((n, n, 1))), alpha, eta, sp)
    # scan s: membership interval in s computed in closed form below
    base = np.array([1, 1, 1, 1, 1, 1, 0.3, -0.3])
    A2, H2 = np.sum(base**2), np.sum(base) ** 2
    c_up, c_lo = 1 / (n - 2 + alpha), 1 / (n - 1) + eta
    assert A2 - c_lo * H2 >= 0
    s_max = math.sqrt(2 * (2 - alpha) / (A2 - c_up * H2)) if A2 > c_up * H2 else math.inf
    for s in (0.5 * s_max, 0.99 * s_max, 1.01 * s_max, 2 * s_max):
        got = acylindrical_membership(SffPoint.hypersurface(s * base), alpha, eta, sp)
        assert got == (s <= s_max)


def test_poincare_F_examples():
    assert poincare_F([2.0] * 5, 1.0) == 0
    assert poincare_F([1.0, -1.0], 1.0) == 0
    lam = np.array([1.0, 2.0, -0.5])
    brute = sum((lam[p] * lam[q] + 1) ** 2 * (lam[p] - lam[q]) ** 2 for p in range(3) for q in range(3))
    assert poincare_F(lam, 1.0) == pytest.approx(brute, rel=1e-14)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=2, max_size=8), st.floats(0.1, 4))
def test_poincare_F_nonnegative(lam, K):
    assert poincare_F(lam, K) >= 0


def test_poincare_small_budget_consistent():
    res = poincare_inf(8, 0.01, default_eta(8), 1.0, budget=20_000, seed=1, descents=4)
    assert not res.empty and res.gamma > 0
    assert res.consistency_min >= res.gamma - 1e-12


def test_eta0_value():
    # eta0(8) = 1/6 - 1/7
    assert eta0(8) == pytest.approx(1 / 42)


def test_monitor_ratios_umbilic_zero():
    r = monitor_ratios(SffPoint.hypersurface([0.7] * 8), grad=0.0, hess_norm=0.0)
    for k in ("cylindrical_decay_ratio", "codim_fsigma", "gradient_ratio", "hessian_ratio", "weighted_decay"):
        assert abs(r[k]) < 1e-15


def test_monitor_ratio_clifford_value():
    eps, n = 0.1, 8
    sp = AmbientSphere(n, 1, 1.0)
    p = sff_of(CliffordEmbedding(1, eps, sp))
    r = monitor_ratios(p, sphere=sp)
    num = r["cylindrical_ratio_nminus1"] * (p.Hnorm**2 + 1.0) - 2.0
    assert num == pytest.approx((n - 2) / (n - 1) * eps**2, rel=1e-9)


def test_W_lower_bound_on_pinched_samples():
    n, params = 8, PinchingParams(2, 0.01)
    eps = codim_epsilon(n, params)
    assert eps > 0
    a_s, b_s = params.shifted(n)
    rng = np.random.default_rng(4)
    checked = 0
    while checked < 10_000:
        A = rng.standard_normal((2000, n)) * rng.uniform(0.01, 0.3, (2000, 1)) + rng.uniform(0, 20, (2000, 1))
        A2, H2 = np.sum(A**2, 1), np.sum(A, 1) ** 2
        pinched = A2 - params.a(n) * H2 - params.b <= 0
        W = 0.5 * (b_s + a_s * H2 - A2)
        assert np.all(2 * W[pinched] >= eps * params.b * (H2[pinched] + 1) - 1e-9)
        checked += int(pinched.sum())


def test_bernstein_times():
    bt = bernstein_times(8, 2.0)
    assert bt.Lambda0 == 4.0
    assert math.exp(2 * 8 * bt.lambda0) == pytest.approx(1 + 8 / (8 + 12))
    assert 0 < bt.lambda0 < bt.T_lower


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.1, 10))
def test_Q_scaling_covariant(seed, c):
    p = sample_sff(seed, 8, 2)
    params = PinchingParams(2, 0.01)
    q1 = Q(p, params, AmbientSphere(8, 2, 1.0))
    q2 = Q(SffPoint(c * p.A), params, AmbientSphere(8, 2, c**2))
    assert q2 == pytest.approx(c**2 * q1, rel=1e-10, abs=1e-10)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.1, 10))
def test_acylindrical_scale_invariant(seed, c):
    p = sample_sff(seed, 8, 1, "near-cylindrical")
    eta = default_eta(8)
    a = acylindrical_membership(p, 0.01, eta, AmbientSphere(8, 1, 1.0))
    b = acylindrical_membership(SffPoint(c * p.A), 0.01, eta, AmbientSphere(8, 1, c**2))
    assert a == b


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.5, 30), st.integers(1, 3))
def test_reaction_bounded_by_inequalities(seed, H, ell):
    rng = np.random.default_rng(seed)
    n = 8
    A = np.zeros((n, n, ell))
    A[:, :, 0] = np.diag(np.full(n, H / n) + 0.05 * H / n * rng.standard_normal(n))
    if ell > 1:
        X = 0.02 * H / n * rng.standard_normal((n, n, ell - 1))
        A[:, :, 1:] = X + X.transpose(1, 0, 2)
    p = SffPoint(A)
    sp = AmbientSphere(n, ell, 1.0)
    params = PinchingParams(2, 0.01)
    assert reaction_Q(p, params, sp) <= reaction_Q_bound(p, params, sp) + 1e-9 * (1 + H**4)
