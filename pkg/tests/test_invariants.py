"""Conserved quantities: values, identities, and drift under step halving."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wnlab import flow, invariants, model
from wnlab.errors import DomainError, InvariantOverflowError
from wnlab.flow import FlowConfig, InitSpec
from wnlab.model import PolarState, ProblemInstance, projectors


def weak_instance(seed, m=5, n=8, scale=0.1):
    """Instance with small operator norm: slow flow, long strong-gradient phase."""
    rng = np.random.default_rng(seed)
    A = scale * rng.standard_normal((m, n))
    x_star = rng.uniform(0.5, 2.0, n)
    return ProblemInstance(A=A, b=A @ x_star**2, x_star=x_star)


def uniform_x0(seed, n=8):
    return np.random.default_rng(1000 + seed).uniform(0.5, 2.0, n)


# ---------------------------------------------------------------------------
# h0
# ---------------------------------------------------------------------------

def test_h0_square_full_rank_vanishes():
    inst = ProblemInstance(A=np.eye(3) + 0.1, b=np.zeros(3))
    proj = projectors(inst)
    assert invariants.h0(np.array([1.0, 2.0, 3.0]), proj, 2) == pytest.approx(
        [0.0, 0.0, 0.0], abs=1e-12
    )


def test_h0_value_one_row():
    inst = ProblemInstance(A=[[1.0, 1.0]], b=[1.0])
    proj = projectors(inst)
    x = np.array([math.e, math.e**2])
    assert invariants.h0(x, proj, 2) == pytest.approx([-0.5, 0.5])


def test_h0_requires_positive_x_for_log():
    inst = ProblemInstance(A=[[1.0, 1.0]], b=[1.0])
    proj = projectors(inst)
    with pytest.raises(DomainError):
        invariants.h0(np.array([1.0, -1.0]), proj, 2)


def test_h0_linear_depth_needs_no_positivity():
    inst = ProblemInstance(A=[[1.0, 1.0]], b=[1.0])
    proj = projectors(inst)
    out = invariants.h0(np.array([1.0, -1.0]), proj, 1)
    assert out == pytest.approx([1.0, -1.0])


@pytest.mark.parametrize("L", [2, 3])
def test_h0_conserved_under_plain_flow_with_h_squared_drift(L):
    inst = weak_instance(0, scale=0.005)
    proj = projectors(inst)
    x0 = uniform_x0(0)

    def max_drift(h, steps):
        cfg = FlowConfig(
            variant="plain",
            depth=L,
            step_size=h,
            max_iters=steps,
            loss_tol=1e-300,
            snapshot_stride=max(steps // 20, 1),
            init=InitSpec(mode="explicit", x0=x0),
        )
        rec = flow.integrate(cfg, inst)
        ref = invariants.h0(rec.snapshots[0].state.x, proj, L)
        return max(
            np.max(np.abs(invariants.h0(s.state.x, proj, L) - ref))
            for s in rec.snapshots[1:]
        )

    d1 = max_drift(1e-3, 10_000)
    d2 = max_drift(5e-4, 10_000)
    assert d1 <= 1e-4
    assert d1 / d2 == pytest.approx(4.0, rel=0.3)


# ---------------------------------------------------------------------------
# h_eta
# ---------------------------------------------------------------------------

def test_h_eta_square_full_rank_vanishes():
    inst = ProblemInstance(A=np.eye(2) + 0.2, b=np.zeros(2))
    proj = projectors(inst)
    s = PolarState(r=0.7, u=np.array([0.6, 0.8]))
    assert invariants.h_eta(s, proj, 2, 0.1) == pytest.approx([0.0, 0.0], abs=1e-12)


def test_h_eta_relates_to_h0_by_projected_constant():
    rng = np.random.default_rng(3)
    inst = weak_instance(3)
    proj = projectors(inst)
    u = np.abs(rng.standard_normal(inst.n))
    u /= np.linalg.norm(u)
    r, eta = 1.3, 0.2
    s = PolarState(r=r, u=u)
    lhs = invariants.h_eta(s, proj, 2, eta)
    rhs = invariants.h0(u, proj, 2) + proj.kernel_complement(
        np.full(inst.n, r**2 / (2 * eta))
    )
    assert lhs == pytest.approx(rhs, abs=1e-12)


def test_h_eta_overflow_raises_and_log_space_works():
    inst = ProblemInstance(A=[[1.0, 1.0]], b=[1.0])
    proj = projectors(inst)
    s = PolarState(r=50.0, u=np.array([0.6, 0.8]))
    with pytest.raises(InvariantOverflowError):
        invariants.h_eta(s, proj, 3, eta=0.001)
    vec, logf = invariants.h_eta(s, proj, 3, eta=0.001, log_space=True)
    assert np.all(np.isfinite(vec))
    assert logf == pytest.approx(-(50.0**2) / 0.002)


def test_h_eta_conserved_under_wn_flow():
    inst = weak_instance(4, scale=0.005)
    proj = projectors(inst)
    x0 = uniform_x0(4)
    r0 = float(np.linalg.norm(x0))

    def max_drift(h, steps):
        cfg = FlowConfig(
            variant="wn_constant",
            eta_ratio=0.1,
            step_size=h,
            max_iters=steps,
            loss_tol=1e-300,
            snapshot_stride=max(steps // 20, 1),
            init=InitSpec(mode="polar", r0=r0, u0=x0 / r0),
        )
        rec = flow.integrate(cfg, inst)
        ref = invariants.h_eta(rec.snapshots[0].state, proj, 2, 0.1)
        return max(
            np.max(np.abs(invariants.h_eta(s.state, proj, 2, 0.1) - ref))
            for s in rec.snapshots[1:]
        )

    d1 = max_drift(1e-3, 10_000)
    d2 = max_drift(5e-4, 10_000)
    assert d1 <= 1e-4
    assert d1 / d2 == pytest.approx(4.0, rel=0.3)


# ---------------------------------------------------------------------------
# gamma and the comparison identity
# ---------------------------------------------------------------------------

def test_gamma_at_origin_is_one():
    for eta in (0.03, 0.1, 1.0):
        assert invariants.gamma(1.7, 1.7, eta) == pytest.approx(1.0)


def test_gamma_value():
    assert invariants.gamma(1.0, 2.0, 0.1) == pytest.approx(2.0 * math.exp(-15.0))


def test_gamma_decreasing_beyond_sqrt_eta():
    grid = np.linspace(1.0, 3.0, 40)
    vals = [invariants.gamma(1.0, r, 0.1) for r in grid]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_log_gamma_consistent():
    assert invariants.log_gamma(1.0, 2.0, 0.1) == pytest.approx(
        math.log(invariants.gamma(1.0, 2.0, 0.1))
    )


def test_gamma_overflow_advice():
    with pytest.raises(InvariantOverflowError):
        invariants.gamma(100.0, 1.0, 0.001)
    assert invariants.log_gamma(100.0, 1.0, 0.001) == pytest.approx(
        math.log(0.01) + (10_000 - 1) / 0.002
    )


@pytest.mark.parametrize("L", [2, 3])
def test_comparison_identity_residual_small(L):
    inst = weak_instance(5, scale=0.05)
    proj = projectors(inst)
    u0 = uniform_x0(5)
    cfg = FlowConfig(
        variant="wn_constant",
        depth=L,
        eta_ratio=0.2,
        step_size=1e-3,
        max_iters=2000,
        loss_tol=1e-300,
        snapshot_stride=100,
        init=InitSpec(mode="polar", r0=1.0, u0=u0),
    )
    rec = flow.integrate(cfg, inst)
    res = invariants.invariant_comparison_residual(rec, proj, L, 0.2)
    assert res[0] == 0.0  # gamma(r0, r0) = 1 exactly
    assert np.max(res) <= 1e-6


def test_comparison_residual_scales_with_h_squared():
    inst = weak_instance(6, scale=0.01)
    proj = projectors(inst)
    u0 = uniform_x0(6)

    def worst(h, steps):
        cfg = FlowConfig(
            variant="wn_constant",
            eta_ratio=0.2,
            step_size=h,
            max_iters=steps,
            loss_tol=1e-300,
            snapshot_stride=steps // 10,
            init=InitSpec(mode="polar", r0=1.0, u0=u0),
        )
        rec = flow.integrate(cfg, inst)
        return np.max(invariants.invariant_comparison_residual(rec, proj, 2, 0.2))

    w1 = worst(2e-3, 4000)
    w2 = worst(1e-3, 4000)
    assert w1 / w2 == pytest.approx(4.0, rel=0.35)


# ---------------------------------------------------------------------------
# Bregman divergence
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("L", [2, 3, 4])
def test_bregman_self_divergence_zero(L):
    rng = np.random.default_rng(13)
    p = rng.uniform(0.2, 3.0, 9)
    assert invariants.bregman_div(p, p, L) == pytest.approx(0.0, abs=1e-12)


def test_bregman_value_depth_two():
    val = invariants.bregman_div(np.array([1.0]), np.array([math.e]), 2)
    assert val == pytest.approx((math.e - 2.0) / 2.0)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), L=st.sampled_from([2, 3, 4]))
def test_bregman_nonnegative_and_zero_extension(seed, L):
    rng = np.random.default_rng(seed)
    q = rng.uniform(0.1, 4.0, 6)
    z = rng.uniform(0.0, 4.0, 6)
    z[rng.integers(0, 6)] = 0.0  # exercise the 0 log 0 = 0 convention
    val = invariants.bregman_div(z, q, L)
    assert np.isfinite(val)
    assert val >= -1e-12


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), L=st.sampled_from([2, 3, 4]))
def test_bregman_midpoint_convexity_in_first_argument(seed, L):
    rng = np.random.default_rng(seed)
    q = rng.uniform(0.2, 2.0, 5)
    p1 = rng.uniform(0.05, 3.0, 5)
    p2 = rng.uniform(0.05, 3.0, 5)
    mid = invariants.bregman_div((p1 + p2) / 2, q, L)
    avg = 0.5 * invariants.bregman_div(p1, q, L) + 0.5 * invariants.bregman_div(p2, q, L)
    assert mid <= avg + 1e-12


def test_bregman_domain_errors():
    with pytest.raises(DomainError):
        invariants.bregman_div(np.array([1.0]), np.array([0.0]), 2)
    with pytest.raises(DomainError):
        invariants.bregman_div(np.array([-1.0]), np.array([1.0]), 2)
    with pytest.raises(DomainError):
        invariants.bregman_F(np.array([1.0]), 1)


# ---------------------------------------------------------------------------
# drift reports
# ---------------------------------------------------------------------------

def test_drift_report_plain_square_instance_trivial():
    inst = ProblemInstance(A=np.eye(4) + 0.05, b=np.full(4, 0.5))
    proj = projectors(inst)
    cfg = FlowConfig(
        variant="plain",
        step_size=1e-2,
        max_iters=200,
        loss_tol=1e-300,
        snapshot_stride=50,
        init=InitSpec(mode="random_positive", r0=1.0),
        seed=1,
    )
    rec = flow.integrate(cfg, inst)
    reports = {r.quantity: r for r in invariants.drift_report(rec, proj)}
    assert reports["h0"].max_abs_drift <= 1e-12  # kernel is trivial


def test_drift_report_wn_constant_tracks_norm_and_invariant():
    inst = weak_instance(14)
    proj = projectors(inst)
    cfg = FlowConfig(
        variant="wn_constant",
        eta_ratio=0.2,
        step_size=1e-3,
        max_iters=3000,
        loss_tol=1e-300,
        snapshot_stride=100,
        init=InitSpec(mode="polar", r0=1.0, u0=uniform_x0(14)),
    )
    rec = flow.integrate(cfg, inst)
    reports = {r.quantity: r for r in invariants.drift_report(rec, proj)}
    assert reports["u_norm"].max_abs_drift <= 1e-15  # renormalization on
    assert "h_eta" in reports


def test_bregman_monotone_along_dynamic_rate_flow():
    # the divergence decreases toward every feasible point under eta_r = r^2;
    # a near-exact Armijo constant keeps discrete steps inside the regime
    # where the continuous-time monotonicity shadows
    rng = np.random.default_rng(15)
    A = rng.standard_normal((5, 10)) / np.sqrt(5)
    zstar = (np.abs(rng.standard_normal(10)) + 0.1) ** 2
    inst = ProblemInstance(A=A, b=A @ zstar)
    proj = projectors(inst)
    x0 = np.sqrt(zstar) * np.exp(0.15 * rng.standard_normal(10))
    r0 = float(np.linalg.norm(x0))
    cfg = FlowConfig(
        variant="wn_dynamic",
        step="linesearch",
        armijo_c=0.5,
        max_iters=20_000,
        loss_tol=1e-12,
        snapshot_stride=1,
        init=InitSpec(mode="polar", r0=r0, u0=x0 / r0),
    )
    rec = flow.integrate(cfg, inst)
    assert rec.terminal.reason == flow.LOSS_TOL
    refs = {"truth": zstar}
    reports = {r.quantity: r for r in invariants.drift_report(rec, proj, refs)}
    assert reports["bregman[truth]"].violations == 0
