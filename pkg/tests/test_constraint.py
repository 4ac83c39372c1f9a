import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fluidrefine import constraint, synth
from fluidrefine.checks import random_flow, random_frames
from fluidrefine.constraint import BcaConfig, BcaState
from fluidrefine.fields import FlowField, GridError, ScalarField, interior
from fluidrefine.hs import HsConfig, ofc_data
from fluidrefine.refine import RefineConfig, refine_iterate


def ramp_pair(n=16):
    f1 = ScalarField.from_function(lambda x, y: 0.03 * x + 0.01 * y, n, n)
    f2 = ScalarField.from_function(lambda x, y: 0.03 * (x - 1) + 0.01 * y, n, n)
    return f1, f2


def test_ofc_residual_examples():
    f1, f2 = ramp_pair()
    ofc = ofc_data(f1, f2)
    truth = FlowField.from_arrays(np.ones((16, 16)), np.zeros((16, 16)))
    assert np.allclose(constraint.ofc_residual(truth, ofc).data, 0, atol=1e-12)
    zero = FlowField.zeros_like(f1)
    assert np.array_equal(constraint.ofc_residual(zero, ofc).data, -ofc.c.data)
    with pytest.raises(GridError):
        constraint.ofc_residual(FlowField.zeros_like(ScalarField(np.zeros((5, 5)))), ofc)


def test_hs_reduces_ofc_residual(oseen_half, hs_half):
    ofc = ofc_data(oseen_half.frame1, oseen_half.frame2, 1.0, 16.0)
    r_hs = constraint.l2norm(constraint.ofc_residual(hs_half, ofc))
    r_0 = constraint.l2norm(constraint.ofc_residual(FlowField.zeros_like(oseen_half.frame1), ofc))
    assert r_hs < r_0


def lagrangian_case(seed, n=24):
    rng = np.random.default_rng(seed)
    f1, f2 = random_frames(n, rng)
    ofc = ofc_data(f1, f2, 0.0, 255.0)
    return rng, ofc, random_flow(n, rng), f1.like(rng.standard_normal((n, n)))


def jc_of(w, ofc, alpha):
    return constraint.augmented_lagrangian(w, ofc.f.like(np.zeros(ofc.shape)), 0.0, ofc, alpha)


def test_lagrangian_reduces_to_jc():
    rng, ofc, w, lam = lagrangian_case(0)
    jc = jc_of(w, ofc, 100.0)
    assert constraint.augmented_lagrangian(w, lam.like(np.zeros(lam.shape)), 0.0, ofc, 100.0) == jc
    # a flow that satisfies B w = c everywhere: only J_C remains
    f1, f2 = ramp_pair(24)
    ofc2 = ofc_data(f1, f2)
    truth = FlowField.from_arrays(np.ones((24, 24)), np.zeros((24, 24)))
    lam2 = f1.like(rng.standard_normal((24, 24)))
    assert constraint.augmented_lagrangian(truth, lam2, 7.0, ofc2, 3.0) == pytest.approx(jc_of(truth, ofc2, 3.0), abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.floats(0.0, 100.0))
def test_lagrangian_linear_in_mu(seed, mu):
    _, ofc, w, lam = lagrangian_case(seed)
    r = constraint.ofc_residual(w, ofc).data[1:-1, 1:-1]
    a = constraint.augmented_lagrangian(w, lam, mu, ofc, 100.0)
    b = constraint.augmented_lagrangian(w, lam, 2 * mu, ofc, 100.0)
    assert b - a == pytest.approx(0.5 * mu * np.sum(r * r), rel=1e-9, abs=1e-6)


def test_lagrangian_identity_violation_detected():
    _, ofc, w, lam = lagrangian_case(3)
    with pytest.raises(constraint.LagrangianIdentityError):
        constraint.augmented_lagrangian(w, lam, 1.0, ofc, 100.0, rtol=-1.0)


def test_uzawa_update_examples():
    z = ScalarField(np.zeros((4, 4)))
    lam = ScalarField(np.arange(16.0).reshape(4, 4))
    assert np.array_equal(constraint.uzawa_update(lam, lam, z, 3.0, z).data, lam.data)
    one = ScalarField(np.ones((4, 4)))
    assert np.array_equal(constraint.uzawa_update(lam, one, one, 0.0, z).data, lam.data + 2)
    assert np.array_equal(constraint.uzawa_update(lam, one, z, 0.5, one).data, lam.data + 0.5)
    with pytest.raises(GridError):
        constraint.uzawa_update(lam, one, ScalarField(np.ones((3, 4))), 1.0, one)


def test_config_and_state_validation():
    with pytest.raises(ValueError):
        BcaConfig(rho0=0)
    with pytest.raises(ValueError):
        BcaConfig(mu_c=10.0, mu_cap=1.0)
    z = ScalarField(np.zeros((3, 3)))
    with pytest.raises(ValueError):
        BcaState(FlowField(z, z), z, rho=0.0, eps1=1, eps2=1, mu_c=1, delta_hs=1)


def test_tolerance_schedule():
    z = ScalarField(np.zeros((3, 3)))
    s = BcaState(FlowField(z, z), z, rho=1.0, eps1=64.0, eps2=32.0, mu_c=1.0, delta_hs=1.0)
    e1 = [s.eps1]
    for n in range(1, 30):
        s.tighten(n, 5)
        e1.append(s.eps1)
    # e1[n] is the tolerance used at iteration n + 1
    assert e1[:6] == [64, 32, 16, 8, 4, 2]
    assert all(a >= b for a, b in zip(e1, e1[1:]))
    m = 2.0 * 7 ** 2
    for it in range(7, 31):
        assert e1[it - 1] <= m / (it + 1) ** 2 * (1 + 1e-12)


def test_identical_frames_terminate_at_first_iteration():
    f = synth.particle_texture(40, 40, 0.05, 0)
    w, state = constraint.bca_run(f, f, w0=FlowField.zeros_like(f))
    assert state.converged and state.iter == 1
    assert np.all(w.u.data == 0)


def test_bca_on_oseen_meets_its_tolerances(bca_half):
    _, state = bca_half
    assert state.converged
    last = state.history[-1]
    assert last.step == "terminate"
    assert last.residual <= max(last.eps1, 2 * state.delta_hs)
    assert last.fd <= last.eps2


def test_bca_invariants_over_a_long_run(oseen_half, hs_half):
    cfg = BcaConfig(eps0_scale=0.5, max_outer=12)
    _, state = constraint.bca_run(oseen_half.frame1, oseen_half.frame2, w0=hs_half, bca_cfg=cfg)
    assert not state.converged and state.iter == 12
    eps1 = [r.eps1 for r in state.history]
    eps2 = [r.eps2 for r in state.history]
    assert all(a >= b for a, b in zip(eps1, eps1[1:])) and all(a >= b for a, b in zip(eps2, eps2[1:]))
    for a, b in zip(state.history, state.history[1:]):
        if a.step == "inner":
            assert b.rho == a.rho
        else:
            assert b.rho == 100 * a.rho
    fd = [r.fd for r in state.history]
    assert all(a >= b for a, b in zip(fd, fd[1:]))  # the semigroup contracts d


def test_outer_branch_grows_rho_and_mu(monkeypatch):
    # the start solves the constraint exactly (delta_HS = 0); a flow update that
    # returns zero flow leaves the residual outside the bound every time
    f1, f2 = ramp_pair(24)
    truth = FlowField.from_arrays(np.ones((24, 24)), np.zeros((24, 24)))
    monkeypatch.setattr(constraint, "refine_iterate", lambda w, f, cfg, **kw: (FlowField.zeros_like(f), [0.0]))
    cfg = BcaConfig(max_outer=6, mu_c=1.0, mu_cap=1e7)
    _, state = constraint.bca_run(f1, f2, HsConfig(presmooth_sigma=0.0), bca_cfg=cfg, w0=truth)
    assert [r.step for r in state.history] == ["outer"] * 6
    assert [r.rho for r in state.history] == [100.0 ** i for i in range(6)]
    assert [r.mu_c for r in state.history] == [1.0, 1e2, 1e4, 1e6, 1e7, 1e7]
    assert all(r.increment == 0 and r.lambda_dev == 0 for r in state.history)
    assert not state.converged


def test_flow_side_saddle_ordering(oseen_half, bca_half):
    # the flow returned by a converged run minimises its subproblem: 100 small
    # random perturbations never lower the objective
    w, state = bca_half
    f1, f2 = oseen_half.frame1, oseen_half.frame2
    ref = RefineConfig()
    ofc = ofc_data(f1, f2, 1.0, ref.intensity_scale)
    f = ofc.f.like(ofc.f.data / ref.intensity_scale)
    from fluidrefine.refine import _problem
    prob = _problem(f, ref, ofc, state.mu_c, None)
    base = prob.energy(w.u.data, w.v.data)
    rng = np.random.default_rng(0)
    worst = np.inf
    for _ in range(100):
        du = 1e-3 * rng.standard_normal(w.shape)
        dv = 1e-3 * rng.standard_normal(w.shape)
        for a in (du, dv):
            a[0, :] = a[-1, :] = a[:, 0] = a[:, -1] = 0
        worst = min(worst, prob.energy(w.u.data + du, w.v.data + dv) - base)
    # the sweep stops at a relative update of 1e-5, so allow that much first-order slack
    assert worst >= -1e-4 * abs(base)


def test_illumination_correction():
    f1 = synth.smooth_texture(64, 64, seed=2)
    a, b = constraint.illumination_correct(f1, f1, 5.0)
    assert np.allclose(a.data, b.data, atol=1e-5)
    a, b = constraint.illumination_correct(f1.like(0.2 + 0.5 * f1.data), f1.like(2 * (0.2 + 0.5 * f1.data)), 5.0)
    assert np.max(np.abs(interior(b.data - a.data, 10))) <= 0.01
    with pytest.raises(ValueError):
        constraint.illumination_correct(f1, f1, 0.0)


def test_illumination_correction_helps_gain_perturbed_pair(oseen_half):
    p = oseen_half
    h, w = p.frame2.shape
    gain = 1.0 + 0.5 * np.linspace(0, 1, w)[None, :] * np.ones((h, 1))
    f2 = p.frame2.like(p.frame2.data * gain)
    ofc_raw = ofc_data(p.frame1, f2, 1.0)
    c1, c2 = constraint.illumination_correct(p.frame1, f2, 10.0)
    ofc_fix = ofc_data(c1, c2, 1.0)
    raw = constraint.l2norm(interior(constraint.ofc_residual(p.truth, ofc_raw).data, 15))
    fixed = constraint.l2norm(interior(constraint.ofc_residual(p.truth, ofc_fix).data, 15))
    assert fixed < raw
