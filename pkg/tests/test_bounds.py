import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from statlin_plan.bounds import (ErrorBudget, bounded_control_bound, brockett_model, check_membership,
                                 constant_phi, constraint_lhs, controllability_probe,
                                 empirical_budget, empirical_error, exp_alpha, linear_phi,
                                 loglog_slope, mc_standard_error, rescaled_control)
from statlin_plan.core import ControlTrajectory, DimensionError, GaussianBelief
from statlin_plan.propagate import BeliefTrajectory, propagate
from statlin_plan.sde import EnsembleStats, monte_carlo

from conftest import double_integrator, ou_model


def const_traj(p, t_f=1.0, n=20):
    times = np.linspace(0, t_f, n + 1)
    return BeliefTrajectory(times, np.zeros((n + 1, 1)), np.full((n + 1, 1, 1), p))


def unit_ctrl(t_f=1.0, n=10):
    return ControlTrajectory(np.linspace(0, t_f, n + 1), np.ones((n, 1)))


EXP = ErrorBudget(math.inf, linear_phi(1.0), lambda s: np.exp(s))


def test_zero_covariance_gives_zero():
    assert constraint_lhs(EXP, unit_ctrl(), const_traj(0.0)) == 0.0
    m = check_membership(ErrorBudget(1e-9, linear_phi(1.0), exp_alpha(1.0)), unit_ctrl(),
                         const_traj(0.0))
    assert m.inside and m.verdict == "in"


@pytest.mark.parametrize("t_f,p", [(1.0, 0.3), (2.5, 1.7), (0.4, 10.0)])
def test_closed_form_constants(t_f, p):
    value = constraint_lhs(EXP, unit_ctrl(t_f), const_traj(p, t_f))
    assert value == pytest.approx(math.exp(t_f) * p * t_f, rel=1e-12)


def test_membership_out():
    budget = ErrorBudget(1.0, linear_phi(1.0), lambda s: np.exp(s))
    m = check_membership(budget, unit_ctrl(), const_traj(2.0 / math.e))
    assert not m.inside and m.verdict == "out" and m.value == pytest.approx(2.0)


def test_infinite_epsilon_always_in():
    assert check_membership(EXP, unit_ctrl(), const_traj(1e6)).inside


def test_grid_mismatch():
    with pytest.raises(DimensionError):
        constraint_lhs(EXP, unit_ctrl(2.0), const_traj(1.0, 1.0))
    stats = EnsembleStats(np.linspace(0, 1, 5), np.zeros((5, 1)), np.zeros((5, 1, 1)), 10, 0)
    with pytest.raises(DimensionError):
        empirical_error(const_traj(1.0), stats)


def test_budget_validation():
    with pytest.raises(ValueError):
        ErrorBudget(-1e-3, linear_phi(1.0), exp_alpha(1.0))
    assert ErrorBudget(0.0, linear_phi(1.0), exp_alpha(1.0)).epsilon == 0.0
    with pytest.raises(ValueError):
        ErrorBudget(1.0, lambda r: -np.asarray(r), exp_alpha(1.0))
    with pytest.raises(ValueError):
        exp_alpha(0.0)


@given(st.floats(1.0, 10.0), st.floats(1.0, 10.0))
def test_monotone_in_covariance_and_phi(s_p, s_phi):
    ctrl = ControlTrajectory(np.linspace(0, 1, 6), np.linspace(0.1, 1.0, 5)[:, None])
    times = np.linspace(0, 1, 21)
    covs = (0.1 + times ** 2)[:, None, None]
    base = BeliefTrajectory(times, np.zeros((21, 1)), covs)
    scaled = BeliefTrajectory(times, np.zeros((21, 1)), covs * s_p)
    b1 = ErrorBudget(math.inf, linear_phi(1.0), exp_alpha(1.0))
    b2 = ErrorBudget(math.inf, linear_phi(s_phi), exp_alpha(1.0))
    v = constraint_lhs(b1, ctrl, base)
    assert constraint_lhs(b1, ctrl, scaled) >= v * (1 - 1e-12)
    assert constraint_lhs(b2, ctrl, base) >= v * (1 - 1e-12)


def test_bounded_control_bound_examples():
    assert bounded_control_bound(const_traj(0.0), C=1.0) == 0.0
    assert bounded_control_bound(const_traj(0.7, 3.0), C=1.0) == pytest.approx(2.1)
    with pytest.raises(ValueError):
        bounded_control_bound(const_traj(1.0))


def test_bounded_bound_equals_lhs_for_constant_phi():
    c, t_f = 0.8, 2.0
    budget = ErrorBudget(math.inf, constant_phi(c), exp_alpha(1.3))
    traj = BeliefTrajectory(np.linspace(0, t_f, 11), np.zeros((11, 1)),
                            np.linspace(0.1, 2.0, 11)[:, None, None])
    ctrl = unit_ctrl(t_f)
    C = float(budget.alpha(c * t_f)) * c
    assert bounded_control_bound(traj, C=C) == pytest.approx(constraint_lhs(budget, ctrl, traj))
    assert bounded_control_bound(traj, ctrl, budget=budget) == pytest.approx(
        constraint_lhs(budget, ctrl, traj))


def test_empirical_error_self_is_zero():
    traj = propagate(ou_model(), GaussianBelief([1.0], [[0.2]]), unit_ctrl())
    stats = EnsembleStats(traj.times, traj.means, traj.covs, 100, 0)
    assert empirical_error(traj, stats) == (0.0, 0.0)


def test_linear_system_error_within_sampling_noise():
    m = double_integrator(noise=0.4)
    init = GaussianBelief([0.0, 1.0, 0.5, 0.0], 0.05 * np.eye(4))
    ctrl = ControlTrajectory(np.linspace(0, 1, 11), np.tile([0.3, -0.2], (10, 1)))
    traj = propagate(m, init, ctrl, 50)
    stats = monte_carlo(m, init, ctrl, 0.002, n_paths=4000, seed=8).restrict(traj.times)
    em, eP = empirical_error(traj, stats)
    assert em + eP <= 3 * mc_standard_error(stats)


def test_empirical_budget_bounds_error_on_linear_model():
    m = ou_model()
    init = GaussianBelief([1.0], [[0.3]])
    traj = propagate(m, init, unit_ctrl(), 20)
    budget = empirical_budget(m, traj, unit_ctrl())
    assert budget.phi(np.array([0.0, 5.0])) == pytest.approx([2.0, 2.0])
    stats = monte_carlo(m, init, unit_ctrl(), 0.005, 4000, seed=1).restrict(traj.times)
    em, eP = empirical_error(traj, stats)
    assert em + eP <= constraint_lhs(budget, unit_ctrl(), traj) + 3 * mc_standard_error(stats)


# ------------------------------------------------------------------ probe
def brockett_base():
    """One circular loop on [0, 1]; the mean ends on the vertical axis."""
    s = np.linspace(0, 1, 41)
    mid = 0.5 * (s[:-1] + s[1:])
    vals = np.column_stack([np.cos(2 * np.pi * mid), np.sin(2 * np.pi * mid)])
    return ControlTrajectory(s, vals)


def test_rescaled_control_shape():
    base = brockett_base()
    c = rescaled_control(base, 0.25, 1.0)
    assert c.horizon == pytest.approx(1.0)
    np.testing.assert_allclose(c(0.1), base(0.4) / 0.25)
    np.testing.assert_allclose(c(0.6), 0.0)
    with pytest.raises(ValueError):
        rescaled_control(base, 0.0, 1.0)
    with pytest.raises(ValueError):
        rescaled_control(base, 1.5, 1.0)


def test_probe_scaling_and_invariant_endpoint():
    model = brockett_model()
    base = brockett_base()
    m0 = np.zeros(3)
    full = propagate(model, GaussianBelief(m0, np.zeros((3, 3))), base, 4)
    mf = full.means[-1]
    etas = [1.0, 0.5, 0.25, 0.125, 0.0625]
    rows = controllability_probe(model, m0, mf, base, etas, np.zeros((3, 3)))
    assert loglog_slope(rows) == pytest.approx(1.0, abs=0.2)
    vals = [r.constraint_value for r in rows]
    assert all(b < a for a, b in zip(vals, vals[1:]))
    assert max(r.terminal_error for r in rows) < 1e-9


def test_probe_rejects_bad_eta_and_models():
    base = brockett_base()
    with pytest.raises(ValueError):
        controllability_probe(brockett_model(), np.zeros(3), np.zeros(3), base, [0.0], np.zeros((3, 3)))
    from statlin_plan.descent import ScenarioConfig, polar_model
    with pytest.raises(ValueError):
        controllability_probe(polar_model(ScenarioConfig().rocket()), np.zeros(5), np.zeros(5),
                              base, [0.5], np.zeros((5, 5)))
