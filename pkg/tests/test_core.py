import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from statlin_plan.core import (ControlTrajectory, DimensionError, DynamicsModel,
                               GaussianBelief, NonFiniteError, QuadraticCost, check_jacobian,
                               eval_drift, eval_jacobian_fd, fd_jacobian, project_psd,
                               psd_violation, symmetrize)
from statlin_plan.descent import RocketParams, plain_model

from conftest import linear_model, ou_model

X_REF = np.array([0.0, 0.0, 0.0, 0.0, 40000.0])


def test_descent_drift_reference_value():
    f = eval_drift(plain_model(RocketParams()), X_REF, np.array([0.0, 0.8]))
    np.testing.assert_allclose(f, [0, 0, 0, 10.19, -240], atol=1e-12)


def test_linear_equilibrium_and_ou_value():
    m = linear_model(np.eye(2), np.zeros((2, 1)))
    np.testing.assert_array_equal(eval_drift(m, np.zeros(2), np.zeros(1)), 0.0)
    assert eval_drift(ou_model(a=2.0), np.array([3.0]), np.array([0.0]))[0] == -6.0


def test_dimension_mismatch_rejected():
    m = plain_model(RocketParams())
    with pytest.raises(DimensionError):
        eval_drift(m, np.zeros(4), np.zeros(2))
    with pytest.raises(DimensionError):
        eval_drift(m, X_REF, np.zeros(3))


def test_fd_jacobian_linear_exact():
    A = np.array([[1.0, 2.0], [-3.0, 0.5]])
    m = linear_model(A, np.zeros((2, 1)))
    J = eval_jacobian_fd(m, np.array([3.0, -7.0]), np.zeros(1))
    np.testing.assert_allclose(J, A, rtol=1e-6)


def test_fd_jacobian_mass_sensitivity():
    J = eval_jacobian_fd(plain_model(RocketParams()), X_REF, np.array([0.0, 0.8]))
    assert J[3, 4] == pytest.approx(-5e-4, rel=1e-6)


def test_fd_jacobian_constant_drift_is_zero():
    m = DynamicsModel(n=3, k=1, drift=lambda x, u: np.broadcast_to([1.0, 2.0, 3.0],
                                                                  np.shape(x)).copy())
    np.testing.assert_array_equal(eval_jacobian_fd(m, np.ones(3), np.zeros(1)), 0.0)


def test_fd_jacobian_non_finite():
    with pytest.raises(NonFiniteError), np.errstate(all="ignore"):
        fd_jacobian(lambda x: np.log(x), np.array([0.0]))


def test_analytic_jacobian_matches_fd_randomized():
    rng = np.random.default_rng(3)
    xs = np.column_stack([rng.normal(0, 1e3, (100, 2)), rng.normal(0, 1e2, (100, 2)),
                          rng.uniform(1e4, 4e4, 100)])
    us = rng.uniform(-1, 1, (100, 2))
    assert check_jacobian(plain_model(RocketParams()), xs, us) <= 1.0


@given(arrays(float, (4, 4), elements=st.floats(-1e3, 1e3)))
def test_symmetrize_idempotent(M):
    S = symmetrize(M)
    np.testing.assert_array_equal(S, S.T)
    np.testing.assert_array_equal(symmetrize(S), S)


def test_belief_validation():
    with pytest.raises(ValueError):
        GaussianBelief([0, 0], [[1, 0.5], [0, 1]])
    with pytest.raises(ValueError):
        GaussianBelief([0, 0], [[1, 0], [0, -1]])
    with pytest.raises(DimensionError):
        GaussianBelief([0, 0, 0], np.eye(2))
    b = GaussianBelief([1, 2], np.eye(2))
    assert b.n == 2 and not b.cov.flags.writeable


def test_psd_helpers():
    P = np.diag([1.0, -1e-3])
    assert psd_violation(P) < 0
    assert psd_violation(project_psd(P)) >= 0


def test_control_trajectory_constant_and_linear():
    c = ControlTrajectory([0, 1, 3], [[1.0], [2.0]])
    assert c(0.0)[0] == 1.0 and c(1.0)[0] == 2.0 and c(3.0)[0] == 2.0
    assert c.horizon == 3.0 and c.n_intervals == 2
    lin = ControlTrajectory([0, 1, 3], [[0.0], [2.0], [6.0]], mode="linear")
    assert lin(2.0)[0] == pytest.approx(4.0)
    assert lin(1.0)[0] == 2.0
    with pytest.raises(ValueError):
        c(3.5)
    with pytest.raises(ValueError):
        c(-0.1)
    with pytest.raises(DimensionError):
        ControlTrajectory([0, 1, 2], [[1.0]])
    with pytest.raises(ValueError):
        ControlTrajectory([0, 2, 1], [[1.0], [1.0]])


@given(st.lists(st.floats(0.1, 5.0), min_size=1, max_size=6),
       st.lists(st.floats(-10, 10), min_size=7, max_size=7))
def test_linear_interpolation_midpoint_identity(widths, vals):
    nodes = np.concatenate([[0.0], np.cumsum(widths)])
    values = np.array(vals[:nodes.size])[:, None]
    c = ControlTrajectory(nodes, values, mode="linear")
    np.testing.assert_allclose(c(nodes)[:, 0], values[:, 0], atol=1e-12)
    mids = 0.5 * (nodes[1:] + nodes[:-1])
    np.testing.assert_allclose(c(mids)[:, 0], 0.5 * (values[1:, 0] + values[:-1, 0]),
                               atol=1e-9)


def test_quadratic_cost_validation_and_values():
    with pytest.raises(ValueError):
        QuadraticCost(n=2, Q_bar=np.array([[1.0, 0.0], [0.0, -1.0]]))
    with pytest.raises(ValueError):
        QuadraticCost(n=2, Qpsi=np.array([[0.0, 1.0], [0.0, 0.0]]))
    c = QuadraticCost(n=2, Qpsi=np.eye(2), bpsi=[1, 0], cpsi=2.0, Qf_bar=np.eye(2),
                      R=[3.0])
    assert c.psi([1.0, 1.0]) == pytest.approx(5.0)
    np.testing.assert_array_equal(c.Qf(), 2 * np.eye(2))
    assert c.L([0, 0], [2.0]) == pytest.approx(12.0)
