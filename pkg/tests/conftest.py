import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from statlin_plan.core import DynamicsModel

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def linear_model(A, B, G=None, name="linear"):
    """``dx = (A x + B u) dt + G dW`` with analytic Jacobian."""
    A = np.asarray(A, float)
    B = np.asarray(B, float)
    n, k = B.shape
    Gm = None if G is None else np.asarray(G, float)

    def drift(x, u):
        return np.asarray(x) @ A.T + np.asarray(u) @ B.T

    def jac(x, u):
        shape = np.broadcast_shapes(np.shape(x)[:-1], np.shape(u)[:-1])
        return np.broadcast_to(A, shape + (n, n)).copy()

    disp = None
    if Gm is not None:
        def disp(x, u):
            shape = np.broadcast_shapes(np.shape(x)[:-1], np.shape(u)[:-1])
            return np.broadcast_to(Gm, shape + Gm.shape).copy()

    return DynamicsModel(n=n, k=k, drift=drift, jacobian=jac, dispersion=disp,
                         noise_dim=0 if Gm is None else Gm.shape[1], name=name,
                         control_linear=True)


def ou_model(a=2.0, sigma=1.0):
    return linear_model([[-a]], [[0.0]], [[sigma]], name="ou")


def double_integrator(noise=0.3):
    A = np.zeros((4, 4))
    A[0, 2] = A[1, 3] = 1.0
    B = np.zeros((4, 2))
    B[2, 0] = B[3, 1] = 1.0
    G = np.zeros((4, 2))
    G[2, 0], G[3, 1] = noise, 0.5 * noise
    return linear_model(A, B, G, name="double-integrator")


@pytest.fixture
def ou():
    return ou_model()


@pytest.fixture
def di():
    return double_integrator()


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = {}


def record_criterion(number, passed, detail):
    ACCEPTANCE_LINES[number] = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
    print(ACCEPTANCE_LINES[number])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
