import numpy as np
import pytest
from hypothesis import given, strategies as st

from statlin_plan.bounds import brockett_model
from statlin_plan.descent import STATE_SCALE, ScenarioConfig, feedback_model, feedback_scale, plain_model
from statlin_plan.lie import (VectorFieldHandle, bracket_field, generate_ideal, latin_hypercube,
                              lie_bracket, lifted_rank, lifted_vector, numeric_rank, plain_rank)

from conftest import linear_model

REMARK = [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (2 ** -0.5, 2 ** -0.5)]

# smooth fields on R^3 (batched over leading axes), two with hand-written Jacobians
def _stack(*cols):
    return np.stack(np.broadcast_arrays(*cols), axis=-1)


def _rows(x, *rows):
    batch = np.shape(x)[:-1]
    return np.array([[np.broadcast_to(v, batch) for v in r] for r in rows],
                    dtype=float).transpose(*range(2, 2 + len(batch)), 0, 1)


F = VectorFieldHandle(lambda x: _stack(x[..., 1] * x[..., 2], np.sin(x[..., 0]), 1.0 + x[..., 0] ** 2),
                      lambda x: _rows(x, [0, x[..., 2], x[..., 1]], [np.cos(x[..., 0]), 0, 0], [2 * x[..., 0], 0, 0]),
                      "F")
G = VectorFieldHandle(lambda x: _stack(x[..., 2], x[..., 0] * x[..., 1], -x[..., 1]),
                      lambda x: _rows(x, [0, 0, 1], [x[..., 1], x[..., 0], 0], [0, -1, 0]), "G")
H = VectorFieldHandle(lambda x: _stack(np.cos(x[..., 1]), x[..., 2] ** 2, x[..., 0]), None, "H")

points = st.lists(st.floats(-2, 2), min_size=3, max_size=3).map(np.array)


def brockett_fields():
    m = brockett_model()
    return (VectorFieldHandle(lambda x: m.f(x, np.array([1.0, 0.0])), label="f1"),
            VectorFieldHandle(lambda x: m.f(x, np.array([0.0, 1.0])), label="f2"))


@given(points)
def test_self_bracket_vanishes(x):
    assert np.allclose(lie_bracket(F, F, x), 0.0, atol=1e-12)


@given(points)
def test_antisymmetry(x):
    np.testing.assert_allclose(lie_bracket(F, H, x), -lie_bracket(H, F, x), atol=1e-6)


@given(points)
def test_jacobi_identity(x):
    res = (lie_bracket(F, bracket_field(G, H), x) + lie_bracket(G, bracket_field(H, F), x)
           + lie_bracket(H, bracket_field(F, G), x))
    assert np.max(np.abs(res)) <= 1e-4


def test_brockett_bracket():
    f1, f2 = brockett_fields()
    for x in ([0.0, 0.0, 0.0], [1.3, -0.7, 2.0]):
        np.testing.assert_allclose(lie_bracket(f1, f2, np.array(x)), [0, 0, 2], atol=1e-7)


def test_constant_fields_commute():
    c1 = VectorFieldHandle(lambda x: np.broadcast_to([1.0, 2.0], np.shape(x)), label="c1")
    c2 = VectorFieldHandle(lambda x: np.broadcast_to([-3.0, 0.5], np.shape(x)), label="c2")
    assert np.allclose(lie_bracket(c1, c2, np.array([0.3, 0.1])), 0.0)


def test_hand_bracket_matches_formula():
    x = np.array([0.4, -1.1, 0.7])
    expected = G.jacobian(x) @ F(x) - F.jacobian(x) @ G(x)
    np.testing.assert_allclose(lie_bracket(F, G, x), expected, rtol=1e-12)


def test_lifted_vector_weighting():
    # Euclidean norm of the lifted block equals the Frobenius norm of Dh + Dh'
    x = np.array([0.2, 0.5, -0.4])
    v = lifted_vector(F, x)
    J = F.jacobian(x)
    assert np.linalg.norm(v[3:]) == pytest.approx(np.linalg.norm(J + J.T))
    np.testing.assert_allclose(v[:3], F(x))


def double_integrator_2():
    return linear_model([[0.0, 1.0], [0.0, 0.0]], [[0.0], [1.0]])


def test_double_integrator_ideal():
    gens = generate_ideal(double_integrator_2(), [[0.0], [1.0]], 2)
    x = np.array([0.7, -0.2])
    assert len(gens) == 2
    np.testing.assert_allclose(gens[0](x), [0.0, 1.0])           # column of B
    np.testing.assert_allclose(gens[1](x), [-1.0, 0.0], atol=1e-8)  # -A B
    assert plain_rank(double_integrator_2(), x, [[0.0], [1.0]], 2) == 2
    rep = lifted_rank(double_integrator_2(), x, [[0.0], [1.0]], 3)
    # constant generators carry no covariance directions
    assert rep.lifted_dim == 2 and rep.target_dim == 5 and rep.verdict == "inconclusive"


def test_single_sample_gives_empty_span():
    m = double_integrator_2()
    gens = generate_ideal(m, [[1.0]], 2)
    assert gens == []
    with pytest.raises(ValueError):
        lifted_rank(m, np.zeros(2), [[1.0]], 2)
    with pytest.raises(ValueError):
        generate_ideal(m, [[0.0], [1.0]], 1)


def test_zero_dynamics_rank_zero():
    m = linear_model(np.zeros((2, 2)), np.zeros((2, 1)))
    assert lifted_rank(m, np.ones(2), [[0.0], [1.0], [2.0]], 3).lifted_dim == 0


def test_single_constant_field_plain_rank_one():
    m = linear_model(np.zeros((2, 2)), np.array([[1.0], [1.0]]))
    assert plain_rank(m, np.zeros(2), [[0.0], [1.0]], 2) == 1


def test_brockett_plain_rank():
    assert plain_rank(brockett_model(), np.array([0.5, 0.2, -1.0]),
                      [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], 2) == 3


def test_numeric_rank_tolerance():
    M = np.diag([1.0, 1e-3, 1e-9])
    assert numeric_rank(M, 1e-6)[0] == 2
    assert numeric_rank(np.zeros((3, 3)), 1e-6)[0] == 0


def descent_points(count, seed):
    rng = np.random.default_rng(seed)
    return np.column_stack([rng.uniform(-5000, 5000, (count, 2)),
                            rng.uniform(-300, 300, (count, 2)),
                            rng.uniform(5000, 40000, count)])


def test_descent_plain_rank_full():
    model = plain_model(ScenarioConfig().rocket())
    for x in descent_points(5, 1):
        assert plain_rank(model, x, REMARK, 2, state_scale=STATE_SCALE) == 5


def test_descent_remark_fields_independent():
    model = plain_model(ScenarioConfig().rocket())
    gens = generate_ideal(model, REMARK, 2)
    labels = [h.label for h in gens]
    assert "[f_u1,f_u3]" in labels
    pick = [labels.index(s) for s in ("f_u2-f_u1", "f_u3-f_u1", "f_u4-f_u1")]
    x = descent_points(1, 2)[0]
    from statlin_plan.lie import _scaled
    vecs = [_scaled(gens[i], STATE_SCALE)(x / STATE_SCALE)
            for i in pick + [labels.index("[f_u1,f_u2]"), labels.index("[f_u1,f_u3]")]]
    assert numeric_rank(np.array(vecs), 1e-6)[0] == 5


@pytest.mark.parametrize("depth", [2, 3, 4])
def test_descent_open_loop_lifted_deficient(depth):
    model = plain_model(ScenarioConfig().rocket())
    for x in descent_points(4, depth):
        rep = lifted_rank(model, x, REMARK, depth, state_scale=STATE_SCALE)
        assert rep.lifted_dim <= 9 < rep.target_dim == 20
        assert rep.verdict == "inconclusive"


def test_rank_monotone_in_depth_and_samples():
    model = plain_model(ScenarioConfig().rocket())
    x = descent_points(1, 9)[0]
    dims = [lifted_rank(model, x, REMARK, d, state_scale=STATE_SCALE).lifted_dim for d in (2, 3, 4)]
    assert dims == sorted(dims)
    dims = [lifted_rank(model, x, REMARK[:s], 3, state_scale=STATE_SCALE).lifted_dim
            for s in (2, 3, 4)]
    assert dims == sorted(dims)


def test_descent_feedback_lifted_full():
    model = feedback_model(ScenarioConfig().rocket(), eps_sat=None)
    nus = latin_hypercube(10, 30, seed=0) * feedback_scale()
    x = descent_points(1, 5)[0]
    rep = lifted_rank(model, x, nus, 2, state_scale=STATE_SCALE)
    assert rep.lifted_dim == 20 and rep.full and rep.verdict == "accessible"


def test_latin_hypercube_strata():
    pts = latin_hypercube(3, 10, seed=4)
    assert pts.shape == (10, 3)
    for j in range(3):
        assert sorted(np.floor(pts[:, j] * 10).astype(int)) == list(range(10))
    np.testing.assert_array_equal(pts, latin_hypercube(3, 10, seed=4))
