import numpy
import pytest
from numpy.testing import assert_allclose

from dbea.diff_core import (Layer, MlpParams, OptimConfig, OptimState, adamw_step,
                            as_tensor2, finite_diff_check, mlp_backward, mlp_forward)
from dbea.errors import OracleFailure, ShapeError, TrainingDivergence


def test_forward_identity_and_relu():
    """
    Single layers with W = I, b = 0.
    """
    ident = MlpParams([Layer(numpy.eye(2), numpy.zeros(2), 'identity')])
    out, _ = mlp_forward(ident, [[1.0, 2.0]])
    assert_allclose(out, [[1.0, 2.0]])
    relu = MlpParams([Layer(numpy.eye(2), numpy.zeros(2), 'relu')])
    out, _ = mlp_forward(relu, [[-1.0, 3.0]])
    assert_allclose(out, [[0.0, 3.0]])


def test_forward_composition():
    """
    3 (2 x) + 1 at x = 1.
    """
    params = MlpParams([Layer([[2.0]], [0.0]), Layer([[3.0]], [1.0])])
    out, _ = mlp_forward(params, [[1.0]])
    assert_allclose(out, [[7.0]])


def test_backward_linear_and_dead_relu():
    params = MlpParams([Layer([[1.5]], [0.0])])
    out, cache = mlp_forward(params, [[5.0]])
    grad_in, grads = mlp_backward(cache, numpy.ones_like(out))
    assert_allclose(grads[0], [[5.0]])
    assert_allclose(grads[1], [1.0])
    assert_allclose(grad_in, [[1.5]])

    dead = MlpParams([Layer([[1.0]], [-3.0], 'relu')])
    out, cache = mlp_forward(dead, [[1.0]])
    grad_in, grads = mlp_backward(cache, numpy.ones_like(out))
    assert_allclose(grad_in, [[0.0]])
    assert_allclose(grads[0], [[0.0]])


def test_backward_matches_finite_differences():
    rng = numpy.random.default_rng(4)
    params = MlpParams.init([3, 5, 4, 2], ['relu', 'sigmoid', 'identity'], rng)
    x = rng.normal(size=(6, 3))
    target = rng.normal(size=(6, 2))

    def loss_fn(arrays):
        out, cache = mlp_forward(params, x)
        diff = out - target
        return 0.5 * numpy.sum(diff**2), mlp_backward(cache, diff)[1]

    assert finite_diff_check(loss_fn, params.arrays()) <= 1e-5


def test_layer_shapes():
    with pytest.raises(ShapeError):
        MlpParams([Layer(numpy.ones((2, 3)), numpy.zeros(3)),
                   Layer(numpy.ones((2, 1)), numpy.zeros(1))])
    with pytest.raises(ShapeError):
        Layer(numpy.ones((2, 3)), numpy.zeros(2))
    with pytest.raises(ShapeError):
        as_tensor2([1.0, 2.0])
    params = MlpParams.init([2, 3], ['relu'], numpy.random.default_rng(0))
    with pytest.raises(ShapeError):
        mlp_forward(params, numpy.ones((1, 4)))


def test_forward_rejects_non_finite():
    params = MlpParams([Layer([[1.0]], [0.0])])
    with pytest.raises(TrainingDivergence):
        mlp_forward(params, [[numpy.inf]])


def test_adamw_decay_only():
    """
    A zero gradient leaves only the decoupled weight decay.
    """
    w = numpy.array([1.0])
    state = OptimState.zeros_like([w])
    _, state = adamw_step([w], [numpy.zeros(1)], state)
    assert_allclose(w, [1.0 - 0.0002 * 0.0001 * 1.0], rtol=0, atol=1e-15)
    assert state.step == 1


def test_adamw_constant_gradient():
    """
    With a constant gradient the bias-corrected update tends to the learning
    rate.
    """
    config = OptimConfig(weight_decay=0.0)
    w = numpy.array([0.0])
    state = OptimState.zeros_like([w], config)
    for step in range(1, 201):
        before = w.copy()
        _, state = adamw_step([w], [numpy.ones(1)], state)
        assert state.step == step
    assert_allclose(before - w, [config.learning_rate], rtol=1e-6)


def test_adamw_rejects_bad_input():
    w = numpy.zeros(2)
    state = OptimState.zeros_like([w])
    with pytest.raises(ShapeError):
        adamw_step([w], [numpy.zeros(3)], state)
    with pytest.raises(TrainingDivergence):
        adamw_step([w], [numpy.array([numpy.nan, 0.0])], state)
    assert_allclose(w, [0.0, 0.0])


def test_finite_diff_quadratic():
    w = numpy.array([3.0])
    error = finite_diff_check(lambda p: (p[0][0]**2, [2.0 * p[0]]), [w])
    assert error < 1e-8
    assert_allclose(w, [3.0])
    wrong = finite_diff_check(lambda p: (p[0][0]**2, [3.0 * p[0]]), [w])
    assert_allclose(wrong, 3.0 / 6.0, rtol=1e-6)


def test_finite_diff_errors():
    w = numpy.array([1.0])
    with pytest.raises(OracleFailure):
        finite_diff_check(lambda p: (numpy.nan, [p[0]]), [w])
    with pytest.raises(OracleFailure):
        finite_diff_check(lambda p: (0.0, [p[0]]), [w], h=0.0)
