import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ppfa.numkit import (AdamState, Batch, ModelSpec, NumericError, ParameterError, ParamVector,
                         ShapeError, adam_step, backward, batched_loss, clip_gradient,
                         finite_diff_grad, forward_loss, per_sample_grads)

SR2 = ModelSpec("softmax-regression", input_dim=2, num_classes=2)
MLP = ModelSpec("mlp-1hidden", input_dim=3, num_classes=3, hidden_dim=4)


def random_case(seed: int, kind: str, activation: str = "tanh"):
    rng = np.random.default_rng(seed)
    m, c = int(rng.integers(1, 5)), int(rng.integers(2, 5))
    if kind == "softmax-regression":
        spec = ModelSpec(kind, m, c)
    else:
        spec = ModelSpec(kind, m, c, hidden_dim=int(rng.integers(1, 5)), activation=activation)
    n = int(rng.integers(1, 6))
    batch = Batch.from_indices(rng.uniform(0, 1, (n, m)), rng.integers(0, c, n), c)
    return spec, rng.normal(0, 1, spec.num_params), batch


# ---------------------------------------------------------------- forward_loss

def test_zero_weights_give_ln2():
    batch = Batch.from_indices([[0.3, 0.9], [1.0, 0.0]], [0, 1], 2)
    assert forward_loss(SR2, SR2.zeros(), batch) == pytest.approx(math.log(2), abs=1e-15)


def test_saturated_softmax_loss():
    W = np.array([10.0, 0.0, -10.0, 0.0])
    batch = Batch.from_indices([[1.0, 0.0]], [0], 2)
    # -ln sigmoid(20), evaluated with log1p to avoid cancellation
    expected = math.log1p(math.exp(-20.0))
    assert forward_loss(SR2, W, batch) == pytest.approx(expected, rel=1e-9)
    assert forward_loss(SR2, W, batch) == pytest.approx(2.06e-9, rel=1e-2)


@pytest.mark.parametrize("activation", ["tanh", "relu"])
def test_mlp_zero_weights_give_ln_c(activation):
    spec = ModelSpec("mlp-1hidden", 3, 5, hidden_dim=4, activation=activation)
    batch = Batch.from_indices(np.random.default_rng(0).uniform(0, 1, (6, 3)), [0, 1, 2, 3, 4, 0], 5)
    assert forward_loss(spec, spec.zeros(), batch) == math.log(5)


def test_forward_loss_errors():
    batch = Batch.from_indices([[0.1, 0.2, 0.3]], [0], 2)
    with pytest.raises(ShapeError):
        forward_loss(SR2, SR2.zeros(), batch)
    with pytest.raises(ShapeError):
        forward_loss(SR2, np.zeros(3), Batch.from_indices([[0.1, 0.2]], [0], 2))
    with pytest.raises(NumericError):
        forward_loss(SR2, np.array([np.nan, 0, 0, 0]), Batch.from_indices([[0.1, 0.2]], [0], 2))


def test_batch_rejects_soft_labels():
    with pytest.raises(ShapeError):
        Batch(np.zeros((1, 2)), np.array([[0.5, 0.5]]))


# ---------------------------------------------------------------- backward

def test_softmax_gradient_by_hand():
    batch = Batch.from_indices([[1.0, 2.0]], [0], 2)
    g = backward(SR2, SR2.zeros(), batch)
    np.testing.assert_allclose(g.reshape(2, 2), [[-0.5, -1.0], [0.5, 1.0]], atol=1e-15)


def test_gradient_vanishes_at_confident_fit():
    batch = Batch.from_indices([[1.0, 0.0], [0.0, 1.0]], [0, 1], 2)
    W = 40.0 * np.array([1.0, -1.0, -1.0, 1.0])
    assert np.linalg.norm(backward(SR2, W, batch)) < 1e-15


@pytest.mark.parametrize("seed", range(100))
def test_backward_matches_finite_differences(seed):
    kind = "softmax-regression" if seed % 2 == 0 else "mlp-1hidden"
    spec, W, batch = random_case(seed, kind, activation="tanh" if seed % 4 != 3 else "relu")
    fd = finite_diff_grad(lambda w: forward_loss(spec, w, batch), W, 1e-5)
    assert np.max(np.abs(backward(spec, W, batch) - fd)) <= 1e-6


@pytest.mark.parametrize("seed", range(5))
def test_per_sample_grads_average_to_backward(seed):
    spec, W, batch = random_case(seed, "mlp-1hidden")
    G = per_sample_grads(spec, W, batch.inputs, batch.labels)
    assert G.shape == (len(batch), spec.num_params)
    np.testing.assert_allclose(G.mean(axis=0), backward(spec, W, batch), atol=1e-14)


@pytest.mark.parametrize("kind", ["softmax-regression", "mlp-1hidden"])
def test_batched_loss_matches_forward_loss(kind):
    spec, _, batch = random_case(3, kind)
    rows = np.random.default_rng(1).normal(0, 2, (7, spec.num_params))
    expected = [forward_loss(spec, r, batch) for r in rows]
    np.testing.assert_allclose(batched_loss(spec, rows, batch), expected, rtol=1e-12, atol=1e-14)


# ---------------------------------------------------------------- clip_gradient

def test_clip_examples():
    np.testing.assert_array_equal(clip_gradient(np.array([3.0, 4.0]), 10.0), [3.0, 4.0])
    np.testing.assert_allclose(clip_gradient(np.array([3.0, 4.0]), 1.0), [0.6, 0.8], rtol=1e-15)
    np.testing.assert_array_equal(clip_gradient(np.zeros(3), 2.0), np.zeros(3))


@pytest.mark.parametrize("c", [0.0, -1.0])
def test_clip_rejects_non_positive(c):
    with pytest.raises(ParameterError):
        clip_gradient(np.ones(2), c)


vectors = st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=12).map(np.array)


@given(vectors, st.floats(1e-3, 1e4))
def test_clip_is_idempotent_and_bounded(g, c):
    once = clip_gradient(g, c)
    assert np.linalg.norm(once) <= c or np.array_equal(once, g)
    np.testing.assert_array_equal(clip_gradient(once, c), once)


# ---------------------------------------------------------------- adam_step

def test_adam_first_step_has_unit_magnitude():
    _, step = adam_step(AdamState.zeros(4), np.full(4, 0.37), 1.0)
    np.testing.assert_allclose(step, -0.37 / (0.37 + 1e-8), rtol=1e-12)


def test_adam_zero_gradient_is_zero_step():
    state, step = adam_step(AdamState.zeros(3), np.zeros(3), 1.0)
    np.testing.assert_array_equal(step, 0.0)
    assert state.step_count == 1


def test_adam_is_deterministic():
    s0 = AdamState.zeros(3)
    g = np.array([0.1, -2.0, 3.0])
    (s1, a), (s2, b) = adam_step(s0, g, 0.5), adam_step(s0, g, 0.5)
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(s1.v, s2.v)
    assert np.all(s1.v >= 0)


def test_adam_shape_error():
    with pytest.raises(ShapeError):
        adam_step(AdamState.zeros(3), np.zeros(4), 1.0)


# ---------------------------------------------------------------- finite_diff_grad

def test_finite_diff_examples():
    np.testing.assert_allclose(finite_diff_grad(lambda x: x @ x, np.array([1.0, 2.0]), 1e-5), [2, 4], atol=1e-8)
    np.testing.assert_array_equal(finite_diff_grad(lambda x: 7.0, np.array([1.0, 2.0])), [0.0, 0.0])
    np.testing.assert_allclose(finite_diff_grad(lambda x: x[0] * x[1], np.array([3.0, 5.0])), [5, 3], atol=1e-8)


def test_finite_diff_errors():
    with pytest.raises(ParameterError):
        finite_diff_grad(lambda x: 0.0, np.zeros(2), 0.0)
    with pytest.raises(NumericError):
        finite_diff_grad(lambda x: np.inf, np.zeros(2))


# ---------------------------------------------------------------- invariants

def test_param_vector_invariants():
    pv = MLP.pack(np.arange(MLP.num_params, dtype=float))
    assert sum(b.size for b in pv.blocks()) == len(pv)
    with pytest.raises(ShapeError):
        ParamVector(np.zeros(5), ((2, 2),))
    with pytest.raises(NumericError):
        ParamVector(np.array([np.inf]), ((1, 1),))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["softmax-regression", "mlp-1hidden"]))
def test_loss_is_non_negative(seed, kind):
    spec, W, batch = random_case(seed, kind)
    assert forward_loss(spec, 5 * W, batch) >= 0.0
