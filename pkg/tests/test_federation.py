from dataclasses import dataclass

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ppfa import numkit
from ppfa.distortion import ConfigError, LearnerConfig, PLAIN_GD
from ppfa.federation import (ClientState, FederationConfig, ModelTask, client_local_step, global_grad,
                             run_round, run_training, server_aggregate)
from ppfa.numkit import ModelSpec, ShapeError
from ppfa.privacy import PL, PrivacyBudget, PrivacyConstants
from ppfa.xprunner.data import synth_dataset
from ppfa.xprunner.theory import Quadratic, QuadraticTask, inner_product_identity_residual


@dataclass(frozen=True)
class SquaredLoss:
    """0.5 (w.x - y)^2 on a single (x, y) pair."""

    num_params: int = 2

    def loss(self, w, d):
        x, y = d
        return 0.5 * float(w @ x - y) ** 2

    def grad(self, w, d):
        x, y = d
        return (w @ x - y) * x

    def sample(self, d, size, rng):
        return d


SPEC = ModelSpec("softmax-regression", 8, 4)


def blob_clients(budget=None, K=4, per_class=10, seed=0):
    data = synth_dataset(per_class=per_class, seed=seed)
    budgets = None if budget is None else (PrivacyBudget(budget, PL),)
    return [ClientState(k, data.subset(np.arange(k, len(data), K)), len(range(k, len(data), K)), budgets)
            for k in range(K)]


# ---------------------------------------------------------------- client_local_step

def test_local_step_by_hand():
    d = (np.array([1.0, 1.0]), 2.0)
    np.testing.assert_allclose(client_local_step(SquaredLoss(), np.array([1.0, 0.0]), d, 0.5), [1.5, 0.5])


def test_local_step_fixed_points():
    w = np.array([0.3, -0.2])
    d = (np.array([1.0, 1.0]), 2.0)
    np.testing.assert_array_equal(client_local_step(SquaredLoss(), w, d, 0.0), w)
    at_fit = np.array([1.0, 1.0])
    np.testing.assert_array_equal(client_local_step(SquaredLoss(), at_fit, d, 0.7), at_fit)


def test_local_step_clips():
    d = (np.array([10.0, 0.0]), -10.0)
    out = client_local_step(SquaredLoss(), np.array([1.0, 0.0]), d, 1.0, clip=1.0)
    np.testing.assert_allclose(out, [0.0, 0.0], atol=1e-15)


# ---------------------------------------------------------------- server_aggregate

def test_aggregate_examples():
    np.testing.assert_allclose(server_aggregate([np.zeros(2), np.full(2, 4.0)], [1, 3]), [3.0, 3.0])
    p = np.array([0.1, -2.0, 5.0])
    np.testing.assert_allclose(server_aggregate([p, p, p], [2, 7, 1]), p, rtol=1e-15)
    np.testing.assert_array_equal(server_aggregate([p], [5]), p)


def test_aggregate_errors():
    with pytest.raises(ShapeError):
        server_aggregate([], [])
    with pytest.raises(ShapeError):
        server_aggregate([np.zeros(2), np.zeros(3)], [1, 1])
    with pytest.raises(ShapeError):
        server_aggregate([np.zeros(2)], [0])


@given(st.integers(0, 10_000))
def test_aggregate_is_linear(seed):
    rng = np.random.default_rng(seed)
    K, dim = int(rng.integers(1, 6)), int(rng.integers(1, 8))
    locs, ds = rng.normal(0, 3, (K, dim)), rng.normal(0, 3, (K, dim))
    w = rng.integers(1, 50, K)
    lhs = server_aggregate(list(locs + ds), w)
    rhs = server_aggregate(list(locs), w) + server_aggregate(list(ds), w)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


# ---------------------------------------------------------------- run_round

def test_zero_distortion_round_has_no_utility_loss():
    C = PrivacyConstants()
    clients = blob_clients(budget=C.a1)  # degenerate shell
    cfg = FederationConfig(rounds=1, mechanism="PL-Learn", constants=C)
    W0 = SPEC.init_params(np.random.default_rng(0))
    W_t, W_shadow, rec, _ = run_round(ModelTask(SPEC), clients, W0, 1, cfg)
    np.testing.assert_array_equal(W_t, W_shadow)
    assert all(c.utility_loss == 0.0 for c in rec.clients)


def test_single_client_gap_is_the_distortion():
    clients = blob_clients(budget=0.5, K=1)
    cfg = FederationConfig(rounds=1, mechanism="PL-Identical")
    W0 = SPEC.init_params(np.random.default_rng(0))
    W_t, W_shadow, rec, _ = run_round(ModelTask(SPEC), clients, W0, 1, cfg)
    assert np.linalg.norm(W_t - W_shadow) == pytest.approx(rec.clients[0].distortion_norm, rel=1e-12)
    assert rec.clients[0].distortion_norm == pytest.approx(rec.clients[0].l, rel=1e-12)


def test_learn_beats_identical_on_quadratic():
    rng = np.random.default_rng(3)
    task = QuadraticTask(3)
    C = PrivacyConstants()
    budget = PrivacyBudget(C.a1 - C.a2 * 0.5, PL)  # l = 0.5
    learner = LearnerConfig(M=30, gamma=0.5, lambda_norm=0.0, optimizer=PLAIN_GD)
    for _ in range(20):
        A = np.diag(rng.uniform(1, 2, 3))
        clients = [ClientState(0, Quadratic(A, rng.normal(0, 2, 3)), 1, (budget,))]
        W0 = rng.normal(0, 2, 3)
        res = {}
        for mech in ("PL-Learn", "PL-Identical"):
            cfg = FederationConfig(rounds=1, mechanism=mech, constants=C, learner=learner, eta=0.1)
            res[mech] = run_round(task, clients, W0, 1, cfg)[2].clients[0].utility_loss
        assert res["PL-Learn"] <= res["PL-Identical"] + 1e-12


def test_round_numbering():
    with pytest.raises(ValueError):
        run_round(ModelTask(SPEC), blob_clients(), SPEC.zeros(), 0, FederationConfig())


def test_identity_on_live_round_gradients():
    task = ModelTask(SPEC)
    clients = blob_clients()
    W = SPEC.init_params(np.random.default_rng(1))
    a = global_grad(task, W, clients)
    bs = [task.grad(W, c.data) for c in clients]
    w = np.array([c.n_k for c in clients], float)
    assert inner_product_identity_residual(a, bs, w / w.sum()) <= 1e-9


# ---------------------------------------------------------------- run_training

def test_unprotected_training_is_plain_fedsgd():
    task = ModelTask(SPEC)
    clients = blob_clients()
    W0 = SPEC.init_params(np.random.default_rng(2))
    cfg = FederationConfig(rounds=15, seed=4)
    traj = run_training(task, clients, cfg, W0=W0)
    W = W0.copy()
    for t in range(1, 16):
        locs = []
        for c in clients:
            batch = task.sample(c.data, 4, np.random.default_rng([4, 0, c.id, t]))
            locs.append(W - 0.1 * numkit.backward(SPEC, W, batch))
        W = server_aggregate(locs, [c.n_k for c in clients])
    np.testing.assert_array_equal(traj.W_final, W)
    assert len(traj.records) == 15


def test_identical_with_zero_shell_has_zero_utility_loss():
    C = PrivacyConstants()
    traj = run_training(ModelTask(SPEC), blob_clients(budget=C.a1),
                        FederationConfig(rounds=5, mechanism="PL-Identical", constants=C))
    assert traj.mean_utility_loss == 0.0


def test_larger_budget_means_smaller_distortion():
    C = PrivacyConstants(c_a=0.05, D=2.0)
    norms = []
    for chi in (0.5, 0.8, 0.9, 0.99):
        traj = run_training(ModelTask(SPEC), blob_clients(budget=chi),
                            FederationConfig(rounds=3, mechanism="PL-Learn", constants=C))
        norms.append(traj.mean_distortion_norm)
    assert all(b <= a for a, b in zip(norms, norms[1:]))


def test_training_is_deterministic_and_order_independent():
    cfg = FederationConfig(rounds=5, mechanism="PL-Learn", seed=7)
    clients = blob_clients(budget=0.5)
    a = run_training(ModelTask(SPEC), clients, cfg)
    b = run_training(ModelTask(SPEC), list(reversed(clients)), cfg)
    np.testing.assert_array_equal(a.W_final, b.W_final)
    assert [r.grad_norm_sq for r in a.records] == [r.grad_norm_sq for r in b.records]


def test_training_config_errors():
    with pytest.raises(ConfigError):
        FederationConfig(rounds=0)
    with pytest.raises(ConfigError):
        FederationConfig(mechanism="PL-Random")
    with pytest.raises(ConfigError):
        run_training(ModelTask(SPEC), [], FederationConfig())
    dup = blob_clients()[:2]
    with pytest.raises(ConfigError):
        run_training(ModelTask(SPEC), [dup[0], dup[0]], FederationConfig())
