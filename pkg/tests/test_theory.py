import math

import numpy as np
import pytest

from ppfa.federation import ClientState, FederationConfig, ModelTask, run_training
from ppfa.numkit import ModelSpec, ParameterError
from ppfa.privacy import ShellBounds
from ppfa.xprunner import theory
from ppfa.xprunner.data import synth_dataset
from ppfa.xprunner.theory import (PreconditionError, Quadratic, QuadraticTask, ball_minimizer,
                                  brute_force_optimal_distortion, inner_product_identity_residual,
                                  learner_steps_for, probe_smoothness, random_spd)

SHELL = ShellBounds(1.0, 2.0)


# ---------------------------------------------------------------- probe

def test_probe_recovers_quadratic_spectrum():
    A = np.diag([1.0, 2.0])
    p = probe_smoothness(lambda w: A @ w, np.zeros(2), 200)
    assert p.L == pytest.approx(2.0, rel=0.05)
    assert p.R == pytest.approx(1.0, rel=0.05)


def test_probe_linear_function_has_zero_smoothness():
    p = probe_smoothness(lambda w: np.array([1.0, -2.0, 0.5]), np.zeros(3), 100)
    assert p.L == pytest.approx(0.0, abs=1e-9) and p.R == 0.0
    assert p.C_g == pytest.approx(math.sqrt(5.25))


def test_probe_softmax_ordering():
    spec = ModelSpec("softmax-regression", 8, 4)
    data = synth_dataset(4, 8, 10, seed=0)
    task = ModelTask(spec)
    p = probe_smoothness(lambda w: task.grad(w, data), np.zeros(spec.num_params), 100)
    assert 0.0 <= p.R <= p.L and p.empirical


def test_probe_needs_enough_samples():
    with pytest.raises(ParameterError):
        probe_smoothness(lambda w: w, np.zeros(2), 99)


# ---------------------------------------------------------------- brute force oracle

def quad_rows(c):
    c = np.asarray(c, dtype=float)
    return lambda rows: 0.5 * np.sum((rows - c) ** 2, axis=1)


def test_brute_force_examples():
    d, _ = brute_force_optimal_distortion(quad_rows((0, 3)), np.zeros(2), SHELL)
    np.testing.assert_allclose(d, (0, 2), atol=1e-2)
    d, _ = brute_force_optimal_distortion(quad_rows((0.6, -1.2)), np.zeros(2), SHELL)
    np.testing.assert_allclose(d, (0.6, -1.2), atol=1e-2)
    _, best = brute_force_optimal_distortion(lambda rows: np.sum(rows ** 2, axis=1), np.zeros(3), SHELL)
    assert best == pytest.approx(1.0, abs=1e-3)


def test_brute_force_degenerate_and_errors():
    d, v = brute_force_optimal_distortion(quad_rows((1, 1)), np.zeros(2), ShellBounds(0.0, 0.0))
    np.testing.assert_array_equal(d, 0.0)
    assert v == 1.0
    with pytest.raises(ParameterError):
        brute_force_optimal_distortion(quad_rows((1, 1)), np.zeros(2), SHELL, samples=9999)


def test_ball_minimizer_matches_brute_force():
    rng = np.random.default_rng(3)
    for _ in range(5):
        A = random_spd(3, 1.0, 4.0, rng)
        d = rng.normal(0, 3, 3)
        star = ball_minimizer(A, d, 1.0)
        assert np.linalg.norm(star) <= 1.0 + 1e-12
        f = lambda rows: 0.5 * np.einsum("ni,ij,nj->n", rows - d, A, rows - d)
        _, best = brute_force_optimal_distortion(f, np.zeros(3), ShellBounds(0.0, 1.0), 20_000, 60)
        assert f(star[None])[0] <= best + 1e-9


def test_random_spd_spectrum():
    lam = np.linalg.eigvalsh(random_spd(5, 1.0, 4.0, np.random.default_rng(0)))
    assert lam[0] == pytest.approx(1.0) and lam[-1] == pytest.approx(4.0)


# ---------------------------------------------------------------- learner guarantees

def test_learner_steps_example():
    assert learner_steps_for(1.0, 1.0, 10, 1.0) == 3


def test_exact_step_when_condition_number_is_one():
    from ppfa import distortion as dist
    c = np.array([0.3, -0.2, 0.1])
    cfg = dist.LearnerConfig(M=1, gamma=1.0, lambda_norm=0.0, optimizer=dist.PLAIN_GD)
    out = dist.learn_distortion(lambda d: d - c, np.zeros(3), ShellBounds(0.0, 1.0), cfg)
    np.testing.assert_allclose(out, c, atol=1e-15)


def test_contraction_report_passes():
    r = theory.verify_contraction()
    assert r.passed and len(r.rows) == 40


def test_theorem1_suite_passes():
    r = theory.verify_theorem1(theory.QuadraticSuite(samples=10_000))
    assert r.passed, r.failures()
    assert len(r.rows) == 40


# ---------------------------------------------------------------- convergence bound

def quadratic_federation(eta, mechanism=None, rounds=20):
    rng = np.random.default_rng(0)
    quads = [Quadratic(random_spd(3, 1.0, 2.0, rng), rng.standard_normal(3)) for _ in range(4)]
    clients = [ClientState(k, q, 1 + k) for k, q in enumerate(quads)]
    task = QuadraticTask(3)
    cfg = FederationConfig(rounds=rounds, eta=eta, batch_size=1, mechanism=mechanism, keep_locals=True)
    traj = run_training(task, clients, cfg, W0=np.full(3, 4.0))
    probe = theory.probe_smoothness(lambda w: theory.global_grad(task, w, clients),
                                    np.stack([l for r in traj.records for l in r.locals]), 200)
    return traj, probe


def test_theorem2_zero_distortion_wide_margin():
    traj, probe = quadratic_federation(0.1)
    terms = theory.theorem2_terms(traj, probe, 0.1, np.zeros(20))
    assert terms.lhs <= 0.5 * terms.rhs


def test_theorem2_tiny_eta_dominated_by_descent_term():
    eta = 1e-6
    traj, probe = quadratic_federation(eta)
    terms = theory.theorem2_terms(traj, probe, eta, np.zeros(20))
    assert terms.lhs <= terms.rhs
    assert terms.lhs <= terms.descent <= terms.rhs


def test_theorem2_needs_oracle_values():
    traj, probe = quadratic_federation(0.1, rounds=2)
    with pytest.raises(PreconditionError):
        theory.verify_theorem2(traj, probe, 0.1, None)
    with pytest.raises(PreconditionError):
        theory.verify_theorem2(traj, probe, 0.1, [0.0])


# ---------------------------------------------------------------- identity

def test_inner_product_identity():
    r = theory.verify_inner_product_identity(200)
    assert r.passed
    assert inner_product_identity_residual(np.ones(2), [np.ones(2), -np.ones(2)], [1, 3]) <= 1e-12
