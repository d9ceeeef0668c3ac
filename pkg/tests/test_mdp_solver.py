import itertools
from types import SimpleNamespace

import numpy as np
import pytest

from robmaint.benchmarks import benchmark_sample, perturbed_ensemble
from robmaint.mdp_solver import (
    EnsembleQ,
    RobustMDPPolicy,
    backward_induction,
    mean_parameter_policy,
    optimality_counts,
    q_value_iteration,
    robust_action,
    solve_ensemble,
)
from robmaint.model import CostTable, PomdpModel, PosteriorEnsemble


def random_mdp(rng, S, A):
    P = rng.random((A, S, S)) + 0.05
    P /= P.sum(axis=-1, keepdims=True)
    R = -rng.random((S, A))
    return P, R


def toy_model(R, gamma, horizon=None):
    # duck-typed model: the solvers only read ``rewards`` and ``gamma``
    return SimpleNamespace(rewards=np.asarray(R, float), gamma=gamma, horizon=horizon)


def enumeration_oracle(P, R, gamma, H=200):
    """Optimal Q by evaluating every stationary deterministic policy over ``H`` steps."""
    A, S, _ = P.shape
    best = np.full(S, -np.inf)
    for pi in itertools.product(range(A), repeat=S):
        P_pi = P[list(pi), np.arange(S)]
        R_pi = R[np.arange(S), list(pi)]
        V, dist = np.zeros(S), np.eye(S)
        for t in range(H):
            V += gamma**t * dist @ R_pi
            dist = dist @ P_pi
        best = np.maximum(best, V)
    return R + gamma * np.einsum("asj,j->sa", P, best)


def tree_oracle(P, R, gamma, s, steps):
    """Naive recursive decision tree value of ``steps`` remaining steps."""
    if steps == 0:
        return 0.0
    A, S, _ = P.shape
    return max(
        R[s, a] + gamma * sum(P[a, s, j] * tree_oracle(P, R, gamma, j, steps - 1) for j in range(S))
        for a in range(A)
    )


def test_zero_rewards_give_zero_q():
    P = np.stack([np.eye(4)] * 3)
    q = q_value_iteration(P, PomdpModel(costs=CostTable.zeros(4, 3)))
    assert np.all(q.values == 0.0)


def test_geometric_series():
    r, gamma, tol = -3.0, 0.95, 1e-8
    q = q_value_iteration(np.ones((1, 1, 1)), toy_model([[r]], gamma), tol=tol)
    assert q.values[0, 0] == pytest.approx(r / (1 - gamma), abs=tol / (1 - gamma))


@pytest.mark.parametrize("seed", range(5))
def test_matches_policy_enumeration(seed):
    rng = np.random.default_rng(seed)
    P, R = random_mdp(rng, 3, 2)
    q = q_value_iteration(P, toy_model(R, 0.9), tol=1e-10)
    np.testing.assert_allclose(q.values, enumeration_oracle(P, R, 0.9), atol=1e-6)


def test_residuals_contract():
    rng = np.random.default_rng(10)
    P, R = random_mdp(rng, 4, 3)
    q = q_value_iteration(P, toy_model(R, 0.9), tol=1e-8)
    h = np.array(q.residual_history)
    assert np.all(h[1:] <= 0.9 * h[:-1] + 1e-12)
    assert q.residual <= 1e-8


def test_reward_shift_moves_q_by_constant():
    rng = np.random.default_rng(11)
    P, R = random_mdp(rng, 3, 3)
    q1 = q_value_iteration(P, toy_model(R, 0.9), tol=1e-11)
    q2 = q_value_iteration(P, toy_model(R - 5.0, 0.9), tol=1e-11)
    np.testing.assert_allclose(q2.values - q1.values, -5.0 / 0.1, atol=1e-8)
    np.testing.assert_array_equal(q1.policy, q2.policy)


def test_warm_start_converges_to_same_values():
    p = benchmark_sample()
    cold = q_value_iteration(p, PomdpModel(), tol=1e-8)
    warm = q_value_iteration(p, PomdpModel(), tol=1e-8, q0=cold.values + 1.0)
    np.testing.assert_allclose(warm.values, cold.values, atol=1e-8 * 2 / (1 - 0.995))


def test_bad_arguments():
    P = np.stack([np.eye(2)] * 2)
    with pytest.raises(ValueError):
        q_value_iteration(P, toy_model(np.zeros((2, 2)), 1.0))
    with pytest.raises(ValueError):
        q_value_iteration(P, toy_model(np.zeros((2, 2)), 0.9), tol=0)
    with pytest.raises(ValueError):
        q_value_iteration(P, toy_model(np.zeros((3, 2)), 0.9))
    bad = P.copy()
    bad[0, 0] = [0.5, 0.4]
    with pytest.raises(ValueError):
        q_value_iteration(bad, toy_model(np.zeros((2, 2)), 0.9))


# --- finite horizon ---------------------------------------------------------


def test_one_step_is_myopic():
    p = benchmark_sample()
    m = PomdpModel(horizon=1)
    q = backward_induction(p, m)
    np.testing.assert_array_equal(q.table(0), m.rewards)


def test_long_horizon_approaches_infinite():
    p = benchmark_sample()
    m = PomdpModel()
    H = 1500
    qH = backward_induction(p, m, H).table(0)
    qinf = q_value_iteration(p, m, tol=1e-9).values
    bound = 0.995**H * np.abs(m.rewards).max() / (1 - 0.995)
    assert np.max(np.abs(qH - qinf)) <= bound + 1e-6


def test_three_step_tree():
    P = np.array([[[0.7, 0.3], [0.0, 1.0]], [[1.0, 0.0], [0.8, 0.2]]])
    R = np.array([[-1.0, -3.0], [-6.0, -4.0]])
    q = backward_induction(P, toy_model(R, 0.9), 3)
    for s in range(2):
        assert q.table(0)[s].max() == pytest.approx(tree_oracle(P, R, 0.9, s, 3), abs=1e-12)
        assert q.table(2)[s].max() == pytest.approx(tree_oracle(P, R, 0.9, s, 1), abs=1e-12)


# --- ensembles --------------------------------------------------------------


def test_ensemble_matches_per_sample_solve():
    ens = perturbed_ensemble(6, seed=2)
    m = PomdpModel()
    q = solve_ensemble(ens, m, tol=1e-6)
    for k in range(len(ens)):
        single = q_value_iteration(ens[k], m, tol=1e-9).values
        assert np.max(np.abs(q.values[k] - single)) < 1e-6 / (1 - 0.995)


def test_ensemble_finite_horizon_shape():
    ens = perturbed_ensemble(3, seed=3)
    q = solve_ensemble(ens, PomdpModel(), horizon=7)
    assert q.values.shape == (3, 7, 4, 3)
    np.testing.assert_array_equal(q.at(6)[0], PomdpModel().rewards)
    assert q.robust_policy().shape == (7, 4)


def test_identical_members_match_single_model():
    p = benchmark_sample()
    ens = PosteriorEnsemble.from_samples([p, p, p])
    m = PomdpModel()
    single = q_value_iteration(p, m, tol=1e-9)
    for s in range(4):
        assert robust_action(ens, s, model=m) == single.policy[s]
    counts = optimality_counts(ens, m)
    assert np.all(counts.max(axis=1) == 3)
    np.testing.assert_array_equal(mean_parameter_policy(ens, m), single.policy)


def test_expectation_decides_two_point():
    # Q_A prefers a1 by 10, Q_B prefers a2 by 4: the mean prefers a1
    qa = np.array([[[0.0, 10.0, 0.0]]])
    qb = np.array([[[0.0, 0.0, 4.0]]])
    q = EnsembleQ(np.concatenate([qa, qb]), 0.9)
    assert robust_action(q, 0) == 1
    np.testing.assert_array_equal(optimality_counts(q), [[0, 1, 1]])


def test_robust_estimator():
    ens = perturbed_ensemble(5, seed=4)
    est = RobustMDPPolicy().fit(ens)
    for s in range(4):
        assert est.predict([s])[0] == robust_action(est.q_, s)
    assert est.counts_.sum(axis=1).tolist() == [5] * 4
    assert est.get_params()["gamma"] == 0.995
    pol = est.as_state_policy()
    np.testing.assert_array_equal(pol.table, est.policy_)
