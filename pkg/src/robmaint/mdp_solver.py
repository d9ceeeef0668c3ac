"""Dynamic programming under full observability, single model and ensemble.

Rewards are costs (nonpositive) and every solver maximises, so ``argmax``
picks the cheapest action. Ties go to the lowest action index throughout.
"""

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import check_fitted, check_index, check_row_stochastic
from .model import ModelSample, PomdpModel, PosteriorEnsemble, TransitionSet

__all__ = [
    "QTable",
    "QSchedule",
    "EnsembleQ",
    "q_value_iteration",
    "backward_induction",
    "solve_ensemble",
    "robust_action",
    "optimality_counts",
    "mean_parameter_policy",
    "RobustMDPPolicy",
]

DEFAULT_TOL = 1e-6
MAX_SWEEPS = 1_000_000


@dataclass(frozen=True)
class QTable:
    """Infinite-horizon Q-values ``(S, A)``.

    ``residual`` is the sup-norm change of the final sweep; the returned table
    is one Bellman update past it, so its own residual is at most
    ``gamma * residual``.
    """

    values: np.ndarray
    iterations: int
    residual: float
    residual_history: tuple = ()

    @property
    def V(self):
        return self.values.max(axis=1)

    @property
    def policy(self):
        return self.values.argmax(axis=1)


@dataclass(frozen=True)
class QSchedule:
    """Finite-horizon Q-values ``(H, S, A)``; ``values[t]`` plans with ``H - t`` steps left."""

    values: np.ndarray

    @property
    def horizon(self):
        return self.values.shape[0]

    def table(self, t):
        return self.values[t]

    @property
    def policy(self):
        return self.values.argmax(axis=2)


def _transition_array(p):
    if isinstance(p, (ModelSample, TransitionSet)):
        P = p.P
    else:
        P = np.asarray(p, float)
    return check_row_stochastic(P, "transition matrix")


def _rewards(model, S, A):
    R = model.rewards
    if R.shape != (S, A):
        raise ValueError(f"reward table {R.shape} does not match transitions ({S}, {A})")
    return R


def _bellman(R, P, gamma, Q):
    # R (..., S, A), P (..., A, S, S), Q (..., S, A)
    V = Q.max(axis=-1)
    return R + gamma * np.einsum("...asj,...j->...sa", P, V)


def q_value_iteration(sample, model=None, tol=DEFAULT_TOL, max_iter=MAX_SWEEPS, q0=None):
    """Q-value iteration from ``q0`` (zeros by default) to sup-norm change ``<= tol``.

    ``sample`` may be a :class:`ModelSample`, a :class:`TransitionSet` or an
    ``(A, S, S)`` array.
    """
    P = _transition_array(sample)
    A, S, _ = P.shape
    model = model or PomdpModel(n_states=S, n_actions=A)
    if model.gamma >= 1:
        raise ValueError("value iteration needs gamma < 1")
    if tol <= 0:
        raise ValueError("tol must be positive")
    R = _rewards(model, S, A)
    Q = np.zeros((S, A)) if q0 is None else np.array(q0, float)
    history = []
    for k in range(1, max_iter + 1):
        Q_next = _bellman(R, P, model.gamma, Q)
        r = float(np.max(np.abs(Q_next - Q)))
        history.append(r)
        Q = Q_next
        if r <= tol:
            return QTable(Q, k, r, tuple(history))
    raise RuntimeError(f"value iteration did not reach tol={tol} in {max_iter} sweeps")


def backward_induction(sample, model=None, H=None):
    """Finite-horizon Q-values with zero terminal value."""
    P = _transition_array(sample)
    A, S, _ = P.shape
    model = model or PomdpModel(n_states=S, n_actions=A)
    H = H if H is not None else model.horizon
    if H is None or H < 1:
        raise ValueError("horizon must be >= 1")
    R = _rewards(model, S, A)
    return QSchedule(_backward(R, P[None], model.gamma, H)[0])


def _backward(R, P, gamma, H):
    K, A, S, _ = P.shape
    out = np.empty((K, H, S, A))
    out[:, H - 1] = R
    for t in range(H - 2, -1, -1):
        out[:, t] = R + gamma * np.einsum("kasj,kj->ksa", P, out[:, t + 1].max(axis=-1))
    return out


@dataclass(frozen=True)
class EnsembleQ:
    """Q-values of every ensemble member.

    ``values`` is ``(K, S, A)`` for an infinite horizon or ``(K, H, S, A)``
    for a finite one.
    """

    values: np.ndarray
    gamma: float
    horizon: int = None
    iterations: int = 0
    residual: float = 0.0

    def __len__(self):
        return self.values.shape[0]

    @property
    def finite(self):
        return self.horizon is not None

    def at(self, t=None):
        """``(K, S, A)`` Q-values at step ``t`` (ignored for an infinite horizon)."""
        if not self.finite:
            return self.values
        t = 0 if t is None else min(int(t), self.horizon - 1)
        return self.values[:, t]

    def mean(self, t=None):
        return self.at(t).mean(axis=0)

    def robust_policy(self):
        """Robust actions: ``(S,)``, or ``(H, S)`` for a finite horizon."""
        return self.values.mean(axis=0).argmax(axis=-1)

    def subset(self, idx):
        return EnsembleQ(self.values[np.asarray(idx)], self.gamma, self.horizon)


def _policy_iteration(R, P, gamma, max_iter=100):
    K, A, S, _ = P.shape
    ks = np.arange(K)[:, None]
    ss = np.arange(S)[None, :]
    pi = np.broadcast_to(R.argmax(axis=1), (K, S)).copy()
    eye = np.eye(S)
    Q = None
    for _ in range(max_iter):
        P_pi = P[ks, pi, ss]  # (K, S, S)
        R_pi = R[ss, pi]  # (K, S)
        V = np.linalg.solve(eye - gamma * P_pi, R_pi[..., None])[..., 0]
        Q = R + gamma * np.einsum("kasj,kj->ksa", P, V)
        best = Q.argmax(axis=-1)
        current = np.take_along_axis(Q, pi[..., None], axis=-1)[..., 0]
        gain = Q.max(axis=-1) - current
        # switch only on a real improvement so ties cannot make the policy cycle
        change = gain > 1e-10 * (1.0 + np.abs(current))
        if not change.any():
            break
        pi = np.where(change, best, pi)
    return Q


def solve_ensemble(ensemble, model=None, tol=DEFAULT_TOL, horizon=None):
    """Q-values for every member of ``ensemble``.

    Infinite horizon: batched policy iteration gives a near-exact start and
    value-iteration sweeps then run until every member's sup-norm change is
    at most ``tol``. Finite horizon: backward induction over ``horizon`` steps
    (defaults to ``model.horizon``).
    """
    if len(ensemble) == 0:
        raise ValueError("empty ensemble")
    P = check_row_stochastic(ensemble.P, "ensemble transition matrices")
    K, A, S, _ = P.shape
    model = model or PomdpModel(n_states=S, n_actions=A)
    R = _rewards(model, S, A)
    horizon = horizon if horizon is not None else model.horizon
    if horizon is not None:
        if horizon < 1:
            raise ValueError("horizon must be >= 1")
        return EnsembleQ(_backward(R, P, model.gamma, horizon), model.gamma, horizon)
    if model.gamma >= 1:
        raise ValueError("infinite-horizon solve needs gamma < 1")
    Q = _policy_iteration(R, P, model.gamma)
    for k in range(1, MAX_SWEEPS + 1):
        Q_next = _bellman(R, P, model.gamma, Q)
        r = float(np.max(np.abs(Q_next - Q)))
        Q = Q_next
        if r <= tol:
            return EnsembleQ(Q, model.gamma, None, k, r)
    raise RuntimeError("ensemble value iteration did not converge")


def _as_ensemble_q(q, model, horizon=None):
    if isinstance(q, EnsembleQ):
        return q
    if isinstance(q, ModelSample):
        q = PosteriorEnsemble.from_samples([q])
    if isinstance(q, PosteriorEnsemble):
        return solve_ensemble(q, model, horizon=horizon)
    raise TypeError("expected EnsembleQ, PosteriorEnsemble or ModelSample")


def robust_action(ensemble, s, t=None, model=None):
    """Action maximising the ensemble-average Q-value in state ``s``.

    ``ensemble`` is an :class:`EnsembleQ` or a :class:`PosteriorEnsemble`
    (solved on the fly with ``model``). ``t`` selects the step of a finite
    horizon schedule.
    """
    q = _as_ensemble_q(ensemble, model)
    if len(q) == 0:
        raise ValueError("empty ensemble")
    mean = q.mean(t)
    check_index("state", s, mean.shape[0])
    return int(mean[s].argmax())


def optimality_counts(ensemble, model=None, t=None):
    """``(S, A)`` counts of members for which each action is optimal."""
    q = _as_ensemble_q(ensemble, model)
    best = q.at(t).argmax(axis=-1)  # (K, S)
    A = q.values.shape[-1]
    return np.stack([np.bincount(best[:, s], minlength=A) for s in range(best.shape[1])])


def mean_parameter_policy(ensemble, model=None, tol=DEFAULT_TOL, horizon=None):
    """Optimal policy of the element-wise mean transition model.

    Returns ``(S,)`` actions, or ``(H, S)`` when a horizon is given.
    """
    if len(ensemble) == 0:
        raise ValueError("empty ensemble")
    mean = ensemble.mean_sample()
    model = model or PomdpModel(n_states=ensemble.n_states, n_actions=ensemble.n_actions)
    horizon = horizon if horizon is not None else model.horizon
    if horizon is not None:
        return backward_induction(mean, model, horizon).policy
    return q_value_iteration(mean, model, tol).policy


class RobustMDPPolicy(BaseEstimator):
    """Robust full-observability policy fitted to a posterior ensemble.

    Parameters
    ----------
    gamma : float
        Discount factor.
    horizon : int or None
        Finite planning horizon; None plans for an infinite horizon.
    tol : float
        Sup-norm tolerance of the infinite-horizon solve.
    costs : CostTable or None
        Defaults to the railway cost table for 4 states and 3 actions.
    """

    def __init__(self, gamma=0.995, horizon=None, tol=DEFAULT_TOL, costs=None):
        self.gamma = gamma
        self.horizon = horizon
        self.tol = tol
        self.costs = costs

    def _model(self, ensemble):
        return PomdpModel(
            n_states=ensemble.n_states,
            n_actions=ensemble.n_actions,
            costs=self.costs,
            gamma=self.gamma,
            horizon=self.horizon,
        )

    def fit(self, X, y=None):
        self.model_ = self._model(X)
        self.q_ = solve_ensemble(X, self.model_, self.tol)
        self.policy_ = self.q_.robust_policy()
        self.counts_ = optimality_counts(self.q_)
        return self

    def predict(self, states, t=0):
        """Robust actions for an array of states (at step ``t`` if finite-horizon)."""
        check_fitted(self, "policy_")
        table = self.policy_ if self.policy_.ndim == 1 else self.policy_[min(t, len(self.policy_) - 1)]
        return table[np.asarray(states, dtype=np.int64)]

    def as_state_policy(self):
        from .simulator import StatePolicy

        check_fitted(self, "policy_")
        return StatePolicy(self.policy_)
