"""Belief tracking and Q_MDP planning under parameter uncertainty.

A robust planner keeps one belief per planning sample, each updated with that
sample's own transition and observation model, and picks the action with the
largest ensemble-average of ``sum_s b_k(s) Q_k(s, a)``.

Episode timing: the first action is chosen from the prior belief ``T0``; the
first observation ``z_0`` is folded into the first update together with
``z_1``. With that convention the value of the Q_MDP policy from ``T0`` is
bounded above by ``max_a sum_s T0(s) Q_0(s, a)`` (:func:`v_qmdp_bound`).
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import special
from sklearn.base import BaseEstimator

from . import prob_core as pc
from ._validation import check_fitted, check_probability_vector, check_rng
from .inference import emission_loglik
from .mdp_solver import EnsembleQ, QSchedule, QTable, solve_ensemble
from .model import ModelSample, PomdpModel, PosteriorEnsemble
from .simulator import CommonRandomNumbers, simulate_batch

__all__ = [
    "Belief",
    "ImpossibleObservationError",
    "belief_update",
    "condition_on_initial",
    "qmdp_action",
    "robust_qmdp_action",
    "v_qmdp_bound",
    "QMDPPolicy",
    "run_qmdp_episode",
    "RobustQMDPPolicy",
]

LIKELIHOOD_FLOOR = 1e-300
LOG_FLOOR = math.log(LIKELIHOOD_FLOOR)
BELIEF_ATOL = 1e-10


class ImpossibleObservationError(FloatingPointError):
    """Every state assigns zero likelihood to an observation."""


@dataclass(frozen=True)
class Belief:
    probs: np.ndarray

    def __post_init__(self):
        p = check_probability_vector(self.probs, "belief", atol=BELIEF_ATOL)
        p = np.array(p, dtype=float)
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @classmethod
    def uniform(cls, n_states):
        return cls(np.full(n_states, 1.0 / n_states))

    @classmethod
    def one_hot(cls, s, n_states):
        p = np.zeros(n_states)
        p[s] = 1.0
        return cls(p)

    def __len__(self):
        return self.probs.size


def _normalise_log(logw):
    m = logw.max()
    if not np.isfinite(m):
        raise ImpossibleObservationError("observation has zero likelihood under every state")
    w = np.exp(logw - m)
    return w / w.sum()


def _probs(b):
    return b.probs if isinstance(b, Belief) else np.asarray(b, float)


def belief_update(b, a, z_prev, z, sample):
    """Bayes update of ``b`` after action ``a`` moved the observation from ``z_prev`` to ``z``.

    ``b'(s') ∝ p(z | s', a, z_prev) * sum_s p(s' | s, a) b(s)``.
    """
    pred = _probs(b) @ sample.P[a]
    loglik = np.array([emission_loglik(z, z_prev, s, a, sample.obs) for s in range(pred.size)])
    with np.errstate(divide="ignore"):
        return Belief(_normalise_log(np.log(pred) + loglik))


def condition_on_initial(b, z0, sample):
    """Condition a belief on the first observation of a series."""
    loglik = np.array(
        [emission_loglik(z0, None, s, None, sample.obs) for s in range(len(_probs(b)))]
    )
    with np.errstate(divide="ignore"):
        return Belief(_normalise_log(np.log(_probs(b)) + loglik))


def _q_values(q, t=0):
    if isinstance(q, QTable):
        return q.values
    if isinstance(q, QSchedule):
        return q.table(min(t, q.horizon - 1))
    return np.asarray(q, float)


def qmdp_action(b, q, t=0):
    """``argmax_a sum_s b(s) Q(s, a)``; ties go to the lowest action."""
    return int((_probs(b) @ _q_values(q, t)).argmax())


def robust_qmdp_action(beliefs, qtables, t=0):
    """Action maximising the mean over samples of ``sum_s b_k(s) Q_k(s, a)``."""
    beliefs = [_probs(b) for b in beliefs]
    qs = [_q_values(q, t) for q in qtables]
    if len(beliefs) != len(qs) or not beliefs:
        raise ValueError("need the same positive number of beliefs and Q-tables")
    scores = np.mean([b @ q for b, q in zip(beliefs, qs)], axis=0)
    return int(scores.argmax())


def v_qmdp_bound(b0, schedule, t=0):
    """Optimistic Q_MDP value ``max_a sum_s b0(s) Q(s, a, t)``."""
    return float((_probs(b0) @ _q_values(schedule, t)).max())


class _StepLikelihood:
    """Batched AR truncated-t emission log-likelihoods for ``K`` planning samples.

    Shape conventions: observations ``(n,)``, output ``(n, K, S)``.
    """

    def __init__(self, obs):
        self.obs = {k: np.asarray(v, float) for k, v in obs.items()}
        self.const = {}
        for branch in ("d", "r", "0"):
            nu = self.obs[f"nu_{branch}"]
            sigma = self.obs[f"sigma_{branch}"]
            self.const[branch] = (
                special.gammaln(0.5 * (nu + 1))
                - special.gammaln(0.5 * nu)
                - 0.5 * np.log(nu * np.pi)
                - np.log(sigma)
            )

    def _branch(self, branch, x, loc, ub):
        o = self.obs
        nu = o[f"nu_{branch}"]
        sigma = o[f"sigma_{branch}"]
        y = (x - loc) / sigma
        mass = special.stdtr(nu, (ub - loc) / sigma)
        with np.errstate(divide="ignore"):
            out = self.const[branch] - 0.5 * (nu + 1) * np.log1p(y * y / nu) - np.log(mass)
        return np.where(x <= ub, out, -np.inf)

    def initial(self, z0):
        z = z0[:, None, None]
        return self._branch("0", z, self.obs["mu_0"][None], 0.0)

    def step(self, a, z_prev, z):
        n = z.shape[0]
        K, S = self.obs["mu_d"].shape
        out = np.empty((n, K, S))
        det = a == 0
        if det.any():
            zp = z_prev[det][:, None, None]
            dz = (z[det] - z_prev[det])[:, None, None]
            out[det] = self._branch("d", dz, self.obs["mu_d"][None], -zp)
        rep = ~det
        if rep.any():
            zp = z_prev[rep][:, None, None]
            k = self.obs["k_r"][:, a[rep] - 1].T[:, :, None]  # (m, K, 1)
            loc = k * zp + self.obs["mu_r"][None]
            out[rep] = self._branch("r", z[rep][:, None, None], loc, 0.0)
        return out


class QMDPPolicy:
    """Batched robust Q_MDP policy following the simulator's policy protocol.

    Parameters
    ----------
    planning : PosteriorEnsemble or ModelSample
        Models the agent plans with; one belief is tracked per member.
    q : EnsembleQ
        Q-values of the planning members (finite or infinite horizon).
    record : bool
        Keep every belief array so traces can be inspected afterwards.
    """

    def __init__(self, planning, q, record=False):
        if isinstance(planning, ModelSample):
            planning = PosteriorEnsemble.from_samples([planning])
        if len(q) != len(planning):
            raise ValueError("planning ensemble and Q-values differ in size")
        self.planning = planning
        self.q = q
        self.record = record
        self.lik = _StepLikelihood(planning.obs)
        self.P = planning.P
        self.K = len(planning)

    def reset(self, z0):
        n = z0.shape[0]
        self.belief = np.broadcast_to(self.planning.T0, (n,) + self.planning.T0.shape).copy()
        self.z0 = np.asarray(z0, float).copy()
        self.floored = np.zeros(n, dtype=np.int64)
        self.started = False
        self.history = [self.belief.copy()] if self.record else None

    def scores(self, t):
        Qt = self.q.at(t)
        return np.einsum("nks,ksa->na", self.belief, Qt) / self.K

    def act(self, t, states=None):
        return self.scores(t).argmax(axis=1)

    def _weigh(self, logw):
        m = logw.max(axis=2, keepdims=True)
        floored = m[..., 0] < LOG_FLOOR
        if floored.any():
            self.floored += floored.any(axis=1)
            logw = np.maximum(logw, LOG_FLOOR)
            m = logw.max(axis=2, keepdims=True)
        w = np.exp(logw - m)
        return w / w.sum(axis=2, keepdims=True)

    def update(self, actions, z_prev, z):
        b = self.belief
        with np.errstate(divide="ignore"):
            if not self.started:
                b = self._weigh(np.log(b) + self.lik.initial(self.z0))
                self.started = True
            pred = np.empty_like(b)
            for a in np.unique(actions):
                idx = actions == a
                pred[idx] = np.einsum("nks,kst->nkt", b[idx], self.P[:, a])
            self.belief = self._weigh(np.log(pred) + self.lik.step(actions, z_prev, z))
        if self.record:
            self.history.append(self.belief.copy())

    def mean_belief(self):
        return self.belief.mean(axis=1)


def _as_planning(planning):
    if isinstance(planning, ModelSample):
        return PosteriorEnsemble.from_samples([planning])
    return planning


def run_qmdp_episode(true_params, planning, model, H, rng=None, q=None):
    """One Q_MDP episode in the environment ``true_params``.

    Returns the :class:`~robmaint.simulator.Trajectory` and the ``(H + 1, K, S)``
    per-sample beliefs (``beliefs[t]`` is held when choosing ``actions[t]``).
    ``q`` defaults to the finite-horizon solve of ``planning`` over ``H``.
    """
    if H < 1:
        raise ValueError("H must be >= 1")
    planning = _as_planning(planning)
    q = q if q is not None else solve_ensemble(planning, model, horizon=H)
    policy = QMDPPolicy(planning, q, record=True)
    crn = CommonRandomNumbers.draw(rng, 1, H)
    batch = simulate_batch(policy, true_params, model, H, crn)
    beliefs = np.stack([h[0] for h in policy.history])
    traj = batch[0]
    return traj, beliefs, int(policy.floored[0])


class RobustQMDPPolicy(BaseEstimator):
    """Robust Q_MDP planner fitted to a posterior ensemble.

    Parameters
    ----------
    horizon : int or None
        Planning horizon; None plans with infinite-horizon Q-values.
    gamma : float
        Discount factor used for planning.
    tol : float
        Tolerance of the infinite-horizon solve.
    costs : CostTable or None
        Defaults to the railway cost table.
    """

    def __init__(self, horizon=50, gamma=0.995, tol=1e-6, costs=None):
        self.horizon = horizon
        self.gamma = gamma
        self.tol = tol
        self.costs = costs

    def fit(self, X, y=None):
        self.model_ = PomdpModel(
            n_states=X.n_states,
            n_actions=X.n_actions,
            costs=self.costs,
            gamma=self.gamma,
            horizon=self.horizon,
        )
        self.ensemble_ = X
        self.q_ = solve_ensemble(X, self.model_, self.tol)
        return self

    def make_policy(self, record=False):
        """A fresh batched policy object for :func:`~robmaint.simulator.simulate_batch`."""
        check_fitted(self, "q_")
        return QMDPPolicy(self.ensemble_, self.q_, record=record)

    def predict(self, beliefs, t=0):
        """Actions for per-sample beliefs of shape ``(n, K, S)`` (or ``(K, S)``)."""
        check_fitted(self, "q_")
        b = np.asarray(beliefs, float)
        single = b.ndim == 2
        b = b[None] if single else b
        scores = np.einsum("nks,ksa->na", b, self.q_.at(t))
        actions = scores.argmax(axis=1)
        return int(actions[0]) if single else actions

    def bound(self, t=0):
        """Robust optimistic value ``max_a mean_k sum_s T0_k(s) Q_k(s, a, t)``."""
        check_fitted(self, "q_")
        return float(np.einsum("ks,ksa->a", self.ensemble_.T0, self.q_.at(t)).max() / len(self.q_))
