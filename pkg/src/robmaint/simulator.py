"""Generative environment for the condition process.

Every random choice goes through an inverse CDF fed by pre-drawn uniforms
(:class:`CommonRandomNumbers`), so that two policies evaluated on the same
numbers face the same environment draws, initial conditions and noise for as
long as their actions agree.

Policies used by the batched engine follow a small protocol::

    policy.reset(z0)                   # (n,) first observations
    policy.act(t, states) -> actions   # (n,) ints; states may be ignored
    policy.update(actions, z_prev, z)  # feed the new observations

A plain per-state action table is wrapped by :class:`StatePolicy`.
"""

from dataclasses import dataclass

import numpy as np

from . import prob_core as pc
from ._validation import check_index, check_rng
from .model import Dataset, ModelSample, PomdpModel, PosteriorEnsemble, Series

__all__ = [
    "Trajectory",
    "BatchTrajectory",
    "CommonRandomNumbers",
    "StatePolicy",
    "step",
    "initial",
    "rollout",
    "simulate_batch",
    "generate_dataset",
    "default_behavior",
]

STEP_MONTHS = 6


@dataclass(frozen=True)
class Trajectory:
    """One episode: ``T + 1`` states and observations, ``T`` actions and rewards.

    ``actions[t]`` is chosen in ``states[t]`` after seeing ``observations[t]``
    and earns ``rewards[t]``.
    """

    states: np.ndarray
    actions: np.ndarray
    observations: np.ndarray
    rewards: np.ndarray

    def __post_init__(self):
        T = len(self.actions)
        if len(self.rewards) != T or len(self.states) != T + 1 or len(self.observations) != T + 1:
            raise ValueError("trajectory needs T actions/rewards and T + 1 states/observations")

    @property
    def horizon(self):
        return len(self.actions)

    def total(self):
        return float(np.sum(self.rewards))

    def discounted_return(self, gamma):
        return float(np.sum(self.rewards * gamma ** np.arange(self.horizon)))

    def to_series(self, series_id="0"):
        """The observation/action record in dataset form."""
        actions = np.concatenate([[-1], self.actions])
        return Series(str(series_id), actions, self.observations)


@dataclass(frozen=True)
class BatchTrajectory:
    """``n`` episodes stacked along the first axis."""

    states: np.ndarray
    actions: np.ndarray
    observations: np.ndarray
    rewards: np.ndarray
    env_index: np.ndarray = None

    def __len__(self):
        return self.states.shape[0]

    def totals(self):
        return self.rewards.sum(axis=1)

    def discounted_returns(self, gamma):
        return self.rewards @ (gamma ** np.arange(self.rewards.shape[1]))

    def __getitem__(self, i):
        return Trajectory(self.states[i], self.actions[i], self.observations[i], self.rewards[i])


@dataclass(frozen=True)
class CommonRandomNumbers:
    """Uniforms driving ``n`` episodes of length ``horizon``.

    ``env`` holds per-episode environment indices (or is None when a single
    environment is simulated).
    """

    u_s0: np.ndarray
    u_z0: np.ndarray
    u_s: np.ndarray
    u_z: np.ndarray
    env: np.ndarray = None

    @classmethod
    def draw(cls, rng, n, horizon, n_envs=None):
        rng = check_rng(rng)
        env = None if n_envs is None else rng.integers(0, n_envs, size=n)
        return cls(
            u_s0=rng.random(n),
            u_z0=rng.random(n),
            u_s=rng.random((n, horizon)),
            u_z=rng.random((n, horizon)),
            env=env,
        )

    def __len__(self):
        return self.u_s0.shape[0]

    @property
    def horizon(self):
        return self.u_s.shape[1]


def _inverse_categorical(probs, u):
    cdf = np.cumsum(probs, axis=-1)
    return np.minimum((cdf <= u[..., None] * cdf[..., -1:]).sum(axis=-1), probs.shape[-1] - 1)


class _EnvArrays:
    """Per-episode parameter arrays gathered from an ensemble or a sample."""

    def __init__(self, source, env_index, n):
        if isinstance(source, ModelSample):
            source = PosteriorEnsemble.from_samples([source])
            env_index = np.zeros(n, dtype=np.int64)
        elif env_index is None:
            if len(source) != n:
                raise ValueError("env indices are required when the ensemble size differs from n")
            env_index = np.arange(n)
        idx = np.asarray(env_index, dtype=np.int64)
        self.index = idx
        self.P = source.P[idx]
        self.T0 = source.T0[idx]
        self.obs = {k: v[idx] for k, v in source.obs.items()}
        self.rows = np.arange(idx.size)

    def initial(self, u_s, u_z):
        s = _inverse_categorical(self.T0, u_s)
        o, r = self.obs, self.rows
        z = pc.trunc_t_ppf(u_z, o["mu_0"][r, s], o["sigma_0"][r, s], o["nu_0"][r, s], ub=0.0)
        return s, np.minimum(z, 0.0)

    def step(self, s, a, z_prev, u_s, u_z):
        r, o = self.rows, self.obs
        s_next = _inverse_categorical(self.P[r, a, s], u_s)
        det = a == 0
        k = o["k_r"][r, np.maximum(a - 1, 0)]
        loc = np.where(det, o["mu_d"][r, s_next], k * z_prev + o["mu_r"][r, s_next])
        scale = np.where(det, o["sigma_d"][r, s_next], o["sigma_r"][r, s_next])
        nu = np.where(det, o["nu_d"][r, s_next], o["nu_r"][r, s_next])
        ub = np.where(det, -z_prev, 0.0)
        x = pc.trunc_t_ppf(u_z, loc, scale, nu, ub=ub)
        z = np.where(det, z_prev + x, x)
        return s_next, np.minimum(z, 0.0)


def _check_sample_indices(sample, s, a):
    check_index("state", s, sample.n_states)
    check_index("action", a, sample.n_actions)


def initial(p, rng=None):
    """Draw the first hidden state from ``T0`` and its first observation."""
    rng = check_rng(rng)
    env = _EnvArrays(p, None, 1)
    s, z = env.initial(rng.random(1), rng.random(1))
    return int(s[0]), float(z[0])


def step(s, a, z_prev, p, rng=None, model=None):
    """One transition of the environment ``p``.

    Returns ``(s_next, z_next, reward)``; the reward is charged on ``(s, a)``
    before the transition. ``z_next`` is conditioned on ``s_next``.
    """
    rng = check_rng(rng)
    model = model or PomdpModel(n_states=p.n_states, n_actions=p.n_actions)
    _check_sample_indices(p, s, a)
    if z_prev > 0:
        raise ValueError(f"observations must be <= 0, got z_prev={z_prev}")
    env = _EnvArrays(p, None, 1)
    s2, z2 = env.step(np.array([s]), np.array([a]), np.array([float(z_prev)]), rng.random(1), rng.random(1))
    return int(s2[0]), float(z2[0]), float(model.rewards[s, a])


class StatePolicy:
    """Acts from the true hidden state through an action table.

    ``table`` is ``(S,)`` for a stationary policy or ``(H, S)`` for a
    time-indexed one.
    """

    uses_state = True

    def __init__(self, table):
        self.table = np.asarray(table, dtype=np.int64)
        if self.table.ndim not in (1, 2):
            raise ValueError("action table must be (S,) or (H, S)")

    def reset(self, z0):
        pass

    def act(self, t, states):
        row = self.table if self.table.ndim == 1 else self.table[min(t, len(self.table) - 1)]
        return row[states]

    def update(self, actions, z_prev, z):
        pass


class _CallablePolicy:
    uses_state = True

    def __init__(self, fn):
        self.fn = fn

    def reset(self, z0):
        pass

    def act(self, t, states):
        return np.array([self.fn(t, int(s)) for s in states], dtype=np.int64)

    def update(self, actions, z_prev, z):
        pass


def _as_policy(policy):
    if hasattr(policy, "act") and hasattr(policy, "reset"):
        return policy
    if callable(policy):
        return _CallablePolicy(policy)
    return StatePolicy(policy)


def simulate_batch(policy, env, model, horizon=None, crn=None, rng=None, n=None):
    """Run ``n`` episodes in lock-step under ``policy``.

    Parameters
    ----------
    policy : object
        Follows the batched protocol, or is an action table / callable.
    env : ModelSample or PosteriorEnsemble
        True environment(s). With an ensemble, ``crn.env`` selects one member
        per episode.
    model : PomdpModel
        Supplies the reward table.
    crn : CommonRandomNumbers, optional
        Pre-drawn uniforms; drawn from ``rng`` when omitted (requires ``n`` and
        ``horizon``).
    """
    policy = _as_policy(policy)
    if crn is None:
        if n is None or horizon is None:
            raise ValueError("give either crn or both n and horizon")
        n_envs = None if isinstance(env, ModelSample) else len(env)
        crn = CommonRandomNumbers.draw(rng, n, horizon, n_envs)
    H = crn.horizon if horizon is None else horizon
    if H < 1 or H > crn.horizon:
        raise ValueError(f"horizon must be in [1, {crn.horizon}], got {H}")
    n = len(crn)
    arrays = _EnvArrays(env, crn.env, n)
    R = model.rewards
    S, A = R.shape
    states = np.empty((n, H + 1), dtype=np.int64)
    obs = np.empty((n, H + 1))
    actions = np.empty((n, H), dtype=np.int64)
    rewards = np.empty((n, H))
    s, z = arrays.initial(crn.u_s0, crn.u_z0)
    states[:, 0], obs[:, 0] = s, z
    policy.reset(z.copy())
    for t in range(H):
        a = np.asarray(policy.act(t, s.copy()))
        if a.shape != (n,) or not np.issubdtype(a.dtype, np.integer) or a.min() < 0 or a.max() >= A:
            raise ValueError(f"policy returned invalid actions at t={t}")
        rewards[:, t] = R[s, a]
        s_next, z_next = arrays.step(s, a, z, crn.u_s[:, t], crn.u_z[:, t])
        policy.update(a, z.copy(), z_next.copy())
        actions[:, t] = a
        s, z = s_next, z_next
        states[:, t + 1], obs[:, t + 1] = s, z
    return BatchTrajectory(states, actions, obs, rewards, arrays.index)


def rollout(policy, p, horizon, rng=None, model=None):
    """Simulate one episode of ``horizon`` actions under the environment ``p``."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    model = model or PomdpModel(n_states=p.n_states, n_actions=p.n_actions)
    crn = CommonRandomNumbers.draw(rng, 1, horizon)
    return simulate_batch(policy, p, model, horizon, crn)[0]


def default_behavior(n_states, n_actions):
    """Synthetic maintenance log policy: ``(S, A)`` action probabilities.

    The chance of any repair grows linearly from 2% in the best state to 35%
    in the worst; renewal takes a growing share of it.
    """
    repair = np.linspace(0.02, 0.35, n_states)
    out = np.zeros((n_states, n_actions))
    if n_actions == 1:
        out[:, 0] = 1.0
        return out
    heavy = np.linspace(0.0, 0.5, n_states) if n_actions > 2 else np.zeros(n_states)
    out[:, 1] = repair * (1.0 - heavy)
    if n_actions > 2:
        out[:, 2:] = (repair * heavy)[:, None] / (n_actions - 2)
    out[:, 0] = 1.0 - out[:, 1:].sum(axis=1)
    return out


def _behavior_table(behavior, S, A):
    if behavior is None or (isinstance(behavior, str) and behavior == "default"):
        return default_behavior(S, A)
    if isinstance(behavior, str) and behavior == "never":
        out = np.zeros((S, A))
        out[:, 0] = 1.0
        return out
    table = np.asarray(behavior, float)
    if table.shape != (S, A) or np.any(np.abs(table.sum(axis=1) - 1) > 1e-9) or np.any(table < 0):
        raise ValueError("behavior must be 'default', 'never' or an (S, A) table of action probabilities")
    return table


def generate_dataset(p, n_series, length, behavior="default", rng=None, model=None):
    """Simulate ``n_series`` independent series of ``length`` observations each.

    Actions follow ``behavior`` given the hidden state: ``"default"`` (see
    :func:`default_behavior`), ``"never"`` (do nothing throughout) or an
    explicit ``(S, A)`` probability table.
    """
    if n_series < 1 or length < 2:
        raise ValueError("need n_series >= 1 and length >= 2")
    rng = check_rng(rng)
    S, A = p.n_states, p.n_actions
    table = _behavior_table(behavior, S, A)
    model = model or PomdpModel(n_states=S, n_actions=A)
    u_act = rng.random((n_series, length - 1))
    crn = CommonRandomNumbers.draw(rng, n_series, length - 1)

    class _Behavior:
        def reset(self, z0):
            pass

        def act(self, t, states):
            return _inverse_categorical(table[states], u_act[:, t])

        def update(self, actions, z_prev, z):
            pass

    batch = simulate_batch(_Behavior(), p, model, length - 1, crn)
    series = []
    for i in range(n_series):
        acts = np.concatenate([[-1], batch.actions[i]])
        series.append(Series(str(i), acts, batch.observations[i]))
    meta = {
        "n_series": n_series,
        "length": length,
        "step_months": STEP_MONTHS,
        "hidden_states": batch.states.tolist(),
    }
    return Dataset(tuple(series), meta)
