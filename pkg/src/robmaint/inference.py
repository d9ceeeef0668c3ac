"""Posterior sampling for the action-conditioned autoregressive HMM.

The sampler is Metropolis-within-Gibbs:

1. hidden state paths by forward filtering / backward sampling,
2. transition rows and the initial distribution from their conjugate
   Dirichlet conditionals,
3. every observation parameter by a scalar random-walk Metropolis step
   (log scale for scales and dof, logit for ``k_r``, reflected at 0 for the
   nonpositive locations).

State labels are pinned by requiring ``mu_0`` to be nonincreasing in the state
index, so state 0 is always the condition whose first observations sit closest
to zero.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special
from sklearn.base import BaseEstimator

from . import prob_core as pc
from ._validation import check_fitted, check_rng, spawn_seeds
from .model import (
    OBS_FIELDS,
    Dataset,
    ModelSample,
    ObservationParams,
    PosteriorEnsemble,
    PriorConfig,
    PomdpModel,
    TransitionSet,
    prior_sample,
    prior_transitions,
)

__all__ = [
    "McmcConfig",
    "Diagnostics",
    "FilterUnderflowError",
    "emission_loglik",
    "emission_logliks",
    "forward_filter",
    "backward_sample",
    "transition_counts",
    "update_transitions",
    "update_obs_params",
    "dataset_loglik",
    "run_mcmc",
    "compute_diagnostics",
    "split_rhat",
    "effective_sample_size",
    "BayesianARHMM",
]

logger = logging.getLogger(__name__)

DEFAULT_SCALES = {
    "mu_d": 0.01,
    "sigma_d": 0.2,
    "nu_d": 0.5,
    "mu_r": 0.05,
    "sigma_r": 0.2,
    "nu_r": 0.5,
    "mu_0": 0.05,
    "sigma_0": 0.2,
    "nu_0": 0.5,
    "k_r": 0.3,
    "k_r_shift": 0.3,
}
# Metropolis moves: one per scalar field plus the joint repair move
MOVES = OBS_FIELDS + ("k_r_shift",)
ADAPT_WINDOW = 50
TARGET_ACCEPT = (0.30, 0.45)


class FilterUnderflowError(FloatingPointError):
    def __init__(self, t, series_id=None):
        where = f" in series {series_id}" if series_id is not None else ""
        super().__init__(f"observation likelihood underflowed to zero at t={t}{where}")
        self.t = t


@dataclass(frozen=True)
class McmcConfig:
    n_chains: int = 4
    n_burnin: int = 4000
    n_samples: int = 3000
    proposal_scales: dict = field(default_factory=dict)
    seed: int = 0
    init: str = "data"
    n_init: int = 4

    @property
    def pilot_sweeps(self):
        """Sweeps per pilot start; the pilots use at most half of the burn-in."""
        return min(100, self.n_burnin // (2 * self.n_init))

    def __post_init__(self):
        if min(self.n_chains, self.n_burnin, self.n_samples) < 1:
            raise ValueError("chain, burn-in and sample counts must all be >= 1")
        unknown = set(self.proposal_scales) - set(DEFAULT_SCALES)
        if unknown:
            raise ValueError(f"unknown proposal scale names: {sorted(unknown)}")
        if any(v <= 0 for v in self.proposal_scales.values()):
            raise ValueError("proposal scales must be positive")
        if self.n_init < 1:
            raise ValueError("n_init must be >= 1")
        if self.init not in ("data", "prior"):
            raise ValueError(f"init must be 'data' or 'prior', got {self.init!r}")

    def scales(self):
        return {**DEFAULT_SCALES, **self.proposal_scales}


@dataclass
class Diagnostics:
    rhat: dict
    ess: dict
    accept_rate: dict = field(default_factory=dict)
    zero_variance: list = field(default_factory=list)

    @property
    def max_rhat(self):
        return max(self.rhat.values()) if self.rhat else math.nan

    @property
    def min_ess(self):
        return min(self.ess.values()) if self.ess else math.nan

    def as_dict(self):
        return {
            "max_rhat": self.max_rhat,
            "min_ess": self.min_ess,
            "rhat": self.rhat,
            "ess": self.ess,
            "accept_rate": self.accept_rate,
            "zero_variance": self.zero_variance,
        }


# ---------------------------------------------------------------------------
# emissions


def emission_loglik(z, z_prev, s, a_prev, obs):
    """Log-likelihood of observation ``z`` in hidden state ``s``.

    ``a_prev is None`` selects the first-observation model; ``a_prev == 0`` the
    deterioration step from ``z_prev``; any other action the repair model.
    """
    if a_prev is None or a_prev < 0:
        return float(pc.trunc_t_logpdf_arrays(z, obs.mu_0[s], obs.sigma_0[s], obs.nu_0[s], ub=0.0))
    if a_prev == 0:
        return float(
            pc.trunc_t_logpdf_arrays(
                z - z_prev, obs.mu_d[s], obs.sigma_d[s], obs.nu_d[s], ub=-z_prev
            )
        )
    loc = obs.k_r[a_prev - 1] * z_prev + obs.mu_r[s]
    return float(pc.trunc_t_logpdf_arrays(z, loc, obs.sigma_r[s], obs.nu_r[s], ub=0.0))


def _emission_batch(Z, A, obs):
    """``(N, T, S)`` emission log-likelihoods for equal-length series."""
    N, T = Z.shape
    S = obs.n_states
    out = np.empty((N, T, S))
    out[:, 0, :] = pc.trunc_t_logpdf_arrays(
        Z[:, :1], obs.mu_0, obs.sigma_0, obs.nu_0, ub=0.0
    )
    if T == 1:
        return out
    zp = Z[:, :-1]
    zc = Z[:, 1:]
    a = A[:, 1:]
    body = out[:, 1:, :]
    det = a == 0
    if det.any():
        zp_d = zp[det][:, None]
        body[det] = pc.trunc_t_logpdf_arrays(
            zc[det][:, None] - zp_d, obs.mu_d, obs.sigma_d, obs.nu_d, ub=-zp_d
        )
    rep = ~det
    if rep.any():
        k = obs.k_r[a[rep] - 1][:, None]
        zp_r = zp[rep][:, None]
        body[rep] = pc.trunc_t_logpdf_arrays(
            zc[rep][:, None], k * zp_r + obs.mu_r, obs.sigma_r, obs.nu_r, ub=0.0
        )
    return out


def emission_logliks(series, obs):
    """``(T, S)`` emission log-likelihood table of one series."""
    return _emission_batch(series.z[None, :], series.actions[None, :], obs)[0]


# ---------------------------------------------------------------------------
# forward filtering / backward sampling


def _forward_batch(E, A, P, T0, ids=None):
    """Normalised forward recursion for ``N`` equal-length series.

    Returns per-step log normalisers ``(N, T)`` and filtered beliefs
    ``(N, T, S)``.
    """
    N, T, S = E.shape
    filtered = np.empty((N, T, S))
    log_c = np.empty((N, T))
    with np.errstate(divide="ignore"):
        log_prior = np.log(T0)[None, :]
        for t in range(T):
            if t == 0:
                la = log_prior + E[:, 0]
            else:
                pred = np.einsum("ns,nst->nt", filtered[:, t - 1], P[A[:, t]])
                la = np.log(pred) + E[:, t]
            m = la.max(axis=1)
            bad = ~np.isfinite(m)
            c = m + np.log(np.exp(la - m[:, None]).sum(axis=1))
            if bad.any():
                n = int(np.nonzero(bad)[0][0])
                raise FilterUnderflowError(t, None if ids is None else ids[n])
            log_c[:, t] = c
            filtered[:, t] = np.exp(la - c[:, None])
    return log_c, filtered


def forward_filter(series, sample):
    """Marginal log-likelihood and filtered state probabilities of one series.

    ``filtered[t]`` is ``p(s_t | z_0..z_t, actions)``; the log-likelihood is
    the sum of the per-step log normalisers.
    """
    E = emission_logliks(series, sample.obs)[None]
    log_c, filtered = _forward_batch(
        E, series.actions[None, :], sample.P, sample.T0, ids=[series.series_id]
    )
    return float(log_c.sum()), filtered[0]


def _backward_batch(filtered, A, P, u):
    N, T, S = filtered.shape
    paths = np.empty((N, T), dtype=np.int64)
    paths[:, -1] = _categorical(filtered[:, -1], u[:, -1])
    for t in range(T - 2, -1, -1):
        w = filtered[:, t] * P[A[:, t + 1], :, paths[:, t + 1]]
        w /= w.sum(axis=1, keepdims=True)
        paths[:, t] = _categorical(w, u[:, t])
    return paths


def _categorical(probs, u):
    cdf = np.cumsum(probs, axis=-1)
    cdf /= cdf[..., -1:]
    return np.minimum((cdf <= u[..., None]).sum(axis=-1), probs.shape[-1] - 1)


def backward_sample(filtered, sample, actions, rng=None):
    """Draw a state path from ``p(s_0..s_T | z, actions)`` given forward output."""
    rng = check_rng(rng)
    filtered = np.asarray(filtered, float)
    actions = np.asarray(actions, dtype=np.int64)
    u = rng.random((1, filtered.shape[0]))
    return _backward_batch(filtered[None], actions[None], sample.P, u)[0]


def _group_by_length(dataset):
    groups = {}
    for i, s in enumerate(dataset):
        groups.setdefault(len(s), []).append(i)
    out = []
    for length, idx in sorted(groups.items()):
        Z = np.stack([dataset.series[i].z for i in idx])
        A = np.stack([dataset.series[i].actions for i in idx])
        ids = [dataset.series[i].series_id for i in idx]
        out.append((np.asarray(idx), Z, A, ids))
    return out


def dataset_loglik(dataset, sample):
    """Sum of the marginal log-likelihoods of every series (states summed out)."""
    total = 0.0
    for _, Z, A, ids in _group_by_length(dataset):
        E = _emission_batch(Z, A, sample.obs)
        log_c, _ = _forward_batch(E, A, sample.P, sample.T0, ids)
        total += float(log_c.sum())
    return total


# ---------------------------------------------------------------------------
# Gibbs blocks


def transition_counts(paths, actions, n_states, n_actions):
    """Initial-state counts ``(S,)`` and transition counts ``(A, S, S)``."""
    init = np.zeros(n_states)
    counts = np.zeros((n_actions, n_states, n_states))
    for path, acts in zip(paths, actions):
        path = np.asarray(path, dtype=np.int64)
        acts = np.asarray(acts, dtype=np.int64)
        init[path[0]] += 1
        if path.size > 1:
            np.add.at(counts, (acts[1:], path[:-1], path[1:]), 1)
    return init, counts


def update_transitions(paths, actions, priors, rng=None):
    """Draw ``T0`` and every transition row from their Dirichlet conditionals."""
    rng = check_rng(rng)
    init, counts = transition_counts(paths, actions, priors.n_states, priors.n_actions)
    T0 = pc.sample_dirichlet(priors.alpha0 + init, rng)
    post = priors.alphaT + counts
    P = np.empty(post.shape)
    for a in range(post.shape[0]):
        for s in range(post.shape[1]):
            P[a, s] = pc.sample_dirichlet(post[a, s], rng)
    return TransitionSet(P, T0)


class _Assignments:
    """Observations of the current state paths, split by emission branch."""

    def __init__(self, dataset, paths):
        z0, s0 = [], []
        d_dz, d_zp, d_s = [], [], []
        r_z, r_zp, r_s, r_a = [], [], [], []
        for series, path in zip(dataset, paths):
            z, a = series.z, series.actions
            z0.append(z[0])
            s0.append(path[0])
            det = a[1:] == 0
            d_dz.append((z[1:] - z[:-1])[det])
            d_zp.append(z[:-1][det])
            d_s.append(path[1:][det])
            rep = ~det
            r_z.append(z[1:][rep])
            r_zp.append(z[:-1][rep])
            r_s.append(path[1:][rep])
            r_a.append(a[1:][rep])
        self.z0 = np.array(z0)
        self.s0 = np.array(s0, dtype=np.int64)
        self.d_dz = np.concatenate(d_dz)
        self.d_zp = np.concatenate(d_zp)
        self.d_s = np.concatenate(d_s).astype(np.int64)
        self.r_z = np.concatenate(r_z)
        self.r_zp = np.concatenate(r_zp)
        self.r_s = np.concatenate(r_s).astype(np.int64)
        self.r_a = np.concatenate(r_a).astype(np.int64)

    def loglik(self, name, index, p):
        """Log-likelihood of the observations that depend on ``p[name][index]``."""
        if name.endswith("_0"):
            m = self.s0 == index
            return _tsum(self.z0[m], p["mu_0"][index], p["sigma_0"][index], p["nu_0"][index], 0.0)
        if name.endswith("_d"):
            m = self.d_s == index
            return _tsum(
                self.d_dz[m], p["mu_d"][index], p["sigma_d"][index], p["nu_d"][index], -self.d_zp[m]
            )
        if name == "k_r":
            m = self.r_a == index + 1
            s = self.r_s[m]
            loc = p["k_r"][index] * self.r_zp[m] + p["mu_r"][s]
            return _tsum(self.r_z[m], loc, p["sigma_r"][s], p["nu_r"][s], 0.0)
        m = self.r_s == index
        loc = p["k_r"][self.r_a[m] - 1] * self.r_zp[m] + p["mu_r"][index]
        return _tsum(self.r_z[m], loc, p["sigma_r"][index], p["nu_r"][index], 0.0)

    def repair_loglik(self, p):
        """Log-likelihood of every post-repair observation."""
        s = self.r_s
        loc = p["k_r"][self.r_a - 1] * self.r_zp + p["mu_r"][s]
        return _tsum(self.r_z, loc, p["sigma_r"][s], p["nu_r"][s], 0.0)

    def repair_level(self, action, n_states):
        """Mean pre-repair observation for ``action``, per post-repair state.

        States never reached by ``action`` get the action-wide mean. Returns
        None when the action was never taken.
        """
        m = self.r_a == action
        if not m.any():
            return None
        out = np.full(n_states, self.r_zp[m].mean())
        for s in np.unique(self.r_s[m]):
            out[s] = self.r_zp[m & (self.r_s == s)].mean()
        return out


def _tsum(x, loc, scale, nu, ub):
    if x.size == 0:
        return 0.0
    return float(pc.trunc_t_logpdf_arrays(x, loc, scale, nu, ub=ub).sum())


def _log_kernel(priors, name, index, x):
    """Unnormalised log prior of one scalar (constants dropped)."""
    a, b = (float(np.broadcast_to(v, np.broadcast(*getattr(priors, name)).shape).flat[index])
            if np.ndim(v) else float(v) for v in getattr(priors, name))
    if name == "mu_d":
        return -0.5 * ((x - a) / b) ** 2
    if name.startswith("sigma"):
        return -0.5 * ((x - a) / b) ** 2 if x > 0 else -math.inf
    if name in ("mu_r", "mu_0"):
        return -0.5 * ((x - a) / b) ** 2 if x <= 0 else -math.inf
    if name.startswith("nu"):
        return (a - 1.0) * math.log(x) - b * x if x > 0 else -math.inf
    if name == "k_r":
        return (a - 1.0) * math.log(x) + (b - 1.0) * math.log1p(-x) if 0 < x < 1 else -math.inf
    raise KeyError(name)


def _propose(name, x, scale, eps):
    """Proposal and log Jacobian correction for the scalar ``x``."""
    if name.startswith(("sigma", "nu")):
        y = x * math.exp(scale * eps)
        return y, math.log(y) - math.log(x)
    if name == "k_r":
        y = special.expit(special.logit(x) + scale * eps)
        return y, math.log(y * (1.0 - y)) - math.log(x * (1.0 - x))
    y = x + scale * eps
    if name in ("mu_r", "mu_0") and y > 0:
        y = -y
    return y, 0.0


def _group(name):
    if name == "k_r":
        return "k"
    return {"0": "0", "d": "d", "r": "r"}[name[-1]]


def _mu0_ordered(mu_0):
    return bool(np.all(np.diff(mu_0) <= 0))


def update_obs_params(paths, dataset, current, priors, scales=None, rng=None):
    """One Metropolis sweep over every scalar observation parameter.

    ``scales`` maps parameter names to random-walk step sizes, either a scalar
    or an array matching the parameter. Returns the new
    :class:`ObservationParams` and a dict of boolean acceptance arrays.
    """
    rng = check_rng(rng)
    sc = {**DEFAULT_SCALES, **(scales or {})}
    data = _Assignments(dataset, paths)
    p = {name: np.array(getattr(current, name), dtype=float) for name in OBS_FIELDS}
    cache = {}
    accepted = {}
    for name in OBS_FIELDS:
        arr = p[name]
        step = np.broadcast_to(np.asarray(sc[name], float), arr.shape)
        flags = np.zeros(arr.shape, dtype=bool)
        for i in range(arr.size):
            x = arr[i]
            y, log_jac = _propose(name, x, step[i], rng.standard_normal())
            log_u = math.log(rng.random())
            if name == "mu_0":
                arr[i] = y
                ordered = _mu0_ordered(arr)
                arr[i] = x
                if not ordered:
                    continue
            lp_y = _log_kernel(priors, name, i, y)
            if lp_y == -math.inf:
                continue
            key = (_group(name), i)
            if key not in cache:
                cache[key] = data.loglik(name, i, p)
            ll_x = cache[key]
            arr[i] = y
            ll_y = data.loglik(name, i, p)
            log_ratio = lp_y + ll_y - _log_kernel(priors, name, i, x) - ll_x + log_jac
            if log_u < log_ratio:
                flags[i] = True
                if key[0] in ("r", "k"):
                    # repair groups by state and by action overlap
                    cache = {k: v for k, v in cache.items() if k[0] not in ("r", "k")}
                cache[key] = ll_y
            else:
                arr[i] = x
        accepted[name] = flags
    accepted["k_r_shift"] = _shift_repair(data, p, priors, sc["k_r_shift"], rng)
    return ObservationParams(**p), accepted


def _shift_repair(data, p, priors, scale, rng):
    """Joint move of ``k_r[j]`` and all ``mu_r`` along their likelihood ridge.

    The repair location ``k * z_prev + mu_r[s]`` barely changes when ``k``
    moves by ``dk`` and each ``mu_r[s]`` by ``-dk * c[s]``, with ``c[s]`` the
    mean pre-repair level of repairs ending in ``s``. ``c`` depends only on the
    current paths, so the map is a shear in ``(logit k, mu_r)`` and only the
    logit Jacobian enters the acceptance ratio.
    """
    k, mu_r = p["k_r"], p["mu_r"]
    step = np.broadcast_to(np.asarray(scale, float), k.shape)
    flags = np.zeros(k.shape, dtype=bool)
    ll_x = None
    for j in range(k.size):
        eps = rng.standard_normal()
        log_u = math.log(rng.random())
        c = data.repair_level(j + 1, mu_r.size)
        if c is None:
            continue
        k_x, mu_x = k[j], mu_r.copy()
        k_y = special.expit(special.logit(k_x) + step[j] * eps)
        mu_y = mu_x - (k_y - k_x) * c
        if np.any(mu_y > 0):
            continue
        log_jac = math.log(k_y * (1.0 - k_y)) - math.log(k_x * (1.0 - k_x))
        lp_x = _log_kernel(priors, "k_r", j, k_x) + sum(
            _log_kernel(priors, "mu_r", i, v) for i, v in enumerate(mu_x)
        )
        lp_y = _log_kernel(priors, "k_r", j, k_y) + sum(
            _log_kernel(priors, "mu_r", i, v) for i, v in enumerate(mu_y)
        )
        if ll_x is None:
            ll_x = data.repair_loglik(p)
        k[j], mu_r[:] = k_y, mu_y
        ll_y = data.repair_loglik(p)
        if log_u < lp_y + ll_y - lp_x - ll_x + log_jac:
            flags[j] = True
            ll_x = ll_y
        else:
            k[j], mu_r[:] = k_x, mu_x
    return flags


# ---------------------------------------------------------------------------
# driver


INIT_SWEEPS = 25


def _cluster_edges(x, k, n_iter=100):
    """Decision boundaries of a 1-D k-means fit started from quantile centres."""
    x = np.sort(x)
    centres = np.quantile(x, (np.arange(k) + 0.5) / k)
    for _ in range(n_iter):
        edges = 0.5 * (centres[1:] + centres[:-1])
        lab = np.searchsorted(edges, x, side="right")
        new = np.array([x[lab == j].mean() if np.any(lab == j) else centres[j] for j in range(k)])
        if np.allclose(new, centres):
            break
        centres = np.sort(new)
    return 0.5 * (centres[1:] + centres[:-1])


def _quantile_paths(dataset, n_states):
    """Heuristic state labels from the size of do-nothing steps.

    Every do-nothing step is banded by the quantiles of ``z_t - z_{t-1}``
    (the steepest decline is the worst state). Steps after a repair and the
    first observation borrow the label of the nearest banded step, falling
    back to level quantiles for series without any do-nothing step.
    """
    steps = np.concatenate([np.diff(s.z)[s.actions[1:] == 0] for s in dataset])
    levels = np.concatenate([s.z for s in dataset])
    q = np.linspace(0, 1, n_states + 1)[1:-1]
    step_edges = _cluster_edges(steps, n_states) if steps.size >= n_states else None
    level_edges = np.quantile(levels, q)
    paths = []
    for series in dataset:
        lab = np.full(len(series), -1, dtype=np.int64)
        if step_edges is not None and len(series) > 1:
            det = np.nonzero(series.actions[1:] == 0)[0] + 1
            dz = series.z[det] - series.z[det - 1]
            lab[det] = n_states - 1 - np.searchsorted(step_edges, dz, side="right")
        known = np.nonzero(lab >= 0)[0]
        if known.size == 0:
            lab = n_states - 1 - np.searchsorted(level_edges, series.z, side="right")
        else:
            nearest = known[np.abs(np.arange(len(series))[:, None] - known[None, :]).argmin(axis=1)]
            lab = lab[nearest]
        paths.append(lab.astype(np.int64))
    return paths


def _initial_state(dataset, priors, rng, how="data"):
    """Starting parameters of one chain.

    ``"prior"`` draws everything from the prior. ``"data"`` starts from a
    prior draw and runs a few parameter-only sweeps with the states fixed at
    their quantile-band labels, which puts every chain near the labelling
    that the ``mu_0`` ordering asks for.
    """
    transitions, obs = prior_transitions(priors, rng), prior_sample(priors, rng)
    if how == "prior":
        return transitions, obs
    paths = _quantile_paths(dataset, priors.n_states)
    actions = [s.actions for s in dataset]
    for _ in range(INIT_SWEEPS):
        transitions = update_transitions(paths, actions, priors, rng)
        obs, _ = update_obs_params(paths, dataset, obs, priors, None, rng)
    return transitions, obs


def _filter_and_sample(groups, n_series, transitions, obs, rng, draw_paths=True):
    """Total marginal log-likelihood and (optionally) one FFBS draw of every path."""
    paths = [None] * n_series
    loglik = 0.0
    for idx, Z, Acts, ids in groups:
        E = _emission_batch(Z, Acts, obs)
        log_c, filtered = _forward_batch(E, Acts, transitions.P, transitions.T0, ids)
        loglik += float(log_c.sum())
        if draw_paths:
            drawn = _backward_batch(filtered, Acts, transitions.P, rng.random(Z.shape))
            for j, i in enumerate(idx):
                paths[i] = drawn[j]
    return loglik, paths


SWAP_FIELDS = ("mu_d", "sigma_d", "nu_d", "mu_r", "sigma_r", "nu_r")


def _swap_labels(transitions, obs, i, j):
    """Exchange states ``i`` and ``j`` everywhere except the initial-level parameters."""
    perm = np.arange(transitions.P.shape[1])
    perm[[i, j]] = perm[[j, i]]
    P = transitions.P[:, perm][:, :, perm]
    T0 = transitions.T0[perm]
    changes = {name: getattr(obs, name)[perm] for name in SWAP_FIELDS}
    return TransitionSet(P, T0), obs.replace(**changes)


def _label_swap(groups, n_series, transitions, obs, loglik, priors, rng):
    """Metropolis swap of a random adjacent state pair on the path-marginal posterior.

    The single-site updates cannot move between labellings that agree on the
    initial levels but disagree on which state carries which step and repair
    parameters. Swapping all but the initial-level parameters keeps the
    ``mu_0`` ordering, is its own inverse and has unit Jacobian, so the
    acceptance ratio is the posterior ratio with the paths summed out.
    Returns ``(transitions, obs, accepted)``.
    """
    i = int(rng.integers(transitions.P.shape[1] - 1))
    new_t, new_o = _swap_labels(transitions, obs, i, i + 1)
    lp_new = priors.log_prior(ModelSample(new_t, new_o))
    if not np.isfinite(lp_new):
        return transitions, obs, False
    ll_new, _ = _filter_and_sample(groups, n_series, new_t, new_o, rng, draw_paths=False)
    log_ratio = lp_new + ll_new - priors.log_prior(ModelSample(transitions, obs)) - loglik
    if math.log(rng.random()) < log_ratio:
        return new_t, new_o, True
    return transitions, obs, False


def _pilot_start(dataset, groups, priors, cfg, rng):
    """Best of ``cfg.n_init`` short pilot runs, judged by log posterior.

    Each pilot starts from :func:`_initial_state` and runs plain Gibbs sweeps
    with the default proposal scales. The pilots spend part of the burn-in
    budget (see :meth:`McmcConfig.pilot_sweeps`).
    """
    actions = [s.actions for s in dataset]
    best = None
    for _ in range(cfg.n_init):
        transitions, obs = _initial_state(dataset, priors, rng, cfg.init)
        for _ in range(cfg.pilot_sweeps):
            loglik, paths = _filter_and_sample(groups, len(dataset), transitions, obs, rng)
            transitions, obs, swapped = _label_swap(
                groups, len(dataset), transitions, obs, loglik, priors, rng
            )
            if swapped:
                _, paths = _filter_and_sample(groups, len(dataset), transitions, obs, rng)
            transitions = update_transitions(paths, actions, priors, rng)
            obs, _ = update_obs_params(paths, dataset, obs, priors, cfg.scales(), rng)
        loglik, _ = _filter_and_sample(groups, len(dataset), transitions, obs, rng, False)
        lp = priors.log_prior(ModelSample(transitions, obs)) + loglik
        if best is None or lp > best[0]:
            best = (lp, transitions, obs)
    return best[1], best[2]


def _run_chain(dataset, priors, cfg, seed, chain_index):
    rng = np.random.default_rng(seed)
    groups = _group_by_length(dataset)
    actions = [s.actions for s in dataset]
    if cfg.n_init > 1:
        transitions, obs = _pilot_start(dataset, groups, priors, cfg, rng)
    else:
        transitions, obs = _initial_state(dataset, priors, rng, cfg.init)
    n_adapt = cfg.n_burnin - (cfg.n_init * cfg.pilot_sweeps if cfg.n_init > 1 else 0)
    shapes = {name: np.shape(getattr(obs, name)) for name in OBS_FIELDS}
    shapes["k_r_shift"] = shapes["k_r"]
    scales = {name: np.full(shapes[name], float(v)) for name, v in cfg.scales().items()}
    window = {name: np.zeros(shapes[name]) for name in MOVES}
    kept_accept = {name: np.zeros(shapes[name]) for name in MOVES}
    n_total = n_adapt + cfg.n_samples
    kept = []
    log_post = []
    prev_kept = None
    n_swaps = 0

    for it in range(n_total + 1):
        loglik, paths = _filter_and_sample(
            groups, len(dataset), transitions, obs, rng, draw_paths=it < n_total
        )
        if prev_kept is not None:
            log_post.append(priors.log_prior(prev_kept) + loglik)
            prev_kept = None
        if it == n_total:
            break

        transitions, obs, swapped = _label_swap(groups, len(dataset), transitions, obs, loglik, priors, rng)
        if swapped:
            n_swaps += 1
            _, paths = _filter_and_sample(groups, len(dataset), transitions, obs, rng)
        transitions = update_transitions(paths, actions, priors, rng)
        obs, acc = update_obs_params(paths, dataset, obs, priors, scales, rng)

        if it < n_adapt:
            for name in MOVES:
                window[name] += acc[name]
            if (it + 1) % ADAPT_WINDOW == 0:
                delta = min(0.5, 2.0 / math.sqrt((it + 1) / ADAPT_WINDOW))
                for name in MOVES:
                    rate = window[name] / ADAPT_WINDOW
                    scales[name] = np.where(
                        rate < TARGET_ACCEPT[0],
                        scales[name] * math.exp(-delta),
                        np.where(rate > TARGET_ACCEPT[1], scales[name] * math.exp(delta), scales[name]),
                    )
                    window[name][...] = 0
        else:
            for name in MOVES:
                kept_accept[name] += acc[name]
            prev_kept = ModelSample(transitions, obs)
            kept.append(prev_kept)

    samples = [ModelSample(k.transitions, k.obs, lp) for k, lp in zip(kept, log_post)]
    accept = {name: (v / cfg.n_samples).tolist() for name, v in kept_accept.items()}
    final_scales = {name: v.tolist() for name, v in scales.items()}
    logger.info(
        "chain finished",
        extra={"chain": chain_index, "seed": seed, "n_kept": len(samples)},
    )
    return samples, accept, final_scales, n_swaps


def run_mcmc(dataset, model=None, priors=None, cfg=None):
    """Sample the posterior over transitions and observation parameters.

    Returns a :class:`PosteriorEnsemble` with ``n_chains * n_samples`` draws
    (chain-major order) and their :class:`Diagnostics`. Each draw stores its
    unnormalised log posterior with the hidden states summed out.
    """
    if not isinstance(dataset, Dataset):
        raise TypeError("dataset must be a robmaint.model.Dataset")
    if not any(len(s) >= 2 for s in dataset):
        raise ValueError("need at least one series with two or more observations")
    model = model or PomdpModel()
    priors = priors or PriorConfig.default(model.n_states, model.n_actions)
    cfg = cfg or McmcConfig()
    if (priors.n_states, priors.n_actions) != (model.n_states, model.n_actions):
        raise ValueError("prior dimensions do not match the model")
    for s in dataset:
        if np.any(s.actions[1:] >= model.n_actions) or np.any(s.actions[1:] < 0):
            raise ValueError(f"series {s.series_id} has actions outside the model")

    seeds = spawn_seeds(cfg.seed, cfg.n_chains)
    all_samples, chain_ids, accept, meta = [], [], [], []
    for c, seed in enumerate(seeds):
        samples, acc, scales, n_swaps = _run_chain(dataset, priors, cfg, seed, c)
        all_samples.extend(samples)
        chain_ids.extend([c] * len(samples))
        accept.append(acc)
        meta.append(
            {"chain": c, "seed": seed, "n_samples": len(samples), "proposal_scales": scales, "label_swaps": n_swaps}
        )
    ensemble = PosteriorEnsemble.from_samples(
        all_samples,
        chain=np.array(chain_ids),
        chain_meta={
            "chains": meta,
            "n_burnin": cfg.n_burnin,
            "n_samples": cfg.n_samples,
            "seed": cfg.seed,
        },
    )
    draws = {
        name: col.reshape(cfg.n_chains, cfg.n_samples)
        for name, col in ensemble.scalar_draws().items()
    }
    diag = compute_diagnostics(draws)
    diag.accept_rate = {
        name: float(np.mean([np.mean(a[name]) for a in accept])) for name in MOVES
    }
    return ensemble, diag


# ---------------------------------------------------------------------------
# convergence diagnostics


def _split_chains(x):
    x = np.asarray(x, float)
    n = x.shape[1] // 2
    return np.concatenate([x[:, :n], x[:, x.shape[1] - n :]], axis=0)


def _z_scale(x):
    from scipy.stats import rankdata

    r = rankdata(x, method="average").reshape(x.shape)
    return special.ndtri((r - 0.375) / (x.size + 0.25))


def _rhat_basic(x):
    m, n = x.shape
    chain_var = x.var(axis=1, ddof=1)
    W = chain_var.mean()
    B = n * x.mean(axis=1).var(ddof=1)
    var_hat = (n - 1) / n * W + B / n
    return math.sqrt(var_hat / W)


def split_rhat(x):
    """Rank-normalised split R-hat (max of bulk and folded-tail versions)."""
    x = np.asarray(x, float)
    split = _split_chains(x)
    bulk = _rhat_basic(_z_scale(split))
    folded = np.abs(split - np.median(split))
    tail = _rhat_basic(_z_scale(folded))
    return max(bulk, tail)


def _autocov(x):
    n = x.shape[-1]
    centered = x - x.mean(axis=-1, keepdims=True)
    size = 2 ** int(math.ceil(math.log2(2 * n)))
    f = np.fft.rfft(centered, n=size, axis=-1)
    acov = np.fft.irfft(f * np.conj(f), n=size, axis=-1)[..., :n]
    return acov / n


def _ess_raw(x):
    """Multi-chain ESS with Geyer's initial monotone sequence estimator."""
    m, n = x.shape
    acov = _autocov(x)
    chain_mean = x.mean(axis=1)
    mean_var = acov[:, 0].mean() * n / (n - 1)
    var_plus = mean_var * (n - 1) / n
    if m > 1:
        var_plus += chain_mean.var(ddof=1)
    rho = 1.0 - (mean_var - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    # Geyer: sum adjacent pairs while positive, enforce monotone decrease
    t = 0
    pair_sums = []
    while t + 1 < n:
        p = rho[t] + rho[t + 1]
        if p < 0:
            break
        pair_sums.append(p)
        t += 2
    pair_sums = np.minimum.accumulate(np.array(pair_sums)) if pair_sums else np.array([1.0])
    tau = -1.0 + 2.0 * pair_sums.sum()
    tau = max(tau, 1.0 / math.log10(m * n))
    return m * n / tau


def effective_sample_size(x):
    """Bulk effective sample size of rank-normalised split chains."""
    x = np.asarray(x, float)
    return _ess_raw(_z_scale(_split_chains(x)))


def compute_diagnostics(chains):
    """R-hat and ESS per scalar from ``{name: (n_chains, n_draws)}`` draws.

    Constant parameters get R-hat 1 and ESS equal to the draw count, and are
    listed in ``zero_variance``.
    """
    rhat, ess, flat = {}, {}, []
    for name, x in chains.items():
        x = np.asarray(x, float)
        if x.ndim != 2 or x.shape[0] < 2 or x.shape[1] < 4:
            raise ValueError(f"{name}: need at least 2 chains of 4 draws, got {x.shape}")
        if np.ptp(x) == 0 or np.any(_split_chains(x).var(axis=1) == 0):
            rhat[name] = 1.0
            ess[name] = float(x.size)
            flat.append(name)
            continue
        rhat[name] = float(split_rhat(x))
        ess[name] = float(min(effective_sample_size(x), x.size))
    return Diagnostics(rhat=rhat, ess=ess, zero_variance=flat)


# ---------------------------------------------------------------------------
# estimator


class BayesianARHMM(BaseEstimator):
    """Estimator wrapper around :func:`run_mcmc`.

    Parameters
    ----------
    n_states, n_actions : int
        Sizes of the hidden state and action spaces.
    priors : PriorConfig or None
        Defaults to :meth:`PriorConfig.default`.
    n_chains, n_burnin, n_samples : int
        Chain layout; the fitted ensemble holds ``n_chains * n_samples`` draws.
    proposal_scales : dict or None
        Initial random-walk step sizes, adapted during burn-in.
    random_state : int
        Root seed from which per-chain seeds are derived.

    Attributes
    ----------
    ensemble_ : PosteriorEnsemble
    diagnostics_ : Diagnostics
    """

    def __init__(
        self,
        n_states=4,
        n_actions=3,
        priors=None,
        n_chains=4,
        n_burnin=4000,
        n_samples=3000,
        proposal_scales=None,
        random_state=0,
    ):
        self.n_states = n_states
        self.n_actions = n_actions
        self.priors = priors
        self.n_chains = n_chains
        self.n_burnin = n_burnin
        self.n_samples = n_samples
        self.proposal_scales = proposal_scales
        self.random_state = random_state

    def fit(self, X, y=None):
        model = PomdpModel(n_states=self.n_states, n_actions=self.n_actions)
        cfg = McmcConfig(
            n_chains=self.n_chains,
            n_burnin=self.n_burnin,
            n_samples=self.n_samples,
            proposal_scales=dict(self.proposal_scales or {}),
            seed=self.random_state,
        )
        self.ensemble_, self.diagnostics_ = run_mcmc(X, model, self.priors, cfg)
        return self

    def filter(self, series):
        """Filtered state probabilities ``(T, S)`` averaged over the ensemble."""
        check_fitted(self, "ensemble_")
        return np.mean([forward_filter(series, s)[1] for s in self.ensemble_], axis=0)

    def score(self, X, y=None):
        """Average per-series log marginal likelihood under the posterior-mean model."""
        check_fitted(self, "ensemble_")
        return dataset_loglik(X, self.ensemble_.mean_sample()) / len(X)
