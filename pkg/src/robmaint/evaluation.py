"""Monte Carlo policy evaluation over ensemble-sampled environments.

Each simulation draws its true environment uniformly from the ensemble and
keeps it for the whole episode. All policies in one comparison share the same
:class:`~robmaint.simulator.CommonRandomNumbers`, so differences between their
scores come from their decisions rather than from sampling noise.
"""

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import prob_core as pc
from ._validation import check_rng
from .mdp_solver import solve_ensemble
from .model import PomdpModel, PosteriorEnsemble
from .pomdp_planner import QMDPPolicy
from .simulator import CommonRandomNumbers, StatePolicy, simulate_batch

__all__ = [
    "EvalReport",
    "evaluate_policy",
    "percentile_samples",
    "compare_policies",
    "DEFAULT_PERCENTILES",
]

DEFAULT_PERCENTILES = (0, 25, 50, 75, 100)


@dataclass(frozen=True)
class EvalReport:
    """Summary statistics per policy, in roster order."""

    stats: dict
    n_sims: int
    horizon: int
    seed: int = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n_sims < 1:
            raise ValueError("n_sims must be >= 1")
        for name, st in self.stats.items():
            if not all(math.isfinite(v) for v in (st.mean, st.se, st.hdi_lo, st.hdi_hi)):
                raise ValueError(f"non-finite statistics for policy {name!r}")

    def rows(self):
        return [{"policy": name, **st.as_dict()} for name, st in self.stats.items()]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["policy", "mean", "se", "hdi_lo", "hdi_hi"])
            for name, st in self.stats.items():
                w.writerow([name, repr(st.mean), repr(st.se), repr(st.hdi_lo), repr(st.hdi_hi)])

    def to_dict(self):
        return {
            "n_sims": self.n_sims,
            "horizon": self.horizon,
            "seed": self.seed,
            "policies": self.rows(),
            "extra": self.extra,
        }

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)


def _scores(batch, model, discounted):
    if discounted:
        return batch.discounted_returns(model.gamma)
    return batch.totals()


def evaluate_policy(
    policy,
    ensemble,
    n_sims,
    H,
    rng=None,
    model=None,
    crn=None,
    discounted=False,
    mass=0.95,
    interval="hdi",
):
    """Mean, SE and credible interval of the total reward of ``policy``.

    ``ensemble`` supplies the true environments (a single
    :class:`~robmaint.model.ModelSample` is also accepted). Totals are
    undiscounted unless ``discounted`` is set.
    """
    if n_sims < 1:
        raise ValueError("n_sims must be >= 1")
    model = model or PomdpModel(n_states=ensemble.n_states, n_actions=ensemble.n_actions)
    if crn is None:
        n_envs = len(ensemble) if isinstance(ensemble, PosteriorEnsemble) else None
        crn = CommonRandomNumbers.draw(rng, n_sims, H, n_envs)
    batch = simulate_batch(policy, ensemble, model, H, crn)
    return pc.summarize(_scores(batch, model, discounted), mass, interval)


def percentile_samples(ensemble, percentiles=DEFAULT_PERCENTILES):
    """Members at the given percentiles (0-100) of ``log_post``, by nearest rank.

    Percentile ``p`` picks the ``ceil(p / 100 * K)``-th smallest weight
    (the smallest for ``p = 0``).
    """
    lp = np.asarray(ensemble.log_post, float)
    if np.any(np.isnan(lp)):
        raise ValueError("ensemble has missing log_post weights")
    order = np.argsort(lp, kind="stable")
    K = lp.size
    out = []
    for p in percentiles:
        if not 0 <= p <= 100:
            raise ValueError(f"percentile {p} outside [0, 100]")
        rank = max(1, math.ceil(p / 100.0 * K - 1e-9))
        out.append(ensemble[int(order[rank - 1])])
    return out


class _AlwaysPolicy:
    def __init__(self, action):
        self.action = int(action)

    def reset(self, z0):
        self.n = z0.shape[0]

    def act(self, t, states=None):
        return np.full(self.n, self.action, dtype=np.int64)

    def update(self, actions, z_prev, z):
        pass


def _qmdp(planning, model, H):
    if not isinstance(planning, PosteriorEnsemble):
        planning = PosteriorEnsemble.from_samples([planning])
    return QMDPPolicy(planning, solve_ensemble(planning, model, horizon=H))


def compare_policies(
    ensemble,
    model=None,
    H=50,
    n_sims=2000,
    rng=None,
    planning_size=500,
    percentiles=DEFAULT_PERCENTILES,
    include_mdp=False,
    discounted=False,
    interval="hdi",
):
    """Evaluate the standard roster on common random numbers.

    Roster: robust Q_MDP over (a subsample of) the ensemble, Q_MDP with the
    posterior-mean model, Q_MDP with each percentile member, and always-a1.
    ``include_mdp`` adds the robust policy with full state access.

    The robust planner uses ``planning_size`` members drawn without
    replacement (all of them when the ensemble is smaller); the environments
    are drawn from the full ensemble.
    """
    seed = rng if isinstance(rng, (int, np.integer)) else None
    rng = check_rng(rng)
    model = model or PomdpModel(n_states=ensemble.n_states, n_actions=ensemble.n_actions)
    K = len(ensemble)
    if planning_size is not None and planning_size < K:
        planning = ensemble.subset(np.sort(rng.choice(K, planning_size, replace=False)))
    else:
        planning = ensemble
    crn = CommonRandomNumbers.draw(rng, n_sims, H, K)

    roster = {"robust_qmdp": _qmdp(planning, model, H)}
    roster["posterior_mean_qmdp"] = _qmdp(ensemble.mean_sample(), model, H)
    for p, sample in zip(percentiles, percentile_samples(ensemble, percentiles)):
        roster[f"percentile_{p:g}_qmdp"] = _qmdp(sample, model, H)
    roster["always_a1"] = _AlwaysPolicy(1)
    if include_mdp:
        q = solve_ensemble(planning, model, horizon=H)
        roster["robust_mdp_full_obs"] = StatePolicy(q.robust_policy())

    stats, floored = {}, {}
    for name, policy in roster.items():
        batch = simulate_batch(policy, ensemble, model, H, crn)
        stats[name] = pc.summarize(_scores(batch, model, discounted), 0.95, interval)
        if isinstance(policy, QMDPPolicy):
            floored[name] = int(policy.floored.sum())
    return EvalReport(
        stats,
        n_sims,
        H,
        seed,
        extra={"planning_size": len(planning), "floored_steps": floored, "discounted": discounted},
    )
