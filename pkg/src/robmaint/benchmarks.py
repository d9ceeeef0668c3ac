"""Synthetic ground truth and posterior-like ensembles for tests and demos.

The real maintenance records are not public, so the library ships one
hand-set parameter point with the qualitative shape expected of ballast
deterioration: slow do-nothing decay towards the worst state, tamping that
mostly holds or improves by one state, renewal that sends almost everything
back to the best state, and fractal values that drift further below zero in
worse states.
"""

import numpy as np
from scipy import special

from ._validation import check_rng
from .inference import dataset_loglik
from .model import (
    ModelSample,
    ObservationParams,
    PosteriorEnsemble,
    PriorConfig,
    TransitionSet,
)
from .simulator import generate_dataset

__all__ = ["benchmark_sample", "perturbed_ensemble"]

_P_TRUE = np.array(
    [
        [
            [0.95, 0.04, 0.008, 0.002],
            [0.00, 0.85, 0.12, 0.03],
            [0.00, 0.00, 0.85, 0.15],
            [0.00, 0.00, 0.00, 1.00],
        ],
        [
            [0.96, 0.04, 0.00, 0.00],
            [0.40, 0.55, 0.05, 0.00],
            [0.05, 0.30, 0.60, 0.05],
            [0.00, 0.05, 0.15, 0.80],
        ],
        [
            [0.98, 0.02, 0.00, 0.00],
            [0.90, 0.10, 0.00, 0.00],
            [0.85, 0.10, 0.05, 0.00],
            [0.80, 0.10, 0.05, 0.05],
        ],
    ]
)
_T0_TRUE = np.array([0.4, 0.3, 0.2, 0.1])
_OBS_TRUE = dict(
    mu_d=[-0.01, -0.05, -0.12, -0.25],
    sigma_d=[0.01, 0.015, 0.025, 0.04],
    nu_d=[5.0, 5.0, 5.0, 5.0],
    mu_r=[-0.05, -0.2, -0.4, -0.6],
    sigma_r=[0.02, 0.03, 0.04, 0.06],
    nu_r=[10.0, 10.0, 10.0, 10.0],
    mu_0=[-0.15, -0.4, -0.8, -1.3],
    sigma_0=[0.04, 0.05, 0.075, 0.1],
    nu_0=[10.0, 10.0, 10.0, 10.0],
    k_r=[0.6, 0.2],
)


def benchmark_sample():
    """The reference 4-state / 3-action ground truth."""
    return ModelSample(TransitionSet(_P_TRUE, _T0_TRUE), ObservationParams(**_OBS_TRUE))


def perturbed_ensemble(
    n,
    base=None,
    concentration=200.0,
    obs_jitter=0.1,
    seed=0,
    dataset=None,
    priors=None,
):
    """``n`` random perturbations of ``base`` with log-posterior weights.

    Transition rows are redrawn from ``Dirichlet(concentration * row + 0.05)``,
    scale and dof parameters are jittered multiplicatively, locations
    additively (``mu_0`` is re-sorted to keep the labels) and ``k_r`` on the
    logit scale. Each member's ``log_post`` is its prior density plus the
    marginal log-likelihood of ``dataset`` (62 x 20 series simulated from
    ``base`` when omitted), so percentile selection by weight is meaningful.
    """
    rng = check_rng(seed)
    base = base or benchmark_sample()
    priors = priors or PriorConfig.default(base.n_states, base.n_actions)
    if dataset is None:
        dataset = generate_dataset(base, 62, 20, rng=rng)
    samples = []
    for _ in range(n):
        P = np.empty_like(base.P)
        for a in range(P.shape[0]):
            for s in range(P.shape[1]):
                draw = rng.dirichlet(concentration * base.P[a, s] + 0.05)
                P[a, s] = draw / draw.sum()
        T0 = rng.dirichlet(concentration * base.T0 + 0.05)
        o = base.obs
        jit = lambda x: x * np.exp(obs_jitter * rng.standard_normal(x.shape))  # noqa: E731
        shift = lambda x, sd: x + obs_jitter * sd * rng.standard_normal(x.shape)  # noqa: E731
        obs = ObservationParams(
            mu_d=shift(o.mu_d, np.abs(o.mu_d)),
            sigma_d=jit(o.sigma_d),
            nu_d=jit(o.nu_d),
            mu_r=-np.abs(shift(o.mu_r, np.abs(o.mu_r))),
            sigma_r=jit(o.sigma_r),
            nu_r=jit(o.nu_r),
            mu_0=np.sort(-np.abs(shift(o.mu_0, o.sigma_0)))[::-1],
            sigma_0=jit(o.sigma_0),
            nu_0=jit(o.nu_0),
            k_r=special.expit(special.logit(o.k_r) + obs_jitter * rng.standard_normal(o.k_r.shape)),
        )
        sample = ModelSample(TransitionSet(P, T0 / T0.sum()), obs)
        lp = priors.log_prior(sample) + dataset_loglik(dataset, sample)
        samples.append(ModelSample(sample.transitions, obs, lp))
    return PosteriorEnsemble.from_samples(
        samples, chain_meta={"kind": "perturbed", "concentration": concentration, "seed": seed}
    )
