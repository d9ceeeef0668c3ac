import itertools
import math

import numpy as np
import pytest
from scipy import stats

from robmaint.inference import (
    BayesianARHMM,
    McmcConfig,
    backward_sample,
    compute_diagnostics,
    dataset_loglik,
    effective_sample_size,
    emission_loglik,
    emission_logliks,
    forward_filter,
    run_mcmc,
    split_rhat,
    transition_counts,
    update_obs_params,
    update_transitions,
)
from robmaint.model import (
    Dataset,
    ModelSample,
    PomdpModel,
    PriorConfig,
    Series,
    TransitionSet,
    prior_sample,
    prior_transitions,
)
from robmaint.simulator import default_behavior, generate_dataset


def _trunc_t_oracle(x, loc, scale, nu, ub):
    # scipy's t distribution renormalised below ``ub``
    return stats.t.logpdf(x, nu, loc, scale) - stats.t.logcdf(ub, nu, loc, scale)


# --- emissions --------------------------------------------------------------


def test_initial_branch(two_state_sample):
    o = two_state_sample.obs
    got = emission_loglik(-0.4, None, 1, None, o)
    assert got == pytest.approx(_trunc_t_oracle(-0.4, o.mu_0[1], o.sigma_0[1], o.nu_0[1], 0.0))


def test_deterioration_branch_is_step_density(two_state_sample):
    o = two_state_sample.obs
    z_prev = -0.3
    z = z_prev + o.mu_d[0]
    want = _trunc_t_oracle(o.mu_d[0], o.mu_d[0], o.sigma_d[0], o.nu_d[0], -z_prev)
    assert emission_loglik(z, z_prev, 0, 0, o) == pytest.approx(want)


def test_repair_branch(two_state_sample):
    o = two_state_sample.obs
    loc = o.k_r[0] * -0.8 + o.mu_r[1]
    want = _trunc_t_oracle(-0.5, loc, o.sigma_r[1], o.nu_r[1], 0.0)
    assert emission_loglik(-0.5, -0.8, 1, 1, o) == pytest.approx(want)


def test_positive_observation_impossible(two_state_sample):
    o = two_state_sample.obs
    assert emission_loglik(0.1, None, 0, None, o) == -math.inf
    assert emission_loglik(0.1, -0.2, 0, 0, o) == -math.inf
    assert emission_loglik(0.1, -0.2, 0, 1, o) == -math.inf


def test_batched_emissions_agree(two_state_sample):
    series = Series("x", [-1, 0, 1, 0], [-0.3, -0.33, -0.1, -0.12])
    table = emission_logliks(series, two_state_sample.obs)
    for t in range(4):
        for s in range(2):
            a = None if t == 0 else series.actions[t]
            zp = None if t == 0 else series.z[t - 1]
            assert table[t, s] == pytest.approx(
                emission_loglik(series.z[t], zp, s, a, two_state_sample.obs)
            )


# --- forward filter / backward sampler ---------------------------------------


def _path_weights(series, sample):
    """Exhaustive joint ``p(z, path)`` over every state path."""
    E = emission_logliks(series, sample.obs)
    T, S = E.shape
    out = {}
    for path in itertools.product(range(S), repeat=T):
        w = sample.T0[path[0]] * math.exp(E[0, path[0]])
        for t in range(1, T):
            w *= sample.P[series.actions[t], path[t - 1], path[t]] * math.exp(E[t, path[t]])
        out[path] = w
    return out


def test_filter_matches_enumeration(two_state_sample):
    series = Series("x", [-1, 0, 1], [-0.35, -0.39, -0.2])
    weights = _path_weights(series, two_state_sample)
    loglik, filtered = forward_filter(series, two_state_sample)
    assert loglik == pytest.approx(math.log(sum(weights.values())), abs=1e-10)
    assert filtered.shape == (3, 2)
    np.testing.assert_allclose(filtered.sum(axis=1), 1.0)


def test_single_state_loglik_is_sum(make_sample):
    P = np.ones((2, 1, 1))
    p = make_sample(P, [1.0], k_r=[0.4])
    series = Series("x", [-1, 0, 1, 0], [-0.3, -0.31, -0.2, -0.25])
    total = sum(emission_logliks(series, p.obs)[:, 0])
    assert forward_filter(series, p)[0] == pytest.approx(total, abs=1e-12)


def test_unique_path_recovered(make_sample):
    # deterministic transitions and sharply separated initial levels
    P = np.array([[[0.0, 1.0], [1.0, 0.0]], [[0.0, 1.0], [1.0, 0.0]]])
    p = make_sample(P, [0.5, 0.5], mu_0=np.array([-0.1, -0.9]), sigma_0=np.array([0.01, 0.01]))
    series = Series("x", [-1, 0, 0, 0, 0], [-0.1, -0.12, -0.16, -0.18, -0.22])
    _, filtered = forward_filter(series, p)
    rng = np.random.default_rng(0)
    for _ in range(20):
        path = backward_sample(filtered, p, series.actions, rng)
        assert path.tolist() == [0, 1, 0, 1, 0]


def test_backward_frequencies(two_state_sample):
    series = Series("x", [-1, 0, 1], [-0.35, -0.39, -0.2])
    weights = _path_weights(series, two_state_sample)
    total = sum(weights.values())
    _, filtered = forward_filter(series, two_state_sample)
    rng = np.random.default_rng(1)
    n = 20_000
    counts = {}
    for _ in range(n):
        path = tuple(backward_sample(filtered, two_state_sample, series.actions, rng))
        assert len(path) == 3
        counts[path] = counts.get(path, 0) + 1
    tv = 0.5 * sum(abs(counts.get(k, 0) / n - w / total) for k, w in weights.items())
    assert tv < 0.02


def test_dataset_loglik_sums_series(two_state_sample):
    ds = generate_dataset(two_state_sample, 6, 5, rng=2)
    total = sum(forward_filter(s, two_state_sample)[0] for s in ds)
    assert dataset_loglik(ds, two_state_sample) == pytest.approx(total, abs=1e-9)


# --- conjugate transitions ------------------------------------------------------


def test_transition_counts():
    paths = [np.array([0, 0, 1, 1]), np.array([1, 0])]
    actions = [np.array([-1, 0, 0, 1]), np.array([-1, 1])]
    init, c = transition_counts(paths, actions, 2, 2)
    np.testing.assert_array_equal(init, [1, 1])
    np.testing.assert_array_equal(c[0], [[1, 1], [0, 0]])
    np.testing.assert_array_equal(c[1], [[0, 0], [1, 1]])


def test_no_data_draws_from_prior():
    priors = PriorConfig.default(2, 2)
    rng = np.random.default_rng(3)
    draws = np.array([update_transitions([], [], priors, rng).P for _ in range(4000)])
    prior_mean = priors.alphaT / priors.alphaT.sum(axis=-1, keepdims=True)
    np.testing.assert_allclose(draws.mean(axis=0), prior_mean, atol=0.02)


def test_data_dominates_prior():
    priors = PriorConfig.default()
    path = np.array([0, 1] * 500_000)
    acts = np.zeros(path.size, dtype=np.int64)
    acts[0] = -1
    acts[1::2] = 0  # 0 -> 1 under do-nothing
    acts[2::2] = 2  # 1 -> 0 under renewal
    tr = update_transitions([path], [acts], priors, rng=4)
    np.testing.assert_allclose(tr.P[0, 0], [0, 1, 0, 0], atol=1e-2)


def test_posterior_mean_closed_form():
    priors = PriorConfig.default(2, 2)
    paths = [np.array([0, 0, 0, 1, 1])] * 3
    actions = [np.array([-1, 0, 0, 0, 0])] * 3
    rng = np.random.default_rng(5)
    draws = np.array([update_transitions(paths, actions, priors, rng).P[0, 0] for _ in range(20_000)])
    post = priors.alphaT[0, 0] + np.array([6.0, 3.0])
    np.testing.assert_allclose(draws.mean(axis=0), post / post.sum(), atol=5e-3)


# --- Metropolis block ------------------------------------------------------------


def test_tiny_steps_are_accepted(two_state_sample):
    ds = generate_dataset(two_state_sample, 8, 6, rng=6)
    paths = [np.array(h) for h in ds.metadata["hidden_states"]]
    scales = {name: 1e-9 for name in McmcConfig().scales()}
    _, acc = update_obs_params(
        paths, ds, two_state_sample.obs, PriorConfig.default(2, 2), scales, rng=7
    )
    rate = np.mean(np.concatenate([a.ravel() for a in acc.values()]))
    assert rate > 0.95


def test_obs_update_keeps_support(two_state_sample):
    ds = generate_dataset(two_state_sample, 8, 6, rng=8)
    paths = [np.array(h) for h in ds.metadata["hidden_states"]]
    obs = two_state_sample.obs
    rng = np.random.default_rng(9)
    priors = PriorConfig.default(2, 2)
    for _ in range(50):
        obs, _ = update_obs_params(paths, ds, obs, priors, rng=rng)
        assert np.all(obs.sigma_d > 0) and np.all(obs.mu_r <= 0)
        assert np.all(np.diff(obs.mu_0) <= 0)
        assert np.all((obs.k_r > 0) & (obs.k_r < 1))


@pytest.mark.slow
def test_gibbs_step_preserves_prior():
    # marginal-conditional check: theta ~ prior, data | theta, one full sweep;
    # the updated theta must again follow the prior
    priors = PriorConfig.default(2, 2)
    behavior = default_behavior(2, 2)
    rng = np.random.default_rng(10)
    before, after = [], []
    for _ in range(300):
        p = ModelSample(prior_transitions(priors, rng), prior_sample(priors, rng))
        ds = generate_dataset(p, 4, 5, behavior=behavior, rng=rng)
        paths = []
        for s in ds:
            _, f = forward_filter(s, p)
            paths.append(backward_sample(f, p, s.actions, rng))
        tr = update_transitions(paths, [s.actions for s in ds], priors, rng)
        obs, _ = update_obs_params(paths, ds, p.obs, priors, rng=rng)
        stat = lambda P, T0, o: [P[0, 0, 0], P[1, 1, 0], T0[0], o.mu_d[0], o.mu_0[1]]  # noqa: E731
        before.append(stat(p.P, p.T0, p.obs))
        after.append(stat(tr.P, tr.T0, obs))
    before, after = np.array(before), np.array(after)
    se = np.sqrt(before.var(axis=0) / len(before) + after.var(axis=0) / len(after))
    assert np.all(np.abs(before.mean(axis=0) - after.mean(axis=0)) < 4 * se)


# --- driver ------------------------------------------------------------------


def test_config_validation():
    with pytest.raises(ValueError):
        McmcConfig(n_chains=0)
    with pytest.raises(ValueError):
        McmcConfig(proposal_scales={"bogus": 1.0})
    with pytest.raises(ValueError):
        McmcConfig(init="random")


def test_short_run_shapes():
    ds = generate_dataset(
        ModelSample(
            TransitionSet(
                [[[0.9, 0.1], [0.0, 1.0]], [[1.0, 0.0], [0.7, 0.3]]], [0.6, 0.4]
            ),
            prior_sample(PriorConfig.default(2, 2), rng=11),
        ),
        10,
        6,
        rng=12,
    )
    model = PomdpModel(n_states=2, n_actions=2)
    cfg = McmcConfig(n_chains=2, n_burnin=16, n_samples=12, seed=13)
    ens, diag = run_mcmc(ds, model, cfg=cfg)
    assert len(ens) == 24
    assert ens.chain.tolist() == [0] * 12 + [1] * 12
    assert np.all(np.isfinite(ens.log_post))
    assert np.all(np.diff(ens.obs["mu_0"], axis=1) <= 0)
    assert set(diag.rhat) == set(ens.scalar_draws())
    again, _ = run_mcmc(ds, model, cfg=cfg)
    np.testing.assert_array_equal(again.P, ens.P)


def test_run_mcmc_input_checks():
    with pytest.raises(TypeError):
        run_mcmc([Series("a", [-1, 0], [-0.1, -0.2])])
    with pytest.raises(ValueError):
        run_mcmc(Dataset([Series("a", [-1], [-0.1])]))
    with pytest.raises(ValueError):
        run_mcmc(Dataset([Series("a", [-1, 5], [-0.1, -0.2])]))


def test_estimator_wrapper(two_state_sample):
    ds = generate_dataset(two_state_sample, 6, 5, rng=14)
    est = BayesianARHMM(n_states=2, n_actions=2, n_chains=2, n_burnin=8, n_samples=6)
    est.fit(ds)
    assert len(est.ensemble_) == 12
    b = est.filter(ds.series[0])
    assert b.shape == (5, 2)
    assert np.isfinite(est.score(ds))
    assert est.get_params()["n_burnin"] == 8


# --- diagnostics ---------------------------------------------------------------


def test_rhat_white_noise():
    x = np.random.default_rng(15).standard_normal((4, 2000))
    assert split_rhat(x) == pytest.approx(1.0, abs=0.01)


def test_rhat_disjoint_chains():
    rng = np.random.default_rng(16)
    x = rng.standard_normal((2, 500)) + np.array([[0.0], [5.0]])
    assert split_rhat(x) > 1.1


def test_ess_ar1():
    rng = np.random.default_rng(17)
    n, phi = 20_000, 0.9
    x = np.zeros((4, n))
    e = rng.standard_normal((4, n))
    for t in range(1, n):
        x[:, t] = phi * x[:, t - 1] + e[:, t]
    ratio = effective_sample_size(x) / x.size
    assert ratio == pytest.approx((1 - phi) / (1 + phi), rel=0.3)


def test_constant_parameter_flagged():
    d = compute_diagnostics({"c": np.ones((3, 10)), "x": np.random.default_rng(18).random((3, 10))})
    assert d.rhat["c"] == 1.0
    assert d.zero_variance == ["c"]
    with pytest.raises(ValueError):
        compute_diagnostics({"x": np.ones((1, 10))})


def test_label_swap_is_an_involution(make_sample):
    from robmaint.inference import _swap_labels

    P = np.array([[[0.7, 0.2, 0.1], [0.0, 0.8, 0.2], [0.0, 0.0, 1.0]]] * 2)
    p = make_sample(P, [0.5, 0.3, 0.2])
    t1, o1 = _swap_labels(p.transitions, p.obs, 1, 2)
    assert t1.P[0, 2, 2] == 0.8 and o1.mu_d[1] == p.obs.mu_d[2]
    np.testing.assert_array_equal(o1.mu_0, p.obs.mu_0)
    t2, o2 = _swap_labels(t1, o1, 1, 2)
    np.testing.assert_array_equal(t2.P, p.P)
    for name in ("mu_d", "sigma_r", "nu_d"):
        np.testing.assert_array_equal(getattr(o2, name), getattr(p.obs, name))


def test_full_relabel_keeps_likelihood(make_sample):
    # swapping the initial-level parameters as well is a pure relabelling
    from robmaint.inference import _swap_labels

    P = np.array([[[0.7, 0.2, 0.1], [0.0, 0.8, 0.2], [0.0, 0.0, 1.0]], [[1.0, 0.0, 0.0], [0.6, 0.4, 0.0], [0.3, 0.3, 0.4]]])
    p = make_sample(P, [0.5, 0.3, 0.2])
    t, o = _swap_labels(p.transitions, p.obs, 0, 1)
    perm = [1, 0, 2]
    o = o.replace(mu_0=p.obs.mu_0[perm], sigma_0=p.obs.sigma_0[perm], nu_0=p.obs.nu_0[perm])
    ds = generate_dataset(p, 5, 6, rng=3)
    swapped = ModelSample(t, o)
    assert dataset_loglik(ds, swapped) == pytest.approx(dataset_loglik(ds, p), abs=1e-9)
