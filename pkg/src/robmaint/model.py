"""Decision problem, model parameters, priors and their file formats.

A :class:`ModelSample` is one complete plausible environment: per-action
transition matrices, the initial state distribution and every parameter of the
observation process. A :class:`PosteriorEnsemble` stores many of them as stacked
arrays, which is the form the planners and the evaluation harness consume.
"""

import csv
import json
import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import prob_core as pc
from ._validation import STOCHASTIC_ATOL, check_index, check_rng

__all__ = [
    "CostTable",
    "PomdpModel",
    "reward",
    "TransitionSet",
    "ObservationParams",
    "OBS_FIELDS",
    "PriorConfig",
    "prior_sample",
    "ModelSample",
    "validate",
    "PosteriorEnsemble",
    "save_ensemble",
    "load_ensemble",
    "Series",
    "Dataset",
    "DatasetParseError",
    "read_dataset_csv",
    "write_dataset_csv",
]

ENSEMBLE_FORMAT = "robmaint-ensemble"
ENSEMBLE_VERSION = 1


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class CostTable:
    """Action costs ``[action, state]`` and per-step condition costs ``[state]``."""

    action_cost: np.ndarray
    state_cost: np.ndarray

    def __post_init__(self):
        ac = _frozen(self.action_cost)
        sc = _frozen(self.state_cost)
        if ac.ndim != 2 or sc.ndim != 1 or ac.shape[1] != sc.shape[0]:
            raise ValueError(
                f"cost shapes do not match: action_cost {ac.shape}, state_cost {sc.shape}"
            )
        if np.any(ac > 0) or np.any(sc > 0):
            raise ValueError("costs are expressed as nonpositive rewards")
        object.__setattr__(self, "action_cost", ac)
        object.__setattr__(self, "state_cost", sc)

    @classmethod
    def railway(cls):
        """The 4-state / 3-action track maintenance costs (cost units)."""
        return cls(
            action_cost=[
                [0.0, 0.0, 0.0, 0.0],
                [-50.0, -50.0, -50.0, -50.0],
                [-2050.0, -2710.0, -3370.0, -4050.0],
            ],
            state_cost=[-100.0, -200.0, -1000.0, -8000.0],
        )

    @classmethod
    def zeros(cls, n_states, n_actions):
        return cls(np.zeros((n_actions, n_states)), np.zeros(n_states))

    def reward_matrix(self):
        """Rewards as an ``(n_states, n_actions)`` array."""
        return self.action_cost.T + self.state_cost[:, None]


@dataclass(frozen=True)
class PomdpModel:
    """State/action spaces, costs and discounting of the maintenance problem.

    ``horizon=None`` means an infinite horizon, which requires ``gamma < 1``.
    The condition cost is charged on the state occupied when the action is
    chosen.
    """

    n_states: int = 4
    n_actions: int = 3
    costs: CostTable = None
    gamma: float = 0.995
    horizon: int = None

    def __post_init__(self):
        if self.n_states < 2 or self.n_actions < 2:
            raise ValueError("need at least 2 states and 2 actions")
        costs = self.costs
        if costs is None:
            if (self.n_states, self.n_actions) == (4, 3):
                costs = CostTable.railway()
            else:
                costs = CostTable.zeros(self.n_states, self.n_actions)
            object.__setattr__(self, "costs", costs)
        if costs.action_cost.shape != (self.n_actions, self.n_states):
            raise ValueError("cost table does not match the state/action counts")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        if self.horizon is None and not self.gamma < 1.0:
            raise ValueError("an infinite horizon needs gamma < 1")
        if self.horizon is not None and self.horizon < 1:
            raise ValueError("horizon must be a positive integer")

    @property
    def rewards(self):
        return self.costs.reward_matrix()


def reward(model, s, a):
    """Immediate reward of action ``a`` in state ``s``: action cost plus condition cost."""
    s = check_index("s", s, model.n_states)
    a = check_index("a", a, model.n_actions)
    return float(model.costs.action_cost[a, s] + model.costs.state_cost[s])


@dataclass(frozen=True)
class TransitionSet:
    """``P[a, s, s']`` transition matrices and the initial distribution ``T0``."""

    P: np.ndarray
    T0: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "P", _frozen(self.P))
        object.__setattr__(self, "T0", _frozen(self.T0))
        if self.P.ndim != 3 or self.P.shape[1] != self.P.shape[2]:
            raise ValueError(f"P must have shape (A, S, S), got {self.P.shape}")
        if self.T0.shape != (self.P.shape[1],):
            raise ValueError("T0 length must equal the number of states")

    @property
    def n_actions(self):
        return self.P.shape[0]

    @property
    def n_states(self):
        return self.P.shape[1]


STATE_FIELDS = (
    "mu_d", "sigma_d", "nu_d",
    "mu_r", "sigma_r", "nu_r",
    "mu_0", "sigma_0", "nu_0",
)
OBS_FIELDS = STATE_FIELDS + ("k_r",)


@dataclass(frozen=True)
class ObservationParams:
    """Parameters of the fractal-value observation process.

    ``*_d`` drive deterioration steps, ``*_r`` post-repair levels and ``*_0``
    the first observation of a series, all indexed by hidden state.
    ``k_r[a - 1]`` is the autoregressive coefficient of repair action ``a``.
    """

    mu_d: np.ndarray
    sigma_d: np.ndarray
    nu_d: np.ndarray
    mu_r: np.ndarray
    sigma_r: np.ndarray
    nu_r: np.ndarray
    mu_0: np.ndarray
    sigma_0: np.ndarray
    nu_0: np.ndarray
    k_r: np.ndarray

    def __post_init__(self):
        for name in OBS_FIELDS:
            object.__setattr__(self, name, _frozen(np.atleast_1d(getattr(self, name))))
        n = self.mu_d.shape
        if any(getattr(self, name).shape != n for name in STATE_FIELDS):
            raise ValueError("all state-indexed observation parameters need equal length")

    @property
    def n_states(self):
        return self.mu_d.shape[0]

    def as_dict(self):
        return {name: getattr(self, name) for name in OBS_FIELDS}

    def replace(self, **changes):
        return replace(self, **changes)


def _pair(value):
    a, b = value
    return (np.asarray(a, float), np.asarray(b, float))


def default_alpha_T(n_states, n_actions):
    """Informative Dirichlet concentrations for the transition rows.

    Do-nothing rows favour staying put, then a one-state deterioration, and
    nearly forbid improvement. Repair rows favour staying or improving and
    nearly forbid deterioration.
    """
    S = n_states
    i, j = np.indices((S, S))
    a0 = np.where(i == j, 6.0, np.where(j == i + 1, 2.0, np.where(j > i, 0.5, 0.05)))
    repair = np.where(j <= i, 2.0, 0.05)
    return np.stack([a0] + [repair] * (n_actions - 1))


@dataclass(frozen=True)
class PriorConfig:
    """Dirichlet priors on transitions and hyper-priors on observation parameters.

    Normal-type entries hold ``(mean, sd)``, Gamma entries ``(shape, rate)``
    and the Beta entry ``(a, b)``; each element may be a scalar or a per-state
    (per-repair-action for ``k_r``) array. ``sigma_*`` use a normal truncated
    below at 0, ``mu_r`` and ``mu_0`` a normal truncated above at 0.
    """

    alpha0: np.ndarray
    alphaT: np.ndarray
    mu_d: tuple = (-0.02, 0.05)
    sigma_d: tuple = (0.05, 0.05)
    nu_d: tuple = (2.0, 0.1)
    mu_r: tuple = (-0.2, 0.2)
    sigma_r: tuple = (0.05, 0.05)
    nu_r: tuple = (2.0, 0.1)
    mu_0: tuple = (-0.5, 0.5)
    sigma_0: tuple = (0.05, 0.05)
    nu_0: tuple = (2.0, 0.1)
    k_r: tuple = (2.0, 2.0)

    def __post_init__(self):
        a0 = _frozen(self.alpha0)
        aT = _frozen(self.alphaT)
        if aT.ndim != 3 or aT.shape[1:] != (a0.size, a0.size):
            raise ValueError("alphaT must have shape (A, S, S) matching alpha0")
        if np.any(a0 <= 0) or np.any(aT <= 0):
            raise ValueError("Dirichlet concentrations must be positive")
        object.__setattr__(self, "alpha0", a0)
        object.__setattr__(self, "alphaT", aT)
        for name in OBS_FIELDS:
            first, second = _pair(getattr(self, name))
            if np.any(second <= 0) or (name.startswith(("nu", "k_")) and np.any(first <= 0)):
                raise ValueError(f"hyper-parameters of {name} must be positive")
            object.__setattr__(self, name, (first, second))

    @classmethod
    def default(cls, n_states=4, n_actions=3):
        return cls(alpha0=np.ones(n_states), alphaT=default_alpha_T(n_states, n_actions))

    @property
    def n_states(self):
        return self.alpha0.size

    @property
    def n_actions(self):
        return self.alphaT.shape[0]

    def to_dict(self):
        out = {"alpha0": self.alpha0.tolist(), "alphaT": self.alphaT.tolist()}
        for name in OBS_FIELDS:
            out[name] = [np.asarray(v).tolist() for v in getattr(self, name)]
        return out

    @classmethod
    def from_dict(cls, d, n_states=4, n_actions=3):
        base = cls.default(n_states, n_actions)
        kwargs = {
            "alpha0": d.get("alpha0", base.alpha0),
            "alphaT": d.get("alphaT", base.alphaT),
        }
        for name in OBS_FIELDS:
            kwargs[name] = tuple(d.get(name, getattr(base, name)))
        return cls(**kwargs)

    def obs_logprior_terms(self, name, value):
        """Elementwise log prior of one observation parameter array."""
        a, b = getattr(self, name)
        if name == "mu_d":
            return pc.normal_logpdf(value, a, b)
        if name.startswith("sigma"):
            return _vec_truncnorm_logpdf(value, a, b, lb=0.0)
        if name in ("mu_r", "mu_0"):
            return _vec_truncnorm_logpdf(value, a, b, ub=0.0)
        if name.startswith("nu"):
            return pc.gamma_logpdf(value, a, b)
        if name == "k_r":
            return pc.beta_logpdf(value, a, b)
        raise KeyError(name)

    def log_prior(self, sample):
        """Log prior density of a :class:`ModelSample` (``-inf`` off support)."""
        tr, obs = sample.transitions, sample.obs
        lp = float(pc.dirichlet_logpdf(tr.T0, self.alpha0))
        lp += float(np.sum(pc.dirichlet_logpdf(tr.P, self.alphaT)))
        for name in OBS_FIELDS:
            lp += float(np.sum(self.obs_logprior_terms(name, getattr(obs, name))))
        if np.any(np.diff(obs.mu_0) > 0):
            return -math.inf
        return lp


def _vec_truncnorm_logpdf(x, mean, sd, lb=-np.inf, ub=np.inf):
    x, mean, sd = np.broadcast_arrays(np.asarray(x, float), mean, sd)
    out = np.empty(x.shape)
    for idx in np.ndindex(x.shape):
        out[idx] = pc.truncnorm_logpdf(x[idx], float(mean[idx]), float(sd[idx]), lb, ub)
    return out


def prior_sample(priors, rng=None):
    """Draw :class:`ObservationParams` from the hyper-priors.

    ``mu_0`` is returned sorted in decreasing order, which is an exact draw of
    the prior restricted to the label-ordering constraint.
    """
    rng = check_rng(rng)
    S, A = priors.n_states, priors.n_actions

    def tn(name, lb=-np.inf, ub=np.inf, n=S):
        m, s = (np.broadcast_to(v, (n,)) for v in getattr(priors, name))
        return np.asarray(pc.truncnorm_sample(m, s, lb, ub, rng, size=n), dtype=float)

    def gamma(name):
        shape, rate = (np.broadcast_to(v, (S,)) for v in getattr(priors, name))
        return rng.gamma(shape, 1.0 / rate)

    m, s = (np.broadcast_to(v, (S,)) for v in priors.mu_d)
    ka, kb = (np.broadcast_to(v, (A - 1,)) for v in priors.k_r)
    return ObservationParams(
        mu_d=rng.normal(m, s),
        sigma_d=tn("sigma_d", lb=0.0),
        nu_d=gamma("nu_d"),
        mu_r=tn("mu_r", ub=0.0),
        sigma_r=tn("sigma_r", lb=0.0),
        nu_r=gamma("nu_r"),
        mu_0=np.sort(tn("mu_0", ub=0.0))[::-1],
        sigma_0=tn("sigma_0", lb=0.0),
        nu_0=gamma("nu_0"),
        k_r=rng.beta(ka, kb),
    )


def prior_transitions(priors, rng=None):
    """Draw a :class:`TransitionSet` from the Dirichlet priors."""
    rng = check_rng(rng)
    T0 = pc.sample_dirichlet(priors.alpha0, rng)
    P = np.empty(priors.alphaT.shape)
    for a in range(P.shape[0]):
        for s in range(P.shape[1]):
            P[a, s] = pc.sample_dirichlet(priors.alphaT[a, s], rng)
    return TransitionSet(P, T0)


@dataclass(frozen=True)
class ModelSample:
    transitions: TransitionSet
    obs: ObservationParams
    log_post: float = math.nan

    @property
    def P(self):
        return self.transitions.P

    @property
    def T0(self):
        return self.transitions.T0

    @property
    def n_states(self):
        return self.transitions.n_states

    @property
    def n_actions(self):
        return self.transitions.n_actions

    @classmethod
    def from_prior(cls, priors, rng=None):
        rng = check_rng(rng)
        return cls(prior_transitions(priors, rng), prior_sample(priors, rng))

    def to_dict(self):
        out = {"P": self.P.tolist(), "T0": self.T0.tolist(), "log_post": self.log_post}
        out.update({k: v.tolist() for k, v in self.obs.as_dict().items()})
        return out

    @classmethod
    def from_dict(cls, d):
        obs = ObservationParams(**{name: d[name] for name in OBS_FIELDS})
        log_post = d.get("log_post")
        return cls(
            TransitionSet(d["P"], d["T0"]),
            obs,
            math.nan if log_post is None else float(log_post),
        )


def validate(sample, model=None):
    """List every invariant violation of ``sample`` as ``"path: message"``.

    An empty list means the sample is valid. ``model`` (optional) adds
    dimension checks against a :class:`PomdpModel`.
    """
    out = []
    tr, obs = sample.transitions, sample.obs
    P, T0 = tr.P, tr.T0
    if model is not None:
        if P.shape != (model.n_actions, model.n_states, model.n_states):
            out.append(f"transitions.P: shape {P.shape} does not match model")
        if obs.n_states != model.n_states:
            out.append("obs: state count does not match model")
        if obs.k_r.shape != (model.n_actions - 1,):
            out.append("obs.k_r: expected one coefficient per repair action")
    if np.any(P < 0) or np.any(P > 1):
        out.append("transitions.P: entries outside [0, 1]")
    sums = P.sum(axis=-1)
    for a, s in zip(*np.nonzero(np.abs(sums - 1.0) > STOCHASTIC_ATOL)):
        out.append(f"transitions.P[{a}][{s}]: row not stochastic (sum={sums[a, s]:.12g})")
    if np.any(T0 < 0) or abs(T0.sum() - 1.0) > STOCHASTIC_ATOL:
        out.append(f"transitions.T0: not a probability vector (sum={T0.sum():.12g})")
    for name in ("sigma_d", "sigma_r", "sigma_0"):
        for i in np.nonzero(~(getattr(obs, name) > 0))[0]:
            out.append(f"obs.{name}[{i}]: scale nonpositive")
    for name in ("nu_d", "nu_r", "nu_0"):
        for i in np.nonzero(~(getattr(obs, name) > 0))[0]:
            out.append(f"obs.{name}[{i}]: degrees of freedom nonpositive")
    for name in ("mu_r", "mu_0"):
        for i in np.nonzero(getattr(obs, name) > 0)[0]:
            out.append(f"obs.{name}[{i}]: location must be <= 0")
    for i in np.nonzero(~((obs.k_r > 0) & (obs.k_r < 1)))[0]:
        out.append(f"obs.k_r[{i}]: coefficient outside (0, 1)")
    for name in OBS_FIELDS:
        if not np.all(np.isfinite(getattr(obs, name))):
            out.append(f"obs.{name}: non-finite entries")
    return out


@dataclass(frozen=True)
class PosteriorEnsemble:
    """Stacked model samples, leading axis = sample index.

    ``obs`` maps each name in :data:`OBS_FIELDS` to a ``(K, S)`` (or
    ``(K, A - 1)`` for ``k_r``) array. ``chain`` records which chain produced
    each sample.
    """

    P: np.ndarray
    T0: np.ndarray
    obs: dict
    log_post: np.ndarray
    chain: np.ndarray = None
    chain_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        P = _frozen(self.P)
        if P.ndim != 4 or P.shape[0] == 0:
            raise ValueError("ensemble needs at least one sample and P of shape (K, A, S, S)")
        K, A, S, _ = P.shape
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "T0", _frozen(self.T0))
        obs = {name: _frozen(self.obs[name]) for name in OBS_FIELDS}
        for name, arr in obs.items():
            want = (K, A - 1) if name == "k_r" else (K, S)
            if arr.shape != want:
                raise ValueError(f"obs[{name!r}] has shape {arr.shape}, expected {want}")
        object.__setattr__(self, "obs", obs)
        if self.T0.shape != (K, S):
            raise ValueError("T0 must have shape (K, S)")
        object.__setattr__(self, "log_post", _frozen(np.broadcast_to(self.log_post, (K,))))
        chain = np.zeros(K, dtype=np.int64) if self.chain is None else self.chain
        object.__setattr__(self, "chain", _frozen(chain, dtype=np.int64))

    def __len__(self):
        return self.P.shape[0]

    @property
    def n_states(self):
        return self.P.shape[2]

    @property
    def n_actions(self):
        return self.P.shape[1]

    def __getitem__(self, i):
        i = check_index("sample index", int(i) if isinstance(i, np.integer) else i, len(self))
        obs = ObservationParams(**{name: arr[i] for name, arr in self.obs.items()})
        return ModelSample(TransitionSet(self.P[i], self.T0[i]), obs, float(self.log_post[i]))

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def subset(self, indices):
        """Ensemble of the samples at ``indices`` (repeats allowed)."""
        idx = np.asarray(indices, dtype=np.int64)
        return PosteriorEnsemble(
            P=self.P[idx],
            T0=self.T0[idx],
            obs={k: v[idx] for k, v in self.obs.items()},
            log_post=self.log_post[idx],
            chain=self.chain[idx],
            chain_meta=dict(self.chain_meta),
        )

    @classmethod
    def from_samples(cls, samples, chain=None, chain_meta=None):
        samples = list(samples)
        if not samples:
            raise ValueError("an ensemble needs at least one sample")
        return cls(
            P=np.stack([s.P for s in samples]),
            T0=np.stack([s.T0 for s in samples]),
            obs={name: np.stack([getattr(s.obs, name) for s in samples]) for name in OBS_FIELDS},
            log_post=np.array([s.log_post for s in samples], dtype=float),
            chain=chain,
            chain_meta=chain_meta or {},
        )

    def mean_sample(self):
        """Element-wise posterior mean, with rows renormalised onto the simplex."""
        P = self.P.mean(axis=0)
        P = P / P.sum(axis=-1, keepdims=True)
        T0 = self.T0.mean(axis=0)
        T0 = T0 / T0.sum()
        obs = ObservationParams(**{k: v.mean(axis=0) for k, v in self.obs.items()})
        return ModelSample(TransitionSet(P, T0), obs)

    def scalar_draws(self):
        """Flatten every parameter into named ``(K,)`` columns."""
        cols = {}
        K, A, S, _ = self.P.shape
        for a in range(A):
            for s in range(S):
                for t in range(S):
                    cols[f"P[{a},{s},{t}]"] = self.P[:, a, s, t]
        for s in range(S):
            cols[f"T0[{s}]"] = self.T0[:, s]
        for name, arr in self.obs.items():
            for j in range(arr.shape[1]):
                cols[f"{name}[{j}]"] = arr[:, j]
        return cols


def save_ensemble(path, ensemble):
    """Write ``ensemble`` as a versioned ``.npz`` file of float64 arrays."""
    K, A, S, _ = ensemble.P.shape
    header = {
        "format": ENSEMBLE_FORMAT,
        "version": ENSEMBLE_VERSION,
        "n_samples": K,
        "n_actions": A,
        "n_states": S,
        "fields": ["P", "T0", *OBS_FIELDS, "log_post", "chain"],
        "chain_meta": ensemble.chain_meta,
    }
    arrays = {
        "header": np.array(json.dumps(header, sort_keys=True)),
        "P": np.ascontiguousarray(ensemble.P, dtype=np.float64),
        "T0": np.ascontiguousarray(ensemble.T0, dtype=np.float64),
        "log_post": np.ascontiguousarray(ensemble.log_post, dtype=np.float64),
        "chain": np.ascontiguousarray(ensemble.chain, dtype=np.int64),
    }
    for name in OBS_FIELDS:
        arrays[name] = np.ascontiguousarray(ensemble.obs[name], dtype=np.float64)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_ensemble(path):
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(str(data["header"]))
        if header.get("format") != ENSEMBLE_FORMAT:
            raise ValueError(f"{path} is not an ensemble file")
        if header.get("version") != ENSEMBLE_VERSION:
            raise ValueError(f"unsupported ensemble file version {header.get('version')}")
        ens = PosteriorEnsemble(
            P=data["P"],
            T0=data["T0"],
            obs={name: data[name] for name in OBS_FIELDS},
            log_post=data["log_post"],
            chain=data["chain"],
            chain_meta=header.get("chain_meta", {}),
        )
    if (len(ens), ens.n_actions, ens.n_states) != (
        header["n_samples"], header["n_actions"], header["n_states"]
    ):
        raise ValueError(f"{path}: header dimensions disagree with the stored arrays")
    return ens


@dataclass(frozen=True)
class Series:
    """One condition time series.

    ``actions[t]`` is the action taken between ``t - 1`` and ``t``; ``actions[0]``
    is ``-1``.
    """

    series_id: str
    actions: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "actions", _frozen(self.actions, dtype=np.int64))
        object.__setattr__(self, "z", _frozen(self.z))
        if self.actions.shape != self.z.shape or self.z.ndim != 1 or self.z.size < 1:
            raise ValueError(f"series {self.series_id}: actions and observations must align")

    def __len__(self):
        return self.z.size


@dataclass(frozen=True)
class Dataset:
    series: tuple
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "series", tuple(self.series))

    def __len__(self):
        return len(self.series)

    def __iter__(self):
        return iter(self.series)

    @property
    def n_observations(self):
        return sum(len(s) for s in self.series)


class DatasetParseError(ValueError):
    def __init__(self, line, message):
        super().__init__(f"line {line}: {message}")
        self.line = line


DATASET_COLUMNS = ("series_id", "t", "action", "fractal_value")


def read_dataset_csv(path, n_actions=None):
    """Parse a dataset CSV, reporting the offending line on any error."""
    rows = {}
    order = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != DATASET_COLUMNS:
            raise DatasetParseError(1, f"expected header {','.join(DATASET_COLUMNS)}")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise DatasetParseError(line_no, f"expected 4 columns, got {len(row)}")
            sid = row[0].strip()
            try:
                t = int(row[1])
                action = int(row[2])
                z = float(row[3])
            except ValueError as exc:
                raise DatasetParseError(line_no, str(exc)) from None
            if not math.isfinite(z) or z > 0:
                raise DatasetParseError(line_no, f"fractal_value must be finite and <= 0, got {z}")
            if sid not in rows:
                rows[sid] = []
                order.append(sid)
            seq = rows[sid]
            if t != len(seq):
                raise DatasetParseError(line_no, f"series {sid}: expected t={len(seq)}, got {t}")
            if t == 0 and action != -1:
                raise DatasetParseError(line_no, "the first row of a series must have action -1")
            if t > 0 and (action < 0 or (n_actions is not None and action >= n_actions)):
                raise DatasetParseError(line_no, f"invalid action {action}")
            seq.append((action, z))
    if not order:
        raise DatasetParseError(2, "dataset is empty")
    series = [
        Series(sid, [a for a, _ in rows[sid]], [z for _, z in rows[sid]]) for sid in order
    ]
    return Dataset(series)


def write_dataset_csv(path, dataset):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(DATASET_COLUMNS)
        for s in dataset:
            for t, (a, z) in enumerate(zip(s.actions, s.z)):
                writer.writerow([s.series_id, t, int(a), repr(float(z))])
