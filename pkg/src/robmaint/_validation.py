"""Input validation helpers shared by the estimators and the functional API."""

import numbers

import numpy as np

STOCHASTIC_ATOL = 1e-9


def check_rng(seed):
    """Turn ``seed`` into a ``numpy.random.Generator``.

    ``None`` gives a fresh unseeded generator, an int or ``SeedSequence`` seeds a
    new one, and an existing generator is passed through unchanged.
    """
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None or isinstance(seed, (numbers.Integral, np.random.SeedSequence)):
        return np.random.default_rng(seed)
    raise ValueError(f"{seed!r} cannot be used to seed a numpy Generator")


def spawn_seeds(seed, n):
    """Derive ``n`` independent integer seeds from a root seed."""
    ss = np.random.SeedSequence(seed)
    return [int(child.generate_state(1)[0]) for child in ss.spawn(n)]


def check_positive(name, value):
    arr = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise ValueError(f"{name} must be strictly positive and finite, got {value!r}")
    return arr


def check_probability_vector(p, name="probability vector", atol=STOCHASTIC_ATOL):
    p = np.asarray(p, dtype=float)
    if p.ndim != 1:
        raise ValueError(f"{name} must be 1-d, got shape {p.shape}")
    if np.any(p < -atol) or abs(p.sum() - 1.0) > atol:
        raise ValueError(f"{name} is not a probability vector: {p!r}")
    return p


def check_row_stochastic(P, name="transition matrix", atol=STOCHASTIC_ATOL):
    """Check that the last axis of ``P`` holds probability rows."""
    P = np.asarray(P, dtype=float)
    if P.ndim < 2 or P.shape[-1] != P.shape[-2]:
        raise ValueError(f"{name} must have square trailing axes, got shape {P.shape}")
    if np.any(P < -atol) or np.any(P > 1 + atol):
        raise ValueError(f"{name} has entries outside [0, 1]")
    bad = np.abs(P.sum(axis=-1) - 1.0) > atol
    if np.any(bad):
        where = tuple(int(i) for i in np.argwhere(bad)[0])
        raise ValueError(f"{name} row {where} is not stochastic")
    return P


def check_index(name, value, n):
    if not isinstance(value, (numbers.Integral, np.integer)) or not 0 <= value < n:
        raise IndexError(f"{name}={value!r} out of range [0, {n})")
    return int(value)


def check_fitted(estimator, attributes):
    from sklearn.exceptions import NotFittedError

    if isinstance(attributes, str):
        attributes = [attributes]
    if not all(getattr(estimator, attr, None) is not None for attr in attributes):
        raise NotFittedError(
            f"This {type(estimator).__name__} instance is not fitted yet. "
            "Call 'fit' with appropriate arguments first."
        )
