import numpy as np
import pytest

from robmaint.model import ModelSample, ObservationParams, TransitionSet


def build_sample(P, T0, **obs):
    """Model sample with sensible observation defaults for any state count."""
    P = np.asarray(P, float)
    A, S, _ = P.shape
    defaults = dict(
        mu_d=-0.02 * (1 + np.arange(S)),
        sigma_d=np.full(S, 0.01),
        nu_d=np.full(S, 5.0),
        mu_r=-0.1 * (1 + np.arange(S)),
        sigma_r=np.full(S, 0.05),
        nu_r=np.full(S, 8.0),
        mu_0=-0.3 * (1 + np.arange(S)),
        sigma_0=np.full(S, 0.1),
        nu_0=np.full(S, 8.0),
        k_r=np.full(max(A - 1, 1), 0.5),
    )
    defaults.update(obs)
    return ModelSample(TransitionSet(P, T0), ObservationParams(**defaults))


@pytest.fixture
def make_sample():
    return build_sample


@pytest.fixture
def two_state_sample():
    P = [
        [[0.8, 0.2], [0.0, 1.0]],
        [[0.9, 0.1], [0.6, 0.4]],
    ]
    return build_sample(P, [0.7, 0.3], sigma_0=np.array([0.3, 0.3]))


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
