"""Robust maintenance planning for railway track under model uncertainty.

Pipeline: fractal values from track geometry (:mod:`robmaint.fractal`), an
action-conditioned autoregressive HMM of condition (:mod:`robmaint.model`,
:mod:`robmaint.simulator`), its posterior by MCMC (:mod:`robmaint.inference`),
robust MDP and Q_MDP policies over the posterior ensemble
(:mod:`robmaint.mdp_solver`, :mod:`robmaint.pomdp_planner`) and a Monte Carlo
evaluation harness (:mod:`robmaint.evaluation`).
"""

__version__ = "0.1.0"

from .model import (  # noqa: E402
    CostTable,
    Dataset,
    ModelSample,
    ObservationParams,
    PomdpModel,
    PosteriorEnsemble,
    PriorConfig,
    Series,
    TransitionSet,
    load_ensemble,
    read_dataset_csv,
    reward,
    save_ensemble,
    write_dataset_csv,
)
from .inference import BayesianARHMM, McmcConfig, run_mcmc  # noqa: E402
from .mdp_solver import RobustMDPPolicy, solve_ensemble  # noqa: E402
from .pomdp_planner import Belief, QMDPPolicy, RobustQMDPPolicy  # noqa: E402
from .fractal import FractalTransformer, LevelSignal  # noqa: E402

__all__ = [
    "CostTable",
    "Dataset",
    "ModelSample",
    "ObservationParams",
    "PomdpModel",
    "PosteriorEnsemble",
    "PriorConfig",
    "Series",
    "TransitionSet",
    "load_ensemble",
    "read_dataset_csv",
    "reward",
    "save_ensemble",
    "write_dataset_csv",
    "BayesianARHMM",
    "McmcConfig",
    "run_mcmc",
    "RobustMDPPolicy",
    "solve_ensemble",
    "Belief",
    "QMDPPolicy",
    "RobustQMDPPolicy",
    "FractalTransformer",
    "LevelSignal",
]
