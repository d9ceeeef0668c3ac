"""Command line entry point: ``robmaint <subcommand> [options]``.

Settings resolve in layers: built-in defaults < YAML config file (top-level
keys and a section named after the subcommand) < ``ROBMAINT_<KEY>``
environment variables < command line flags. The resolved settings, package
versions and outputs are written to ``<first output>.manifest.json``; passing
that manifest back as ``--config`` repeats the run.

Exit codes: 0 success, 1 invalid input or usage, 2 runtime failure.
"""

import argparse
import csv
import json
import logging
import os
import platform
import sys
import time

import numpy as np
import yaml

__all__ = ["main", "dispatch", "build_parser"]

logger = logging.getLogger("robmaint")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2
ENV_PREFIX = "ROBMAINT_"

DEFAULTS = {
    "fractal": {"input": None, "output": "fractal.csv", "shift": 1.0},
    "simulate": {
        "seed": 0,
        "n_series": 62,
        "length": 20,
        "output": "dataset.csv",
        "source": "benchmark",
        "ensemble": None,
        "index": 0,
        "params": None,
        "behavior": "default",
    },
    "infer": {
        "dataset": None,
        "priors": None,
        "chains": 4,
        "burnin": 4000,
        "samples": 3000,
        "seed": 0,
        "n_states": 4,
        "n_actions": 3,
        "output": "ensemble.npz",
        "diagnostics": None,
    },
    "solve": {
        "ensemble": None,
        "horizon": "inf",
        "gamma": 0.995,
        "tol": 1e-6,
        "output_dir": ".",
    },
    "plan": {
        "ensemble": None,
        "true_index": None,
        "true_percentile": None,
        "true_prior_seed": None,
        "horizon": 50,
        "gamma": 0.995,
        "replicates": 1,
        "planning_size": 500,
        "seed": 0,
        "trace": "trace.csv",
    },
    "evaluate": {
        "ensemble": None,
        "n_sims": 2000,
        "horizon": 50,
        "gamma": 0.995,
        "planning_size": 500,
        "percentiles": "0,25,50,75,100",
        "include_mdp": False,
        "discounted": False,
        "interval": "hdi",
        "seed": 0,
        "output_csv": "evaluation.csv",
        "output_json": None,
    },
}
GLOBAL_KEYS = {"seed", "log_level"}


class UsageError(Exception):
    """Invalid command line or configuration."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_INVALID)


class _JsonLines(logging.Formatter):
    def __init__(self, subcommand):
        super().__init__()
        self.subcommand = subcommand

    def format(self, record):
        rec = {
            "time": round(record.created, 3),
            "level": record.levelname,
            "subcommand": self.subcommand,
            "logger": record.name,
            "msg": record.getMessage(),
        }
        for key, value in record.__dict__.items():
            if key not in logging.LogRecord("", 0, "", 0, "", None, None).__dict__ and key not in (
                "message",
                "asctime",
            ):
                rec[key] = value
        return json.dumps(rec, default=str, sort_keys=True)


def _configure_logging(subcommand, level):
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(_JsonLines(subcommand))
    root = logging.getLogger("robmaint")
    root.handlers[:] = [handler]
    root.setLevel(level.upper())
    root.propagate = False


def build_parser():
    p = _Parser(prog="robmaint", description="Robust maintenance planning under model uncertainty.")
    p.add_argument("--config", help="YAML file with settings (top-level and per-subcommand sections)")
    p.add_argument("--log-level", dest="log_level", default=argparse.SUPPRESS)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    S = argparse.SUPPRESS

    f = sub.add_parser("fractal", help="fractal values of a longitudinal level CSV")
    f.add_argument("--input", default=S, help="CSV with columns position_m, level_mm")
    f.add_argument("--output", default=S, help="output CSV (window_start_m, fv_short, fv_mid, fv_long)")
    f.add_argument("--shift", type=float, default=S, help="window shift in metres")

    s = sub.add_parser("simulate", help="simulate a condition dataset")
    s.add_argument("--seed", type=int, default=S)
    s.add_argument("--n-series", dest="n_series", type=int, default=S)
    s.add_argument("--length", type=int, default=S, help="observations per series")
    s.add_argument("--output", default=S)
    s.add_argument("--source", choices=["benchmark", "prior", "ensemble", "params"], default=S)
    s.add_argument("--ensemble", default=S, help="ensemble file for --source ensemble")
    s.add_argument("--index", type=int, default=S, help="sample index for --source ensemble")
    s.add_argument("--params", default=S, help="JSON parameter file for --source params")
    s.add_argument("--behavior", choices=["default", "never"], default=S)

    i = sub.add_parser("infer", help="sample the posterior ensemble from a dataset")
    i.add_argument("--dataset", default=S)
    i.add_argument("--priors", default=S, help="YAML/JSON prior overrides")
    i.add_argument("--chains", type=int, default=S)
    i.add_argument("--burnin", type=int, default=S)
    i.add_argument("--samples", type=int, default=S)
    i.add_argument("--seed", type=int, default=S)
    i.add_argument("--n-states", dest="n_states", type=int, default=S)
    i.add_argument("--n-actions", dest="n_actions", type=int, default=S)
    i.add_argument("--output", default=S)
    i.add_argument("--diagnostics", default=S, help="diagnostics JSON path")

    v = sub.add_parser("solve", help="robust MDP policy of an ensemble")
    v.add_argument("--ensemble", default=S)
    v.add_argument("--horizon", default=S, help="integer or 'inf'")
    v.add_argument("--gamma", type=float, default=S)
    v.add_argument("--tol", type=float, default=S)
    v.add_argument("--output-dir", dest="output_dir", default=S)

    q = sub.add_parser("plan", help="run robust Q_MDP episodes and write belief traces")
    q.add_argument("--ensemble", default=S)
    q.add_argument("--true-index", dest="true_index", type=int, default=S)
    q.add_argument("--true-percentile", dest="true_percentile", type=float, default=S)
    q.add_argument("--true-prior-seed", dest="true_prior_seed", type=int, default=S)
    q.add_argument("--horizon", type=int, default=S)
    q.add_argument("--gamma", type=float, default=S)
    q.add_argument("--replicates", type=int, default=S)
    q.add_argument("--planning-size", dest="planning_size", type=int, default=S)
    q.add_argument("--seed", type=int, default=S)
    q.add_argument("--trace", default=S)

    e = sub.add_parser("evaluate", help="compare the policy roster on common random numbers")
    e.add_argument("--ensemble", default=S)
    e.add_argument("--n-sims", dest="n_sims", type=int, default=S)
    e.add_argument("--horizon", type=int, default=S)
    e.add_argument("--gamma", type=float, default=S)
    e.add_argument("--planning-size", dest="planning_size", type=int, default=S)
    e.add_argument("--percentiles", default=S, help="comma-separated, 0-100")
    e.add_argument("--include-mdp", dest="include_mdp", action="store_true", default=S)
    e.add_argument("--discounted", action="store_true", default=S)
    e.add_argument("--interval", choices=["hdi", "equal-tailed"], default=S)
    e.add_argument("--seed", type=int, default=S)
    e.add_argument("--output-csv", dest="output_csv", default=S)
    e.add_argument("--output-json", dest="output_json", default=S)
    return p


def resolve_config(command, flags, environ=None, config_path=None):
    """Merge defaults, config file, environment and flags for ``command``."""
    environ = os.environ if environ is None else environ
    allowed = set(DEFAULTS[command]) | GLOBAL_KEYS
    cfg = dict(DEFAULTS[command])
    cfg.setdefault("log_level", "INFO")
    if config_path:
        try:
            with open(config_path) as fh:
                data = yaml.safe_load(fh) or {}
        except OSError as exc:
            raise UsageError(f"cannot read config file: {exc}") from None
        except yaml.YAMLError as exc:
            raise UsageError(f"config file is not valid YAML: {exc}") from None
        if not isinstance(data, dict):
            raise UsageError("config file must hold a mapping")
        if "subcommand" in data and isinstance(data.get("config"), dict):
            # a run manifest: replay its resolved settings
            if data["subcommand"] != command:
                raise UsageError(
                    f"manifest was written by {data['subcommand']!r}, not {command!r}"
                )
            data = {command: data["config"]}
        section = data.get(command) or {}
        top = {k: v for k, v in data.items() if k in GLOBAL_KEYS}
        unknown = set(section) - allowed
        if unknown:
            raise UsageError(f"unknown keys in config section {command!r}: {sorted(unknown)}")
        cfg.update(top)
        cfg.update(section)
    for key in allowed:
        raw = environ.get(ENV_PREFIX + key.upper())
        if raw is not None:
            cfg[key] = yaml.safe_load(raw)
    cfg.update(flags)
    return cfg


def _need(cfg, *keys):
    for k in keys:
        if cfg.get(k) in (None, ""):
            raise UsageError(f"missing required setting {k!r}")


def _versions():
    import scipy
    import sklearn

    from . import __version__

    return {
        "robmaint": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "scikit-learn": sklearn.__version__,
    }


def _write_manifest(command, cfg, outputs, argv):
    if not outputs:
        return None
    path = f"{outputs[0]}.manifest.json"
    manifest = {
        "subcommand": command,
        "argv": list(argv),
        "config": cfg,
        "seed": cfg.get("seed"),
        "outputs": list(outputs),
        "versions": _versions(),
    }
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
    return path


# ---------------------------------------------------------------------------
# subcommands


def _cmd_fractal(cfg):
    from .fractal import read_level_csv, sliding_fractal, write_fractal_csv

    _need(cfg, "input", "output")
    signal = read_level_csv(cfg["input"])
    triples = sliding_fractal(signal, float(cfg["shift"]))
    write_fractal_csv(cfg["output"], triples)
    logger.info("fractal values written", extra={"n_windows": len(triples), "path": cfg["output"]})
    return [cfg["output"]]


def _load_params(path):
    from .model import ModelSample

    with open(path) as fh:
        return ModelSample.from_dict(yaml.safe_load(fh))


def _cmd_simulate(cfg):
    from .benchmarks import benchmark_sample
    from .model import ModelSample, PriorConfig, load_ensemble, validate, write_dataset_csv
    from .simulator import generate_dataset

    rng = np.random.default_rng(int(cfg["seed"]))
    source = cfg["source"]
    if source == "benchmark":
        sample = benchmark_sample()
    elif source == "prior":
        sample = ModelSample.from_prior(PriorConfig.default(), rng)
    elif source == "ensemble":
        _need(cfg, "ensemble")
        sample = load_ensemble(cfg["ensemble"])[int(cfg["index"])]
    elif source == "params":
        _need(cfg, "params")
        sample = _load_params(cfg["params"])
    else:
        raise UsageError(f"unknown parameter source {source!r}")
    problems = validate(sample)
    if problems:
        raise UsageError("invalid parameters: " + "; ".join(problems))
    ds = generate_dataset(sample, int(cfg["n_series"]), int(cfg["length"]), cfg["behavior"], rng)
    write_dataset_csv(cfg["output"], ds)
    params_path = f"{cfg['output']}.params.json"
    with open(params_path, "w") as fh:
        json.dump(sample.to_dict(), fh, indent=2, sort_keys=True, default=str)
    logger.info("dataset written", extra={"n_series": len(ds), "path": cfg["output"]})
    return [cfg["output"], params_path]


def _cmd_infer(cfg):
    from .inference import McmcConfig, run_mcmc
    from .model import PomdpModel, PriorConfig, read_dataset_csv, save_ensemble

    _need(cfg, "dataset", "output")
    model = PomdpModel(n_states=int(cfg["n_states"]), n_actions=int(cfg["n_actions"]))
    ds = read_dataset_csv(cfg["dataset"], n_actions=model.n_actions)
    if cfg.get("priors"):
        with open(cfg["priors"]) as fh:
            priors = PriorConfig.from_dict(yaml.safe_load(fh) or {}, model.n_states, model.n_actions)
    else:
        priors = PriorConfig.default(model.n_states, model.n_actions)
    mcfg = McmcConfig(
        n_chains=int(cfg["chains"]),
        n_burnin=int(cfg["burnin"]),
        n_samples=int(cfg["samples"]),
        seed=int(cfg["seed"]),
    )
    t0 = time.perf_counter()
    ens, diag = run_mcmc(ds, model, priors, mcfg)
    save_ensemble(cfg["output"], ens)
    outputs = [cfg["output"]]
    diag_path = cfg.get("diagnostics") or f"{cfg['output']}.diagnostics.json"
    with open(diag_path, "w") as fh:
        json.dump(diag.as_dict(), fh, indent=2, sort_keys=True)
    outputs.append(diag_path)
    logger.info(
        "posterior sampled",
        extra={
            "n_samples": len(ens),
            "max_rhat": diag.max_rhat,
            "seconds": round(time.perf_counter() - t0, 2),
        },
    )
    return outputs


def _horizon(value):
    if value in (None, "inf", "infinite", float("inf")):
        return None
    h = int(value)
    if h < 1:
        raise UsageError("horizon must be a positive integer or 'inf'")
    return h


def _cmd_solve(cfg):
    from .mdp_solver import mean_parameter_policy, optimality_counts, solve_ensemble
    from .model import PomdpModel, load_ensemble

    _need(cfg, "ensemble")
    ens = load_ensemble(cfg["ensemble"])
    H = _horizon(cfg["horizon"])
    model = PomdpModel(ens.n_states, ens.n_actions, gamma=float(cfg["gamma"]), horizon=H)
    q = solve_ensemble(ens, model, float(cfg["tol"]))
    out_dir = cfg["output_dir"]
    os.makedirs(out_dir, exist_ok=True)
    policy_path = os.path.join(out_dir, "policy.json")
    q0 = q.at(0)
    with open(policy_path, "w") as fh:
        json.dump(
            {
                "horizon": H,
                "gamma": model.gamma,
                "robust_policy": q.robust_policy().tolist(),
                "posterior_mean_policy": mean_parameter_policy(ens, model, float(cfg["tol"])).tolist(),
                "n_samples": len(ens),
            },
            fh,
            indent=2,
            sort_keys=True,
        )
    stats_path = os.path.join(out_dir, "q_stats.csv")
    with open(stats_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["state", "action", "q_mean", "q_sd", "q_p2_5", "q_p97_5"])
        for s in range(ens.n_states):
            for a in range(ens.n_actions):
                v = q0[:, s, a]
                lo, hi = np.quantile(v, [0.025, 0.975])
                sd = float(v.std(ddof=1)) if v.size > 1 else 0.0
                w.writerow([s, a, repr(float(v.mean())), repr(sd), repr(float(lo)), repr(float(hi))])
    counts_path = os.path.join(out_dir, "optimality_counts.csv")
    counts = optimality_counts(q)
    with open(counts_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["state"] + [f"a{a}" for a in range(ens.n_actions)])
        for s, row in enumerate(counts):
            w.writerow([s] + row.tolist())
    logger.info("policy solved", extra={"robust_policy": q.robust_policy().tolist()})
    return [policy_path, stats_path, counts_path]


def _true_sample(cfg, ens):
    from .evaluation import percentile_samples
    from .model import ModelSample, PriorConfig

    chosen = [k for k in ("true_index", "true_percentile", "true_prior_seed") if cfg.get(k) is not None]
    if len(chosen) > 1:
        raise UsageError(f"choose at most one true-environment selector, got {chosen}")
    if cfg.get("true_percentile") is not None:
        return percentile_samples(ens, [float(cfg["true_percentile"])])[0]
    if cfg.get("true_prior_seed") is not None:
        prior = PriorConfig.default(ens.n_states, ens.n_actions)
        return ModelSample.from_prior(prior, int(cfg["true_prior_seed"]))
    return ens[int(cfg.get("true_index") or 0)]


def _cmd_plan(cfg):
    from .mdp_solver import solve_ensemble
    from .model import PomdpModel, load_ensemble
    from .pomdp_planner import QMDPPolicy
    from .simulator import CommonRandomNumbers, simulate_batch

    _need(cfg, "ensemble", "trace")
    ens = load_ensemble(cfg["ensemble"])
    rng = np.random.default_rng(int(cfg["seed"]))
    truth = _true_sample(cfg, ens)
    H = int(cfg["horizon"])
    model = PomdpModel(ens.n_states, ens.n_actions, gamma=float(cfg["gamma"]), horizon=H)
    size = cfg.get("planning_size")
    planning = ens
    if size is not None and int(size) < len(ens):
        planning = ens.subset(np.sort(rng.choice(len(ens), int(size), replace=False)))
    policy = QMDPPolicy(planning, solve_ensemble(planning, model), record=True)
    n = int(cfg["replicates"])
    batch = simulate_batch(policy, truth, model, H, CommonRandomNumbers.draw(rng, n, H))
    beliefs = np.stack(policy.history, axis=1).mean(axis=2)  # (n, H + 1, S)
    S = ens.n_states
    with open(cfg["trace"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["replicate", "t", "z"] + [f"belief_s{s}" for s in range(S)] + ["action", "true_state"])
        for r in range(n):
            for t in range(H + 1):
                action = int(batch.actions[r, t]) if t < H else ""
                w.writerow(
                    [r, t, repr(float(batch.observations[r, t]))]
                    + [repr(float(b)) for b in beliefs[r, t]]
                    + [action, int(batch.states[r, t])]
                )
    logger.info(
        "episodes planned",
        extra={"replicates": n, "mean_total": float(batch.totals().mean()), "floored": int(policy.floored.sum())},
    )
    return [cfg["trace"]]


def _cmd_evaluate(cfg):
    from .evaluation import compare_policies
    from .model import PomdpModel, load_ensemble

    _need(cfg, "ensemble", "output_csv")
    ens = load_ensemble(cfg["ensemble"])
    H = int(cfg["horizon"])
    model = PomdpModel(ens.n_states, ens.n_actions, gamma=float(cfg["gamma"]), horizon=H)
    pct = cfg["percentiles"]
    if isinstance(pct, str):
        pct = [float(x) for x in pct.split(",") if x.strip()]
    report = compare_policies(
        ens,
        model,
        H,
        int(cfg["n_sims"]),
        int(cfg["seed"]),
        planning_size=cfg.get("planning_size"),
        percentiles=pct,
        include_mdp=bool(cfg["include_mdp"]),
        discounted=bool(cfg["discounted"]),
        interval=cfg["interval"],
    )
    report.to_csv(cfg["output_csv"])
    outputs = [cfg["output_csv"]]
    json_path = cfg.get("output_json") or f"{cfg['output_csv']}.report.json"
    report.to_json(json_path)
    outputs.append(json_path)
    logger.info("policies evaluated", extra={"n_policies": len(report.stats)})
    return outputs


COMMANDS = {
    "fractal": _cmd_fractal,
    "simulate": _cmd_simulate,
    "infer": _cmd_infer,
    "solve": _cmd_solve,
    "plan": _cmd_plan,
    "evaluate": _cmd_evaluate,
}


def dispatch(argv=None, environ=None):
    """Run one subcommand; returns the process exit code."""
    from .fractal import LevelSignal  # noqa: F401  (fail fast on broken installs)
    from .model import DatasetParseError

    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    flags = {k: v for k, v in vars(ns).items() if k not in ("command", "config")}
    try:
        cfg = resolve_config(ns.command, flags, environ, ns.config)
        _configure_logging(ns.command, str(cfg.get("log_level", "INFO")))
    except (UsageError, ValueError) as exc:
        sys.stderr.write(f"robmaint {ns.command}: error: {exc}\n")
        return EXIT_INVALID
    try:
        outputs = COMMANDS[ns.command](cfg)
        _write_manifest(ns.command, cfg, outputs, argv)
    except (UsageError, DatasetParseError, FileNotFoundError) as exc:
        logger.error(str(exc), extra={"kind": type(exc).__name__})
        return EXIT_INVALID
    except ValueError as exc:
        logger.error(str(exc), extra={"kind": type(exc).__name__})
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001
        logger.error(str(exc), extra={"kind": type(exc).__name__})
        return EXIT_RUNTIME
    return EXIT_OK


def main():
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
