"""``ope-lab`` command line: experiment harness and thin solver adapters.

Subcommands: ``bias``, ``beps``, ``gmm``, ``game``, ``design``, ``power``.
Settings resolve as defaults < ``--config`` file (``key = value`` lines,
``#`` comments) < command-line flags. Exit codes: 0 success, 2 bad
configuration or input, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Optional

import numpy as np

from . import io as fmt
from .game import LPError, solve_zero_sum
from .inference import SingularCovarianceError, efficient_design, sample_size
from .ingest import LibsvmParseError, load_libsvm, standardize
from .models import RidgeRewardModel
from .multilogger import GMM_COLUMNS, gmm_experiment
from .selection import CRITERIA, ESTIMATORS, beps_experiment
from .synthetic import SyntheticSpec, bias_experiment, classification_corpus

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


class ConfigError(ValueError):
    pass


def _int_list(text) -> list[int]:
    return [int(v) for v in _split(text)]


def _float_list(text) -> list[float]:
    return [float(v) for v in _split(text)]


def _str_list(text) -> list[str]:
    return [v.strip() for v in _split(text)]


def _split(text) -> list:
    if isinstance(text, (list, tuple)):
        return list(text)
    return [v for v in str(text).split(",") if v.strip()]


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


REQUIRED = object()

# option name -> (converter, default, help)
OPTIONS: dict[str, dict[str, tuple[Callable, object, str]]] = {
    "bias": {
        "t1": (_int_list, [100, 1000], "training-sample sizes, one case each"),
        "t2": (int, 10000, "size of the truth sample"),
        "t3": (_int_list, None, "independent-sample sizes (default: same as t1)"),
        "reps": (int, 1000, "replications per case"),
        "l2": (float, 0.01, "penalty of the evaluation-policy learner"),
        "policy": (str, "logistic", "logistic or uniform"),
    },
    "beps": {
        "mode": (str, "ope2d", "ope2d, isope or opcv"),
        "data": (str, "synth", "LIBSVM path or 'synth'"),
        "alphas": (_float_list, [0.7, 0.4, 0.0], "behavior mixture weights"),
        "reps": (int, 100, "replications"),
        "sizes": (_int_list, None, "split sizes (4 for ope2d/isope, 3 for opcv)"),
        "oracle_table": (_bool, False, "use true values as every estimate"),
        "estimators": (_str_list, list(ESTIMATORS), "estimators forming the table"),
        "criteria": (_str_list, list(CRITERIA), "criteria to report"),
        "n_samples": (int, 5000, "synthetic corpus size"),
        "n_classes": (int, 5, "synthetic corpus classes"),
        "dim": (int, 20, "synthetic corpus dimension"),
        "corpus_seed": (int, 0, "seed of the synthetic corpus"),
    },
    "gmm": {
        "t_a": (int, 2000, "size of stratum A"),
        "t_b": (int, 2000, "size of stratum B"),
        "reps": (int, 300, "replications"),
        "policy_a": (_float_list, [0.7, 0.2, 0.1], "context-free behavior of logger A"),
        "policy_b": (_float_list, [1 / 3, 1 / 3, 1 / 3], "context-free behavior of logger B"),
        "evaluation": (_float_list, [1 / 6, 2 / 6, 3 / 6], "context-free evaluation policy"),
        "lam": (float, 1.0, "ridge penalty of the reward model"),
        "truth_samples": (int, 200000, "covariates used for the true value"),
    },
    "game": {
        "payoff": (str, REQUIRED, "payoff CSV (L rows x E columns)"),
    },
    "design": {
        "nu": (str, REQUIRED, "conditional-variance CSV, one row per covariate point"),
        "policies": (str, REQUIRED, "CSV of context-free evaluation policies, one per row"),
        "f": (str, None, "conditional-mean CSV shaped like nu (default zeros)"),
        "floor": (float, 0.01, "lower bound on every behavior probability"),
        "iterations": (int, 2000, "subgradient iterations"),
    },
    "power": {
        "sigma2": (float, REQUIRED, "largest asymptotic variance"),
        "delta": (float, REQUIRED, "detectable difference"),
        "alpha": (float, 0.05, "type I error"),
        "beta": (float, 0.8, "power"),
    },
}


def read_config_file(path: str) -> dict[str, str]:
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            key, sep, value = text.partition("=")
            if not sep:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            out[key.strip().replace("-", "_")] = value.strip()
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ope-lab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, opts in OPTIONS.items():
        p = sub.add_parser(name)
        p.add_argument("--seed", default=None, help="master seed (default 0)")
        p.add_argument("--config", default=None, help="key = value settings file")
        p.add_argument("--output", "-o", default=None, help="output path (default stdout)")
        p.add_argument("--json", action="store_true", help="emit JSON records instead of CSV")
        for key, (_, _, help_text) in opts.items():
            p.add_argument("--" + key.replace("_", "-"), dest=key, default=None, help=help_text)
    return parser


def resolve(command: str, args: argparse.Namespace) -> dict:
    opts = OPTIONS[command]
    raw: dict = {"seed": 0}
    raw.update({k: default for k, (_, default, _) in opts.items()})
    if args.config:
        try:
            from_file = read_config_file(args.config)
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from None
        unknown = set(from_file) - set(opts) - {"seed"}
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        raw.update(from_file)
    for key in list(opts) + ["seed"]:
        value = getattr(args, key, None)
        if value is not None:
            raw[key] = value
    config = {}
    for key, value in raw.items():
        conv = int if key == "seed" else opts[key][0]
        if value is REQUIRED:
            raise ConfigError(f"--{key.replace('_', '-')} is required")
        if value is None:
            config[key] = None
            continue
        try:
            config[key] = conv(value)
        except (TypeError, ValueError):
            raise ConfigError(f"invalid value for {key}: {value!r}") from None
    return config


def _positive(config: dict, *keys: str) -> None:
    for key in keys:
        values = config[key] if isinstance(config[key], list) else [config[key]]
        if not values or any(v <= 0 for v in values):
            raise ConfigError(f"{key} must be positive")


def _mapper():
    try:
        workers = int(os.environ.get("OPE_LAB_THREADS", "1"))
    except ValueError:
        raise ConfigError("OPE_LAB_THREADS must be an integer") from None
    workers = max(1, min(workers, os.cpu_count() or 1))
    if workers == 1:
        return map, None
    pool = ThreadPoolExecutor(max_workers=workers)
    return pool.map, pool


def cmd_bias(config: dict):
    _positive(config, "t1", "t2", "reps")
    t3 = config["t3"] if config["t3"] is not None else list(config["t1"])
    config["t3"] = t3
    _positive(config, "t3")
    if len(t3) != len(config["t1"]):
        raise ConfigError("t1 and t3 must list the same number of cases")
    if config["policy"] not in ("logistic", "uniform"):
        raise ConfigError("policy must be 'logistic' or 'uniform'")
    spec = SyntheticSpec(seed=config["seed"])
    rows, summary = [], []
    mapper, pool = _mapper()
    try:
        for case, (t1, t3_) in enumerate(zip(config["t1"], t3), start=1):
            table = bias_experiment(spec, t1, config["t2"], t3_, config["reps"],
                                    config["seed"] * 1000 + case, config["policy"], config["l2"], mapper)
            for r in range(config["reps"]):
                rows.append([case, t1, config["t2"], t3_, r, table.error1[r], table.error2[r]])
            s = table.summary()
            summary.append(
                f"case {case} (t1={t1}, t3={t3_}): error1 mean {s['error1']['mean']:.5f} "
                f"sd {s['error1']['sd']:.5f}; error2 mean {s['error2']['mean']:.5f} sd {s['error2']['sd']:.5f}"
            )
    finally:
        if pool is not None:
            pool.shutdown()
    header = ["case", "t1", "t2", "t3", "rep", "error1", "error2"]
    return header, rows, summary


def cmd_beps(config: dict):
    if config["mode"] not in ("ope2d", "isope", "opcv"):
        raise ConfigError("mode must be ope2d, isope or opcv")
    _positive(config, "reps", "n_samples", "n_classes", "dim")
    if any(not 0.0 <= a <= 1.0 for a in config["alphas"]):
        raise ConfigError("alphas must lie in [0, 1]")
    if config["sizes"] is not None:
        _positive(config, "sizes")
        need = 3 if config["mode"] == "opcv" else 4
        if len(config["sizes"]) != need:
            raise ConfigError(f"sizes needs {need} entries for mode {config['mode']}")
    for name in config["estimators"]:
        if name not in ESTIMATORS:
            raise ConfigError(f"unknown estimator {name!r}")
    for name in config["criteria"]:
        if name not in CRITERIA:
            raise ConfigError(f"unknown criterion {name!r}")
    if config["data"] == "synth":
        data = classification_corpus(config["n_samples"], config["n_classes"], config["dim"],
                                     config["corpus_seed"])
    else:
        try:
            data = load_libsvm(config["data"])
        except OSError as exc:
            raise ConfigError(f"cannot read data file: {exc}") from None
    data, _ = standardize(data)
    mapper, pool = _mapper()
    try:
        result = beps_experiment(data, config["mode"], config["alphas"], config["reps"], config["seed"],
                                 estimators=config["estimators"], criteria=config["criteria"],
                                 sizes=config["sizes"], oracle=config["oracle_table"], mapper=mapper)
    finally:
        if pool is not None:
            pool.shutdown()
    header = ["alpha"]
    for c in result.criteria:
        header += [f"{c} mean", f"{c} sd"]
    rows = []
    mean, sd = result.mean(), result.sd()
    for i, alpha in enumerate(result.alphas):
        row = [alpha]
        for j in range(len(result.criteria)):
            row += [mean[i, j], sd[i, j]]
        rows.append(row)
    summary = [f"alpha {a}: random-selection regret mean {result.random_regrets[i].mean():.5f}"
               for i, a in enumerate(result.alphas)]
    return header, rows, summary


def cmd_gmm(config: dict):
    if config["t_a"] < 4 or config["t_b"] < 4:
        raise ConfigError("stratum sizes must be at least 4")
    _positive(config, "reps", "lam", "truth_samples")
    vectors = {}
    for key in ("policy_a", "policy_b", "evaluation"):
        v = np.asarray(config[key], dtype=float)
        if v.shape != (3,) or np.any(v < 0) or abs(v.sum() - 1.0) > 1e-6:
            raise ConfigError(f"{key} must be 3 probabilities summing to 1")
        vectors[key] = v / v.sum()
    mapper, pool = _mapper()
    try:
        study = gmm_experiment(SyntheticSpec(seed=config["seed"]), config["t_a"], config["t_b"],
                               vectors["policy_a"], vectors["policy_b"], vectors["evaluation"],
                               config["reps"], config["seed"], RidgeRewardModel(lam=config["lam"]),
                               config["truth_samples"], mapper)
    finally:
        if pool is not None:
            pool.shutdown()
    rmse, sd, mean = study.rmse(), study.sd(), study.estimates.mean(axis=0)
    rows = [[name, rmse[i], sd[i], mean[i], study.truth] for i, name in enumerate(GMM_COLUMNS)]
    return ["estimator", "rmse", "sd", "mean", "truth"], rows, []


def _read_matrix(path: str) -> np.ndarray:
    try:
        data = fmt.read_matrix_csv(path)[1]
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not np.all(np.isfinite(data)):
        raise ConfigError(f"{path}: entries must be finite")
    return data


def cmd_game(config: dict):
    C = _read_matrix(config["payoff"])
    sol = solve_zero_sum(C)
    rows = [[f"p{i + 1}", v] for i, v in enumerate(sol.p_star)]
    rows += [[f"w{j + 1}", v] for j, v in enumerate(sol.w_star)]
    rows.append(["z", sol.value])
    return ["name", "value"], rows, []


def cmd_design(config: dict):
    nu = _read_matrix(config["nu"])
    policies = _read_matrix(config["policies"])
    f = np.zeros_like(nu) if config["f"] is None else _read_matrix(config["f"])
    if f.shape != nu.shape:
        raise ConfigError("f and nu must have the same shape")
    if policies.shape[1] != nu.shape[1]:
        raise ConfigError("policies and nu must have the same number of actions")
    if not 0 <= config["floor"] < 1.0 / nu.shape[1]:
        raise ConfigError("floor must lie in [0, 1/K)")
    mats = [np.tile(row, (nu.shape[0], 1)) for row in policies]
    res = efficient_design(mats, f, nu, config["floor"], config["iterations"])
    rows = [[f"b{a + 1}", v] for a, v in enumerate(res.behavior)]
    rows += [["bound", res.bound], ["uniform_bound", res.uniform_bound]]
    return ["name", "value"], rows, []


def cmd_power(config: dict):
    c = config
    try:
        t = sample_size(c["sigma2"], c["delta"], c["alpha"], c["beta"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return ["sigma2", "delta", "alpha", "beta", "T"], [[c["sigma2"], c["delta"], c["alpha"], c["beta"], t]], []


COMMANDS = {
    "bias": cmd_bias,
    "beps": cmd_beps,
    "gmm": cmd_gmm,
    "game": cmd_game,
    "design": cmd_design,
    "power": cmd_power,
}


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = resolve(args.command, args)
        header, rows, summary = COMMANDS[args.command](config)
    except (LPError, SingularCovarianceError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"ope-lab {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, LibsvmParseError) as exc:
        print(f"ope-lab {args.command}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"ope-lab {args.command}: invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    text = fmt.render_table(header, rows, config, as_json=args.json)
    if args.output:
        with open(args.output, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    for line in summary:
        print(line, file=sys.stderr)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
