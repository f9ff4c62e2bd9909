"""Command-line front end.

Every command reads one JSON config (``--config``) merged over built-in
defaults, then applies ``--set section.key=value`` overrides (values are
parsed as JSON, falling back to plain strings). Alongside its outputs each
command writes ``<output>.manifest.json`` holding the resolved config,
the derived seeds and output checksums; passing that manifest back as
``--config`` replays the command.

Exit codes: 0 success, 2 config error, 3 accountant rejection, 4 solver
failure, 5 I/O or data-format error.
"""

import argparse
import copy
import csv
import hashlib
import io
import json
import logging
import math
import os
import sys
from dataclasses import fields
from types import SimpleNamespace

import numpy as np

from .accountant import CSV_COLUMNS, format_plan_table, make_plan, min_epsilon, plan_rows
from .core import LOGISTIC, PenaltySpec
from .data import SynthSpec, load_csv, read_dataset, synth_generate, train_test_split, write_dataset
from .evaluation import ExperimentGrid, evaluate, run_experiment, run_seeds
from .exceptions import ConfigError, DataFormatError, PrivacyBudgetError, SolverDivergenceError
from .solver import SolverConfig, run_dpsc

logger = logging.getLogger("dpsc")

COMMANDS = ("generate", "train", "accountant", "experiment", "metrics")
EXIT_OK, EXIT_CONFIG, EXIT_ACCOUNTANT, EXIT_SOLVER, EXIT_IO = 0, 2, 3, 4, 5
MANIFEST_SUFFIX = ".manifest.json"

DEFAULTS = {
    "command": None,
    "master_seed": 0,
    "synth": {"n": 11000, "p": 100, "rho": 0.5, "true_w": None, "seed": None,
              "label_mode": "threshold"},
    "csv": {"schema": None},
    "solver": {f.name: f.default for f in fields(SolverConfig)},
    "penalty": {"kind": "l1", "lam": 0.01, "mu": 1e-4, "reweight_steps": 5},
    "privacy": {"epsilon": None, "gamma": None},
    "train": {"test_n": 0, "split_seed": None},
    "accountant": {"n": 10000, "epsilons": [], "gammas": []},
    "grid": {"epsilons": [0.1, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 4.0], "sizes": [10000],
             "repeats": 50, "lambda_policy": "cv5_nonprivate_then_reuse",
             "lambdas": [0.001, 0.003, 0.01, 0.03, 0.1], "test_n": 1000,
             "algorithms": ["LLA", "LHA", "DPLL", "DPLH"], "support_threshold": 1e-6,
             "n_jobs": 1},
    "paths": {"dataset": None, "csv": None, "model": None, "trace": None, "output": None,
              "cache": None, "runs": None},
}

# output path each command anchors its manifest to
_REQUIRED_PATHS = {
    "generate": ("dataset",),
    "train": ("dataset", "model"),
    "accountant": ("output",),
    "experiment": ("output",),
    "metrics": ("dataset", "model", "output"),
}
_MANIFEST_ANCHOR = {"generate": "dataset", "train": "model", "accountant": "output",
                    "experiment": "output", "metrics": "output"}


# --- config ---------------------------------------------------------------------

def _merge(base, update, where=""):
    out = copy.deepcopy(base)
    for key, val in update.items():
        path = f"{where}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {path!r}")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"config key {path!r} must be a section")
            out[key] = _merge(base[key], val, path + ".")
        else:
            out[key] = val
    return out


def parse_override(text):
    """``"a.b=value"`` -> (["a", "b"], value); ``value`` parsed as JSON when possible."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    try:
        val = json.loads(raw)
    except json.JSONDecodeError:
        val = raw
    return key.strip().split("."), val


def apply_override(cfg, keys, val):
    node = cfg
    for k in keys[:-1]:
        if not isinstance(node.get(k), dict):
            raise ConfigError(f"unknown config section {'.'.join(keys)!r}")
        node = node[k]
    if keys[-1] not in node or isinstance(node[keys[-1]], dict):
        raise ConfigError(f"unknown config key {'.'.join(keys)!r}")
    node[keys[-1]] = val


def load_config(command, path=None, overrides=()):
    """Resolve a run config: defaults, then the file, then overrides.

    ``path`` may be a plain config or a manifest written by a previous run,
    whose ``config`` entry is used.
    """
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                user = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(user, dict):
            raise ConfigError(f"{path}: top level must be an object")
        if "config" in user and "seeds" in user:
            user = user["config"]
        cfg = _merge(cfg, user)
    for text in overrides:
        apply_override(cfg, *parse_override(text))
    if cfg["command"] not in (None, command):
        raise ConfigError(f"config was written for {cfg['command']!r}, not {command!r}")
    cfg["command"] = command
    for name in _REQUIRED_PATHS[command]:
        if not cfg["paths"][name]:
            raise ConfigError(f"'{command}' needs paths.{name}")
    return cfg


def dump_config(cfg):
    return json.dumps(cfg, indent=2, sort_keys=True)


def _solver_config(cfg, **over):
    try:
        return SolverConfig(**dict(cfg["solver"], **over))
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def _synth_spec(cfg):
    d = dict(cfg["synth"])
    if d["seed"] is None:
        d["seed"] = cfg["master_seed"]
    return SynthSpec(**d)


def _penalty(cfg):
    return PenaltySpec(**cfg["penalty"])


# --- output helpers -----------------------------------------------------------------

def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_text(path, text):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _write_json(path, obj):
    _write_text(path, json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n")


def manifest_path(cfg):
    return cfg["paths"][_MANIFEST_ANCHOR[cfg["command"]]] + MANIFEST_SUFFIX


def write_manifest(cfg, seeds, outputs):
    manifest = {
        "config": cfg,
        "seeds": seeds,
        "outputs": {os.path.basename(p): _sha256(p) for p in outputs},
    }
    path = manifest_path(cfg)
    _write_json(path, manifest)
    return path


def _floats(a):
    return [float(v) for v in np.asarray(a).ravel()]


# --- commands -----------------------------------------------------------------

def cmd_generate(cfg):
    out = cfg["paths"]["dataset"]
    if cfg["paths"]["csv"]:
        if cfg["csv"]["schema"] is None:
            raise ConfigError("ingesting paths.csv needs csv.schema")
        data, report, _ = load_csv(cfg["paths"]["csv"], cfg["csv"]["schema"])
        meta = {"source": os.path.basename(cfg["paths"]["csv"]),
                "feature_names": report.feature_names, "column_scales": report.column_scales,
                "rows_capped": report.rows_capped}
        seeds = {}
    else:
        spec = _synth_spec(cfg)
        data, true_w = synth_generate(spec)
        meta = {"spec": spec.to_dict(), "seed": spec.seed, "true_w": _floats(true_w)}
        seeds = {"data": spec.seed}
    write_dataset(out, data, meta)
    logger.info("wrote %s (n=%d, p=%d)", out, data.n, data.p)
    write_manifest(cfg, seeds, [out])
    return EXIT_OK


def _plan(cfg, n):
    solver = cfg["solver"]
    eps, gamma = cfg["privacy"]["epsilon"], cfg["privacy"]["gamma"]
    if solver["noise_mode"] == "off":
        return None
    if eps is None and gamma is None:
        raise ConfigError("a private run needs privacy.epsilon or privacy.gamma")
    plan = make_plan(solver["K"], solver["c"], n, epsilon=eps, gamma=gamma if eps is None else None)
    return plan.require_valid()


def cmd_train(cfg):
    paths = cfg["paths"]
    data, meta = read_dataset(paths["dataset"])
    test = None
    seeds = {"solver": cfg["solver"]["seed"]}
    if cfg["train"]["test_n"]:
        split_seed = cfg["train"]["split_seed"]
        if split_seed is None:
            split_seed = cfg["master_seed"]
        data, test = train_test_split(data, cfg["train"]["test_n"], split_seed)
        seeds["split"] = split_seed
    config = _solver_config(cfg)
    plan = _plan(cfg, data.n)
    penalty = _penalty(cfg)
    result = run_dpsc(data, LOGISTIC, penalty, config, plan)

    model = {
        "w_final": _floats(result.w_final),
        "z_final": _floats(result.z_final),
        "v_final": _floats(result.v_final),
        "epsilon_spent": result.epsilon_spent,
        "gamma": result.gamma,
        "plan": plan.to_dict() if plan else None,
        "n": data.n,
        "p": data.p,
    }
    if test is not None:
        true_w = np.array(meta["true_w"]) if meta and "true_w" in meta else None
        model["metrics"] = evaluate(result, test, true_w,
                                    cfg["grid"]["support_threshold"]).to_dict()
    outputs = [paths["model"]]
    _write_json(paths["model"], model)
    if paths["trace"]:
        _write_text(paths["trace"], result.trace_csv())
        outputs.append(paths["trace"])
    logger.info("trained on n=%d, epsilon spent %s", data.n, result.epsilon_spent)
    write_manifest(cfg, seeds, outputs)
    return EXIT_OK


def cmd_accountant(cfg):
    acc, solver = cfg["accountant"], cfg["solver"]
    K, c, n = solver["K"], solver["c"], acc["n"]
    if not acc["epsilons"] and not acc["gammas"]:
        raise ConfigError("accountant needs accountant.epsilons or accountant.gammas")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    plans, rejected = [], []
    requests = [("epsilon", e) for e in acc["epsilons"]] + [("gamma", g) for g in acc["gammas"]]
    for kind, val in requests:
        try:
            plan = make_plan(K, c, n, **{kind: val})
        except PrivacyBudgetError as exc:
            rejected.append(str(exc))
            writer.writerow([repr(float(val)), "", "", str(K), repr(float(c)), str(n),
                             repr(LOGISTIC.c1), repr(LOGISTIC.c2), "false",
                             "epsilon below K*2.8c2/(cn)"])
            continue
        plans.append(plan)
        writer.writerows(plan_rows([plan]))
        if not plan.valid:
            rejected.append(plan.reason)
    _write_text(cfg["paths"]["output"], buf.getvalue())
    if plans:
        print(format_plan_table(plans))
    write_manifest(cfg, {}, [cfg["paths"]["output"]])
    if rejected:
        print(f"minimal feasible epsilon: {min_epsilon(K, c, n)!r}", file=sys.stderr)
        for r in rejected:
            print(f"rejected: {r}", file=sys.stderr)
        return EXIT_ACCOUNTANT
    return EXIT_OK


def experiment_grid(cfg):
    g = cfg["grid"]
    synth = _synth_spec(cfg)
    try:
        return ExperimentGrid(
            epsilons=tuple(g["epsilons"]), sizes=tuple(g["sizes"]), repeats=g["repeats"],
            lambda_policy=g["lambda_policy"], lambdas=tuple(g["lambdas"]),
            solver=_solver_config(cfg), synth=synth, test_n=g["test_n"],
            algorithms=tuple(g["algorithms"]), support_threshold=g["support_threshold"],
            mu=cfg["penalty"]["mu"], reweight_steps=cfg["penalty"]["reweight_steps"],
            master_seed=cfg["master_seed"],
        )
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def seed_table(grid):
    """Seeds of every (n, repeat) run, as recorded in experiment manifests."""
    rows = []
    for n in grid.sizes:
        for r in range(grid.repeats):
            rows.append(dict(n=n, repeat=r, **run_seeds(grid, n, r)))
    return rows


def cmd_experiment(cfg):
    paths = cfg["paths"]
    grid = experiment_grid(cfg)
    cache = paths["cache"] or paths["output"] + ".cells"
    result = run_experiment(grid, cache_dir=cache, n_jobs=cfg["grid"]["n_jobs"])
    logger.info("cells computed: %d, loaded from cache: %d",
                result.computed_cells, result.cached_cells)
    outputs = [paths["output"]]
    _write_text(paths["output"], result.to_csv())
    if paths["runs"]:
        _write_text(paths["runs"], result.runs_csv())
        outputs.append(paths["runs"])
    write_manifest(cfg, {"master": cfg["master_seed"], "runs": seed_table(grid)}, outputs)
    if any(not row["valid"] for row in result.rows):
        logger.warning("some cells are infeasible under the accountant (valid=false)")
    return EXIT_OK


def cmd_metrics(cfg):
    paths = cfg["paths"]
    data, meta = read_dataset(paths["dataset"])
    with open(paths["model"], encoding="utf-8") as fh:
        model = json.load(fh)

    fitted = SimpleNamespace(w_final=np.array(model["w_final"], dtype=float),
                             z_final=np.array(model["z_final"], dtype=float))
    if fitted.w_final.shape != (data.p,):
        raise ConfigError(f"model has p={fitted.w_final.size} but dataset has p={data.p}")
    true_w = np.array(meta["true_w"]) if meta and "true_w" in meta else None
    report = evaluate(fitted, data, true_w, cfg["grid"]["support_threshold"]).to_dict()
    report = {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in report.items()}
    _write_json(paths["output"], report)
    print(json.dumps(report, sort_keys=True))
    write_manifest(cfg, {}, [paths["output"]])
    return EXIT_OK


_HANDLERS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "accountant": cmd_accountant,
    "experiment": cmd_experiment,
    "metrics": cmd_metrics,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="dpsc", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "generate": "write a synthetic (or ingested CSV) dataset in the cache format",
        "train": "fit one model and write it with its per-iteration trace",
        "accountant": "convert between epsilon and the noise parameter gamma",
        "experiment": "run a repeated-trial grid and write the results CSV",
        "metrics": "evaluate a model file on a dataset",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("--config", help="JSON config or a manifest from an earlier run")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="override a config value, e.g. solver.alpha=0.5")
        p.add_argument("--print-config", action="store_true",
                       help="print the resolved config and exit")
        p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.command, args.config, args.overrides)
        if args.print_config:
            print(dump_config(cfg))
            return EXIT_OK
        return _HANDLERS[args.command](cfg)
    except PrivacyBudgetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if exc.min_epsilon is not None:
            print(f"minimal feasible epsilon: {exc.min_epsilon!r}", file=sys.stderr)
        return EXIT_ACCOUNTANT
    except SolverDivergenceError as exc:
        print(f"error: {exc} (iteration {exc.iteration})", file=sys.stderr)
        return EXIT_SOLVER
    except DataFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
