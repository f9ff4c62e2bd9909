"""Metrics and the repeated-run experiment harness.

A grid is a set of cells ``(epsilon, n)``. Each cell runs ``repeats``
seeded solves of the four algorithms

* ``LLA``  - L1 logistic regression, no noise
* ``LHA``  - 1/2 quasi-norm logistic regression, no noise
* ``DPLL`` - private L1
* ``DPLH`` - private 1/2 quasi-norm

and averages the held-out metrics. Randomness is keyed so that, within a
repeat, every cell of the same ``n`` sees the same dataset and every
algorithm sees the same noise stream; comparisons across ``epsilon`` and
across algorithms are therefore paired.
"""

import csv
import hashlib
import io
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from joblib import Parallel, delayed
from scipy import stats
from scipy.special import expit

from .accountant import make_plan
from .core import L1, LHALF, LOGISTIC, PenaltySpec
from .data import SynthSpec, synth_generate, train_test_split
from .exceptions import ConfigError, PrivacyBudgetError
from .noise import derive_seed
from .solver import SolverConfig, run_dpsc

logger = logging.getLogger(__name__)

ALGORITHMS = ("LLA", "LHA", "DPLL", "DPLH")
_ALGO_PENALTY = {"LLA": L1, "LHA": LHALF, "DPLL": L1, "DPLH": LHALF}
_PRIVATE = {"DPLL", "DPLH"}
LAMBDA_POLICIES = ("fixed_list", "cv5_nonprivate_then_reuse")
RESULT_COLUMNS = (
    "algorithm", "epsilon", "gamma", "n", "p", "lambda", "K", "c", "alpha", "M", "repeats",
    "ce_mean", "ce_sd", "mse_mean", "mse_sd", "can_mean", "ican_mean", "valid",
    "brier_mean", "brier_sd",
)
RUN_COLUMNS = ("algorithm", "epsilon", "gamma", "n", "lambda", "repeat",
               "ce", "mse", "brier", "can", "ican", "valid")

# seed-derivation domains
_DATA, _SPLIT, _SOLVE, _FOLDS = 0, 1, 2, 3


# --- metrics ------------------------------------------------------------------

def predict_labels(w, X):
    """Sign of ``X @ w`` with ties going to +1."""
    return np.where(np.asarray(X) @ np.asarray(w) >= 0.0, 1.0, -1.0)


def classification_error(w, test):
    """Fraction of ``test`` misclassified by ``sign(<w, x>)`` (0 counts as +1)."""
    if test.n == 0:
        raise ConfigError("empty test set")
    w = np.asarray(w, dtype=float)
    if w.shape != (test.p,):
        raise ConfigError(f"w has shape {w.shape}, test set has p={test.p}")
    return float(np.mean(predict_labels(w, test.features) != test.labels))


def coefficient_mse(w_hat, w_true):
    """``(1/p) ||w_hat - w_true||^2``."""
    w_hat = np.asarray(w_hat, dtype=float)
    w_true = np.asarray(w_true, dtype=float)
    if w_hat.shape != w_true.shape:
        raise ConfigError(f"length mismatch: {w_hat.shape} vs {w_true.shape}")
    d = w_hat - w_true
    return float(d @ d) / d.size


def brier_score(w, data):
    """Mean squared error of the predicted probability of the +1 class."""
    prob = expit(data.features @ np.asarray(w, dtype=float))
    return float(np.mean((prob - (data.labels > 0)) ** 2))


def support_counts(z, w_true, threshold=1e-6):
    """Correctly and incorrectly identified zero coefficients.

    Returns
    -------
    can_zero : int
        Coordinates with ``|z_i| <= threshold`` where ``w_true_i == 0``.
    ican_zero : int
        Coordinates with ``|z_i| <= threshold`` where ``w_true_i != 0``.
    """
    if not threshold >= 0:
        raise ConfigError("threshold must be >= 0")
    z = np.asarray(z, dtype=float)
    w_true = np.asarray(w_true, dtype=float)
    if z.shape != w_true.shape:
        raise ConfigError(f"length mismatch: {z.shape} vs {w_true.shape}")
    zero = np.abs(z) <= threshold
    return int(np.sum(zero & (w_true == 0))), int(np.sum(zero & (w_true != 0)))


@dataclass(frozen=True)
class MetricsReport:
    ce: float
    mse: float
    can_zero: int
    ican_zero: int
    support_threshold: float
    brier: float = math.nan

    def to_dict(self):
        return asdict(self)


def evaluate(result, test, w_true=None, threshold=1e-6):
    """Metrics of a :class:`SolveResult` on held-out data.

    CE and Brier use ``w_final``; support counts use the exactly sparse
    ``z_final``. Without ``w_true`` the coefficient MSE and the support
    counts are NaN / -1.
    """
    ce = classification_error(result.w_final, test)
    brier = brier_score(result.w_final, test)
    if w_true is None:
        return MetricsReport(ce, math.nan, -1, -1, threshold, brier)
    can, ican = support_counts(result.z_final, w_true, threshold)
    return MetricsReport(ce, coefficient_mse(result.w_final, w_true), can, ican, threshold, brier)


# --- statistics ---------------------------------------------------------------

def mean_sd(values):
    """Mean (compensated sum) and sample standard deviation; sd is 0 for one value."""
    vals = [float(v) for v in values]
    if not vals:
        return math.nan, math.nan
    m = math.fsum(vals) / len(vals)
    if len(vals) < 2:
        return m, 0.0
    return m, math.sqrt(math.fsum((v - m) ** 2 for v in vals) / (len(vals) - 1))


def paired_pvalue(a, b, alternative):
    """One-sided paired t-test p-value for ``mean(a - b)``.

    ``alternative`` is ``"greater"`` (a > b) or ``"less"``. Identical
    samples give p = 1 and constant non-zero differences give p = 0 or 1
    by sign, instead of NaN.
    """
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    if d.size < 2 or np.all(d == d[0]):
        m = d.mean() if d.size else 0.0
        if m == 0:
            return 1.0
        return 0.0 if (m > 0) == (alternative == "greater") else 1.0
    return float(stats.ttest_rel(a, b, alternative=alternative).pvalue)


def trend_check(series, direction, level=0.05):
    """Pre-registered trend test on paired samples ordered by a grid variable.

    Parameters
    ----------
    series : list of array-like
        One sample per grid level, in increasing grid order; samples at
        different levels are paired by position.
    direction : {"nonincreasing", "nondecreasing"}
    level : float

    Returns
    -------
    passed : bool
        True when no adjacent step moves significantly against
        ``direction`` and the last level differs significantly from the
        first in ``direction``.
    detail : dict
        ``step_pvalues`` (against-direction p per step) and
        ``overall_pvalue`` (in-direction p, first vs last level).
    """
    if direction not in ("nonincreasing", "nondecreasing"):
        raise ConfigError(f"bad direction {direction!r}")
    against = "greater" if direction == "nonincreasing" else "less"
    along = "less" if direction == "nonincreasing" else "greater"
    steps = [paired_pvalue(series[j + 1], series[j], against) for j in range(len(series) - 1)]
    overall = paired_pvalue(series[-1], series[0], along)
    passed = all(p >= level for p in steps) and overall < level
    return passed, {"step_pvalues": steps, "overall_pvalue": overall,
                    "means": [float(np.mean(s)) for s in series]}


def dominance_check(a, b, level=0.05):
    """``mean(a) >= mean(b)`` unless a paired one-sided test says otherwise."""
    p = paired_pvalue(a, b, "less")
    return p >= level, {"pvalue": p, "mean_a": float(np.mean(a)), "mean_b": float(np.mean(b))}


# --- experiment grid ----------------------------------------------------------

@dataclass(frozen=True)
class ExperimentGrid:
    """Everything :func:`run_experiment` needs; fully determines its output.

    Parameters
    ----------
    epsilons : tuple of float
    sizes : tuple of int
        Training-set sizes ``n``; each dataset has ``n + test_n`` rows.
    repeats : int
    lambda_policy : {"fixed_list", "cv5_nonprivate_then_reuse"}
        ``fixed_list`` reports one row per lambda. The CV policy picks, per
        dataset and penalty, the lambda with the lowest 5-fold validation
        error of the non-private solver and reuses it for the private one.
    lambdas : tuple of float
    solver : SolverConfig
        Base schedule; its ``seed`` is ignored (seeds derive from
        ``master_seed``). Its ``noise_mode`` applies to DPLL/DPLH.
    synth : SynthSpec
        Base data design; ``n`` and ``seed`` are overridden per run.
    test_n : int
    algorithms : tuple of str
    support_threshold : float
    mu, reweight_steps :
        Parameters of the 1/2 quasi-norm penalty.
    master_seed : int
    """

    epsilons: tuple = (0.1, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 4.0)
    sizes: tuple = (10000,)
    repeats: int = 50
    lambda_policy: str = "cv5_nonprivate_then_reuse"
    lambdas: tuple = (0.001, 0.003, 0.01, 0.03, 0.1)
    solver: SolverConfig = field(default_factory=SolverConfig)
    synth: SynthSpec = field(default_factory=SynthSpec)
    test_n: int = 1000
    algorithms: tuple = ALGORITHMS
    support_threshold: float = 1e-6
    mu: float = 1e-4
    reweight_steps: int = 5
    master_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "epsilons", tuple(float(e) for e in self.epsilons))
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))
        object.__setattr__(self, "lambdas", tuple(float(x) for x in self.lambdas))
        object.__setattr__(self, "algorithms", tuple(self.algorithms))
        if self.repeats < 1:
            raise ConfigError("repeats must be >= 1")
        if self.lambda_policy not in LAMBDA_POLICIES:
            raise ConfigError(f"lambda_policy must be one of {LAMBDA_POLICIES}")
        if not self.lambdas:
            raise ConfigError("lambdas must not be empty")
        if not self.epsilons or not self.sizes:
            raise ConfigError("epsilons and sizes must not be empty")
        bad = [a for a in self.algorithms if a not in ALGORITHMS]
        if bad:
            raise ConfigError(f"unknown algorithms {bad}; choose from {ALGORITHMS}")

    def to_dict(self):
        d = asdict(self)
        d["solver"] = self.solver.to_dict()
        d["synth"] = self.synth.to_dict()
        return d


def run_seeds(grid, n, repeat):
    """Data, split and solver seeds of one repeat at training size ``n``.

    The data and split seeds do not depend on epsilon, so every epsilon
    cell reuses the same datasets; the solver seed depends only on the
    repeat, so all algorithms and cells share a noise stream.
    """
    m = grid.master_seed
    return {
        "data": derive_seed(m, _DATA, n, grid.synth.p, repeat),
        "split": derive_seed(m, _SPLIT, n, repeat),
        "solver": derive_seed(m, _SOLVE, repeat),
    }


def _dataset(grid, n, repeat):
    seeds = run_seeds(grid, n, repeat)
    data, true_w = synth_generate(replace(grid.synth, n=n + grid.test_n, seed=seeds["data"]))
    train, test = train_test_split(data, grid.test_n, seeds["split"])
    return train, test, true_w


def _penalty(grid, kind, lam):
    if kind == L1:
        return PenaltySpec.l1(lam)
    return PenaltySpec.lhalf(lam, grid.mu, grid.reweight_steps)


def _nonprivate_config(grid, repeat):
    return replace(grid.solver, noise_mode="off", seed=derive_seed(grid.master_seed, _SOLVE, repeat))


def cv_select_lambda(train, kind, grid, repeat, folds=5):
    """Lambda from ``grid.lambdas`` with the lowest mean validation error.

    Ties go to the larger lambda (the sparser model).
    """
    n = train.n
    if n < folds:
        raise ConfigError("too few rows for cross-validation")
    rng = np.random.default_rng(derive_seed(grid.master_seed, _FOLDS, n, repeat))
    parts = np.array_split(rng.permutation(n), folds)
    cfg = _nonprivate_config(grid, repeat)
    best = None
    for lam in grid.lambdas:
        errs = []
        for f in range(folds):
            val_idx = np.sort(parts[f])
            fit_idx = np.sort(np.concatenate([parts[g] for g in range(folds) if g != f]))
            res = run_dpsc(train.subset(fit_idx), LOGISTIC, _penalty(grid, kind, lam), cfg)
            errs.append(classification_error(res.w_final, train.subset(val_idx)))
        score = math.fsum(errs) / folds
        if best is None or score <= best[0]:
            best = (score, lam)
    return best[1]


def _record(algorithm, eps, gamma, n, lam, repeat, metrics, valid=True):
    return {
        "algorithm": algorithm, "epsilon": eps, "gamma": gamma, "n": n, "lambda": lam,
        "repeat": repeat, "ce": metrics.ce if metrics else math.nan,
        "mse": metrics.mse if metrics else math.nan,
        "brier": metrics.brier if metrics else math.nan,
        "can": metrics.can_zero if metrics else -1,
        "ican": metrics.ican_zero if metrics else -1, "valid": valid,
    }


def _nonprivate_task(grid, n, repeat):
    train, test, true_w = _dataset(grid, n, repeat)
    cfg = _nonprivate_config(grid, repeat)
    records, chosen = [], {}
    for algo in ("LLA", "LHA"):
        kind = _ALGO_PENALTY[algo]
        if grid.lambda_policy == "fixed_list":
            lams = grid.lambdas
        else:
            lams = (cv_select_lambda(train, kind, grid, repeat),)
        chosen[kind] = list(lams)
        if algo not in grid.algorithms:
            continue
        for lam in lams:
            res = run_dpsc(train, LOGISTIC, _penalty(grid, kind, lam), cfg)
            m = evaluate(res, test, true_w, grid.support_threshold)
            records.append(_record(algo, None, None, n, lam, repeat, m))
    return {"repeat": repeat, "records": records, "lambdas": chosen}


def _private_task(grid, eps, n, repeat, lambdas):
    train, test, true_w = _dataset(grid, n, repeat)
    cfg = replace(grid.solver, seed=derive_seed(grid.master_seed, _SOLVE, repeat))
    records = []
    plan, gamma, valid = None, None, True
    try:
        plan = make_plan(cfg.K, cfg.c, train.n, epsilon=eps)
        gamma, valid = plan.gamma, plan.valid
    except PrivacyBudgetError:
        valid = False
    for algo in ("DPLL", "DPLH"):
        if algo not in grid.algorithms:
            continue
        kind = _ALGO_PENALTY[algo]
        for lam in lambdas[kind]:
            if not valid:
                records.append(_record(algo, eps, gamma, n, lam, repeat, None, valid=False))
                continue
            res = run_dpsc(train, LOGISTIC, _penalty(grid, kind, lam), cfg, plan)
            m = evaluate(res, test, true_w, grid.support_threshold)
            records.append(_record(algo, eps, gamma, n, lam, repeat, m))
    return {"repeat": repeat, "records": records}


def _cell_key(grid, kind, eps, n):
    base = grid.to_dict()
    for k in ("epsilons", "sizes", "algorithms"):
        base.pop(k)
    payload = {"grid": base, "kind": kind, "epsilon": eps, "n": n,
               "algorithms": sorted(grid.algorithms)}
    blob = json.dumps(payload, sort_keys=True, default=repr).encode()
    return hashlib.sha256(blob).hexdigest()[:24]


class _CellCache:
    def __init__(self, root):
        self.root = root
        if root is not None:
            os.makedirs(root, exist_ok=True)

    def _path(self, key):
        return os.path.join(self.root, f"{key}.json")

    def get(self, key):
        if self.root is None or not os.path.exists(self._path(key)):
            return None
        with open(self._path(key), encoding="utf-8") as fh:
            return json.load(fh)

    def put(self, key, value):
        if self.root is None:
            return
        tmp = self._path(key) + ".tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(value, fh, sort_keys=True)
        os.replace(tmp, self._path(key))


@dataclass
class ExperimentResult:
    grid: ExperimentGrid
    runs: list
    rows: list
    computed_cells: int = 0
    cached_cells: int = 0

    def runs_for(self, algorithm, epsilon=None, n=None, lam=None):
        """Per-repeat records of one algorithm/cell, ordered by repeat.

        Non-private records are repeated in every epsilon cell, so pass
        ``epsilon`` to get one record per repeat.
        """
        out = [r for r in self.runs if r["algorithm"] == algorithm
               and (epsilon is None or r["epsilon"] == epsilon)
               and (n is None or r["n"] == n)
               and (lam is None or r["lambda"] == lam)]
        return sorted(out, key=lambda r: r["repeat"])

    def metric(self, name, algorithm, epsilon=None, n=None, lam=None):
        return np.array([r[name] for r in self.runs_for(algorithm, epsilon, n, lam)], dtype=float)

    def to_csv(self):
        return rows_to_csv(self.rows)

    def runs_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(RUN_COLUMNS)
        for r in self.runs:
            w.writerow([_fmt(r[c]) for c in RUN_COLUMNS])
        return buf.getvalue()


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def rows_to_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULT_COLUMNS)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in RESULT_COLUMNS])
    return buf.getvalue()


def _aggregate(grid, runs):
    rows = []
    s = grid.solver
    for algo in grid.algorithms:
        private = algo in _PRIVATE
        for n in grid.sizes:
            for eps in grid.epsilons:
                recs = [r for r in runs if r["algorithm"] == algo and r["n"] == n
                        and r["epsilon"] == eps]
                if grid.lambda_policy == "fixed_list":
                    groups = [(lam, [r for r in recs if r["lambda"] == lam]) for lam in grid.lambdas]
                else:
                    groups = [(None, recs)]
                for lam, group in groups:
                    group = sorted(group, key=lambda r: r["repeat"])
                    valid = all(r["valid"] for r in group)
                    lam_val = lam if lam is not None else mean_sd([r["lambda"] for r in group])[0]
                    gamma = group[0]["gamma"] if (private and group) else None
                    row = {
                        "algorithm": algo, "epsilon": eps, "gamma": gamma, "n": n,
                        "p": grid.synth.p, "lambda": lam_val, "K": s.K, "c": s.c,
                        "alpha": s.alpha, "M": s.M, "repeats": len(group), "valid": valid,
                    }
                    for metric in ("ce", "mse", "brier"):
                        m, sd = mean_sd([r[metric] for r in group]) if valid else (None, None)
                        row[f"{metric}_mean"], row[f"{metric}_sd"] = m, sd
                    row["can_mean"] = mean_sd([r["can"] for r in group])[0] if valid else None
                    row["ican_mean"] = mean_sd([r["ican"] for r in group])[0] if valid else None
                    rows.append(row)
    return rows


def run_experiment(grid, cache_dir=None, n_jobs=1):
    """Run every cell of ``grid`` and average the metrics.

    Parameters
    ----------
    grid : ExperimentGrid
    cache_dir : str, optional
        Directory of per-cell results keyed by a hash of the cell's inputs.
        Cells already present are loaded instead of recomputed, so an
        interrupted grid resumes where it stopped.
    n_jobs : int
        Parallel workers over repeats (joblib). Results do not depend on it.

    Returns
    -------
    ExperimentResult
        ``rows`` holds one aggregated row per (algorithm, cell[, lambda]),
        ordered by algorithm then cell; ``runs`` holds the per-repeat
        records used for paired comparisons.
    """
    cache = _CellCache(cache_dir)
    par = Parallel(n_jobs=n_jobs)
    runs = []
    computed = cached = 0
    reps = range(grid.repeats)
    for n in grid.sizes:
        key = _cell_key(grid, "nonprivate", None, n)
        cell = cache.get(key)
        if cell is None:
            logger.info("cell nonprivate n=%d: %d repeats", n, grid.repeats)
            cell = par(delayed(_nonprivate_task)(grid, n, r) for r in reps)
            cache.put(key, cell)
            computed += 1
        else:
            cached += 1
        lambdas = {c["repeat"]: c["lambdas"] for c in cell}
        nonprivate = [rec for c in cell for rec in c["records"]]
        for eps in grid.epsilons:
            runs.extend(dict(rec, epsilon=eps) for rec in nonprivate)
            key = _cell_key(grid, "private", eps, n)
            pcell = cache.get(key)
            if pcell is None:
                logger.info("cell epsilon=%g n=%d: %d repeats", eps, n, grid.repeats)
                pcell = par(delayed(_private_task)(grid, eps, n, r, lambdas[r]) for r in reps)
                cache.put(key, pcell)
                computed += 1
            else:
                cached += 1
            runs.extend(rec for c in pcell for rec in c["records"])
    return ExperimentResult(grid, runs, _aggregate(grid, runs), computed, cached)
