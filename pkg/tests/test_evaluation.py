import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dpsc.core import Dataset
from dpsc.data import SynthSpec, default_true_w
from dpsc.evaluation import (
    RESULT_COLUMNS, ExperimentGrid, MetricsReport, brier_score, classification_error,
    coefficient_mse, dominance_check, evaluate, mean_sd, paired_pvalue, run_experiment,
    support_counts, trend_check,
)
from dpsc.exceptions import ConfigError
from dpsc.solver import SolverConfig

TINY = ExperimentGrid(epsilons=(1.0, 4.0), sizes=(300,), repeats=2, lambda_policy="fixed_list",
                      lambdas=(0.015,), solver=SolverConfig(K=15), synth=SynthSpec(p=10),
                      test_n=100, master_seed=3)


def test_classification_error_examples():
    w = np.array([1.0, -1.0])
    X = np.array([[0.5, 0.1], [0.1, 0.5], [0.3, 0.3]])
    d = Dataset(X, [1, -1, 1])
    assert classification_error(w, d) == 0.0  # third point has score 0, predicted +1
    assert classification_error(-w, d) == pytest.approx(2 / 3)
    with pytest.raises(ConfigError):
        classification_error(np.ones(3), d)


def test_classification_error_recount():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(20, 3)) / 3
    y = rng.choice([-1.0, 1.0], 20)
    d = Dataset(X, y)
    w = rng.normal(size=3)
    wrong = sum(1 for xi, yi in zip(X, y) if (1 if xi @ w >= 0 else -1) != yi)
    assert classification_error(w, d) == wrong / 20


def test_coefficient_mse():
    w = default_true_w(100)
    assert coefficient_mse(w, w) == 0.0
    e = w.copy()
    e[0] += 1
    assert coefficient_mse(e, w) == pytest.approx(0.01)
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=7), rng.normal(size=7)
    assert coefficient_mse(a, b) == pytest.approx(sum((x - y) ** 2 for x, y in zip(a, b)) / 7,
                                                  rel=1e-15)
    with pytest.raises(ConfigError):
        coefficient_mse(a, b[:6])


def test_support_counts():
    w = default_true_w(100)
    assert support_counts(w, w) == (92, 0)
    assert support_counts(np.zeros(100), w) == (92, 8)
    assert support_counts(w, w, threshold=math.inf) == (92, 8)
    with pytest.raises(ConfigError):
        support_counts(w, w, threshold=-1)


@given(st.lists(st.floats(-1, 1), min_size=10, max_size=10), st.floats(0, 1))
def test_support_counts_bounded(z, thr):
    w = default_true_w(10)
    can, ican = support_counts(np.array(z), w, thr)
    assert 0 <= can <= 2 and 0 <= ican <= 8


def test_brier_score():
    d = Dataset([[0.0, 0.0]], [1])
    assert brier_score(np.zeros(2), d) == 0.25


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=50), st.randoms())
def test_mean_is_order_invariant(values, rnd):
    shuffled = list(values)
    rnd.shuffle(shuffled)
    assert abs(mean_sd(values)[0] - mean_sd(shuffled)[0]) <= 1e-12 * max(1.0, max(map(abs, values)))


def test_mean_sd_edge_cases():
    assert mean_sd([3.0]) == (3.0, 0.0)
    m, s = mean_sd([1.0, 2.0, 3.0])
    assert (m, s) == (2.0, 1.0)


def test_paired_pvalue_degenerate_cases():
    a = [1.0, 2.0, 3.0]
    assert paired_pvalue(a, a, "greater") == 1.0
    assert paired_pvalue([2, 3, 4], a, "greater") == 0.0
    assert paired_pvalue([2, 3, 4], a, "less") == 1.0


def test_trend_and_dominance_checks():
    rng = np.random.default_rng(0)
    base = rng.normal(size=30)
    series = [base + 1.0, base + 0.5, base + 0.49, base]
    ok, detail = trend_check(series, "nonincreasing")
    assert ok and detail["overall_pvalue"] < 0.05
    ok, _ = trend_check(series[::-1], "nonincreasing")
    assert not ok
    ok, _ = trend_check(series[::-1], "nondecreasing")
    assert ok
    flat = [base, base]
    assert not trend_check(flat, "nonincreasing")[0]  # no evidence of a decrease
    assert dominance_check(base + 0.1, base)[0]
    assert not dominance_check(base - 1, base)[0]
    with pytest.raises(ConfigError):
        trend_check(series, "up")


def test_grid_validation():
    with pytest.raises(ConfigError):
        ExperimentGrid(repeats=0)
    with pytest.raises(ConfigError):
        ExperimentGrid(lambda_policy="best")
    with pytest.raises(ConfigError):
        ExperimentGrid(algorithms=("LLA", "SVM"))


def test_experiment_rows_and_order():
    res = run_experiment(TINY)
    assert [r["algorithm"] for r in res.rows] == ["LLA", "LLA", "LHA", "LHA",
                                                  "DPLL", "DPLL", "DPLH", "DPLH"]
    assert all(r["repeats"] == 2 for r in res.rows)
    assert set(res.rows[0]) == set(RESULT_COLUMNS)
    lines = res.to_csv().splitlines()
    assert lines[0] == ",".join(RESULT_COLUMNS)
    assert lines[0].startswith("algorithm,epsilon,gamma,n,p,lambda,K,c,alpha,M,repeats,ce_mean,"
                               "ce_sd,mse_mean,mse_sd,can_mean,ican_mean,valid")
    assert len(lines) == 9


def test_noise_off_private_rows_equal_nonprivate_rows():
    grid = replace(TINY, repeats=1, solver=replace(TINY.solver, noise_mode="off"))
    rows = {(r["algorithm"], r["epsilon"]): r for r in run_experiment(grid).rows}
    metrics = ("ce_mean", "mse_mean", "can_mean", "ican_mean", "brier_mean")
    for eps in grid.epsilons:
        for priv, base in (("DPLL", "LLA"), ("DPLH", "LHA")):
            assert [rows[priv, eps][m] for m in metrics] == [rows[base, eps][m] for m in metrics]


def test_infeasible_cells_are_flagged():
    grid = replace(TINY, epsilons=(1e-4, 1.0))
    rows = run_experiment(grid).rows
    bad = [r for r in rows if r["epsilon"] == 1e-4 and r["algorithm"].startswith("DP")]
    assert bad and all(not r["valid"] and r["ce_mean"] is None for r in bad)
    assert all(r["valid"] for r in rows if r["epsilon"] == 1.0)


def test_cache_resume_and_parallel_consistency(tmp_path):
    first = run_experiment(TINY, cache_dir=tmp_path)
    assert (first.computed_cells, first.cached_cells) == (3, 0)
    again = run_experiment(TINY, cache_dir=tmp_path, n_jobs=2)
    assert (again.computed_cells, again.cached_cells) == (0, 3)
    assert again.to_csv() == first.to_csv()
    fresh = run_experiment(TINY, n_jobs=2)
    assert fresh.to_csv() == first.to_csv()
    # a changed setting is a different cell
    other = run_experiment(replace(TINY, master_seed=4), cache_dir=tmp_path)
    assert other.computed_cells == 3


def test_cv_policy_reuses_nonprivate_choice():
    grid = replace(TINY, lambda_policy="cv5_nonprivate_then_reuse", lambdas=(0.001, 0.05),
                   epsilons=(2.0,), repeats=1)
    res = run_experiment(grid)
    lam = {r["algorithm"]: r["lambda"] for r in res.runs}
    assert lam["LLA"] == lam["DPLL"] and lam["LHA"] == lam["DPLH"]
    assert {lam["LLA"], lam["LHA"]} <= {0.001, 0.05}


def test_paired_records():
    res = run_experiment(TINY)
    a = res.metric("ce", "DPLL", epsilon=1.0)
    b = res.metric("ce", "LLA", epsilon=1.0)
    assert a.shape == b.shape == (2,)


def test_evaluate_without_truth():
    class R:
        w_final = np.array([1.0, 0.0])
        z_final = np.array([1.0, 0.0])
    d = Dataset([[0.5, 0.0], [-0.5, 0.0]], [1, -1])
    m = evaluate(R, d)
    assert isinstance(m, MetricsReport) and m.ce == 0.0 and math.isnan(m.mse)
