import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dpsc.accountant import (
    check_logistic_conditions, epsilon_of, format_plan_table, gamma_for, make_plan, min_epsilon,
    plans_to_csv,
)
from dpsc.core import LossSpec
from dpsc.exceptions import ConfigError, PrivacyBudgetError


def test_reference_setting():
    assert gamma_for(1.0, 100, 2.5, 10000) == 124.65
    assert epsilon_of(124.65, 100, 2.5, 10000) == 1.0


def test_logistic_form_identity():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        g, K, c, n = rng.uniform(0.01, 500), int(rng.integers(1, 500)), rng.uniform(0.1, 10), \
            int(rng.integers(10, 100000))
        a = epsilon_of(g, K, c, n)
        b = K * (8 * g + 2.8) / (4 * c * n)
        assert abs(a - b) <= 1e-15 * abs(b)


def test_floor_as_gamma_vanishes():
    assert epsilon_of(1e-300, 1, 2.0, 50) == pytest.approx(2.8 * 0.25 / (2.0 * 50), rel=1e-15)
    assert min_epsilon(1, 2.0, 50) == 2.8 * 0.25 / (2.0 * 50)


def test_budget_at_floor_is_infeasible():
    floor = min_epsilon(100, 2.5, 10000)
    with pytest.raises(PrivacyBudgetError) as err:
        gamma_for(floor, 100, 2.5, 10000)
    assert err.value.min_epsilon == floor
    assert "epsilon below K*2.8c2/(cn)" in str(err.value)


def test_gamma_for_rejects_nonpositive():
    with pytest.raises(ConfigError):
        gamma_for(-1.0, 100, 2.5, 100)


@given(st.floats(1e-3, 50), st.integers(1, 1000), st.floats(0.05, 20), st.integers(1, 10 ** 6),
       st.floats(0.1, 5), st.floats(0.01, 2))
def test_round_trip(eps, K, c, n, c1, c2):
    if eps * c * n / K <= 2.8 * c2 * (1 + 1e-9):
        with pytest.raises(PrivacyBudgetError):
            gamma_for(eps, K, c, n, c1, c2)
        return
    g = gamma_for(eps, K, c, n, c1, c2)
    assert epsilon_of(g, K, c, n, c1, c2) == pytest.approx(eps, rel=1e-12)


@given(st.floats(0.01, 100), st.integers(1, 200), st.floats(0.1, 10), st.integers(10, 10 ** 5))
def test_composition_and_monotonicity(g, K, c, n):
    e = epsilon_of(g, K, c, n)
    assert e == pytest.approx(K * epsilon_of(g, 1, c, n), rel=1e-15)
    assert epsilon_of(g * 1.1, K, c, n) > e
    assert epsilon_of(g, K + 1, c, n) > e
    assert epsilon_of(g, K, c * 1.1, n) < e
    assert epsilon_of(g, K, c, n + 1) < e


def test_logistic_conditions():
    assert check_logistic_conditions(2.5, 10000, 124.65) == (True, "")
    n = 1000
    ok, _ = check_logistic_conditions(1 / (2 * n), n, 0.15)
    assert ok  # c = 1/(2n) and gamma = cn - 7/20 are both accepted
    assert not check_logistic_conditions(1 / (2 * n), n, 0.16)[0]
    ok, reason = check_logistic_conditions(2.5, 100, 250.0)  # gamma = cn
    assert not ok and reason == "gamma exceeds cn - 7/20"
    ok, reason = check_logistic_conditions(1e-4, 100, 1e-9)
    assert not ok and "c below 1/(2n)" in reason


def test_make_plan_identities_and_validity():
    p = make_plan(100, 2.5, 10000, epsilon=1.0)
    assert p.valid and p.gamma == 124.65 and p.epsilon == 100 * p.per_iteration_epsilon
    assert p.per_iteration_epsilon == (2 * p.gamma * p.c1 + 2.8 * p.c2) / (p.n * p.c)
    q = make_plan(10, 2.5, 10, gamma=30.0)
    assert not q.valid and "gamma exceeds" in q.reason
    with pytest.raises(PrivacyBudgetError):
        q.require_valid()
    r = make_plan(10, 0.001, 100, gamma=0.01)
    assert not r.valid and "c below" in r.reason
    general = make_plan(10, 1.0, 100, gamma=1e6, loss=LossSpec("logistic", 1.0, 0.25))
    assert not general.valid
    with pytest.raises(ConfigError):
        make_plan(10, 1.0, 100)
    with pytest.raises(ConfigError):
        make_plan(10, 1.0, 100, epsilon=1.0, gamma=1.0)


def test_plan_outputs():
    plans = [make_plan(100, 2.5, 10000, epsilon=e) for e in (0.5, 1.0)]
    csv_text = plans_to_csv(plans)
    lines = csv_text.splitlines()
    assert lines[0] == "epsilon,gamma,eps_per_iter,K,c,n,c1,c2,valid,reason"
    assert lines[2].startswith("1.0,124.65,")
    table = format_plan_table(plans)
    assert "124.65" in table and len(table.splitlines()) == 3
