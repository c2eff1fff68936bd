import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pdvgas.nn import TrainConfig
from pdvgas.swing import (
    ContractError,
    PricingError,
    RegressionConfig,
    SwingContract,
    oracle_price_tiny,
    payoff,
    penalty,
    price_backward,
    rights_update,
    write_runs_csv,
)

FAST = RegressionConfig(shape_hidden=4, train=TrainConfig(max_epochs=40, early_stop_patience=8), history_stride=3)


def gbm_prices(n_paths, n_steps, s0=3.0, vol=0.8, seed=0):
    rng = np.random.default_rng(seed)
    dt = 1 / 365
    z = rng.standard_normal((n_paths, n_steps))
    logs = np.cumsum((-0.5 * vol**2) * dt + vol * math.sqrt(dt) * z, axis=1)
    return s0 * np.exp(np.hstack([np.zeros((n_paths, 1)), logs]))


def test_payoff_examples():
    assert payoff(2.0, 2, 2, 3.0) == 2.0
    assert payoff(4.0, 3, 1, 3.0) == 0.0
    assert payoff(2.0, 1, 2, 3.0) == 0.0
    np.testing.assert_array_equal(payoff(np.array([1.0, 5.0]), 2, 1, 3.0), [2.0, 0.0])


def test_penalty_examples():
    assert penalty(2.0, 1, 5.0, 3.0) == -5.0
    assert penalty(2.0, 0, 5.0, 3.0) == 0.0
    assert penalty(4.0, 3, 5.0, 3.0) == 0.0


def test_rights_update_examples():
    assert rights_update(3, 2) == 1
    assert rights_update(1, 2) == 1
    assert rights_update(0, 0) == 0


@given(st.floats(0.01, 10), st.integers(0, 5), st.integers(0, 3), st.floats(0.1, 10), st.floats(0, 10))
def test_payoff_penalty_signs(s, l, q, k, a):
    assert 0 <= payoff(s, l, q, k) <= q * k
    assert penalty(s, l, a, k) <= 0
    assert 0 <= rights_update(l, q) <= l


def test_contract_validation():
    SwingContract(3.0, 3, 2, (0, 6, 12, 18, 24), 30, 5.0)
    with pytest.raises(ContractError):
        SwingContract(3.0, 1, 2, (0, 6), 30)
    with pytest.raises(ContractError):
        SwingContract(3.0, 5, 2, (0, 6), 30)
    with pytest.raises(ContractError):
        SwingContract(3.0, 2, 1, (0, 6, 6), 30)
    with pytest.raises(ContractError):
        SwingContract(3.0, 2, 1, (0, 30), 30)
    with pytest.raises(ContractError):
        SwingContract(-1.0, 2, 1, (0, 6), 30)
    with pytest.raises(ContractError):
        SwingContract(3.0, 2, 1, (0, 6), 30, penalty_scale=-1)


def test_discount_uses_date_gaps():
    c = SwingContract(3.0, 2, 1, (0, 73), 146, discount_rate=0.5, dt=1 / 365)
    assert c.discount(0) == pytest.approx(math.exp(-0.1))
    assert c.discount(1) == pytest.approx(math.exp(-0.1))


def test_deep_out_of_the_money_is_zero():
    s = gbm_prices(200, 20, s0=50.0, vol=0.2)
    c = SwingContract(3.0, 2, 1, (0, 5, 10), 20, penalty_scale=0.0)
    res = price_backward(s, c, FAST)
    assert res.price == 0.0


def test_terminal_values_equal_penalty():
    s = gbm_prices(150, 20)
    c = SwingContract(3.0, 3, 2, (0, 5, 10), 20, penalty_scale=5.0)
    res = price_backward(s, c, FAST)
    for l in range(4):
        np.testing.assert_array_equal(res.values[-1][:, l], penalty(s[:, 20], l, 5.0, 3.0))


def test_zero_volatility_matches_oracle_exactly():
    path = 3.0 * np.exp(-0.02 * np.arange(31))
    s = np.tile(path, (50, 1))
    c = SwingContract(3.0, 2, 1, (0, 10, 20), 30, penalty_scale=2.0)
    res = price_backward(s, c, FAST)
    ob = oracle_price_tiny(s, c)
    assert ob.open_loop == ob.foresight
    assert res.price == pytest.approx(ob.open_loop, abs=1e-12)


def test_single_date_reduces_to_explicit_max():
    s = gbm_prices(2000, 10, seed=3)
    c = SwingContract(3.0, 1, 1, (0,), 10, penalty_scale=0.7)
    res = price_backward(s, c, FAST)
    g1 = np.mean(-0.7 * np.maximum(3.0 - s[:, 10], 0))
    expected = max(0.0 + g1, np.mean(np.maximum(3.0 - s[:, 0], 0)))
    assert res.price == pytest.approx(expected, abs=1e-12)
    ob = oracle_price_tiny(s, c)
    assert ob.open_loop == pytest.approx(res.price, abs=1e-12)


def test_single_date_no_penalty_bounds_bracket_put():
    s = gbm_prices(1000, 10, s0=3.0, seed=4)
    c = SwingContract(3.2, 1, 1, (2,), 10)
    ob = oracle_price_tiny(s, c)
    direct = np.mean(np.maximum(3.2 - s[:, 2], 0))
    assert ob.open_loop <= direct + 1e-12 <= ob.foresight + 2e-12


@pytest.mark.parametrize("seed", [0, 1])
def test_price_between_oracle_bounds(seed):
    s = gbm_prices(600, 30, seed=seed)
    c = SwingContract(3.0, 2, 1, (0, 10, 20), 30, penalty_scale=1.0)
    res = price_backward(s, c, FAST, seed=seed)
    ob = oracle_price_tiny(s, c)
    assert ob.open_loop - 3 * ob.open_loop_se <= res.price <= ob.foresight + 3 * ob.foresight_se
    assert res.price <= c.global_rights * c.strike
    assert res.price >= -3 * res.std_error


def test_rights_never_scarce_is_separable():
    s = gbm_prices(1500, 30, seed=6)
    c = SwingContract(3.0, 3, 1, (0, 10, 20), 30, penalty_scale=0.5)
    res = price_backward(s, c, FAST, seed=2)
    ob = oracle_price_tiny(s, c, max_rights=3)
    sep = sum(np.mean(np.maximum(3.0 - s[:, t], 0)) for t in c.exercise_dates)
    se = ob.foresight_se
    assert ob.foresight == pytest.approx(sep, abs=1e-12)
    assert ob.open_loop == pytest.approx(sep, abs=1e-12)
    assert abs(res.price - sep) < 3 * se


def test_zero_penalty_price_nondecreasing_in_rights():
    s = gbm_prices(400, 30, seed=7)
    prices = []
    for big_l in (1, 2, 3):
        c = SwingContract(3.0, big_l, 1, (0, 10, 20), 30)
        prices.append(oracle_price_tiny(s, c, max_rights=3).open_loop)
    assert prices[0] <= prices[1] <= prices[2]
    nn_prices = [price_backward(s, SwingContract(3.0, big_l, 1, (0, 10, 20), 30), FAST).price for big_l in (1, 2, 3)]
    se = 3 * np.std(np.maximum(3.0 - s[:, 10], 0)) / math.sqrt(400)
    assert nn_prices[0] <= nn_prices[1] + se and nn_prices[1] <= nn_prices[2] + se


def test_pricing_deterministic_and_seed_sensitive():
    s = gbm_prices(300, 20, seed=8)
    c = SwingContract(3.0, 2, 1, (0, 7, 14), 20, penalty_scale=1.0)
    a, b = price_backward(s, c, FAST, seed=1), price_backward(s, c, FAST, seed=1)
    assert a.price == b.price
    assert a.exercise_stats == b.exercise_stats


def test_exercise_stats_are_distributions():
    s = gbm_prices(300, 20, seed=9)
    c = SwingContract(3.0, 3, 2, (0, 7, 14), 20, penalty_scale=1.0)
    res = price_backward(s, c, FAST)
    for (i, l), fr in res.exercise_stats.items():
        assert len(fr) == 3 and sum(fr) == pytest.approx(1.0)
        assert all(f == 0 for q, f in enumerate(fr) if q > l)
    assert set(res.bank) == {(i, j) for i in (1, 2) for j in range(4)}


def test_next_horizon_option_runs():
    s = gbm_prices(200, 20, seed=10)
    c = SwingContract(3.0, 2, 1, (0, 7, 14), 20, penalty_scale=1.0)
    cfg = RegressionConfig(shape_hidden=4, train=FAST.train, history_stride=3, input_horizon="next")
    assert math.isfinite(price_backward(s, c, cfg).price)
    with pytest.raises(ValueError):
        RegressionConfig(input_horizon="later")


def test_price_input_errors():
    c = SwingContract(3.0, 2, 1, (0, 7, 14), 20)
    with pytest.raises(ContractError):
        price_backward(np.ones((20, 15)), c, FAST)
    bad = np.ones((20, 21))
    bad[3, 5] = np.inf
    with pytest.raises(PricingError):
        price_backward(bad, c, FAST)
    with pytest.raises(ContractError):
        oracle_price_tiny(np.ones((5, 40)), SwingContract(3.0, 2, 1, (0, 5, 10, 15), 30))


def test_result_json_and_runs_csv(tmp_path):
    s = gbm_prices(100, 20, seed=11)
    res = price_backward(s, SwingContract(3.0, 2, 1, (0, 7, 14), 20, 1.0), FAST, seed=4)
    res.save(tmp_path / "r.json")
    d = json.loads((tmp_path / "r.json").read_text())
    assert d["price"] == res.price and d["seed"] == 4
    summary = write_runs_csv(tmp_path / "runs.csv", [1.0, 2.0, 4.0])
    assert summary == {"mean": 7 / 3, "variance": pytest.approx(7 / 3), "min": 1.0, "max": 4.0}
    rows = (tmp_path / "runs.csv").read_text().splitlines()
    assert rows[0] == "run,price" and rows[1] == "1,1.0" and rows[4].startswith("mean,")


def test_identical_targets_share_one_fit():
    s = gbm_prices(300, 30, seed=12)
    # cap 1 makes the values at the last date equal for l = 1 and l = 2
    res = price_backward(s, SwingContract(3.0, 2, 1, (0, 10, 20), 30), FAST)
    assert res.training[(1, 2)] == {"shared_with": 1}
    assert res.bank[(1, 2)] is res.bank[(1, 1)]
