import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pairtrader.policy import (CUMULATIVE, INSTANTANEOUS, PolicyState, SurrogateConfig, close_cumulative,
                               close_instantaneous, open_decision, policy_step, soft_decisions, step,
                               surrogate_step)

FLAT = PolicyState()
HELD = PolicyState(tau_open=3, tau_close=0, open_dir=-1, z_prev=0.4)


def test_step_is_strict():
    assert step(0.0) == 0 and step(1e-300) == 1 and step(-1.0) == 0


@pytest.mark.parametrize("z,state,op", [(1.5, FLAT, -1), (-1.2, FLAT, 1), (1.5, HELD, 0), (1.0, FLAT, 0),
                                        (-1.0, FLAT, 0), (0.3, FLAT, 0)])
def test_open_decision(z, state, op):
    assert open_decision(z, state) == op


def test_close_cumulative():
    assert close_cumulative(-0.3, HELD) == 1
    assert close_cumulative(0.3, HELD) == 0
    assert close_cumulative(-0.3, PolicyState(z_prev=0.4)) == 0
    assert close_cumulative(0.0, HELD) == 0


def test_close_instantaneous():
    assert close_instantaneous(PolicyState(last_op=-1)) == 1
    assert close_instantaneous(PolicyState(last_op=0)) == 0


def test_instantaneous_sequence():
    s = PolicyState()
    a1, s = policy_step(0, -1.5, s, INSTANTANEOUS)
    a2, s = policy_step(1, 0.0, s, INSTANTANEOUS)
    a3, s = policy_step(2, 0.0, s, INSTANTANEOUS)
    assert (a1.open, a2.close, a3.close) == (1, 1, 0)


def test_sentinels_allow_first_open():
    assert FLAT.gate == 1 and not FLAT.holding


def test_close_then_reopen_same_day():
    s = PolicyState()
    _, s = policy_step(0, 1.5, s)
    a, s = policy_step(1, -1.5, s)
    assert a.close == 1 and a.open == 1
    assert s.holding and s.open_dir == 1


def test_no_open_when_disallowed():
    a, s = policy_step(0, 1.5, FLAT, allow_open=False)
    assert a.open == 0 and not s.holding


def test_none_clears_previous_z():
    _, s = policy_step(0, 1.5, FLAT)
    a, s = policy_step(1, None, s)
    assert a.close == 0 and s.z_prev is None
    a, s = policy_step(2, -0.5, s)
    assert a.close == 0


def test_unknown_mode():
    with pytest.raises(ValueError):
        policy_step(0, 0.1, FLAT, "greedy")


@pytest.mark.parametrize("mode", [CUMULATIVE, INSTANTANEOUS])
def test_mutual_exclusion_100k(mode):
    rng = np.random.default_rng(2024)
    z = rng.normal(0, 1.3, 100_000)
    z[rng.random(100_000) < 0.01] = np.nan
    s = PolicyState()
    holding = False
    bad_open = bad_close = 0
    for t, v in enumerate(z):
        a, s = policy_step(t, None if np.isnan(v) else float(v), s, mode)
        if a.close:
            bad_close += not holding
            holding = False
        if a.open:
            bad_open += holding
            holding = True
        assert holding == s.holding
    assert bad_open == 0 and bad_close == 0


@given(st.lists(st.one_of(st.none(), st.floats(-4, 4)), max_size=200))
def test_replay_identical(zs):
    def run():
        s, acts = PolicyState(), []
        for t, z in enumerate(zs):
            a, s = policy_step(t, z, s)
            acts.append(a)
        return acts
    assert run() == run()


def test_surrogate_values():
    cfg = SurrogateConfig(0.2)
    assert surrogate_step(0.0, cfg) == 0.5
    assert surrogate_step(0.2, cfg) == pytest.approx(0.841344746068543, abs=1e-12)
    assert surrogate_step(-0.2, cfg) == pytest.approx(0.158655253931457, abs=1e-12)


def test_surrogate_cdf_series_oracle():
    # independent Taylor series for the standard normal CDF at 1
    x = 1.0
    total = sum((-1) ** n * x ** (2 * n + 1) / (math.factorial(n) * 2**n * (2 * n + 1)) for n in range(40))
    assert surrogate_step(0.2, SurrogateConfig(0.2)) == pytest.approx(0.5 + total / math.sqrt(2 * math.pi), rel=1e-13)


def test_surrogate_tensor_matches_float():
    import torch

    cfg = SurrogateConfig(0.3)
    xs = torch.linspace(-1, 1, 11, dtype=torch.float64)
    for x, y in zip(xs, surrogate_step(xs, cfg)):
        assert float(y) == pytest.approx(surrogate_step(float(x), cfg), rel=1e-14)


def test_soft_decisions_examples():
    op, _ = soft_decisions(1.5, None, FLAT, SurrogateConfig(1e-6))
    assert op == pytest.approx(-1.0, abs=1e-9)
    op, _ = soft_decisions(0.0, None, FLAT, SurrogateConfig(0.2))
    assert op == 0.0
    cfg = SurrogateConfig(0.2)
    op, _ = soft_decisions(1.0, None, FLAT, cfg)
    phi = lambda x: 0.5 * math.erfc(-x / math.sqrt(2))  # noqa: E731
    assert op == pytest.approx((phi(-10) - phi(0)) * phi(5), rel=1e-14)
    assert op == pytest.approx(-0.5, abs=1e-6)


def test_gamma_must_be_positive():
    with pytest.raises(ValueError):
        SurrogateConfig(0.0)


@given(st.floats(-3, 3).filter(lambda z: abs(abs(z) - 1) > 1e-3),
       st.floats(-3, 3).filter(lambda z: abs(z) > 1e-3), st.booleans())
def test_soft_converges_to_hard(z, z_prev, held):
    state = HELD if held else FLAT
    if abs(z * z_prev) < 1e-3:
        return
    cfg = SurrogateConfig(1e-5)
    op, cp = soft_decisions(z, z_prev, state, cfg)
    s = PolicyState(state.tau_open, state.tau_close, state.open_dir, z_prev)
    assert op == pytest.approx(open_decision(z, s), abs=1e-9)
    assert cp == pytest.approx(close_cumulative(z, s), abs=1e-9)


def test_instantaneous_closes_through_missing_indicator():
    _, s = policy_step(0, 1.5, PolicyState(), INSTANTANEOUS)
    a, s = policy_step(1, None, s, INSTANTANEOUS)
    assert a.close == 1 and not s.holding
