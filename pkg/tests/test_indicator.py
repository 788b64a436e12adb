import warnings

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from pairtrader.indicator import RollingStd, rolling_std, rolling_zscores
from pairtrader.kalman import DegenerateSeriesWarning


def test_constant_innovations_degenerate():
    r = RollingStd()
    with pytest.warns(DegenerateSeriesWarning):
        out = [r.update_and_score(1.0) for _ in range(30)]
    assert all(v is None for v in out)


def test_alternating_window_exact():
    # 80 values {-1,+1} x 40 in the window when the score is read
    r = RollingStd(window=80)
    vals = [-1.0, 1.0] * 39 + [-1.0]
    for v in vals:
        r.push(v)
    assert r.update_and_score(1.0) == pytest.approx(1.0, rel=1e-12)
    assert r.std == pytest.approx(1.0, rel=1e-12)


def test_warm_up_returns_none():
    r = RollingStd(window=80, min_samples=10)
    rng = np.random.default_rng(0)
    out = [r.update_and_score(v) for v in rng.normal(size=12)]
    assert all(v is None for v in out[:9])
    assert out[9] is not None


def test_streaming_matches_recompute_over_long_stream():
    rng = np.random.default_rng(42)
    stream = rng.normal(3.0, 2.0, 10000) * np.exp(rng.normal(0, 1, 10000))
    r = RollingStd(window=80, min_samples=10)
    worst = 0.0
    for t, v in enumerate(stream):
        r.push(v)
        ref = np.std(stream[max(0, t - 79): t + 1])
        worst = max(worst, abs(r.std - ref) / ref if ref else abs(r.std))
    assert worst < 1e-12


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=15, max_size=120),
       st.floats(1e-3, 1e3))
def test_scale_invariance(values, c):
    a, b = RollingStd(20, 5), RollingStd(20, 5)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        za = [a.update_and_score(v) for v in values]
        zb = [b.update_and_score(v * c) for v in values]
    for x, y in zip(za, zb):
        if x is None or y is None:
            continue
        assert y == pytest.approx(x, rel=1e-7, abs=1e-9)


def test_rejects_bad_arguments():
    with pytest.raises(ValueError):
        RollingStd(window=1)
    with pytest.raises(ValueError):
        RollingStd(window=10, min_samples=11)
    with pytest.raises(ValueError):
        RollingStd().push(float("nan"))


def test_vectorized_matches_streaming():
    rng = np.random.default_rng(5)
    v = rng.normal(size=300)
    sig = rolling_std(torch.tensor(v), 80).numpy()
    z, valid = rolling_zscores(torch.tensor(v), 80, 10)
    r = RollingStd(80, 10)
    for t, x in enumerate(v):
        zt = r.update_and_score(x)
        assert sig[t] == pytest.approx(r.std, rel=1e-12)
        assert valid[t] == (zt is not None)
        if zt is not None:
            assert float(z[t]) == pytest.approx(zt, rel=1e-12)


def test_vectorized_degenerate_mask():
    z, valid = rolling_zscores(torch.ones(30, dtype=torch.float64), 10, 3)
    assert not valid.any()


def test_rolling_std_gradient():
    v = torch.tensor(np.random.default_rng(1).normal(size=30), requires_grad=True)
    assert torch.autograd.gradcheck(lambda x: rolling_std(x, 8), (v,), eps=1e-6, atol=1e-8)
