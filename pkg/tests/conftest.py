import numpy as np
import pytest

from pairtrader.data import QuoteSeries, SyntheticSpec, generate_synthetic
from pairtrader.ssmodel import ModelKind, StateSpaceSpec

FIXTURES = __import__("pathlib").Path(__file__).resolve().parents[1] / "src" / "pairtrader" / "fixtures"


def synth(kind="PCI_PROPOSED", length=500, rho=0.9, seed=0, scales=None, obs=1e-3, family="gaussian",
          drift=0.0, alpha_vol=0.005, init=None):
    model = StateSpaceSpec(ModelKind.parse(kind), rho=rho if kind != "CI" else 0.0)
    n = model.state_dim
    if scales is None:
        scales = (1e-3, 1e-4, 5e-3)[:n] if kind != "CI" else (1e-3, 1e-4)
    if init is None:
        init = {2: (1.1, 0.1), 3: (1.1, 0.1, 0.0)}[n]
        if model.kind is ModelKind.PCI_CLEGG:
            init = (1.0, 0.0, 0.1)
    spec = SyntheticSpec(model=model, length=length, initial_state=tuple(init), state_scales=tuple(scales),
                         obs_scale=obs, noise_family=family, seed=seed, alpha_vol=alpha_vol, hedge_drift=drift)
    return generate_synthetic(spec)


@pytest.fixture
def pci_series():
    return synth()[0]


@pytest.fixture
def ci_series():
    return synth("CI")[0]


def constant_series(n=200, a=1.1, b=1.2):
    return QuoteSeries(np.full(n, a), np.full(n, b))


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
