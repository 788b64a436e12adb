import numpy as np
import pytest
import torch

from pairtrader.data import QuoteSeries
from pairtrader.gainnet import load_checkpoint, run_knet, save_checkpoint
from pairtrader.kalman import initial_estimate
from pairtrader.ledger import Transaction
from pairtrader.ssmodel import ModelKind, StateSpaceSpec, evolution_matrix
from pairtrader.training import (TrainConfig, _hedge_tensor, evaluate, hard_pnl_tensor, loss_stage1, loss_stage2,
                                 surrogate_pnl, train_stage1, train_stage2)

from conftest import synth
from helpers import analytic_grad, central_fd, rel_errors, sample_index, tiny_net

PCI = StateSpaceSpec(ModelKind.PCI_PROPOSED, 0.9)


def noiseless(length=60):
    series, states = synth(length=length, scales=(0.0, 0.0, 0.0), obs=0.0, init=(1.2, 0.1, 0.3))
    return series, np.array([1.2, 0.1, 0.3 / 0.9])


def test_stage1_zero_gain_exact_start_is_zero():
    series, x0 = noiseless()
    loss = loss_stage1(None, series, PCI, x0, gains=torch.zeros(len(series), 3, 1, dtype=torch.float64))
    assert float(loss) == pytest.approx(0.0, abs=1e-28)


def test_stage1_perfect_tracking_gain_is_zero():
    series, x0 = noiseless()
    # a gain that moves the state by any amount along the innovation leaves a zero innovation unchanged
    g = torch.full((len(series), 3, 1), 0.37, dtype=torch.float64)
    assert float(loss_stage1(None, series, PCI, x0, gains=g)) == pytest.approx(0.0, abs=1e-28)


def test_stage1_three_step_hand_sum():
    series = QuoteSeries([1.0, 1.1, 1.2], [2.0, 2.3, 2.1])
    x0 = np.array([1.5, 0.2, 0.1])
    K = np.array([[0.3], [0.1], [0.2]])
    gains = torch.as_tensor(np.repeat(K[None], 3, 0))
    F = evolution_matrix(PCI)
    x, total = x0, 0.0
    for a, b in zip(series.alpha, series.beta):
        xp = F @ x
        r = b - (a * xp[0] + xp[1] + xp[2])
        total += r * r
        x = xp + K[:, 0] * r
    assert float(loss_stage1(None, series, PCI, x0, gains=gains)) == pytest.approx(total / 3, rel=1e-14)


def test_stage1_loss_gradient_fd():
    series, _ = synth(length=5, seed=11, alpha_vol=0.01)
    net = tiny_net(PCI, seed=2, head_init_scale=1.0)
    net.calibrate(synth(length=200, seed=11)[0], PCI)
    net.eval()
    x0 = np.array([1.05, 0.12, 0.0])
    theta = net.theta.numpy()

    def f(th):
        net.theta = th
        with torch.no_grad():
            return float(loss_stage1(net, series, PCI, x0))

    num = central_fd(f, theta, eps=1e-4)
    net.theta = theta
    ana = analytic_grad(net, lambda: loss_stage1(net, series, PCI, x0))
    err = rel_errors(ana, num)
    assert np.mean(err < 1e-4) >= 0.95
    assert np.linalg.norm(ana - num) / np.linalg.norm(num) < 1e-4


def small_cfg(**kw):
    base = dict(epochs1=2, epochs2=2, batches=3, zscore_window=10, zscore_min_samples=5, seed=1)
    base.update(kw)
    return TrainConfig(**base)


def test_stage1_zero_epochs_keeps_parameters(pci_series):
    net = tiny_net(PCI)
    before = net.theta
    net, report = train_stage1(net, pci_series, PCI, small_cfg(epochs1=0))
    assert torch.equal(before, net.theta) and report.stage1_losses == []


def test_stage1_deterministic():
    series, _ = synth(length=150, seed=4)
    runs = []
    for _ in range(2):
        net = tiny_net(PCI, seed=3)
        net, rep = train_stage1(net, series, PCI, small_cfg())
        runs.append((net.theta, rep.to_dict()))
    assert torch.equal(runs[0][0], runs[1][0]) and runs[0][1] == runs[1][1]


def test_stage1_reduces_loss():
    series, _ = synth(length=300, seed=6)
    net = tiny_net(PCI, seed=0, hidden=9, head_init_scale=0.01)
    _, rep = train_stage1(net, series, PCI, small_cfg(epochs1=6, eta1=3e-3))
    assert rep.stage1_losses[-1] < rep.stage1_losses[0]


def test_stage2_no_trades_zero_loss():
    series = QuoteSeries(np.linspace(1.0, 1.1, 40), np.linspace(1.0, 1.1, 40) * 1.2)
    net = tiny_net(PCI).eval()
    res = loss_stage2(net, series, PCI, small_cfg(zscore_min_samples=40, zscore_window=40), np.array([1.2, 0, 0]))
    assert res.loss.item() == 0.0 and res.ledger == []


def test_stage2_sign_convention():
    t = Transaction(1, 3, -1, 1, 1.0, 1.0, 10.0, 10.0, 12.0, 11.0)
    series = QuoteSeries([10.0] * 5, [12.0, 12.0, 12.0, 11.0, 11.0])
    hedges = torch.ones(5, dtype=torch.float64)
    assert float(-hard_pnl_tensor(hedges, series, [t])) == -0.5


def stage2_toy(seed):
    series, _ = synth(length=60, seed=seed, scales=(1e-3, 1e-4, 8e-3), rho=0.7, alpha_vol=0.01)
    net = tiny_net(PCI, seed=seed, hidden=9, head_init_scale=1.0)
    net.calibrate(series, PCI)
    net.eval()
    cfg = small_cfg(bptt_truncation=None)
    x0, _ = initial_estimate(series, PCI, window=30)
    return series, net, cfg, x0


def test_stage2_loss_is_minus_realised_pnl():
    series, net, cfg, x0 = stage2_toy(3)
    res = loss_stage2(net, series, PCI, cfg, x0)
    assert res.ledger
    assert res.loss.item() == pytest.approx(-sum(t.reward for t in res.ledger), rel=1e-12)
    assert res.pnl == pytest.approx(-res.loss.item(), rel=1e-12)


def test_stage2_gradient_fd_frozen_trades():
    series, net, cfg, x0 = stage2_toy(3)
    res = loss_stage2(net, series, PCI, cfg, x0)
    assert res.ledger
    theta = net.theta.numpy()
    from pairtrader.indicator import rolling_zscores

    def soft(th):
        net.theta = th
        with torch.no_grad():
            tr = run_knet(net, series, PCI, x0)
            z, _ = rolling_zscores(tr.innovation[:, 0], cfg.zscore_window, cfg.zscore_min_samples)
            return float(surrogate_pnl(z, _hedge_tensor(tr, PCI), series, res.ledger, res.timing, cfg.gamma))

    idx = sample_index(net)
    num = -central_fd(soft, theta, eps=1e-5, index=idx)
    net.theta = theta
    ana = analytic_grad(net, lambda: loss_stage2(net, series, PCI, cfg, x0).loss)[idx]
    err = rel_errors(ana, num)
    assert np.mean(err < 1e-3) >= 0.95
    assert np.linalg.norm(ana - num) / np.linalg.norm(num) < 1e-3


def test_stage2_zero_step_keeps_parameters():
    series, net, cfg, x0 = stage2_toy(3)
    before = net.theta
    net, rep = train_stage2(net, series, PCI, small_cfg(eta2=0.0, epochs2=3, bptt_truncation=None), x0)
    assert torch.equal(before, net.theta)
    assert len(set(rep.stage2_pnl)) == 1 and rep.best_epoch == 0


def test_stage2_deterministic_checkpoints(tmp_path):
    blobs = []
    for i in range(2):
        series, net, cfg, x0 = stage2_toy(5)
        net, _ = train_stage2(net, series, PCI, small_cfg(eta2=1e-3, epochs2=3), x0)
        p = tmp_path / f"c{i}.ckpt"
        save_checkpoint(net, p, PCI)
        blobs.append(p.read_bytes())
    assert blobs[0] == blobs[1]


def test_stage2_best_epoch_is_kept():
    series, net, cfg, x0 = stage2_toy(3)
    net, rep = train_stage2(net, series, PCI, small_cfg(eta2=5e-2, epochs2=4), x0)
    assert rep.stage2_pnl[rep.best_epoch] == max(rep.stage2_pnl)
    assert evaluate(net, series, PCI, small_cfg(), x0).pnl == pytest.approx(max(rep.stage2_pnl), rel=1e-12)


def test_checkpoint_evaluate_bit_identical(tmp_path):
    series, net, cfg, x0 = stage2_toy(3)
    before = evaluate(net, series, PCI, cfg, x0)
    save_checkpoint(net, tmp_path / "k.ckpt", PCI)
    loaded, _ = load_checkpoint(tmp_path / "k.ckpt")
    after = evaluate(loaded, series, PCI, cfg, x0)
    assert before.pnl == after.pnl and before.mse == after.mse and before.ledger == after.ledger


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(eta1=-1.0)
    with pytest.raises(ValueError):
        TrainConfig(batches=0)
