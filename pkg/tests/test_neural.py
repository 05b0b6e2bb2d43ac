import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from fsip.grid import get_mcs
from fsip.neural import (AdamState, CeModel, CheckpointError, DdModel, NeuralConfig,
                         NeuralReceiver, adam_step, bce_from_llr, ce_in_channels,
                         checkpoint_bytes, checkpoint_from_bytes, dd_in_channels,
                         iteration_loss, load_checkpoint, mse_complex, save_checkpoint, train,
                         unrolled_loss)

C64 = torch.complex128


def crand(*shape, gen=None, scale=1.0):
    g = gen or torch.Generator().manual_seed(0)
    re = torch.randn(*shape, generator=g, dtype=torch.float64)
    im = torch.randn(*shape, generator=g, dtype=torch.float64)
    return torch.complex(re, im) * scale


def ce_inputs(B=3, S=8, T=4, Nr=2, seed=0):
    g = torch.Generator().manual_seed(seed)
    return (crand(B, S, T, Nr, gen=g), crand(B, S, T, gen=g, scale=0.5), crand(B, S, T, gen=g, scale=0.5),
            crand(B, S, T, gen=g, scale=0.5), torch.full((B,), 0.1, dtype=torch.float64))


def dd_inputs(B=3, S=8, T=4, Nr=2, seed=1):
    g = torch.Generator().manual_seed(seed)
    return crand(B, S, T, Nr, gen=g), crand(B, S, T, Nr, gen=g), torch.full((B,), 0.1, dtype=torch.float64)


# ---------------------------------------------------------------- forward contracts

def test_channel_counts():
    assert ce_in_channels(4) == 64 and dd_in_channels(4) == 22


def test_ce_shape_zero_output_and_determinism():
    torch.manual_seed(0)
    m = CeModel(2, 8, 2).double().eval()
    h = m(*ce_inputs(), L=2)
    assert h.shape == (3, 8, 4, 2) and h.dtype == C64
    assert torch.count_nonzero(h) == 0
    torch.manual_seed(0)
    m = CeModel(2, 8, 2, zero_output=False).double().eval()
    a, b = m(*ce_inputs(), L=2), m(*ce_inputs(), L=2)
    assert torch.equal(a, b) and torch.count_nonzero(a) > 0


def test_dd_crop_and_mcs_plane():
    torch.manual_seed(0)
    m = DdModel(2, 8, 1, 6, zero_output=False).double().eval()
    yd, h, nv = dd_inputs()
    full = m.net(m.features(yd, h, nv, 0.05, 2, get_mcs(7)))
    out7 = m(yd, h, nv, 0.05, 2, get_mcs(7))
    assert out7.shape == (3, 8, 4, 4)
    assert torch.equal(out7, full[..., :4].clamp(-20, 20))
    out14 = m(yd, h, nv, 0.05, 2, get_mcs(14))
    assert out14.shape[-1] == 6
    assert not torch.equal(out14[..., :4], out7)  # the conditioning plane matters
    small = DdModel(2, 8, 1, 4).double()
    with pytest.raises(ValueError):
        small(yd, h, nv, 0.05, 2, get_mcs(14))


def test_llr_clip():
    torch.manual_seed(0)
    m = DdModel(2, 4, 1, 6, zero_output=False).double().eval()
    with torch.no_grad():
        m.net.out.bias.fill_(1e3)
    assert m(*dd_inputs(), 0.05, 2, get_mcs(3)).max() == 20.0


def test_input_plane_mismatch_rejected():
    m = CeModel(2, 4, 1).double()
    with pytest.raises(ValueError):
        m.net(torch.zeros(1, 4, 4, 5, dtype=torch.float64))


def test_layer_batch_independence():
    cfg = NeuralConfig(S=8, T=4, Nr=2, Nt=2, width=8, n_blocks=1)
    rx = NeuralReceiver.init(cfg, zero_output=False)
    ce, dd = rx.backends(L=2)
    yx, p, d, x, nv = (t.numpy() for t in ce_inputs(B=4))
    whole = ce(yx, p, d, x, nv)
    parts = np.concatenate([ce(yx[i:i + 1], p[i:i + 1], d[i:i + 1], x[i:i + 1], nv[i:i + 1])
                            for i in range(4)])
    assert np.array_equal(whole, parts)
    yd, h, nv = (t.numpy() for t in dd_inputs(B=4))
    whole = dd(yd, h, nv, get_mcs(7))
    parts = np.concatenate([dd(yd[i:i + 1], h[i:i + 1], nv[i:i + 1], get_mcs(7)) for i in range(4)])
    assert np.array_equal(whole, parts)


# ---------------------------------------------------------------- loss

def test_loss_examples():
    bits = torch.tensor([[0.0, 1.0, 1.0, 0.0]], dtype=torch.float64)
    perfect = 20.0 * (1 - 2 * bits)
    h = crand(1, 4)
    loss, bce, mse = iteration_loss(perfect, bits, h, h, 0.5)
    assert float(loss) < 1e-6 and float(mse) == 0.0
    wrong = -perfect
    l1, b1, _ = iteration_loss(wrong, bits, h, h + 1, 1.0)
    assert float(l1) == pytest.approx(float(b1))
    assert float(bce_from_llr(torch.zeros(5), torch.ones(5))) == pytest.approx(np.log(2))
    a, b = torch.tensor(0.3), torch.tensor(0.9)
    assert float(unrolled_loss([a, b])) == pytest.approx(0.6)
    assert float(mse_complex(torch.tensor([1 + 1j]), torch.tensor([0j]))) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        unrolled_loss([])


@given(st.lists(st.floats(-30, 30), min_size=1, max_size=20), st.integers(0, 1))
def test_bce_matches_logistic_formula(llrs, bit):
    llr = torch.tensor(llrs, dtype=torch.float64)
    b = torch.full_like(llr, bit)
    clipped = np.clip(np.array(llrs), -20, 20)
    # P(bit = 1) = 1 / (1 + e^llr); cross-entropy written in log-sum-exp form
    ref = np.mean(np.logaddexp(0.0, clipped) if bit else np.logaddexp(0.0, -clipped))
    assert float(bce_from_llr(llr, b)) == pytest.approx(ref, rel=1e-9, abs=1e-12)


# ---------------------------------------------------------------- optimizer

def test_adam_single_step_hand_formula():
    p = torch.tensor([0.5], dtype=torch.float64)
    g = torch.tensor([0.2], dtype=torch.float64)
    st_ = AdamState.for_params([p])
    adam_step([p], [g], st_, lr=1e-3)
    m_hat = (0.1 * 0.2) / (1 - 0.9)
    v_hat = (0.001 * 0.04) / (1 - 0.999)
    assert float(p) == pytest.approx(0.5 - 1e-3 * m_hat / (np.sqrt(v_hat) + 1e-8), abs=1e-15)
    assert float(p) == pytest.approx(0.5 - 1e-3, abs=1e-9)


def test_adam_zero_gradient_and_constant_gradient():
    p = torch.zeros(3, dtype=torch.float64)
    st_ = AdamState.for_params([p])
    for _ in range(5):
        adam_step([p], [torch.zeros(3, dtype=torch.float64)], st_, 1e-2)
    assert torch.count_nonzero(p) == 0
    q = torch.zeros(1, dtype=torch.float64)
    st_ = AdamState.for_params([q])
    prev = 0.0
    for _ in range(500):
        adam_step([q], [torch.tensor([3.0], dtype=torch.float64)], st_, 1e-3)
        step, prev = prev - float(q), float(q)
    assert step == pytest.approx(1e-3, rel=1e-4)
    with pytest.raises(ValueError):
        adam_step([q, q], [None, None], st_, 1e-3)


# ---------------------------------------------------------------- gradients

def _tiny_graph(seed=0):
    cfg = NeuralConfig(S=4, T=4, Nr=2, Nt=2, width=4, n_blocks=1, mcs=[3], M_max=2)
    rx = NeuralReceiver.init(cfg, zero_output=False)
    ce, dd = rx.ce.double().train(), rx.dd.double().train()
    g = torch.Generator().manual_seed(seed)
    yx, p, d, x, nv = ce_inputs(B=2, S=4, T=4, Nr=2, seed=seed)
    H = crand(2, 4, 4, 2, gen=g)
    bits = (torch.rand(2, 4, 4, 2, generator=g, dtype=torch.float64) > 0.5).double()

    def loss_fn():
        h = ce(yx, p, d, x, nv, 2)
        yd = yx - np.sqrt(0.05) * h * p[..., None]
        llr = dd(yd, h, nv, 0.05, 2, get_mcs(3))
        return iteration_loss(llr, bits, h, H, 0.5)[0]

    return rx.parameters(), loss_fn


KINK_GAP = 2e-3


def finite_difference_grads(params, loss_fn, eps=1e-4):
    """Central differences per parameter entry, plus a mask of entries at a ReLU kink.

    At a kink the forward and backward one-sided slopes disagree by O(1)
    instead of O(eps * curvature); central differences are no oracle there.
    """
    out, kinks = [], []
    with torch.no_grad():
        f0 = loss_fn().item()
        for p in params:
            g = torch.zeros_like(p)
            k = torch.zeros_like(p, dtype=torch.bool)
            flat, gf, kf = p.view(-1), g.view(-1), k.view(-1)
            for i in range(flat.numel()):
                old = flat[i].item()
                flat[i] = old + eps
                up = loss_fn().item()
                flat[i] = old - eps
                dn = loss_fn().item()
                flat[i] = old
                gf[i] = (up - dn) / (2 * eps)
                kf[i] = abs((up - f0) - (f0 - dn)) / eps > KINK_GAP
            out.append(g)
            kinks.append(k)
    return out, kinks


def max_relative_grad_error(seed=0, floor=1e-6):
    """Largest per-tensor normwise relative error between autograd and central differences.

    Conv biases feeding straight into batchnorm have an exactly-zero
    gradient, so the denominator is floored. Entries sitting on a ReLU kink
    are excluded and counted.
    """
    params, loss_fn = _tiny_graph(seed)
    analytic = torch.autograd.grad(loss_fn(), params)
    numeric, kinks = finite_difference_grads(params, loss_fn)
    errs, n_kink, n_all = [], 0, 0
    for a, n, k in zip(analytic, numeric, kinks):
        a, n = a.masked_fill(k, 0.0), n.masked_fill(k, 0.0)
        scale = max(a.norm().item(), n.norm().item(), floor)
        errs.append((a - n).norm().item() / scale)
        n_kink += int(k.sum())
        n_all += k.numel()
    return max(errs), n_kink / n_all


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_gradient_matches_finite_differences(seed):
    err, kink_fraction = max_relative_grad_error(seed)
    assert kink_fraction < 0.005
    assert err < 1e-4


def test_gradient_scales_with_loss():
    params, loss_fn = _tiny_graph(1)
    g1 = torch.autograd.grad(loss_fn(), params)
    g2 = torch.autograd.grad(2 * loss_fn(), params)
    for a, b in zip(g1, g2):
        assert torch.allclose(2 * a, b, rtol=1e-12, atol=1e-15)


def test_zeroed_branch_has_zero_gradient():
    m = CeModel(2, 4, 1, zero_output=False).double().train()
    yx, p, d, x, nv = ce_inputs(B=2, S=4, T=4)
    d = torch.zeros_like(d).requires_grad_(True)
    h = m(yx, p, d, x, nv, 2)
    with torch.no_grad():
        m.net.inp.weight.zero_()
    # d enters only through the input conv; with that conv zeroed the gradient vanishes
    h = m(yx, p, d, x, nv, 2)
    (gd,) = torch.autograd.grad(h.abs().pow(2).sum(), [d])
    assert torch.count_nonzero(gd) == 0


# ---------------------------------------------------------------- receiver, checkpoints, training

def tiny_config(**kw):
    base = dict(S=8, T=4, Nr=2, Nt=2, width=4, n_blocks=1, mcs=[3], batch=2, steps=3,
                V=2, log_every=1, snr_db=(0.0, 20.0))
    base.update(kw)
    return NeuralConfig(**base)


def test_config_validation():
    with pytest.raises(ValueError):
        tiny_config(alpha=1.0)
    with pytest.raises(ValueError):
        tiny_config(tau=2.0)
    with pytest.raises(ValueError):
        tiny_config(mcs=[14], M_max=4)
    with pytest.raises(KeyError):
        tiny_config(mcs=[99])


def test_checkpoint_roundtrip(tmp_path):
    rx, _ = train(tiny_config(steps=1))
    blob = checkpoint_bytes(rx)
    path = tmp_path / "m.ckpt"
    save_checkpoint(rx, path)
    rx2, header = load_checkpoint(path)
    assert header["m_max"] == 6 and header["byte_order"] == "little"
    assert checkpoint_bytes(rx2) == blob
    for a, b in zip(rx.parameters(), rx2.parameters()):
        assert torch.equal(a.float(), b)
    with pytest.raises(CheckpointError):
        checkpoint_from_bytes(b"XXXXXXXX" + blob[8:])
    with pytest.raises(CheckpointError):
        checkpoint_from_bytes(blob + b"\0\0\0\0")


def test_training_is_deterministic():
    _, a = train(tiny_config())
    _, b = train(tiny_config())
    assert [r["loss"] for r in a.records] == [r["loss"] for r in b.records]
    assert set(a.records[0]) >= {"step", "loss", "bce", "mse", "lr"}
    assert a.to_jsonl().count("\n") == 3


def test_training_round_robin_over_layers():
    rx, log = train(tiny_config(layers=[1, 2], mcs=[3, 7], steps=4))
    assert len(log.records) == 4
    for L in (1, 2):
        ce, dd = rx.backends(L)
        assert ce.L == L


def test_untrained_model_outputs_erasures():
    rx = NeuralReceiver.init(tiny_config())
    ce, dd = rx.backends(2)
    yx, p, d, x, nv = (t.numpy() for t in ce_inputs(B=2))
    assert not ce(yx, p, d, x, nv).any()
    yd, h, nv = (t.numpy() for t in dd_inputs(B=2))
    assert not dd(yd, h, nv, get_mcs(3)).any()


def test_divergence_is_reported(monkeypatch):
    import fsip.neural as nm
    orig = nm.iteration_loss

    def nan_loss(*a, **k):
        loss, b, m = orig(*a, **k)
        return loss * float("nan"), b, m

    monkeypatch.setattr(nm, "iteration_loss", nan_loss)
    with pytest.raises(nm.TrainingDiverged):
        train(tiny_config(steps=1))
