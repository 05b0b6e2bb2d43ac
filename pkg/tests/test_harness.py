from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import isotonic_regression

from fsip.grid import get_mcs
from fsip.harness import (CSV_COLUMNS, ConfigError, RunConfig, compute_throughput,
                          evaluate_point, generate_dataset, load_dataset, round_robin,
                          run_bler_sweep, wilson_interval)


# ---------------------------------------------------------------- throughput

def test_throughput_hand_value():
    r = compute_throughput(2000, 96, 12, 4, 1, Fraction(490, 1024), 4, 0)
    assert r == 17_640_000
    assert compute_throughput(2000, 96, 12, 4, 1, Fraction(490, 1024), 4, 1) == 0


@given(st.integers(1, 4000), st.integers(1, 128), st.integers(1, 14), st.sampled_from([1, 2, 4, 8]),
       st.sampled_from([3, 7, 14]), st.fractions(0, 1))
def test_throughput_omega_scaling_exact(n_slot, S, T, L, m, bler):
    mcs = get_mcs(m)
    base = compute_throughput(n_slot, S, T, L, 1, mcs.gamma, mcs.M, bler)
    for omega in (Fraction(11, 12), Fraction(10, 12)):
        assert compute_throughput(n_slot, S, T, L, omega, mcs.gamma, mcs.M, bler) == base * omega
    if base:
        assert base / compute_throughput(n_slot, S, T, L, Fraction(11, 12), mcs.gamma, mcs.M, bler) == Fraction(12, 11)
        assert base / compute_throughput(n_slot, S, T, L, Fraction(10, 12), mcs.gamma, mcs.M, bler) == Fraction(12, 10)


def test_throughput_rejects_bad_inputs():
    for kw in ({"bler": 1.5}, {"bler": -0.1}, {"omega": 0}, {"omega": Fraction(13, 12)}):
        args = dict(n_slot=2000, S=24, T=12, L=2, omega=1, gamma=Fraction(1, 2), M=4, bler=0)
        args.update(kw)
        with pytest.raises(ValueError):
            compute_throughput(**args)


def test_wilson_interval():
    lo, hi = wilson_interval(0, 100)
    assert lo == pytest.approx(0.0, abs=1e-12) and 0.03 < hi < 0.04  # rule-of-three neighbourhood
    lo, hi = wilson_interval(50, 100)
    assert lo == pytest.approx(0.4038, abs=1e-3) and hi == pytest.approx(0.5962, abs=1e-3)
    assert wilson_interval(0, 0) == (0.0, 1.0)


# ---------------------------------------------------------------- configuration

def test_run_config_validation():
    with pytest.raises(ConfigError):
        RunConfig(snr_db=[])
    with pytest.raises(ConfigError):
        RunConfig(slots=0)
    with pytest.raises(ConfigError):
        RunConfig(scheme="nope")
    with pytest.raises(ConfigError):
        RunConfig(mcs=[99])
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"bogus": 1})
    c = RunConfig.from_dict({"snr_db": [1, 2], "layers": 4})
    assert c.layers == [4] and RunConfig.from_dict(c.to_dict()) == c


def test_neural_scheme_needs_receiver():
    with pytest.raises(ConfigError):
        evaluate_point(RunConfig(scheme="sip-neural", slots=1), 2, 7, 10.0, 0)


# ---------------------------------------------------------------- sweeps

def flat_cfg(**kw):
    base = dict(profile="flat", speed_kmh=0.0, slots=100, batch=50, mcs=[7], layers=[2], V=3, alpha=0.2)
    base.update(kw)
    return RunConfig(**base)


def test_noise_free_limit_has_no_errors():
    r = evaluate_point(flat_cfg(), 2, 7, 60.0, 0)
    assert r.tb_errors == 0 and r.bler == 0


def test_noise_dominated_limit_fails_everything():
    r = evaluate_point(flat_cfg(), 2, 7, -30.0, 0)
    assert r.bler == 1.0 and r.throughput_bps == 0.0


def test_sweep_csv_is_reproducible(tmp_path):
    cfg = flat_cfg(profile="tdl-a-like", speed_kmh=30.0, slots=20, batch=10, snr_db=[0.0, 8.0])
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    res = run_bler_sweep(cfg, a)
    run_bler_sweep(cfg, b)
    assert a.read_bytes() == b.read_bytes()
    lines = a.read_text().splitlines()
    assert tuple(lines[0].split(",")) == CSV_COLUMNS and len(lines) == 3
    assert [r.slots for r in res] == [20, 20]
    assert all(len(r.ce_mse) == 3 for r in res)


def test_dmrs_throughput_ratio_at_equal_bler():
    sip = evaluate_point(flat_cfg(slots=10, batch=10), 2, 7, 60.0, 0)
    d1 = evaluate_point(flat_cfg(slots=10, batch=10, scheme="dmrs-baseline"), 2, 7, 60.0, 0)
    d4 = evaluate_point(flat_cfg(slots=10, batch=10, scheme="dmrs-baseline", dmrs_np=4), 2, 7, 60.0, 0)
    assert sip.bler == d1.bler == d4.bler == 0
    assert Fraction(sip.throughput_bps) / Fraction(d1.throughput_bps) == Fraction(12, 11)
    assert Fraction(sip.throughput_bps) / Fraction(d4.throughput_bps) == Fraction(12, 10)


def test_bler_monotone_in_snr():
    cfg = RunConfig(scheme="dmrs-baseline", mcs=[3], slots=500, batch=100,
                    snr_db=[-6.0, -3.0, 0.0, 3.0, 6.0], seed=4)
    bler = np.array([r.bler for r in run_bler_sweep(cfg)])
    fit = isotonic_regression(bler, increasing=False).x
    assert np.abs(bler - fit).max() < 0.02
    assert bler[0] > bler[-1]


# ---------------------------------------------------------------- datasets

def test_round_robin_counts():
    picks = [round_robin(i, [3, 7, 14], [2])[0] for i in range(8)]
    assert [picks.count(m) for m in (3, 7, 14)] == [3, 3, 2]
    assert [round_robin(i, [7], [2, 4])[1] for i in range(4)] == [2, 4, 2, 4]


def test_dataset_roundtrip(tmp_path):
    cfg = RunConfig(S=12, T=4, Nr=2, Nt=2, mcs=[3, 7, 14], layers=[1, 2],
                    dataset_snr_db=(-5.0, 5.0), seed=2)
    path = tmp_path / "d.bin"
    ds = generate_dataset(cfg, 8, path)
    assert len(ds) == 8
    assert [list(ds.m).count(m) for m in (3, 7, 14)] == [3, 3, 2]
    assert set(ds.L) == {1, 2}
    snr = -10 * np.log10(ds.sigma2.astype(float))
    assert snr.min() >= -5.0 - 1e-4 and snr.max() <= 5.0 + 1e-4
    assert np.allclose(snr, ds.snr_db, atol=1e-4)
    again = load_dataset(path)
    for name in ("m", "L", "sigma2", "Y", "H", "P", "bits"):
        assert np.array_equal(getattr(ds, name), getattr(again, name))
    # padding beyond the active layer count and modulation order stays zero
    one = np.flatnonzero(ds.L == 1)[0]
    assert not ds.H[one, :, :, 1].any() and not ds.bits[one, 1].any()
    n3 = np.flatnonzero(ds.m == 3)[0]
    assert not ds.bits[n3, :, 12 * 4 * 2:].any()
    assert generate_dataset(cfg, 8, tmp_path / "e.bin") is not None
    assert (tmp_path / "e.bin").read_bytes() == path.read_bytes()


def test_dataset_errors(tmp_path):
    with pytest.raises(ConfigError):
        generate_dataset(RunConfig(), 0, tmp_path / "x.bin")
    (tmp_path / "junk.bin").write_bytes(b"nope")
    with pytest.raises(ConfigError):
        load_dataset(tmp_path / "junk.bin")
