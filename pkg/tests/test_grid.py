from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fsip.grid import (DEFAULT_MCS_TABLE, GridDims, McsEntry, check_finite, get_mcs,
                       grid_power, hadamard_apply, mcs_table_from_records,
                       snr_to_noise_variance)


def test_griddims_invariants():
    d = GridDims(24, 12, 2, 4, 4)
    assert d.n_groups == 144 and d.n_re == 288
    with pytest.raises(ValueError):
        GridDims(5, 1, 2, 2, 2)  # S*T not divisible by L
    with pytest.raises(ValueError):
        GridDims(4, 4, 4, 2, 4)  # L > Nr
    with pytest.raises(ValueError):
        GridDims(0, 4, 1, 1, 1)


def test_default_mcs_table():
    assert get_mcs(3) == McsEntry(3, 2, Fraction(449, 1024), "QPSK")
    assert get_mcs(7).M == 4 and get_mcs(7).gamma == Fraction(490, 1024)
    assert get_mcs(14).M == 6 and get_mcs(14).gamma == Fraction(719, 1024)
    with pytest.raises(KeyError):
        get_mcs(5)


def test_mcs_table_from_records():
    t = mcs_table_from_records([{"index": 5, "M": 4, "gamma": "1/2", "label": "x"}])
    assert t[5].gamma == Fraction(1, 2) and 3 in t
    with pytest.raises(ValueError):
        McsEntry(1, 3, Fraction(1, 2), "odd")
    with pytest.raises(ValueError):
        McsEntry(1, 2, Fraction(1), "rate one")


@pytest.mark.parametrize("snr,expected", [(0, 1.0), (10, 0.1), (25, 0.0031622776601683794)])
def test_snr_to_noise_variance(snr, expected):
    assert snr_to_noise_variance(snr) == pytest.approx(expected, rel=1e-12)
    # independent evaluation via the natural log
    assert snr_to_noise_variance(snr) == pytest.approx(np.exp(-snr / 10 * np.log(10)), rel=1e-12)


def test_snr_rejects_nonfinite():
    with pytest.raises(ValueError):
        snr_to_noise_variance(float("nan"))


def test_hadamard_examples(rng):
    x = rng.standard_normal((3, 4)) + 1j * rng.standard_normal((3, 4))
    assert np.array_equal(hadamard_apply(np.ones((3, 4)), x), x)
    assert not hadamard_apply(x, np.zeros((3, 4))).any()
    assert np.array_equal(hadamard_apply(2 * np.ones((2, 2)), np.ones((2, 2))), 2 * np.ones((2, 2)))
    with pytest.raises(ValueError):
        hadamard_apply(np.ones((2, 3)), np.ones((3, 2)))


@given(st.integers(0, 2**32 - 1))
def test_hadamard_distributes(seed):
    r = np.random.default_rng(seed)
    h, a, b = (r.standard_normal((4, 3)) + 1j * r.standard_normal((4, 3)) for _ in range(3))
    lhs = hadamard_apply(h, a + b)
    rhs = hadamard_apply(h, a) + hadamard_apply(h, b)
    assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-12)


def test_grid_power_examples():
    assert grid_power(np.zeros((4, 2, 2))) == 0
    x = np.exp(1j * np.arange(16)).reshape(4, 2, 2) / np.sqrt(2)
    assert grid_power(x) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValueError):
        grid_power(np.zeros((4, 2)))


def test_check_finite():
    check_finite(np.ones(3))
    with pytest.raises(FloatingPointError):
        check_finite(np.array([1.0, np.inf]))


def test_table_labels():
    assert {e.label for e in DEFAULT_MCS_TABLE.values()} == {"QPSK", "16QAM", "64QAM"}
