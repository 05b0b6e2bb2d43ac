"""Resource-grid primitives, MCS table and SNR arithmetic.

Array layout conventions used throughout the package (row-major, last axis
innermost, optional leading batch axes):

    ResourceGrid      (S, T)            complex128
    MultiLayerGrid    (S, T, L)         complex128
    RxTensor          (S, T, Nr)        complex128
    ChannelTensor     (S, T, L, Nr)     complex128
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np


@dataclass(frozen=True)
class GridDims:
    """Time-frequency allocation and antenna configuration of one slot."""

    S: int
    T: int
    L: int
    Nr: int
    Nt: int

    def __post_init__(self):
        for name in ("S", "T", "L", "Nr", "Nt"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v <= 0:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
        if (self.S * self.T) % self.L:
            raise ValueError(
                f"S*T={self.S * self.T} is not divisible by L={self.L}")
        if self.L > min(self.Nt, self.Nr):
            raise ValueError(
                f"L={self.L} exceeds min(Nt, Nr)={min(self.Nt, self.Nr)}")

    @property
    def n_groups(self) -> int:
        """Number of CDM groups G = S*T/L."""
        return self.S * self.T // self.L

    @property
    def n_re(self) -> int:
        return self.S * self.T

    def with_layers(self, L: int) -> "GridDims":
        return GridDims(self.S, self.T, L, self.Nr, self.Nt)


@dataclass(frozen=True)
class McsEntry:
    index: int
    M: int
    gamma: Fraction
    label: str

    def __post_init__(self):
        if self.M <= 0 or self.M % 2:
            raise ValueError(f"M must be a positive even integer, got {self.M}")
        if not 0 < self.gamma < 1:
            raise ValueError(f"coderate must lie in (0, 1), got {self.gamma}")


DEFAULT_MCS_TABLE: dict[int, McsEntry] = {
    3: McsEntry(3, 2, Fraction(449, 1024), "QPSK"),
    7: McsEntry(7, 4, Fraction(490, 1024), "16QAM"),
    14: McsEntry(14, 6, Fraction(719, 1024), "64QAM"),
}

# conditioning plane value is m / MCS_INDEX_NORM
MCS_INDEX_NORM = 15


def mcs_table_from_records(records) -> dict[int, McsEntry]:
    """Build an MCS table from config records ``{index, M, gamma, label}``.

    ``gamma`` may be a float, a ``"num/den"`` string or a Fraction. The
    built-in entries are kept unless overridden by index.
    """
    table = dict(DEFAULT_MCS_TABLE)
    for rec in records:
        gamma = Fraction(str(rec["gamma"])).limit_denominator(1 << 16)
        idx = int(rec["index"])
        table[idx] = McsEntry(idx, int(rec["M"]), gamma,
                              str(rec.get("label", f"mcs{idx}")))
    return table


def get_mcs(m: int, table: dict[int, McsEntry] | None = None) -> McsEntry:
    table = DEFAULT_MCS_TABLE if table is None else table
    try:
        return table[m]
    except KeyError:
        raise KeyError(f"unknown MCS index {m}; known: {sorted(table)}") from None


def snr_to_noise_variance(snr_db: float) -> float:
    """Noise variance per complex element for unit total transmit power."""
    snr_db = float(snr_db)
    if not np.isfinite(snr_db):
        raise ValueError("snr_db must be finite")
    return 10.0 ** (-snr_db / 10.0)


def hadamard_apply(h: np.ndarray, x: np.ndarray) -> np.ndarray:
    h = np.asarray(h)
    x = np.asarray(x)
    if h.shape != x.shape:
        raise ValueError(f"dimension mismatch: {h.shape} vs {x.shape}")
    return h * x


def grid_power(x: np.ndarray) -> float:
    """Mean per-RE total power of a multi-layer grid shaped (S, T, L)."""
    x = np.asarray(x)
    if x.ndim != 3 or x.size == 0:
        raise ValueError(f"expected a nonempty (S, T, L) grid, got {x.shape}")
    S, T, _ = x.shape
    return float(np.sum(np.abs(x) ** 2) / (S * T))


def check_finite(a: np.ndarray, name: str = "array") -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise FloatingPointError(f"{name} contains NaN or Inf")
    return a
