"""Gray-mapped square QAM and max-log soft demapping.

Labeling (per axis, reflected Gray). Bits of a symbol are ``b0 b1 ... b(M-1)``;
even-indexed bits drive the in-phase axis, odd-indexed bits the quadrature
axis. For one axis with bits ``(a0, a1, ...)`` the amplitude is built
recursively as in 3GPP TS 38.211::

    M=2  : (1 - 2 a0)
    M=4  : (1 - 2 a0) * (2 - (1 - 2 a1))
    M=6  : (1 - 2 a0) * (4 - (1 - 2 a1) * (2 - (1 - 2 a2)))

followed by normalization with 1/sqrt(2), 1/sqrt(10), 1/sqrt(42). The
resulting per-axis tables (label -> unnormalized level) are

    QPSK   0 -> +1, 1 -> -1
    16QAM  00 -> +1, 01 -> +3, 10 -> -1, 11 -> -3
    64QAM  000 -> +3, 001 -> +1, 010 -> +5, 011 -> +7,
           100 -> -3, 101 -> -1, 110 -> -5, 111 -> -7

LLR sign convention: positive means bit 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np


@dataclass(frozen=True)
class Constellation:
    M: int
    points: np.ndarray  # (2**M,) complex, indexed by the integer label b0..b(M-1) MSB-first
    labels: np.ndarray  # (2**M, M) uint8 bit table

    @property
    def size(self) -> int:
        return 1 << self.M


def _pam_levels(k: int) -> np.ndarray:
    """Unnormalized level for every per-axis label (label bits read MSB-first)."""
    n = 1 << k
    out = np.empty(n)
    for label in range(n):
        a = [(label >> (k - 1 - i)) & 1 for i in range(k)]
        v = 1.0
        for i in range(k - 1, 0, -1):
            v = (1 << (k - i)) - (1 - 2 * a[i]) * v
        out[label] = (1 - 2 * a[0]) * v
    return out


@lru_cache(maxsize=None)
def constellation(M: int) -> Constellation:
    if M <= 0 or M % 2:
        raise ValueError(f"M must be a positive even integer, got {M}")
    k = M // 2
    levels = _pam_levels(k)
    n = 1 << M
    labels = ((np.arange(n)[:, None] >> (M - 1 - np.arange(M))[None, :]) & 1).astype(np.uint8)
    weights = 1 << (k - 1 - np.arange(k))
    i_lab = labels[:, 0::2] @ weights
    q_lab = labels[:, 1::2] @ weights
    pts = levels[i_lab] + 1j * levels[q_lab]
    pts = pts / np.sqrt(np.mean(np.abs(pts) ** 2))
    pts.setflags(write=False)
    labels.setflags(write=False)
    return Constellation(M, pts, labels)


def qam_modulate(bits: np.ndarray, M: int) -> np.ndarray:
    """Map a bit array (last axis length divisible by M) to unit-power symbols."""
    bits = np.asarray(bits)
    if bits.shape[-1] % M:
        raise ValueError(f"bit count {bits.shape[-1]} is not divisible by M={M}")
    c = constellation(M)
    groups = bits.reshape(*bits.shape[:-1], -1, M).astype(np.int64)
    idx = groups @ (1 << (M - 1 - np.arange(M)))
    return c.points[idx]


def hard_demap(symbols: np.ndarray, M: int) -> np.ndarray:
    """Nearest-point hard decision; returns bits with last axis N*M."""
    c = constellation(M)
    s = np.asarray(symbols)
    idx = np.argmin(np.abs(s[..., None] - c.points) ** 2, axis=-1)
    bits = c.labels[idx]
    return bits.reshape(*s.shape[:-1], -1)


def maxlog_demap(y, h_eff, sigma2_eff, M: int) -> np.ndarray:
    """Max-log LLRs, shape ``broadcast(y, h_eff, sigma2_eff).shape + (M,)``.

    LLR_b = (min_{q: b=1} |y - h q|^2 - min_{q: b=0} |y - h q|^2) / sigma2.
    """
    sigma2_eff = np.asarray(sigma2_eff, dtype=float)
    if np.any(sigma2_eff <= 0):
        raise ValueError("sigma2_eff must be positive")
    c = constellation(M)
    y, h, s2 = np.broadcast_arrays(np.asarray(y, dtype=complex),
                                   np.asarray(h_eff, dtype=complex), sigma2_eff)
    d = np.abs(y[..., None] - h[..., None] * c.points) ** 2
    llr = np.empty(y.shape + (M,))
    for b in range(M):
        one = c.labels[:, b].astype(bool)
        llr[..., b] = d[..., one].min(axis=-1) - d[..., ~one].min(axis=-1)
    return llr / s2[..., None]
