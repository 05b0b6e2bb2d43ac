"""Transmit chain and slot generation shared by the harness and training.

One LDPC codeword per layer per slot. For superimposed pilots the codeword
fills all S*T REs (n = S*T*M); for DMRS it fills the data REs only.
Codeword bits map to REs row-major over (s, t), M consecutive bits per RE.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import (DopplerSpec, TapProfile, apply_channel, complex_noise,
                      sample_channel, svd_precode)
from .fec import CRC_LEN, ParityCheckMatrix, code_for, crc16_attach
from .grid import GridDims, McsEntry, snr_to_noise_variance
from .modulation import qam_modulate
from .pilots import DmrsGrids, PilotBook, superimpose


@dataclass(frozen=True)
class ChannelConfig:
    profile: TapProfile
    doppler: DopplerSpec
    scs: float = 30e3


@dataclass(frozen=True, eq=False)
class SlotBatch:
    payload: np.ndarray  # (N, L, k - 16)
    info: np.ndarray  # (N, L, k)
    codewords: np.ndarray  # (N, L, n)
    D: np.ndarray  # (N, S, T, L) data symbols at per-RE power 1/L (zero on pilot REs)
    X: np.ndarray  # (N, S, T, L) transmitted grid
    H: np.ndarray  # (N, S, T, L, Nr)
    noise: np.ndarray  # (N, S, T, Nr)
    Y: np.ndarray  # (N, S, T, Nr)
    sigma2: np.ndarray  # (N,)
    snr_db: np.ndarray  # (N,)


def sample_precoded(dims: GridDims, ch: ChannelConfig, rng: np.random.Generator, n: int) -> np.ndarray:
    G = sample_channel(ch.profile, ch.doppler, dims.S, dims.T, dims.Nr, dims.Nt, rng,
                       n_slots=n, scs=ch.scs)
    return svd_precode(G, dims.L)[1]


@dataclass(eq=False)
class SipLink:
    dims: GridDims
    mcs: McsEntry
    alpha: float
    book: PilotBook
    code_seed: int = 0
    code: ParityCheckMatrix = field(init=False)

    def __post_init__(self):
        if self.book.dims != self.dims:
            raise ValueError("pilot book dimensions do not match the link")
        self.code = code_for(self.n_coded, self.mcs.gamma, self.code_seed)

    @property
    def n_coded(self) -> int:
        return self.dims.S * self.dims.T * self.mcs.M

    @property
    def payload_len(self) -> int:
        return self.code.k - CRC_LEN

    def map_codewords(self, cw: np.ndarray) -> np.ndarray:
        """(..., L, n) coded bits -> (..., S, T, L) data symbols at power 1/L."""
        S, T, L = self.dims.S, self.dims.T, self.dims.L
        sym = qam_modulate(cw, self.mcs.M).reshape(*cw.shape[:-1], S, T)
        return np.moveaxis(sym, -3, -1) / np.sqrt(L)

    def transmit(self, payload: np.ndarray):
        info = crc16_attach(payload)
        cw = self.code.encode(info)
        D = self.map_codewords(cw)
        return info, cw, D, superimpose(D, self.book, self.alpha)

    def generate(self, n: int, snr_db, ch: ChannelConfig, rng: np.random.Generator) -> SlotBatch:
        snr = np.broadcast_to(np.asarray(snr_db, dtype=float), (n,)).copy()
        L = self.dims.L
        payload = rng.integers(0, 2, (n, L, self.payload_len), dtype=np.uint8)
        info, cw, D, X = self.transmit(payload)
        H = sample_precoded(self.dims, ch, rng, n)
        s2 = np.array([snr_to_noise_variance(s) for s in snr])
        clean = apply_channel(H, X, 0.0)
        noise = complex_noise(clean.shape, s2[:, None, None, None], rng)
        return SlotBatch(payload, info, cw, D, X, H, noise, clean + noise, s2, snr)


@dataclass(eq=False)
class DmrsLink:
    dims: GridDims
    mcs: McsEntry
    dm: DmrsGrids
    code_seed: int = 0
    code: ParityCheckMatrix = field(init=False)

    def __post_init__(self):
        self.code = code_for(self.n_coded, self.mcs.gamma, self.code_seed)

    @property
    def n_coded(self) -> int:
        return int(self.dm.data_mask.sum()) * self.mcs.M

    @property
    def payload_len(self) -> int:
        return self.code.k - CRC_LEN

    def transmit(self, payload: np.ndarray):
        S, T, L = self.dims.S, self.dims.T, self.dims.L
        info = crc16_attach(payload)
        cw = self.code.encode(info)
        sym = qam_modulate(cw, self.mcs.M) / np.sqrt(L)  # (..., L, N_data)
        D = np.zeros(cw.shape[:-2] + (S, T, L), dtype=complex)
        D[..., self.dm.data_mask, :] = np.moveaxis(sym, -2, -1)
        X = D + self.dm.grids
        return info, cw, D, X

    def generate(self, n: int, snr_db, ch: ChannelConfig, rng: np.random.Generator) -> SlotBatch:
        snr = np.broadcast_to(np.asarray(snr_db, dtype=float), (n,)).copy()
        L = self.dims.L
        payload = rng.integers(0, 2, (n, L, self.payload_len), dtype=np.uint8)
        info, cw, D, X = self.transmit(payload)
        H = sample_precoded(self.dims, ch, rng, n)
        s2 = np.array([snr_to_noise_variance(s) for s in snr])
        clean = apply_channel(H, X, 0.0)
        noise = complex_noise(clean.shape, s2[:, None, None, None], rng)
        return SlotBatch(payload, info, cw, D, X, H, noise, clean + noise, s2, snr)
