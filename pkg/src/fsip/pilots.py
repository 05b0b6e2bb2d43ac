"""Pilot generation and transmit-grid assembly.

Superimposed pilots: the S*T REs of a slot are split into G = S*T/L CDM
groups of L consecutive subcarriers (frequency-first). Layer ``l`` carries
``seed_g * c_l[n]`` on the n-th RE of group g, with ``c_l`` the l-th DFT
column, so pilots of different layers are orthogonal group by group while
every RE of every layer carries a pilot.

DMRS: comb/CDM layout of NR configuration type 1. Layers 2j and 2j+1 share
comb j (subcarriers s = j mod 2) and are separated by a +-1 cover over
pairs of adjacent comb REs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .grid import GridDims


def dft_omc(L: int, l: int) -> np.ndarray:
    """DFT orthogonal mask code of layer ``l`` (1-based), length L."""
    if not 1 <= l <= L:
        raise ValueError(f"layer index {l} outside 1..{L}")
    n = np.arange(L)
    return np.exp(-2j * np.pi * n * (l - 1) / L)


def group_view(x: np.ndarray, L: int) -> np.ndarray:
    """Reshape trailing (S, T) axes into (G, L) CDM groups, frequency-first."""
    *lead, S, T = x.shape
    return np.swapaxes(x, -1, -2).reshape(*lead, S * T // L, L)


def ungroup(x: np.ndarray, S: int, T: int) -> np.ndarray:
    *lead, G, L = x.shape
    return np.swapaxes(x.reshape(*lead, T, S), -1, -2)


@dataclass(frozen=True, eq=False)
class PilotBook:
    dims: GridDims
    seed: int
    seeds: np.ndarray  # (G,) complex, |.|^2 = 1/L
    codes: np.ndarray  # (L, L): codes[l] is c_{l+1}
    grids: np.ndarray  # (S, T, L)

    @property
    def L(self) -> int:
        return self.dims.L

    def layer(self, l: int) -> np.ndarray:
        """Pilot grid of 0-based layer ``l`` (S, T)."""
        return self.grids[..., l]

    def group_positions(self) -> np.ndarray:
        """(G, L, 2) array of (s, t) coordinates of every group member."""
        S, T = self.dims.S, self.dims.T
        s, t = np.meshgrid(np.arange(S), np.arange(T), indexing="ij")
        return np.stack([group_view(s, self.L), group_view(t, self.L)], axis=-1)

    def to_json(self) -> str:
        d = self.dims
        return json.dumps({
            "S": d.S, "T": d.T, "L": d.L, "seed": self.seed,
            "grouping": "frequency-first",
            "groups": self.group_positions().tolist(),
            "seeds": [[float(z.real), float(z.imag)] for z in self.seeds],
            "codes": [[[float(z.real), float(z.imag)] for z in c] for c in self.codes],
        }, indent=1)


def build_pilot_book(dims: GridDims, seed: int = 0) -> PilotBook:
    L = dims.L
    rng = np.random.default_rng([seed, 0x5EED])
    G = dims.n_groups
    re = 1 - 2 * rng.integers(0, 2, G)
    im = 1 - 2 * rng.integers(0, 2, G)
    seeds = (re + 1j * im) / np.sqrt(2 * L)
    codes = np.stack([dft_omc(L, l) for l in range(1, L + 1)])
    grouped = seeds[:, None, None] * codes.T[None, :, :]  # (G, n, l)
    grids = np.stack([ungroup(grouped[..., l], dims.S, dims.T) for l in range(L)], axis=-1)
    for a in (seeds, codes, grids):
        a.setflags(write=False)
    return PilotBook(dims, seed, seeds, codes, grids)


def superimpose(D: np.ndarray, pilots: np.ndarray, alpha: float) -> np.ndarray:
    """X = sqrt(1-alpha) D + sqrt(alpha) P (any matching shapes)."""
    if not 0 <= alpha < 1:
        raise ValueError(f"alpha must lie in [0, 1), got {alpha}")
    D = np.asarray(D)
    P = np.asarray(pilots.grids if isinstance(pilots, PilotBook) else pilots)
    if D.shape[-P.ndim:] != P.shape:
        raise ValueError(f"data grid {D.shape} does not match pilots {P.shape}")
    return np.sqrt(1 - alpha) * D + np.sqrt(alpha) * P


# --------------------------------------------------------------------------
# DMRS (Baseline I)
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class DmrsPattern:
    Np: int
    symbols: tuple[int, ...]
    cdm_groups_without_data: int = 2

    def __post_init__(self):
        if len(self.symbols) != self.Np:
            raise ValueError("number of pilot symbols must equal Np")
        if self.cdm_groups_without_data not in (1, 2):
            raise ValueError("cdm_groups_without_data must be 1 or 2")


def dmrs_pattern(Np: int, T: int = 12) -> DmrsPattern:
    """Front-loaded pattern (Np=1) or front-loaded plus 3 additional symbols (Np=4).

    Np=1 reserves both combs of its symbol; Np=4 leaves the unused comb of
    every pilot symbol to data, matching the 11/12 and 10/12 data ratios.
    """
    if Np >= T:
        raise ValueError(f"Np={Np} leaves no data symbols in T={T}")
    if Np == 1:
        return DmrsPattern(1, (0,), 2)
    if Np == 4:
        step = T // 4
        return DmrsPattern(4, tuple(range(0, 4 * step, step)), 1)
    raise ValueError("supported Np values are 1 and 4")


@dataclass(frozen=True, eq=False)
class DmrsGrids:
    pattern: DmrsPattern
    dims: GridDims
    grids: np.ndarray  # (S, T, L) pilot symbols, zero elsewhere
    pilot_mask: np.ndarray  # (S, T, L) bool
    data_mask: np.ndarray  # (S, T) bool
    base: np.ndarray = field(repr=False)  # (S, T) base QPSK sequence

    @property
    def omega(self) -> float:
        return float(self.data_mask.mean())

    @property
    def pilot_power(self) -> float:
        return 2.0 / self.dims.L


COVERS = np.array([[1.0, 1.0], [1.0, -1.0]])


def build_dmrs_grids(pattern: DmrsPattern, dims: GridDims, seed: int = 0) -> DmrsGrids:
    S, T, L = dims.S, dims.T, dims.L
    if pattern.Np >= T or max(pattern.symbols) >= T:
        raise ValueError("pilot symbols do not fit into the slot")
    if L > 4:
        raise ValueError("DMRS type 1 supports at most 4 layers")
    if S % 4:
        raise ValueError("S must be a multiple of 4 for the comb/CDM layout")
    if pattern.cdm_groups_without_data == 1 and L > 2:
        raise ValueError("a single reserved CDM group carries at most 2 layers")
    rng = np.random.default_rng([seed, 0xD3A5])
    base = np.zeros((S, T), dtype=complex)
    amp = np.sqrt(2.0 / L)
    grids = np.zeros((S, T, L), dtype=complex)
    pmask = np.zeros((S, T, L), dtype=bool)
    data = np.ones((S, T), dtype=bool)
    for t in pattern.symbols:
        base[:, t] = ((1 - 2 * rng.integers(0, 2, S)) + 1j * (1 - 2 * rng.integers(0, 2, S))) / np.sqrt(2)
        data[:, t] = False
        if pattern.cdm_groups_without_data == 1:
            data[1::2, t] = True
        for l in range(L):
            comb, cover = divmod(l, 2)
            sc = np.arange(comb, S, 2)
            w = np.tile(COVERS[cover], sc.size // 2)
            grids[sc, t, l] = amp * w * base[sc, t]
            pmask[sc, t, l] = True
    for a in (grids, pmask, data, base):
        a.setflags(write=False)
    return DmrsGrids(pattern, dims, grids, pmask, data, base)
