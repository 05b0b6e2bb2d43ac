"""Tapped-delay-line fading, SVD precoding and AWGN.

The antenna-domain channel of one slot is ``G[s, t, r, q]`` (subcarrier,
symbol, rx antenna, tx antenna). Each tap carries i.i.d. unit-power
coefficients per antenna pair whose time evolution follows a
sum-of-sinusoids Clarke model; the frequency response is the DFT of the
taps over their delays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import j0

SPEED_OF_LIGHT = 299_792_458.0
N_SINUSOIDS = 64

# TDL-A normalized delays and powers (3GPP TR 38.901, Table 7.7.2-1)
_TDL_A = [
    (0.0000, -13.4), (0.3819, 0.0), (0.4025, -2.2), (0.5868, -4.0),
    (0.4610, -6.0), (0.5375, -8.2), (0.6708, -9.9), (0.5750, -10.5),
    (0.7618, -7.5), (1.5375, -15.9), (1.8978, -6.6), (2.2242, -16.7),
    (2.1718, -12.4), (2.4942, -15.2), (2.5119, -10.8), (3.0582, -11.3),
    (4.0810, -12.7), (4.4579, -16.2), (4.5695, -18.3), (4.7966, -18.9),
    (5.0066, -16.6), (5.3043, -19.9), (9.6586, -29.7),
]


@dataclass(frozen=True, eq=False)
class TapProfile:
    delays: np.ndarray  # seconds, ascending
    powers: np.ndarray  # linear, sums to 1
    name: str = "custom"

    def __post_init__(self):
        d = np.asarray(self.delays, dtype=float)
        p = np.asarray(self.powers, dtype=float)
        if d.shape != p.shape or d.ndim != 1 or d.size == 0:
            raise ValueError("delays and powers must be equal-length 1-D arrays")
        if np.any(d < 0) or np.any(np.diff(d) < 0):
            raise ValueError("delays must be nonnegative and ascending")
        if np.any(p <= 0) or abs(p.sum() - 1) > 1e-12:
            raise ValueError("powers must be positive and sum to 1")

    @classmethod
    def from_taps(cls, taps, name: str = "custom") -> "TapProfile":
        """From ``[{delay_ns, power_db}, ...]`` records (config format)."""
        d = np.array([float(t["delay_ns"]) * 1e-9 for t in taps])
        p = 10.0 ** (np.array([float(t["power_db"]) for t in taps]) / 10)
        order = np.argsort(d, kind="stable")
        p = p[order]
        return cls(d[order], p / p.sum(), name)

    def rms_delay_spread(self) -> float:
        mean = np.sum(self.powers * self.delays)
        return float(np.sqrt(np.sum(self.powers * (self.delays - mean) ** 2)))


def tdl_a_like(delay_spread: float) -> TapProfile:
    """TDL-A shaped profile scaled to the given RMS delay spread (seconds)."""
    norm = np.array([d for d, _ in _TDL_A])
    pdb = np.array([p for _, p in _TDL_A])
    taps = [{"delay_ns": d * delay_spread * 1e9, "power_db": p} for d, p in zip(norm, pdb)]
    return TapProfile.from_taps(taps, f"tdl-a-like-{delay_spread * 1e9:g}ns")


def exponential_profile(n_taps: int, delay_spread: float) -> TapProfile:
    """Uniformly spaced taps with exponentially decaying power."""
    spacing = delay_spread
    d = np.arange(n_taps) * spacing
    p = np.exp(-np.arange(n_taps))
    return TapProfile(d, p / p.sum(), f"exp{n_taps}-{delay_spread * 1e9:g}ns")


def flat_profile() -> TapProfile:
    return TapProfile(np.array([0.0]), np.array([1.0]), "flat")


def profile_by_name(name: str, delay_spread: float = 300e-9) -> TapProfile:
    if name == "flat":
        return flat_profile()
    if name in ("tdl-a-like", "tdl-a"):
        return tdl_a_like(delay_spread)
    if name.startswith("exp"):
        return exponential_profile(int(name[3:] or 4), delay_spread)
    raise ValueError(f"unknown channel profile {name!r}")


@dataclass(frozen=True)
class DopplerSpec:
    ue_speed: float  # m/s
    carrier: float = 4e9  # Hz

    def __post_init__(self):
        if self.ue_speed < 0 or self.carrier <= 0:
            raise ValueError("speed must be >= 0 and carrier > 0")

    @classmethod
    def from_kmh(cls, kmh: float, carrier: float = 4e9) -> "DopplerSpec":
        return cls(kmh / 3.6, carrier)

    @property
    def max_doppler(self) -> float:
        return self.ue_speed * self.carrier / SPEED_OF_LIGHT


def symbol_duration(scs: float) -> float:
    """OFDM symbol duration including cyclic prefix (14 symbols per slot)."""
    return 1e-3 * 15e3 / scs / 14


def sample_channel(profile: TapProfile, doppler: DopplerSpec, S: int, T: int,
                   Nr: int, Nt: int, rng: np.random.Generator, n_slots: int | None = None,
                   scs: float = 30e3) -> np.ndarray:
    """Antenna-domain channel, shape ([n_slots,] S, T, Nr, Nt)."""
    n = 1 if n_slots is None else n_slots
    fd = doppler.max_doppler
    n_taps = profile.delays.size
    N = N_SINUSOIDS
    taps = np.empty((n, n_taps, T, Nr, Nt), dtype=complex)
    nn = np.arange(1, N + 1)
    dt = symbol_duration(scs)
    for i in range(n_taps):
        theta = rng.uniform(-np.pi, np.pi, (n, Nr, Nt, 1))
        phi = rng.uniform(-np.pi, np.pi, (n, Nr, Nt, N))
        arrival = (2 * np.pi * nn - np.pi + theta) / N
        step = np.exp(2j * np.pi * fd * np.cos(arrival) * dt)  # per-symbol phase rotation
        z = np.exp(1j * phi) / np.sqrt(N)
        for k in range(T):
            taps[:, i, k] = z.sum(-1)
            z = z * step
    freqs = np.arange(S) * scs
    F = np.exp(-2j * np.pi * freqs[:, None] * profile.delays[None, :]) * np.sqrt(profile.powers)
    G = np.einsum("si,nitrq->nstrq", F, taps, optimize=True)
    return G if n_slots is not None else G[0]


def svd_precode(G: np.ndarray, L: int) -> tuple[np.ndarray, np.ndarray]:
    """Wideband SVD precoder from the first symbol and the equivalent channel.

    ``G`` is ([n,] S, T, Nr, Nt). Returns ``W`` ([n,] Nt, L) with orthonormal
    columns (top-L right singular vectors of the subcarrier-stacked channel
    at t=0) and ``H`` ([n,] S, T, L, Nr).
    """
    G = np.asarray(G)
    Nr, Nt = G.shape[-2:]
    if L > min(Nt, Nr):
        raise ValueError(f"L={L} exceeds min(Nt, Nr)")
    g0 = G[..., 0, :, :]  # (..., S, Nr, Nt)
    K = np.einsum("...srp,...srq->...pq", g0.conj(), g0)
    if np.any(np.trace(K, axis1=-2, axis2=-1).real <= 0):
        raise ValueError("degenerate (zero) channel")
    _, vecs = np.linalg.eigh(K)
    W = vecs[..., ::-1][..., :L]
    H = np.einsum("...strq,...ql->...stlr", G, W)
    return W, H


def apply_channel(H: np.ndarray, X: np.ndarray, sigma2: float,
                  rng: np.random.Generator | None = None) -> np.ndarray:
    """Y_r = sum_l H_{r,l} o X_l + N_r; H is (..., S, T, L, Nr), X is (..., S, T, L)."""
    H = np.asarray(H)
    X = np.asarray(X)
    if H.shape[:-1] != X.shape:
        raise ValueError(f"dimension mismatch: H {H.shape} vs X {X.shape}")
    if sigma2 < 0:
        raise ValueError("sigma2 must be >= 0")
    Y = np.einsum("...lr,...l->...r", H, X)
    if sigma2 > 0:
        Y = Y + complex_noise(Y.shape, sigma2, rng)
    return Y


def complex_noise(shape, sigma2, rng: np.random.Generator | None) -> np.ndarray:
    if rng is None:
        raise ValueError("an rng is required when sigma2 > 0")
    s = np.sqrt(np.asarray(sigma2) / 2)
    return s * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


# --------------------------------------------------------------------------
# second-order statistics
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ChannelStats:
    R_f: np.ndarray  # (S, S) frequency covariance
    r_t: np.ndarray  # (T,) normalized time correlation at lags 0..T-1
    power: float  # mean per-element power

    @property
    def R_t(self) -> np.ndarray:
        T = self.r_t.size
        lag = np.arange(T)[:, None] - np.arange(T)[None, :]
        r = self.r_t[np.abs(lag)]
        return np.where(lag >= 0, r, r.conj())


def estimate_covariance(generator, n_samples: int) -> ChannelStats:
    """Empirical frequency covariance and time correlation of channel draws.

    ``generator(k)`` must return ``k`` channel tensors shaped (k, S, T, ...)
    (any trailing layer/antenna axes are averaged over).
    """
    if n_samples < 100:
        raise ValueError("n_samples must be >= 100")
    R = None
    c = None
    p = 0.0
    count = 0
    done = 0
    while done < n_samples:
        k = min(256, n_samples - done)
        h = np.asarray(generator(k))
        h = h.reshape(h.shape[0], h.shape[1], h.shape[2], -1)  # (k, S, T, A)
        hs = np.moveaxis(h, 1, -1).reshape(-1, h.shape[1])  # rows: realizations over S
        Rk = hs.T @ hs.conj()
        T = h.shape[2]
        ck = np.array([np.sum(h[:, :, lag:] * h[:, :, :T - lag].conj()) / (T - lag)
                       for lag in range(T)])
        R = Rk if R is None else R + Rk
        c = ck if c is None else c + ck
        count += hs.shape[0]
        p += float(np.sum(np.abs(h) ** 2))
        done += k
    R = R / count
    R = (R + R.conj().T) / 2
    S = R.shape[0]
    power = p / (count * S)
    r_t = c / c[0].real
    return ChannelStats(R, r_t, power)


def profile_stats(profile: TapProfile, doppler: DopplerSpec, S: int, T: int,
                  scs: float = 30e3, power: float = 1.0) -> ChannelStats:
    """Analytic frequency covariance and Clarke time correlation of a profile."""
    k = np.arange(S)
    dk = (k[:, None] - k[None, :]) * scs
    R = np.einsum("i,abi->ab", profile.powers,
                  np.exp(-2j * np.pi * dk[..., None] * profile.delays))
    r_t = j0(2 * np.pi * doppler.max_doppler * np.arange(T) * symbol_duration(scs))
    return ChannelStats(power * R, r_t.astype(complex), power)
