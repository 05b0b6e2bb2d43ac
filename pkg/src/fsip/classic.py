"""Classical receivers.

* Baseline I: DMRS LS despreading, LMMSE frequency interpolation, time
  hold/linear interpolation, per-RE LMMSE MIMO detection and max-log LLRs.
* Classical channel-estimation / data-detection backends for the
  interference-cancellation engine (no trained model involved).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import ChannelStats
from .grid import McsEntry
from .modulation import maxlog_demap
from .pilots import DmrsGrids, PilotBook, group_view, ungroup


@dataclass(frozen=True, eq=False)
class LmmseContext:
    R_ff: np.ndarray  # (S, S) frequency covariance of the estimated channel
    r_t: np.ndarray  # (T,) time correlation
    sigma2: float  # noise variance of the raw (LS) estimates

    def __post_init__(self):
        R = np.asarray(self.R_ff)
        if R.ndim != 2 or R.shape[0] != R.shape[1]:
            raise ValueError("R_ff must be square")
        if not np.allclose(R, R.conj().T, atol=1e-10 * max(1.0, np.abs(R).max())):
            raise ValueError("R_ff must be Hermitian")


# --------------------------------------------------------------------------
# Baseline I
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DmrsRawEstimates:
    values: np.ndarray  # (..., n_pairs, Np, L, Nr) despread LS estimates
    centers: np.ndarray  # (L, n_pairs) subcarrier of each observation
    symbols: tuple[int, ...]
    noise_var: float  # per-estimate noise variance relative to sigma2 = 1


def dmrs_ls_estimate(Y: np.ndarray, dm: DmrsGrids) -> DmrsRawEstimates:
    """Despread every CDM pair of every pilot symbol for every layer.

    The channel is assumed constant over the two REs of a pair; the
    estimate is attributed to the subcarrier midway between them.
    """
    S, T, L = dm.dims.S, dm.dims.T, dm.dims.L
    if Y.shape[-3:-1] != (S, T):
        raise ValueError(f"Y shape {Y.shape} inconsistent with grid {(S, T)}")
    syms = list(dm.pattern.symbols)
    if not syms:
        raise ValueError("empty pilot set")
    amp2 = dm.pilot_power
    vals = []
    centers = []
    for l in range(L):
        comb, cover = divmod(l, 2)
        sc = np.arange(comb, S, 2).reshape(-1, 2)  # (n_pairs, 2)
        y = Y[..., sc, :, :][..., syms, :]  # (..., n_pairs, 2, Np, Nr)
        p = dm.grids[sc][:, :, syms, l]  # (n_pairs, 2, Np)
        est = np.sum(p.conj()[..., None] * y, axis=-3) / (2 * amp2)
        vals.append(est)
        centers.append(sc.mean(axis=1))
    values = np.stack(vals, axis=-2)  # (..., n_pairs, Np, L, Nr)
    return DmrsRawEstimates(values, np.stack(centers), tuple(syms), 1.0 / (2 * amp2))


def lmmse_interpolate(raw: np.ndarray, positions: np.ndarray, pilot_symbols,
                      ctx: LmmseContext, T: int) -> np.ndarray:
    """Interpolate raw estimates of one layer/antenna to the full (S, T) grid.

    ``raw`` is (..., P, Np) at subcarriers ``positions`` (length P, may be
    fractional on a uniform half-grid only if present in R_ff) and pilot
    symbols ``pilot_symbols``. Frequency: W = R_dp (R_pp + sigma2 I)^-1.
    Time: hold for one pilot symbol, linear interpolation otherwise.
    """
    R = np.asarray(ctx.R_ff)
    pos = np.asarray(positions)
    idx = np.round(pos).astype(int)
    if not np.allclose(idx, pos):
        raise ValueError("positions must be integer subcarriers")
    if idx.size == 0:
        raise ValueError("at least one pilot RE is required")
    Rpp = R[np.ix_(idx, idx)] + ctx.sigma2 * np.eye(idx.size)
    Rdp = R[:, idx]
    try:
        W = np.linalg.solve(Rpp.T, Rdp.T).T
    except np.linalg.LinAlgError:
        W = Rdp @ np.linalg.pinv(Rpp)
    hf = np.einsum("sp,...pk->...sk", W, raw)  # (..., S, Np)
    syms = np.asarray(pilot_symbols)
    if syms.size == 1:
        return np.repeat(hf, T, axis=-1)
    t = np.arange(T)
    out = np.empty(hf.shape[:-1] + (T,), dtype=complex)
    flat_in = hf.reshape(-1, syms.size)
    flat_out = out.reshape(-1, T)
    for i in range(flat_in.shape[0]):
        flat_out[i] = (np.interp(t, syms, flat_in[i].real)
                       + 1j * np.interp(t, syms, flat_in[i].imag))
    return out


def lmmse_detect(Y: np.ndarray, H: np.ndarray, sigma2: float, symbol_power: float = 1.0):
    """Per-RE LMMSE MIMO detection.

    ``Y`` (..., Nr), ``H`` (..., L, Nr). Returns ``(x_hat, sigma2_eff, mu)``
    where ``x_hat`` is the bias-removed estimate, ``mu`` the filter gain
    diag(W H) (so ``mu * x_hat`` equals (H^H H + sigma2/Es I)^-1 H^H y) and
    ``sigma2_eff`` the post-detection noise-plus-interference variance.
    """
    Hm = np.swapaxes(np.asarray(H), -1, -2)  # (..., Nr, L)
    L = Hm.shape[-1]
    Hh = np.conj(np.swapaxes(Hm, -1, -2))
    A = Hh @ Hm + (sigma2 / symbol_power) * np.eye(L)
    Wt = np.linalg.solve(A, Hh)  # (..., L, Nr)
    x = np.einsum("...lr,...r->...l", Wt, Y)
    mu = np.real(np.einsum("...lr,...rl->...l", Wt, Hm))
    mu = np.clip(mu, 1e-12, 1.0)
    x_hat = x / mu
    s2 = symbol_power * (1 - mu) / mu
    return x_hat, np.maximum(s2, 1e-12 * symbol_power), mu


@dataclass
class BaselineReceiver:
    """DMRS + LMMSE receiver (Baseline I)."""

    dm: DmrsGrids
    layer_stats: list  # ChannelStats per layer (frequency covariance incl. power)

    def estimate(self, Y: np.ndarray, sigma2: float) -> np.ndarray:
        """Channel estimate (..., S, T, L, Nr)."""
        S, T, L = self.dm.dims.S, self.dm.dims.T, self.dm.dims.L
        raw = dmrs_ls_estimate(Y, self.dm)
        Nr = Y.shape[-1]
        out = np.empty(Y.shape[:-3] + (S, T, L, Nr), dtype=complex)
        for l in range(L):
            st = self.layer_stats[l]
            ctx = LmmseContext(st.R_f, st.r_t, sigma2 * raw.noise_var)
            vals = np.moveaxis(raw.values[..., l, :], -1, -3)  # (..., Nr, P, Np)
            h = lmmse_interpolate(vals, raw.centers[l], raw.symbols, ctx, T)
            out[..., l, :] = np.moveaxis(h, -3, -1)
        return out

    def llrs(self, Y: np.ndarray, sigma2: float, mcs: McsEntry, H_hat=None) -> np.ndarray:
        """Data-RE LLRs per layer, (..., L, n_data * M) in codeword order."""
        L = self.dm.dims.L
        if H_hat is None:
            H_hat = self.estimate(Y, sigma2)
        mask = self.dm.data_mask
        yd = Y[..., mask, :]  # (..., N, Nr)
        hd = H_hat[..., mask, :, :]  # (..., N, L, Nr)
        es = 1.0 / L
        x, s2, _ = lmmse_detect(yd, hd, sigma2, es)
        llr = maxlog_demap(x, np.sqrt(es), s2, mcs.M)  # (..., N, L, M)
        llr = np.moveaxis(llr, -2, -3)  # (..., L, N, M)
        return llr.reshape(*llr.shape[:-2], -1)


# --------------------------------------------------------------------------
# classical backends for the IC engine
# --------------------------------------------------------------------------

def _kron_basis(stats: ChannelStats, S: int, T: int, tol: float, max_rank: int):
    Rf = np.asarray(stats.R_f)
    Rf = Rf / np.real(np.trace(Rf)) * S
    Rt = stats.R_t
    lf, Uf = np.linalg.eigh((Rf + Rf.conj().T) / 2)
    lt, Ut = np.linalg.eigh((Rt + Rt.conj().T) / 2)
    lam = np.kron(np.clip(lt, 0, None), np.clip(lf, 0, None))
    keep = np.argsort(lam)[::-1]
    keep = keep[lam[keep] > tol * lam[keep[0]]][:max_rank]
    it, jf = np.divmod(keep, S)
    # vec index q = t * S + s (frequency-first), matching group_view
    U = (Ut[:, it][:, None, :] * Uf[:, jf][None, :, :]).reshape(T * S, -1)
    return U, lam[keep]


class ClassicalCE:
    """Classical channel-estimation backend for superimposed pilots.

    Joint LMMSE over the whole slot in the eigen-subspace of a Kronecker
    (time x frequency) prior. Observations:

    * group-despread pilot averages, noise ``(sigma2 + (1-alpha) P_sig) / alpha``;
    * where reconstructed symbols are available, per-RE LS estimates
      ``y conj(x_hat) / |x_hat|^2`` with noise
      ``(sigma2 + (1-rho) P_sig) / (|x_hat|^2 rho)``, ``rho`` the reliability.

    With zero reconstructions this is pilot-only estimation.
    """

    def __init__(self, book: PilotBook, alpha: float, stats: ChannelStats,
                 tol: float = 1e-9, max_rank: int = 256):
        self.book = book
        self.alpha = float(alpha)
        d = book.dims
        self.S, self.T, self.L = d.S, d.T, d.L
        self.U, self.lam = _kron_basis(stats, d.S, d.T, tol, max_rank)
        self.Ug = self.U.reshape(d.n_groups, d.L, -1).mean(axis=1)
        self._UgH_Ug = self.Ug.conj().T @ self.Ug

    def __call__(self, yx, pilot, d_hat, x_hat, noise_var, mcs=None, reliability=None, **_):
        yx = np.asarray(yx)
        B = yx.shape[0]
        S, T, L, a = self.S, self.T, self.L, self.alpha
        Nr = yx.shape[-1]
        noise_var = np.broadcast_to(np.asarray(noise_var, dtype=float), (B,))
        rho = np.ones(B) if reliability is None else np.broadcast_to(
            np.asarray(reliability, dtype=float), (B,))
        U, Ug = self.U, self.Ug
        K = U.shape[1]
        out = np.zeros_like(yx, dtype=complex)
        yv = np.swapaxes(yx, 1, 2).reshape(B, T * S, Nr)  # vec order q = t*S + s
        pv = np.swapaxes(np.asarray(pilot), 1, 2).reshape(B, T * S)
        xv = np.swapaxes(np.asarray(x_hat), 1, 2).reshape(B, T * S)
        aided = np.any(np.asarray(d_hat).reshape(B, -1) != 0, axis=1)
        for b in range(B):
            s2 = noise_var[b]
            p_sig = max(np.mean(np.abs(yv[b]) ** 2) - s2, 0.0)
            g = (L if aided[b] else 1) * p_sig
            if g <= 0:
                continue
            floor = 1e-12 * g
            M = np.diag(1.0 / (g * self.lam)).astype(complex)
            rhs = np.zeros((K, Nr), dtype=complex)
            used = False
            if a > 0:
                pg = pv[b].reshape(-1, L)
                yg = yv[b].reshape(-1, L, Nr)
                o_p = np.einsum("gn,gnr->gr", pg.conj(), yg) / (np.sqrt(a) * np.sum(np.abs(pg) ** 2, axis=1))[:, None]
                v_p = max((s2 + (1 - a) * p_sig) / a, floor)
                M += self._UgH_Ug / v_p
                rhs += Ug.conj().T @ o_p / v_p
                used = True
            if aided[b] and rho[b] > 0:
                p2 = np.abs(xv[b]) ** 2
                ok = p2 > 0
                w = np.zeros_like(p2)
                w[ok] = p2[ok] * rho[b] / max(s2 + (1 - rho[b]) * p_sig, floor)
                o_x = np.zeros((T * S, Nr), dtype=complex)
                o_x[ok] = yv[b][ok] * (xv[b][ok].conj() / p2[ok])[:, None]
                M += (U.conj().T * w) @ U
                rhs += U.conj().T @ (w[:, None] * o_x)
                used = True
            if not used:
                continue
            z = np.linalg.solve(M, rhs)
            h = U @ z  # (T*S, Nr)
            out[b] = np.swapaxes(h.reshape(T, S, Nr), 0, 1)
        return out


def pilot_despread(yx: np.ndarray, pilot: np.ndarray, alpha: float, L: int) -> np.ndarray:
    """Group-wise despread estimate spread back over the group's REs.

    ``yx`` (..., S, T, Nr), ``pilot`` (..., S, T) of one layer. On a channel
    constant over each CDM group and without data this is exact.
    """
    if alpha <= 0:
        return np.zeros_like(yx, dtype=complex)
    S, T = pilot.shape[-2:]
    pg = group_view(pilot, L)  # (..., G, L)
    yg = group_view(np.moveaxis(yx, -1, -3), L)  # (..., Nr, G, L)
    o = np.sum(pg.conj()[..., None, :, :] * yg, axis=-1) / (
        np.sqrt(alpha) * np.sum(np.abs(pg) ** 2, axis=-1))[..., None, :]
    spread = ungroup(np.repeat(o[..., None], L, axis=-1), S, T)  # (..., Nr, S, T)
    return np.moveaxis(spread, -3, -1)


class ClassicalDD:
    """Per-RE maximal-ratio combining followed by max-log demapping."""

    def __init__(self, alpha: float, L: int):
        self.alpha = float(alpha)
        self.L = int(L)

    def __call__(self, yd, h_hat, noise_var, mcs: McsEntry, **_):
        yd = np.asarray(yd)
        h_hat = np.asarray(h_hat)
        B = yd.shape[0]
        Nr = yd.shape[-1]
        s2 = np.broadcast_to(np.asarray(noise_var, dtype=float), (B,))
        a = np.sqrt(1 - self.alpha) / np.sqrt(self.L)
        c = np.sum(h_hat.conj() * yd, axis=-1)
        e = np.sum(np.abs(h_hat) ** 2, axis=-1)
        own = a ** 2 * e.reshape(B, -1).mean(axis=1) / Nr
        v_res = np.maximum(np.mean(np.abs(yd.reshape(B, -1)) ** 2, axis=1) - own, s2)
        v_res = np.maximum(v_res, 1e-30)
        var = v_res[:, None, None] * e
        safe = np.where(e > 0, var, 1.0)
        llr = maxlog_demap(c, a * e, safe, mcs.M)
        return np.where((e > 0)[..., None], llr, 0.0)
