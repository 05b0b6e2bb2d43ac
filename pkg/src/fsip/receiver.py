"""Iterative interference-cancellation receiver with superimposed-symbol
aided channel estimation.

Per outer iteration i and layer l:

    Yx_l  = Y - sum_{l' != l} Yx_hat_{l'}          (previous iteration)
    H_l   = CE(Yx_l, P_l, D_hat_l, X_hat_l)
    Yp_l  = sqrt(alpha) H_l o P_l                  (fresh estimate)
    Yd_l  = Yx_l - Yp_l
    V_l   = DD(Yd_l, H_l)
    D_hat = Mod(Enc(Dec(V_l))) / sqrt(L)
    X_hat = sqrt(1 - alpha) D_hat + sqrt(alpha) P_l
    Yx_hat_l = H_l o X_hat

Layer updates within an iteration use only iteration i-1 reconstructions of
the other layers, so all layers can be processed as one batch.

Backends are callables::

    ce(yx, pilot, d_hat, x_hat, noise_var, mcs, **info) -> h_hat   (B, S, T, Nr)
    dd(yd, h_hat, noise_var, mcs, **info) -> llr                     (B, S, T, M)

with a leading batch axis; ``info`` carries ``reliability``, ``slots`` and
``layers`` which pure backends may ignore.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .fec import ParityCheckMatrix, crc16_check
from .grid import McsEntry
from .modulation import qam_modulate
from .pilots import PilotBook


class ReceiverError(RuntimeError):
    pass


@dataclass(eq=False)
class IcState:
    """Reconstructions threaded through the iterations; layer axis is 1."""

    yx_hat: np.ndarray  # (N, L, S, T, Nr)
    yp_hat: np.ndarray  # (N, L, S, T, Nr)
    d_hat: np.ndarray  # (N, L, S, T)
    x_hat: np.ndarray  # (N, L, S, T)
    h_hat: np.ndarray  # (N, L, S, T, Nr)
    crc: np.ndarray  # (N, L) bool
    i: int = 0

    @classmethod
    def zeros(cls, N: int, L: int, S: int, T: int, Nr: int) -> "IcState":
        rx = (N, L, S, T, Nr)
        return cls(np.zeros(rx, complex), np.zeros(rx, complex),
                   np.zeros((N, L, S, T), complex), np.zeros((N, L, S, T), complex),
                   np.zeros(rx, complex), np.zeros((N, L), bool), 0)

    def copy(self) -> "IcState":
        return IcState(self.yx_hat.copy(), self.yp_hat.copy(), self.d_hat.copy(),
                       self.x_hat.copy(), self.h_hat.copy(), self.crc.copy(), self.i)


def _others(yx_hat: np.ndarray, l: int) -> np.ndarray:
    L = yx_hat.shape[1]
    acc = np.zeros_like(yx_hat[:, 0])
    for k in range(L):
        if k != l:
            acc = acc + yx_hat[:, k]
    return acc


def cancel_for_ce(Y: np.ndarray, state: IcState, l: int) -> np.ndarray:
    return Y - _others(state.yx_hat, l)


def cancel_for_dd(Y: np.ndarray, state: IcState, l: int, yp_hat_l: np.ndarray) -> np.ndarray:
    return Y - _others(state.yx_hat, l) - yp_hat_l


def reconstruct_pilot_rx(h_hat_l: np.ndarray, pilot_l: np.ndarray, alpha: float) -> np.ndarray:
    return np.sqrt(alpha) * h_hat_l * pilot_l[..., None]


def reconstruct_data(llr: np.ndarray, mcs: McsEntry, code: ParityCheckMatrix, L: int,
                     max_iters: int = 25):
    """Hard decode, re-encode and re-modulate LLR grids (..., S, T, M).

    Returns ``(d_hat, info_bits, crc_ok)``; ``d_hat`` has per-RE power 1/L.
    """
    S, T, M = llr.shape[-3:]
    if M != mcs.M:
        raise ValueError(f"LLR depth {M} does not match M={mcs.M}")
    flat = llr.reshape(*llr.shape[:-3], S * T * M)
    info, _, _ = code.decode(flat, max_iters=max_iters)
    cw = code.encode(info)
    d = qam_modulate(cw, M).reshape(*llr.shape[:-3], S, T) / np.sqrt(L)
    return d, info, np.asarray(crc16_check(info))


def reconstruct_sip(d_hat: np.ndarray, pilot_l: np.ndarray, alpha: float) -> np.ndarray:
    return np.sqrt(1 - alpha) * d_hat + np.sqrt(alpha) * pilot_l


def reconstruct_rx(h_hat_l: np.ndarray, x_hat_l: np.ndarray) -> np.ndarray:
    return h_hat_l * x_hat_l[..., None]


@dataclass(eq=False)
class ReceiverOutput:
    llr: np.ndarray  # (N, L, S, T, M) iteration-V LLRs
    info: np.ndarray  # (N, L, k)
    crc: np.ndarray  # (N, L)
    state: IcState
    diagnostics: list = field(default_factory=list)

    def diagnostics_jsonl(self) -> str:
        return "".join(json.dumps(d) + "\n" for d in self.diagnostics)


def run_receiver(Y: np.ndarray, book: PilotBook, ce, dd, V: int, mcs: McsEntry,
                 noise_var, code: ParityCheckMatrix, alpha: float, *,
                 batched: bool = True, H_true: np.ndarray | None = None,
                 decoder_iters: int = 25, return_history: bool = False) -> ReceiverOutput:
    """Run ``V`` outer iterations on received grids ``Y`` of shape ([N,] S, T, Nr)."""
    if V < 1:
        raise ValueError("V must be >= 1")
    single = Y.ndim == 3
    if single:
        Y = Y[None]
        if H_true is not None:
            H_true = H_true[None]
    N, S, T, Nr = Y.shape
    L = book.L
    nv = np.broadcast_to(np.asarray(noise_var, dtype=float), (N,))
    P = np.moveaxis(book.grids, -1, 0)  # (L, S, T)
    state = IcState.zeros(N, L, S, T, Nr)
    diags: list = []
    history = []
    llr_out = None
    info_out = None

    for i in range(1, V + 1):
        new = state.copy()
        llr_i = np.empty((N, L, S, T, mcs.M))
        info_i = None
        rel = state.crc.mean(axis=1) if L else np.zeros(N)
        groups = [list(range(L))] if batched else [[l] for l in range(L)]
        for ls in groups:
            nl = len(ls)
            slots = np.repeat(np.arange(N), nl)
            layers = np.tile(np.array(ls), N)
            yx = np.stack([cancel_for_ce(Y, state, l) for l in ls], axis=1).reshape(N * nl, S, T, Nr)
            pil = np.broadcast_to(P[ls][None], (N, nl, S, T)).reshape(N * nl, S, T)
            dprev = state.d_hat[:, ls].reshape(N * nl, S, T)
            xprev = state.x_hat[:, ls].reshape(N * nl, S, T)
            nvb = np.repeat(nv, nl)
            info = dict(reliability=np.repeat(rel, nl), slots=slots, layers=layers)
            try:
                h = np.asarray(ce(yx, pil, dprev, xprev, nvb, mcs, **info))
            except Exception as e:  # noqa: BLE001
                raise ReceiverError(f"channel estimation failed at iteration {i}, layers {ls}: {e}") from e
            yp = reconstruct_pilot_rx(h, pil, alpha)
            yd = yx - yp
            try:
                v = np.asarray(dd(yd, h, nvb, mcs, **info))
            except Exception as e:  # noqa: BLE001
                raise ReceiverError(f"data detection failed at iteration {i}, layers {ls}: {e}") from e
            d, bits, ok = reconstruct_data(v, mcs, code, L, decoder_iters)
            x = reconstruct_sip(d, pil, alpha)
            yxh = reconstruct_rx(h, x)
            sl = (slice(None), ls)
            new.h_hat[sl] = h.reshape(N, nl, S, T, Nr)
            new.yp_hat[sl] = yp.reshape(N, nl, S, T, Nr)
            new.d_hat[sl] = d.reshape(N, nl, S, T)
            new.x_hat[sl] = x.reshape(N, nl, S, T)
            new.yx_hat[sl] = yxh.reshape(N, nl, S, T, Nr)
            new.crc[sl] = ok.reshape(N, nl)
            llr_i[sl] = v.reshape(N, nl, S, T, mcs.M)
            if info_i is None:
                info_i = np.empty((N, L, bits.shape[-1]), dtype=np.uint8)
            info_i[sl] = bits.reshape(N, nl, -1)
        new.i = i
        state = new
        llr_out, info_out = llr_i, info_i
        resid = Y - state.yx_hat.sum(axis=1)
        for n in range(N):
            for l in range(L):
                rec = {"slot": n, "iteration": i, "layer": l,
                       "residual_power": float(np.mean(np.abs(resid[n]) ** 2)),
                       "crc_pass": bool(state.crc[n, l])}
                if H_true is not None:
                    rec["ce_mse"] = float(np.mean(np.abs(state.h_hat[n, l] - H_true[n, :, :, l]) ** 2))
                diags.append(rec)
        if return_history:
            history.append(state.copy())

    out = ReceiverOutput(llr_out, info_out, state.crc, state, diags)
    if return_history:
        out.history = history
    if single:
        out.llr, out.info, out.crc = out.llr[0], out.info[0], out.crc[0]
    return out


# --------------------------------------------------------------------------
# genie backends (simulation-only references for tests and diagnostics)
# --------------------------------------------------------------------------

class GenieCE:
    def __init__(self, H: np.ndarray):
        self.H = H  # (N, S, T, L, Nr)

    def __call__(self, yx, pilot, d_hat, x_hat, noise_var, mcs, *, slots, layers, **_):
        return self.H[slots, :, :, layers]


class GenieDD:
    def __init__(self, codewords: np.ndarray, S: int, T: int, magnitude: float = 20.0):
        self.cw = codewords  # (N, L, n)
        self.S, self.T = S, T
        self.mag = magnitude

    def __call__(self, yd, h_hat, noise_var, mcs, *, slots, layers, **_):
        c = self.cw[slots, layers].astype(float)
        return (self.mag * (1 - 2 * c)).reshape(-1, self.S, self.T, mcs.M)
