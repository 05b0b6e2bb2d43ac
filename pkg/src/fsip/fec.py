"""LDPC coding and CRC-16 transport-block framing.

Codes are pseudo-random column-weight-3 constructions with a greedy
row-balancing/4-cycle-avoiding edge placement. Encoding is systematic on the
non-pivot columns of the reduced row-echelon form of H. Decoding is
normalized min-sum with a flooding schedule, compiled with numba; a
vectorized numpy implementation of the same schedule is kept as a reference.

LLR convention: positive means bit 0.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from functools import lru_cache

import numba
import numpy as np

CRC_LEN = 16
CRC_POLY = 0x1021
CRC_INIT = 0xFFFF


class CodeConstructionError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# CRC
# --------------------------------------------------------------------------

def _crc16_register(bits: np.ndarray) -> np.ndarray:
    bits = np.asarray(bits, dtype=np.uint8)
    if bits.shape[-1] == 0:
        raise ValueError("payload must be nonempty")
    reg = np.full(bits.shape[:-1], CRC_INIT, dtype=np.uint32)
    for i in range(bits.shape[-1]):
        fb = ((reg >> 15) & 1) ^ bits[..., i]
        reg = (reg << 1) & 0xFFFF
        reg = np.where(fb.astype(bool), reg ^ CRC_POLY, reg)
    return reg


def _reg_bits(reg: np.ndarray) -> np.ndarray:
    shifts = np.arange(CRC_LEN - 1, -1, -1, dtype=np.uint32)
    return ((reg[..., None] >> shifts) & 1).astype(np.uint8)


@lru_cache(maxsize=64)
def _crc16_affine(k: int) -> tuple[np.ndarray, np.ndarray]:
    """The CRC is affine over GF(2): crc(u) = u A + c0. Returns (A, c0)."""
    c0 = _reg_bits(_crc16_register(np.zeros(k, dtype=np.uint8)))
    A = _reg_bits(_crc16_register(np.eye(k, dtype=np.uint8))) ^ c0
    return A.astype(np.int64), c0.astype(np.int64)


def crc16(bits: np.ndarray) -> np.ndarray:
    """CRC-16/CCITT (poly 0x1021, init 0xFFFF) of the last axis, as 16 bits MSB-first."""
    bits = np.asarray(bits, dtype=np.uint8)
    if bits.shape[-1] == 0:
        raise ValueError("payload must be nonempty")
    A, c0 = _crc16_affine(bits.shape[-1])
    return (((bits.astype(np.int64) @ A) + c0) & 1).astype(np.uint8)


def crc16_bitserial(bits: np.ndarray) -> np.ndarray:
    """Shift-register CRC-16, one bit per step (reference for :func:`crc16`)."""
    return _reg_bits(_crc16_register(bits))


def crc16_attach(payload: np.ndarray) -> np.ndarray:
    payload = np.asarray(payload, dtype=np.uint8)
    return np.concatenate([payload, crc16(payload)], axis=-1)


def crc16_check(block: np.ndarray) -> np.ndarray | bool:
    """True where the trailing 16 bits match the CRC of the preceding payload."""
    block = np.asarray(block, dtype=np.uint8)
    if block.shape[-1] <= CRC_LEN:
        raise ValueError("block must contain a nonempty payload plus 16 CRC bits")
    ok = np.all(crc16(block[..., :-CRC_LEN]) == block[..., -CRC_LEN:], axis=-1)
    return bool(ok) if ok.ndim == 0 else ok


# --------------------------------------------------------------------------
# GF(2) linear algebra
# --------------------------------------------------------------------------

def gf2_rref(H: np.ndarray) -> tuple[np.ndarray, list[int]]:
    """Reduced row-echelon form over GF(2) and the list of pivot columns."""
    A = np.array(H, dtype=bool)
    m, n = A.shape
    pivots: list[int] = []
    r = 0
    for c in range(n):
        if r == m:
            break
        rows = np.nonzero(A[r:, c])[0]
        if rows.size == 0:
            continue
        p = r + rows[0]
        if p != r:
            A[[r, p]] = A[[p, r]]
        hits = np.nonzero(A[:, c])[0]
        hits = hits[hits != r]
        if hits.size:
            A[hits] ^= A[r]
        pivots.append(c)
        r += 1
    return A[:r].astype(np.uint8), pivots


def gf2_rank(H: np.ndarray) -> int:
    return len(gf2_rref(H)[1])


# --------------------------------------------------------------------------
# LDPC code
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ParityCheckMatrix:
    """Binary parity-check matrix with its systematic encoder and decoder graph."""

    H: np.ndarray  # (n - k, n) uint8, full row rank
    info_cols: np.ndarray
    parity_cols: np.ndarray
    parity_map: np.ndarray  # (n - k, k) uint8: c[parity_cols] = parity_map @ c[info_cols]
    _graph: dict = field(default_factory=dict, repr=False)

    @property
    def n(self) -> int:
        return self.H.shape[1]

    @property
    def k(self) -> int:
        return self.info_cols.size

    @property
    def column_degrees(self) -> np.ndarray:
        return self.H.sum(axis=0)

    @property
    def row_degrees(self) -> np.ndarray:
        return self.H.sum(axis=1)

    @classmethod
    def from_matrix(cls, H: np.ndarray) -> "ParityCheckMatrix":
        """Build the encoder for ``H``; redundant rows are dropped."""
        R, pivots = gf2_rref(H)
        n = R.shape[1]
        piv = np.array(pivots, dtype=np.int64)
        info = np.setdiff1d(np.arange(n), piv)
        if info.size == 0:
            raise CodeConstructionError("code has no information bits")
        keep = _independent_rows(H, len(pivots))
        return cls(np.asarray(H, dtype=np.uint8)[keep], info, piv,
                   np.ascontiguousarray(R[:, info]))

    def encode(self, info_bits: np.ndarray) -> np.ndarray:
        u = np.asarray(info_bits, dtype=np.uint8)
        if u.shape[-1] != self.k:
            raise ValueError(f"expected {self.k} info bits, got {u.shape[-1]}")
        c = np.zeros(u.shape[:-1] + (self.n,), dtype=np.uint8)
        c[..., self.info_cols] = u
        c[..., self.parity_cols] = (u.astype(np.int64) @ self.parity_map.T.astype(np.int64)) & 1
        return c

    def syndrome(self, codeword: np.ndarray) -> np.ndarray:
        c = np.asarray(codeword, dtype=np.int64)
        return (c @ self.H.T.astype(np.int64)) & 1

    def _edges(self):
        g = self._graph
        if not g:
            rows, cols = np.nonzero(self.H)  # row-major => sorted by row
            E = rows.size
            g["col"] = cols
            g["E"] = E
            g["row_ptr"] = np.searchsorted(rows, np.arange(self.H.shape[0] + 1)).astype(np.int64)
            g["row_edges"] = _padded_groups(rows, self.H.shape[0], E)
            g["col_edges"] = _padded_groups(cols, self.n, E)
        return g

    def decode(self, llrs: np.ndarray, max_iters: int = 25, scale: float = 0.8):
        """Normalized min-sum decoding.

        Returns ``(info_bits, converged, iterations)``; ``llrs`` may carry
        leading batch axes. A block counts as converged only when the
        syndrome is zero and no posterior LLR is exactly zero.
        """
        L, lead = self._check_llrs(llrs, max_iters)
        g = self._edges()
        post = np.empty_like(L)
        converged = np.zeros(L.shape[0], dtype=np.bool_)
        iters = np.zeros(L.shape[0], dtype=np.int64)
        _minsum_kernel(L, g["row_ptr"], g["col"].astype(np.int64), int(max_iters),
                       float(scale), post, converged, iters)
        bits = (post < 0).astype(np.uint8)[:, self.info_cols]
        return (bits.reshape(lead + (self.k,)), converged.reshape(lead),
                iters.reshape(lead))

    def _check_llrs(self, llrs, max_iters):
        if max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        llrs = np.asarray(llrs, dtype=np.float64)
        if llrs.shape[-1] != self.n:
            raise ValueError(f"expected {self.n} LLRs, got {llrs.shape[-1]}")
        if not np.all(np.isfinite(llrs)):
            raise ValueError("LLRs must be finite")
        return np.ascontiguousarray(llrs.reshape(-1, self.n)), llrs.shape[:-1]

    def decode_reference(self, llrs: np.ndarray, max_iters: int = 25, scale: float = 0.8):
        """Vectorized numpy version of :meth:`decode` (same schedule and tie rules).

        Returns ``(info_bits, converged, iterations)``; ``llrs`` may carry
        leading batch axes. A block counts as converged only when the
        syndrome is zero and no posterior LLR is exactly zero.
        """
        L, lead = self._check_llrs(llrs, max_iters)
        B = L.shape[0]
        g = self._edges()
        col, E, re, ce = g["col"], g["E"], g["row_edges"], g["col_edges"]
        dr = re.shape[1]
        slot = np.arange(dr)

        post = L.copy()
        converged = np.zeros(B, dtype=bool)
        iters = np.zeros(B, dtype=np.int64)
        active = np.arange(B)
        # messages live on edges (axis 0, plus one padding edge at index E)
        # with the batch on the contiguous last axis
        Lt = np.ascontiguousarray(L.T)
        vc = np.concatenate([Lt[col], np.full((1, B), np.inf)])
        for it in range(1, max_iters + 1):
            m = vc[re]  # (rows, dr, b)
            mag = np.abs(m)
            neg = m < 0
            first = mag.argmin(axis=1)[:, None]
            at_min = slot[None, :, None] == first
            min1 = mag.min(axis=1, keepdims=True)
            min2 = np.where(at_min, np.inf, mag).min(axis=1, keepdims=True)
            parity = np.logical_xor.reduce(neg, axis=1, keepdims=True)
            mag_out = np.where(at_min, min2, min1) * scale
            cv = np.zeros((E + 1, len(active)))
            cv[re] = np.where(parity ^ neg, -mag_out, mag_out)
            cv[E] = 0.0
            p = Lt[:, active] + cv[ce].sum(axis=1)
            post[active] = p.T
            iters[active] = it
            hard = p < 0
            hv = np.concatenate([hard[col], np.zeros((1, len(active)), bool)])
            synd = np.logical_xor.reduce(hv[re], axis=1)
            done = ~synd.any(axis=0) & np.all(p != 0, axis=0)
            converged[active[done]] = True
            keep = ~done
            if not keep.any():
                break
            active = active[keep]
            vc = np.concatenate([p[col] - cv[:E], np.full((1, len(p[0])), np.inf)])[:, keep]
        bits = (post < 0).astype(np.uint8)[:, self.info_cols]
        return (bits.reshape(lead + (self.k,)), converged.reshape(lead),
                iters.reshape(lead))


@numba.njit(cache=True)
def _minsum_kernel(L, row_ptr, col, max_iters, scale, post, converged, iters):
    B, n = L.shape
    m = row_ptr.size - 1
    E = col.size
    vc = np.empty(E)
    cv = np.empty(E)
    p = np.empty(n)
    for b in range(B):
        for e in range(E):
            vc[e] = L[b, col[e]]
        for it in range(1, max_iters + 1):
            for r in range(m):
                lo, hi = row_ptr[r], row_ptr[r + 1]
                min1 = np.inf
                min2 = np.inf
                arg = -1
                par = False
                for e in range(lo, hi):
                    a = abs(vc[e])
                    if vc[e] < 0:
                        par = not par
                    if a < min1:
                        min2 = min1
                        min1 = a
                        arg = e
                    elif a < min2:
                        min2 = a
                for e in range(lo, hi):
                    mag = scale * (min2 if e == arg else min1)
                    if par != (vc[e] < 0):
                        mag = -mag
                    cv[e] = mag
            for j in range(n):
                p[j] = L[b, j]
            for e in range(E):
                p[col[e]] += cv[e]
            ok = True
            for j in range(n):
                if p[j] == 0:
                    ok = False
                    break
            if ok:
                for r in range(m):
                    s = False
                    for e in range(row_ptr[r], row_ptr[r + 1]):
                        if p[col[e]] < 0:
                            s = not s
                    if s:
                        ok = False
                        break
            iters[b] = it
            if ok:
                converged[b] = True
                break
            for e in range(E):
                vc[e] = p[col[e]] - cv[e]
        for j in range(n):
            post[b, j] = p[j]


def _padded_groups(keys: np.ndarray, n_groups: int, pad: int) -> np.ndarray:
    """Edge indices grouped by ``keys`` into a (n_groups, max_degree) table padded with ``pad``."""
    order = np.argsort(keys, kind="stable")
    counts = np.bincount(keys, minlength=n_groups)
    out = np.full((n_groups, max(int(counts.max()), 1)), pad, dtype=np.int64)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    pos = np.arange(keys.size) - np.repeat(starts, counts)
    out[keys[order], pos] = order
    return out


def _independent_rows(H: np.ndarray, rank: int) -> np.ndarray:
    """Indices of a maximal set of linearly independent rows of H."""
    if rank == H.shape[0]:
        return np.arange(H.shape[0])
    keep = []
    for i in range(H.shape[0]):
        if gf2_rank(H[keep + [i]]) == len(keep) + 1:
            keep.append(i)
        if len(keep) == rank:
            break
    return np.array(keep)


def _random_h(n: int, m: int, col_weight: int, rng: np.random.Generator) -> np.ndarray:
    H = np.zeros((m, n), dtype=np.uint8)
    deg = np.zeros(m)
    adj = np.zeros((m, m), dtype=bool)  # rows already sharing a column
    for c in rng.permutation(n):
        chosen: list[int] = []
        blocked = np.zeros(m, dtype=bool)
        for _ in range(col_weight):
            key = deg + rng.random(m) * 0.5
            key[chosen] = np.inf
            free = np.where(blocked, np.inf, key)
            r = int(np.argmin(free)) if np.isfinite(free).any() else int(np.argmin(key))
            chosen.append(r)
            blocked |= adj[r]
            blocked[r] = True
        for a in chosen:
            for b in chosen:
                if a != b:
                    adj[a, b] = True
        H[chosen, c] = 1
        deg[chosen] += 1
    return H


@lru_cache(maxsize=32)
def ldpc_construct(n: int, k: int, seed: int = 0, col_weight: int = 3,
                   max_retries: int = 20) -> ParityCheckMatrix:
    """Deterministic pseudo-random LDPC code with full-rank H of shape (n-k, n)."""
    if not 0 < k < n:
        raise ValueError(f"need 0 < k < n, got n={n}, k={k}")
    m = n - k
    if m < 3:
        raise ValueError(f"need n - k >= 3, got {m}")
    w = min(col_weight, m)
    for attempt in range(max_retries):
        rng = np.random.default_rng([seed, n, k, attempt])
        H = _random_h(n, m, w, rng)
        if H.sum(axis=1).min() == 0:
            continue
        R, pivots = gf2_rref(H)
        if len(pivots) == m:
            info = np.setdiff1d(np.arange(n), pivots)
            return ParityCheckMatrix(H, info, np.array(pivots), np.ascontiguousarray(R[:, info]))
    raise CodeConstructionError(
        f"no full-rank parity-check matrix for n={n}, k={k} after {max_retries} tries")


def code_for(n_coded: int, gamma, seed: int = 0) -> ParityCheckMatrix:
    """Code with n = n_coded and k = round(n * gamma) (k includes the CRC)."""
    k = int(round(n_coded * float(gamma)))
    if k <= CRC_LEN:
        raise ValueError(f"code too short for a CRC: n={n_coded}, k={k}")
    return ldpc_construct(int(n_coded), k, seed)


# --------------------------------------------------------------------------
# alist I/O
# --------------------------------------------------------------------------

def to_alist(H: np.ndarray) -> str:
    H = np.asarray(H, dtype=np.uint8)
    m, n = H.shape
    cols = [np.nonzero(H[:, j])[0] + 1 for j in range(n)]
    rows = [np.nonzero(H[i])[0] + 1 for i in range(m)]
    cmax = max(len(c) for c in cols)
    rmax = max(len(r) for r in rows)
    out = io.StringIO()
    out.write(f"{n} {m}\n{cmax} {rmax}\n")
    out.write(" ".join(str(len(c)) for c in cols) + "\n")
    out.write(" ".join(str(len(r)) for r in rows) + "\n")
    for c in cols:
        out.write(" ".join(map(str, list(c) + [0] * (cmax - len(c)))) + "\n")
    for r in rows:
        out.write(" ".join(map(str, list(r) + [0] * (rmax - len(r)))) + "\n")
    return out.getvalue()


def from_alist(text: str) -> np.ndarray:
    tok = [int(t) for t in text.split()]
    n, m = tok[0], tok[1]
    cmax = tok[2]
    pos = 4 + n + m
    H = np.zeros((m, n), dtype=np.uint8)
    for j in range(n):
        for r in tok[pos:pos + cmax]:
            if r:
                H[r - 1, j] = 1
        pos += cmax
    return H


def save_alist(path, H: np.ndarray) -> None:
    with open(path, "w") as f:
        f.write(to_alist(H))


def load_alist(path) -> ParityCheckMatrix:
    with open(path) as f:
        return ParityCheckMatrix.from_matrix(from_alist(f.read()))
