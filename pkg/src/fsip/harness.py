"""Monte-Carlo BLER sweeps, throughput accounting and dataset files."""

from __future__ import annotations

import csv
import io
import json
import struct
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy.stats import norm

from .channel import DopplerSpec, estimate_covariance, profile_by_name, profile_stats
from .classic import BaselineReceiver, ClassicalCE, ClassicalDD
from .fec import crc16_check
from .grid import GridDims, get_mcs
from .link import ChannelConfig, DmrsLink, SipLink, sample_precoded
from .pilots import build_dmrs_grids, build_pilot_book, dmrs_pattern
from .receiver import run_receiver

SCHEMES = ("sip-neural", "sip-classical", "dmrs-baseline")
CSV_COLUMNS = ("scheme", "snr_db", "slots", "tb_errors", "bler", "ci_half", "throughput_bps")


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration (CLI exit code 2)."""


# --------------------------------------------------------------------------
# throughput
# --------------------------------------------------------------------------

def compute_throughput(n_slot, S: int, T: int, L: int, omega, gamma, M: int, bler) -> Fraction:
    """R = N_slot * S*T*L * Omega * gamma * M * (1 - BLER), exact in rationals."""
    omega, gamma, bler = Fraction(omega), Fraction(gamma), Fraction(bler)
    if not 0 <= bler <= 1:
        raise ValueError("bler must lie in [0, 1]")
    if not 0 < omega <= 1:
        raise ValueError("omega must lie in (0, 1]")
    if not 0 < gamma <= 1 or M <= 0 or min(S, T, L) <= 0 or Fraction(n_slot) <= 0:
        raise ValueError("gamma, M, dimensions and N_slot must be positive")
    return Fraction(n_slot) * S * T * L * omega * gamma * M * (1 - bler)


def wilson_interval(errors: int, trials: int, confidence: float = 0.95) -> tuple[float, float]:
    if trials <= 0:
        return 0.0, 1.0
    z = float(norm.ppf(0.5 + confidence / 2))
    p = errors / trials
    den = 1 + z * z / trials
    c = (p + z * z / (2 * trials)) / den
    h = z * np.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / den
    return max(0.0, c - h), min(1.0, c + h)


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------

@dataclass
class RunConfig:
    S: int = 24
    T: int = 12
    Nr: int = 4
    Nt: int = 4
    layers: list = field(default_factory=lambda: [2])
    mcs: list = field(default_factory=lambda: [7])
    scheme: str = "sip-classical"
    alpha: float = 0.05
    V: int = 3
    profile: str = "tdl-a-like"
    delay_spread: float = 100e-9
    speed_kmh: float = 30.0
    carrier: float = 4e9
    scs: float = 30e3
    snr_db: list = field(default_factory=lambda: [5.0, 10.0, 15.0])
    slots: int = 100
    batch: int = 25
    seed: int = 0
    pilot_seed: int = 0
    code_seed: int = 0
    n_slot: int = 2000
    dmrs_np: int = 1
    checkpoint: str = ""
    label: str = ""
    dataset_snr_db: tuple = (-20.0, 25.0)

    def __post_init__(self):
        self.layers = [int(x) for x in np.atleast_1d(self.layers)]
        self.mcs = [int(x) for x in np.atleast_1d(self.mcs)]
        self.snr_db = [float(x) for x in np.atleast_1d(self.snr_db)]
        self.dataset_snr_db = tuple(float(x) for x in self.dataset_snr_db)
        if not self.snr_db:
            raise ConfigError("snr_db must be nonempty")
        if self.slots < 1 or self.batch < 1:
            raise ConfigError("slots and batch must be >= 1")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if not 0 <= self.alpha < 1:
            raise ConfigError("alpha must lie in [0, 1)")
        if self.V < 1:
            raise ConfigError("V must be >= 1")
        try:
            for m in self.mcs:
                get_mcs(m)
            for L in self.layers:
                self.dims(L)
            profile_by_name(self.profile, self.delay_spread)
        except (KeyError, ValueError) as e:
            raise ConfigError(str(e)) from e

    def dims(self, L: int) -> GridDims:
        return GridDims(self.S, self.T, L, self.Nr, self.Nt)

    def channel(self) -> ChannelConfig:
        return ChannelConfig(profile_by_name(self.profile, self.delay_spread),
                             DopplerSpec.from_kmh(self.speed_kmh, self.carrier), self.scs)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown run keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dataset_snr_db"] = list(self.dataset_snr_db)
        return d


# --------------------------------------------------------------------------
# receivers
# --------------------------------------------------------------------------

@dataclass
class PointResult:
    scheme: str
    snr_db: float
    slots: int
    tb_errors: int
    tbs: int
    throughput_bps: float
    ce_mse: list = field(default_factory=list)  # per iteration, when available

    @property
    def bler(self) -> float:
        return self.tb_errors / self.tbs

    @property
    def ci_half(self) -> float:
        lo, hi = wilson_interval(self.tb_errors, self.tbs)
        return (hi - lo) / 2

    def row(self) -> dict:
        return {"scheme": self.scheme, "snr_db": self.snr_db, "slots": self.slots,
                "tb_errors": self.tb_errors, "bler": self.bler, "ci_half": self.ci_half,
                "throughput_bps": self.throughput_bps}


def _layer_stats(cfg: RunConfig, dims: GridDims, n: int = 400):
    """Empirical per-layer covariance of the precoded channel (includes layer power)."""
    rng = np.random.default_rng([cfg.seed, 0xC0F])
    H = sample_precoded(dims, cfg.channel(), rng, n)  # (n, S, T, L, Nr)

    def stats(l):
        pos = [0]

        def draw(k):
            out = H[pos[0]:pos[0] + k, :, :, l]
            pos[0] += k
            return out
        return estimate_covariance(draw, n)
    return [stats(l) for l in range(dims.L)]


def _sip_stats(cfg: RunConfig, dims: GridDims):
    return profile_stats(profile_by_name(cfg.profile, cfg.delay_spread),
                         DopplerSpec.from_kmh(cfg.speed_kmh, cfg.carrier), dims.S, dims.T, cfg.scs)


def evaluate_point(cfg: RunConfig, L: int, mcs_index: int, snr_db: float, snr_pos: int,
                   receiver=None, scheme_label: str | None = None) -> PointResult:
    """Run ``cfg.slots`` slots at one SNR; ``receiver`` is a loaded neural model."""
    dims = cfg.dims(L)
    mcs = get_mcs(mcs_index)
    ch = cfg.channel()
    label = scheme_label or cfg.label or cfg.scheme
    errors = 0
    done = 0
    n_it = cfg.V
    mse_acc = np.zeros(n_it)
    if cfg.scheme == "dmrs-baseline":
        dm = build_dmrs_grids(dmrs_pattern(cfg.dmrs_np, cfg.T), dims, cfg.pilot_seed)
        link = DmrsLink(dims, mcs, dm, cfg.code_seed)
        rx = BaselineReceiver(dm, _layer_stats(cfg, dims))
        omega = Fraction(int(dm.data_mask.sum()), dm.data_mask.size)
    else:
        book = build_pilot_book(dims, cfg.pilot_seed)
        link = SipLink(dims, mcs, cfg.alpha, book, cfg.code_seed)
        omega = Fraction(1)
        if cfg.scheme == "sip-classical":
            ce, dd = ClassicalCE(book, cfg.alpha, _sip_stats(cfg, dims)), ClassicalDD(cfg.alpha, L)
        else:
            if receiver is None:
                raise ConfigError("sip-neural needs a trained checkpoint")
            ce, dd = receiver.backends(L, cfg.alpha)
    b_idx = 0
    while done < cfg.slots:
        n = min(cfg.batch, cfg.slots - done)
        rng = np.random.default_rng([cfg.seed, L, mcs_index, snr_pos, b_idx])
        batch = link.generate(n, snr_db, ch, rng)
        if cfg.scheme == "dmrs-baseline":
            llr = rx.llrs(batch.Y, float(batch.sigma2[0]), mcs)
            info, _, _ = link.code.decode(llr)
            ok = np.asarray(crc16_check(info))
        else:
            out = run_receiver(batch.Y, book, ce, dd, cfg.V, mcs, batch.sigma2, link.code,
                               cfg.alpha, H_true=batch.H)
            ok = out.crc
            for d in out.diagnostics:
                mse_acc[d["iteration"] - 1] += d["ce_mse"]
        errors += int(np.sum(~ok))
        done += n
        b_idx += 1
    tbs = done * L
    bler = Fraction(errors, tbs)
    tp = compute_throughput(cfg.n_slot, cfg.S, cfg.T, L, omega, mcs.gamma, mcs.M, bler)
    mse = (mse_acc / tbs).tolist() if cfg.scheme != "dmrs-baseline" else []
    return PointResult(label, snr_db, done, errors, tbs, float(tp), mse)


def run_bler_sweep(cfg: RunConfig, out_csv: str | Path | None = None, receiver=None,
                   progress=None) -> list[PointResult]:
    """BLER/throughput at every configured (layers, MCS, SNR) point."""
    results = []
    for L in cfg.layers:
        for m in cfg.mcs:
            for i, snr in enumerate(cfg.snr_db):
                r = evaluate_point(cfg, L, m, snr, i, receiver)
                results.append(r)
                if progress:
                    progress(r)
    if out_csv is not None:
        write_csv(results, out_csv)
    return results


def write_csv(results, path) -> None:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in results:
        row = r.row()
        row["bler"] = f"{row['bler']:.6g}"
        row["ci_half"] = f"{row['ci_half']:.6g}"
        row["throughput_bps"] = f"{row['throughput_bps']:.10g}"
        w.writerow(row)
    Path(path).write_text(buf.getvalue())


# --------------------------------------------------------------------------
# datasets
# --------------------------------------------------------------------------
# bytes 0..7   magic "FSIPDATA"
# bytes 8..11  uint32 LE header length h
# next h bytes UTF-8 JSON header (dims, counts, dtype, field layout)
# remainder    n fixed-stride records of little-endian float32 values:
#              m, L, sigma2, snr_db, then Y, H, P, bits as listed in the
#              header; complex fields store real then imaginary parts,
#              layer-dependent fields are zero-padded to L_max / M_max.

DATA_MAGIC = b"FSIPDATA"


@dataclass(eq=False)
class Dataset:
    header: dict
    m: np.ndarray
    L: np.ndarray
    sigma2: np.ndarray
    snr_db: np.ndarray
    Y: np.ndarray  # (n, S, T, Nr) complex64
    H: np.ndarray  # (n, S, T, L_max, Nr) complex64
    P: np.ndarray  # (n, S, T, L_max) complex64
    bits: np.ndarray  # (n, L_max, S*T*M_max) uint8 (zero padded)

    def __len__(self) -> int:
        return self.m.size


def _layout(S, T, Nr, L_max, M_max):
    return [("Y", (S, T, Nr), True), ("H", (S, T, L_max, Nr), True),
            ("P", (S, T, L_max), True), ("bits", (L_max, S * T * M_max), False)]


def round_robin(i: int, mcs: list, layers: list) -> tuple[int, int]:
    return mcs[i % len(mcs)], layers[(i // len(mcs)) % len(layers)]


def generate_dataset(cfg: RunConfig, n: int, path) -> Dataset:
    """Write ``n`` samples at uniform random SNR, round-robin over MCS then layers."""
    if n < 1:
        raise ConfigError("n must be >= 1")
    S, T, Nr = cfg.S, cfg.T, cfg.Nr
    L_max = max(cfg.layers)
    M_max = max(get_mcs(m).M for m in cfg.mcs)
    lay = _layout(S, T, Nr, L_max, M_max)
    rec_len = 4 + sum(int(np.prod(s)) * (2 if c else 1) for _, s, c in lay)
    header = {"format": 1, "S": S, "T": T, "Nr": Nr, "Nt": cfg.Nt, "L_max": L_max,
              "M_max": M_max, "count": n, "dtype": "float32", "byte_order": "little",
              "record_floats": rec_len, "alpha": cfg.alpha, "snr_db_range": list(cfg.dataset_snr_db),
              "scalars": ["m", "L", "sigma2", "snr_db"],
              "fields": [[name, list(shape), cplx] for name, shape, cplx in lay],
              "config": cfg.to_dict()}
    hb = json.dumps(header, sort_keys=True).encode()
    ch = cfg.channel()
    rng = np.random.default_rng([cfg.seed, 0xDA7A])
    links = {}
    with open(path, "wb") as f:
        f.write(DATA_MAGIC + struct.pack("<I", len(hb)) + hb)
        for i in range(n):
            m, L = round_robin(i, cfg.mcs, cfg.layers)
            if (m, L) not in links:
                dims = cfg.dims(L)
                links[(m, L)] = SipLink(dims, get_mcs(m), cfg.alpha,
                                        build_pilot_book(dims, cfg.pilot_seed), cfg.code_seed)
            link = links[(m, L)]
            snr = rng.uniform(*cfg.dataset_snr_db)
            b = link.generate(1, snr, ch, rng)
            H = np.zeros((S, T, L_max, Nr), complex)
            H[:, :, :L] = b.H[0]
            P = np.zeros((S, T, L_max), complex)
            P[:, :, :L] = link.book.grids
            bits = np.zeros((L_max, S * T * M_max))
            bits[:L, :b.codewords.shape[-1]] = b.codewords[0]
            parts = [np.array([m, L, b.sigma2[0], b.snr_db[0]])]
            for arr, (_, _, cplx) in zip((b.Y[0], H, P, bits), lay):
                parts.append(np.concatenate([arr.real.ravel(), arr.imag.ravel()]) if cplx else arr.ravel())
            rec = np.concatenate(parts).astype("<f4")
            assert rec.size == rec_len
            f.write(rec.tobytes())
    return load_dataset(path)


def load_dataset(path) -> Dataset:
    data = Path(path).read_bytes()
    if data[:8] != DATA_MAGIC:
        raise ConfigError(f"{path} is not a dataset file")
    (hlen,) = struct.unpack("<I", data[8:12])
    header = json.loads(data[12:12 + hlen].decode())
    n, rl = header["count"], header["record_floats"]
    body = np.frombuffer(data, dtype="<f4", offset=12 + hlen)
    if body.size != n * rl:
        raise ConfigError("dataset size does not match its header")
    recs = body.reshape(n, rl)
    out = {"m": recs[:, 0].astype(int), "L": recs[:, 1].astype(int),
           "sigma2": recs[:, 2].copy(), "snr_db": recs[:, 3].copy()}
    off = 4
    for name, shape, cplx in header["fields"]:
        size = int(np.prod(shape))
        if cplx:
            re = recs[:, off:off + size]
            im = recs[:, off + size:off + 2 * size]
            out[name] = (re + 1j * im).astype(np.complex64).reshape(n, *shape)
            off += 2 * size
        else:
            out[name] = recs[:, off:off + size].astype(np.uint8).reshape(n, *shape)
            off += size
    return Dataset(header, **out)
