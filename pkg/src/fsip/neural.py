"""Convolutional channel-estimation and data-detection models, their loss,
Adam, unrolled training and a versioned binary checkpoint format.

Both models share one backbone shape: a 3x3 input convolution, ``n_blocks``
residual blocks of (BN -> ReLU -> conv) x 2 with an identity skip, and a
zero-initialized 3x3 output convolution. Complex inputs enter as real and
imaginary planes; one model instance serves every layer, so the layer count
only changes the batch size.

Feature planes (B, S, T, C) fed to each model:

CE  ``yx/r`` (2 Nr), ``P sqrt(L)`` (2), ``D_hat sqrt(L)`` (2), ``X_hat sqrt(L)`` (2),
    the LS products ``(yx/r) conj(P sqrt(L))`` and ``(yx/r) conj(X_hat sqrt(L))``
    (2 Nr each), ``sigma2 / r^2`` and ``log10 r`` (1 each); ``r`` is the RMS of yx.
    Output planes are scaled back by ``r sqrt(L)``.
DD  ``yd/r`` (2 Nr), ``a H_hat / r`` (2 Nr) with ``a = sqrt((1-alpha)/L)``, the
    per-RE MMSE combiner output (2), combined gain, its SNR ``log1p`` and the
    noise level ``sigma2 / r^2`` (1 each), and the MCS plane ``m / 15`` (1).

Inference runs in float64 so that outputs do not depend on the batch size;
training runs in float32.
"""

from __future__ import annotations

import copy
import io
import json
import struct
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .channel import DopplerSpec, profile_by_name
from .grid import MCS_INDEX_NORM, GridDims, McsEntry, get_mcs
from .link import ChannelConfig, SipLink
from .pilots import PilotBook, build_pilot_book
from .receiver import reconstruct_data, reconstruct_rx, reconstruct_sip

LLR_CLIP = 20.0
CKPT_MAGIC = b"FSIPCKPT"
CKPT_VERSION = 1


class TrainingDiverged(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


def ce_in_channels(Nr: int) -> int:
    # Y, P, D, X, two LS products, each product pooled over time and over
    # frequency, noise level and log-RMS planes
    return 14 * Nr + 8


def dd_in_channels(Nr: int) -> int:
    return 4 * Nr + 6


# --------------------------------------------------------------------------
# backbone
# --------------------------------------------------------------------------

class ResBlock(nn.Module):
    def __init__(self, width: int):
        super().__init__()
        self.bn1 = nn.BatchNorm2d(width)
        self.conv1 = nn.Conv2d(width, width, 3, padding=1)
        self.bn2 = nn.BatchNorm2d(width)
        self.conv2 = nn.Conv2d(width, width, 3, padding=1)

    def forward(self, x):
        z = self.conv1(F.relu(self.bn1(x)))
        z = self.conv2(F.relu(self.bn2(z)))
        return x + z


class ResNet(nn.Module):
    """Plane stack (B, S, T, C_in) -> (B, S, T, C_out)."""

    def __init__(self, c_in: int, c_out: int, width: int, n_blocks: int, zero_output: bool = True):
        super().__init__()
        self.c_in, self.c_out = c_in, c_out
        self.inp = nn.Conv2d(c_in, width, 3, padding=1)
        self.blocks = nn.ModuleList([ResBlock(width) for _ in range(n_blocks)])
        self.out = nn.Conv2d(width, c_out, 3, padding=1)
        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                nn.init.kaiming_normal_(m.weight, nonlinearity="relu")
                nn.init.zeros_(m.bias)
        if zero_output:
            nn.init.zeros_(self.out.weight)

    def forward(self, x):
        if x.shape[-1] != self.c_in:
            raise ValueError(f"expected {self.c_in} input planes, got {x.shape[-1]}")
        z = self.inp(x.permute(0, 3, 1, 2))
        for b in self.blocks:
            z = b(z)
        return self.out(z).permute(0, 2, 3, 1)


def _planes(z: torch.Tensor) -> torch.Tensor:
    """Complex (..., C) -> real (..., 2C) as [real parts, imaginary parts]."""
    return torch.cat([z.real, z.imag], dim=-1)


def _complex(x: torch.Tensor) -> torch.Tensor:
    c = x.shape[-1] // 2
    return torch.complex(x[..., :c], x[..., c:])


def _rms(z: torch.Tensor) -> torch.Tensor:
    p = (z.real ** 2 + z.imag ** 2).flatten(1).mean(1)
    return torch.sqrt(p + 1e-30)


def _bcast(v: torch.Tensor) -> torch.Tensor:
    return v[:, None, None, None]


# --------------------------------------------------------------------------
# models
# --------------------------------------------------------------------------

class CeModel(nn.Module):
    def __init__(self, Nr: int, width: int, n_blocks: int, zero_output: bool = True):
        super().__init__()
        self.Nr = Nr
        self.net = ResNet(ce_in_channels(Nr), 2 * Nr, width, n_blocks, zero_output)

    def features(self, yx, pilot, d_hat, x_hat, noise_var, L: int):
        r = _rms(yx)
        yn = yx / _bcast(r)
        k = float(np.sqrt(L))
        pn, dn, xn = (pilot * k)[..., None], (d_hat * k)[..., None], (x_hat * k)[..., None]
        s = (noise_var / r ** 2).clamp(max=1e3)
        ones = torch.ones_like(yx.real[..., :1])
        lp, lx = yn * pn.conj(), yn * xn.conj()
        # Pooled products widen the receptive field to the whole slot; a few
        # 3x3 convolutions alone cannot average a weak pilot over enough REs.
        pooled = [z.mean(dim=d, keepdim=True).expand_as(z) for z in (lp, lx) for d in (2, 1)]
        feats = [_planes(yn), _planes(pn), _planes(dn), _planes(xn), _planes(lp), _planes(lx),
                 *(_planes(z) for z in pooled), ones * _bcast(s), ones * _bcast(torch.log10(r))]
        return torch.cat(feats, dim=-1), r

    def forward(self, yx, pilot, d_hat, x_hat, noise_var, L: int):
        x, r = self.features(yx, pilot, d_hat, x_hat, noise_var, L)
        return _complex(self.net(x)) * _bcast(r) * float(np.sqrt(L))


class DdModel(nn.Module):
    def __init__(self, Nr: int, width: int, n_blocks: int, m_max: int, zero_output: bool = True):
        super().__init__()
        self.Nr, self.m_max = Nr, m_max
        self.net = ResNet(dd_in_channels(Nr), m_max, width, n_blocks, zero_output)

    def features(self, yd, h_hat, noise_var, alpha: float, L: int, mcs: McsEntry):
        a = float(np.sqrt((1 - alpha) / L))
        r = _rms(yd)
        yn = yd / _bcast(r)
        hn = a * h_hat / _bcast(r)
        s = (noise_var / r ** 2).clamp(max=1e3)
        gain = (hn.real ** 2 + hn.imag ** 2).sum(-1, keepdim=True)
        comb = (hn.conj() * yn).sum(-1, keepdim=True) / (gain + _bcast(s) + 1e-12)
        ones = torch.ones_like(gain)
        feats = [_planes(yn), _planes(hn), _planes(comb), gain,
                 torch.log1p(gain / (_bcast(s) + 1e-6)), ones * _bcast(s),
                 ones * (mcs.index / MCS_INDEX_NORM)]
        return torch.cat(feats, dim=-1)

    def forward(self, yd, h_hat, noise_var, alpha: float, L: int, mcs: McsEntry):
        if mcs.M > self.m_max:
            raise ValueError(f"MCS {mcs.index} needs M={mcs.M} > M_max={self.m_max}")
        out = self.net(self.features(yd, h_hat, noise_var, alpha, L, mcs))
        return out[..., :mcs.M].clamp(-LLR_CLIP, LLR_CLIP)


# --------------------------------------------------------------------------
# loss and optimizer
# --------------------------------------------------------------------------

def bce_from_llr(llr: torch.Tensor, bits: torch.Tensor) -> torch.Tensor:
    """Mean binary cross-entropy; positive LLR means bit 0."""
    llr = llr.clamp(-LLR_CLIP, LLR_CLIP)
    return F.softplus((2 * bits.to(llr.dtype) - 1) * llr).mean()


def mse_complex(h: torch.Tensor, h_hat: torch.Tensor) -> torch.Tensor:
    d = h - h_hat
    return (d.real ** 2 + d.imag ** 2).mean()


def iteration_loss(llr, bits, h_hat, h, tau: float):
    bce = bce_from_llr(llr, bits)
    mse = mse_complex(h, h_hat)
    return tau * bce + (1 - tau) * mse, bce, mse


def unrolled_loss(per_iteration: list[torch.Tensor]) -> torch.Tensor:
    """Average of the per-iteration losses."""
    if not per_iteration:
        raise ValueError("need at least one iteration")
    return torch.stack(list(per_iteration)).mean()


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def for_params(cls, params) -> "AdamState":
        return cls([torch.zeros_like(p) for p in params], [torch.zeros_like(p) for p in params], 0)


@torch.no_grad()
def adam_step(params, grads, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """In-place Adam update of ``params``."""
    if len(params) != len(state.m) or len(grads) != len(params):
        raise ValueError("optimizer state does not match the parameter list")
    state.t += 1
    c1 = 1 - beta1 ** state.t
    c2 = 1 - beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            continue
        if m.shape != p.shape:
            raise ValueError("optimizer state shape mismatch")
        m.mul_(beta1).add_(g, alpha=1 - beta1)
        v.mul_(beta2).addcmul_(g, g, value=1 - beta2)
        p.sub_(lr * (m / c1) / (torch.sqrt(v / c2) + eps))


# --------------------------------------------------------------------------
# configuration and trained receiver
# --------------------------------------------------------------------------

@dataclass
class NeuralConfig:
    S: int = 24
    T: int = 12
    Nr: int = 4
    Nt: int = 4
    layers: list = field(default_factory=lambda: [2])
    mcs: list = field(default_factory=lambda: [7])
    alpha: float = 0.05
    V: int = 3
    width: int = 32
    n_blocks: int = 2
    tau: float = 0.5
    lr: float = 1e-3
    batch: int = 8
    steps: int = 2000
    snr_db: tuple = (-20.0, 25.0)
    profile: str = "tdl-a-like"
    delay_spread: float = 100e-9
    speed_kmh: float = 30.0
    carrier: float = 4e9
    scs: float = 30e3
    pilot_seed: int = 0
    code_seed: int = 0
    seed: int = 0
    log_every: int = 50
    M_max: int = 6  # DD output planes; must cover every configured MCS

    def __post_init__(self):
        self.layers = [int(x) for x in np.atleast_1d(self.layers)]
        self.mcs = [int(x) for x in np.atleast_1d(self.mcs)]
        self.snr_db = tuple(float(x) for x in self.snr_db)
        if not 0 <= self.alpha < 1:
            raise ValueError("alpha must lie in [0, 1)")
        if not 0 <= self.tau <= 1:
            raise ValueError("tau must lie in [0, 1]")
        if self.V < 1 or self.batch < 1 or self.steps < 0:
            raise ValueError("V and batch must be >= 1, steps >= 0")
        if len(self.snr_db) != 2 or self.snr_db[0] > self.snr_db[1]:
            raise ValueError("snr_db must be a (low, high) pair")
        need = max(get_mcs(m).M for m in self.mcs)
        if self.M_max < need:
            raise ValueError(f"M_max={self.M_max} is below the configured MCS order {need}")

    @property
    def m_max(self) -> int:
        return self.M_max

    def dims(self, L: int) -> GridDims:
        return GridDims(self.S, self.T, L, self.Nr, self.Nt)

    def channel(self) -> ChannelConfig:
        return ChannelConfig(profile_by_name(self.profile, self.delay_spread),
                             DopplerSpec.from_kmh(self.speed_kmh, self.carrier), self.scs)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["snr_db"] = list(self.snr_db)
        return d


@dataclass(eq=False)
class NeuralReceiver:
    """Trained CE and DD models plus the configuration they were trained with."""

    config: NeuralConfig
    ce: CeModel
    dd: DdModel

    @classmethod
    def init(cls, config: NeuralConfig, zero_output: bool = True) -> "NeuralReceiver":
        torch.manual_seed(config.seed)
        ce = CeModel(config.Nr, config.width, config.n_blocks, zero_output)
        dd = DdModel(config.Nr, config.width, config.n_blocks, config.m_max, zero_output)
        return cls(config, ce, dd)

    def parameters(self) -> list:
        return list(self.ce.parameters()) + list(self.dd.parameters())

    def eval_copy(self, dtype=torch.float64) -> "NeuralReceiver":
        ce = copy.deepcopy(self.ce).to(dtype).eval()
        dd = copy.deepcopy(self.dd).to(dtype).eval()
        return NeuralReceiver(self.config, ce, dd)

    def backends(self, L: int, alpha: float | None = None):
        """Engine-compatible (ce, dd) callables running in float64 eval mode."""
        ev = self.eval_copy()
        a = self.config.alpha if alpha is None else alpha
        return NeuralCE(ev.ce, L), NeuralDD(ev.dd, a, L)


def _t(x, dtype=torch.complex128):
    return torch.from_numpy(np.ascontiguousarray(x)).to(dtype)


class NeuralCE:
    def __init__(self, model: CeModel, L: int):
        self.model, self.L = model, L

    @torch.no_grad()
    def __call__(self, yx, pilot, d_hat, x_hat, noise_var, mcs=None, **_):
        nv = torch.from_numpy(np.ascontiguousarray(noise_var, dtype=np.float64))
        h = self.model(_t(yx), _t(pilot), _t(d_hat), _t(x_hat), nv, self.L)
        return h.numpy()


class NeuralDD:
    def __init__(self, model: DdModel, alpha: float, L: int):
        self.model, self.alpha, self.L = model, alpha, L

    @torch.no_grad()
    def __call__(self, yd, h_hat, noise_var, mcs: McsEntry, **_):
        nv = torch.from_numpy(np.ascontiguousarray(noise_var, dtype=np.float64))
        return self.model(_t(yd), _t(h_hat), nv, self.alpha, self.L, mcs).numpy()


# --------------------------------------------------------------------------
# unrolled training
# --------------------------------------------------------------------------

def unrolled_forward(rx: NeuralReceiver, Y, H, codewords, pilot_grids, noise_var,
                     mcs: McsEntry, code, alpha: float, V: int, tau: float,
                     dtype=torch.float32):
    """Run V receiver iterations with gradients inside each iteration.

    ``Y`` (N, S, T, Nr), ``H`` (N, S, T, L, Nr), ``codewords`` (N, L, n),
    ``pilot_grids`` (S, T, L). Reconstructions are built from detached
    outputs (hard decode and re-encode). Returns (loss, bce, mse) averaged
    over iterations, plus per-iteration CRC pass fractions.
    """
    cdt = torch.complex64 if dtype == torch.float32 else torch.complex128
    N, S, T, Nr = Y.shape
    L = pilot_grids.shape[-1]
    Yt = _t(Y, cdt)
    Ht = _t(np.moveaxis(H, 3, 1).reshape(N * L, S, T, Nr), cdt)
    bits = torch.from_numpy(codewords.reshape(N * L, S, T, mcs.M).astype(np.float32)).to(dtype)
    P = np.broadcast_to(np.moveaxis(pilot_grids, -1, 0)[None], (N, L, S, T)).reshape(N * L, S, T)
    Pt = _t(P, cdt)
    nv = torch.from_numpy(np.repeat(np.asarray(noise_var, dtype=np.float64), L)).to(dtype)
    yx_hat = np.zeros((N, L, S, T, Nr), complex)
    d_hat = np.zeros((N * L, S, T), complex)
    x_hat = np.zeros((N * L, S, T), complex)
    losses, bces, mses, crcs = [], [], [], []
    for _ in range(V):
        tot = yx_hat.sum(axis=1, keepdims=True)
        yx = (Y[:, None] - (tot - yx_hat)).reshape(N * L, S, T, Nr)
        yx_t = _t(yx, cdt)
        h = rx.ce(yx_t, Pt, _t(d_hat, cdt), _t(x_hat, cdt), nv, L)
        yd = yx_t - float(np.sqrt(alpha)) * h * Pt[..., None]
        llr = rx.dd(yd, h, nv, alpha, L, mcs)
        loss, bce, mse = iteration_loss(llr, bits, h, Ht, tau)
        losses.append(loss)
        bces.append(bce.detach())
        mses.append(mse.detach())
        v = llr.detach().to(torch.float64).numpy()
        d, _, ok = reconstruct_data(v, mcs, code, L)
        d_hat = d
        x_hat = reconstruct_sip(d, P, alpha)
        yx_hat = reconstruct_rx(h.detach().to(torch.complex128).numpy(), x_hat).reshape(N, L, S, T, Nr)
        crcs.append(float(np.mean(ok)))
    return (unrolled_loss(losses), torch.stack(bces).mean(), torch.stack(mses).mean(), crcs)


@dataclass
class TrainLog:
    records: list = field(default_factory=list)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r) + "\n" for r in self.records)


def train(cfg: NeuralConfig, rx: NeuralReceiver | None = None,
          on_log: Callable[[dict], None] | None = None) -> tuple[NeuralReceiver, TrainLog]:
    """Online training: every step draws fresh slots at uniform random SNR.

    The MCS and layer count cycle round-robin over the configured lists,
    one combination per step.
    """
    torch.set_num_threads(1)
    rx = rx or NeuralReceiver.init(cfg)
    rx.ce.train()
    rx.dd.train()
    rng = np.random.default_rng([cfg.seed, 0x7EA1])
    ch = cfg.channel()
    links: dict = {}
    params = rx.parameters()
    state = AdamState.for_params(params)
    log = TrainLog()
    acc = {"loss": 0.0, "bce": 0.0, "mse": 0.0, "n": 0}
    t0 = time.time()
    for step in range(1, cfg.steps + 1):
        mi = cfg.mcs[(step - 1) % len(cfg.mcs)]
        L = cfg.layers[((step - 1) // len(cfg.mcs)) % len(cfg.layers)]
        key = (mi, L)
        if key not in links:
            dims = cfg.dims(L)
            links[key] = SipLink(dims, get_mcs(mi), cfg.alpha,
                                 build_pilot_book(dims, cfg.pilot_seed), cfg.code_seed)
        link = links[key]
        snr = rng.uniform(*cfg.snr_db, cfg.batch)
        b = link.generate(cfg.batch, snr, ch, rng)
        loss, bce, mse, _ = unrolled_forward(rx, b.Y, b.H, b.codewords, link.book.grids,
                                             b.sigma2, link.mcs, link.code, cfg.alpha,
                                             cfg.V, cfg.tau)
        if not torch.isfinite(loss):
            raise TrainingDiverged(f"non-finite loss at step {step}")
        grads = torch.autograd.grad(loss, params, allow_unused=True)
        adam_step(params, grads, state, cfg.lr)
        acc["loss"] += float(loss.detach())
        acc["bce"] += float(bce)
        acc["mse"] += float(mse)
        acc["n"] += 1
        if step % cfg.log_every == 0 or step == cfg.steps:
            n = acc.pop("n")
            rec = {"step": step, **{k: v / n for k, v in acc.items()}, "lr": cfg.lr,
                   "elapsed_s": round(time.time() - t0, 2)}
            log.records.append(rec)
            if on_log:
                on_log(rec)
            acc = {"loss": 0.0, "bce": 0.0, "mse": 0.0, "n": 0}
    rx.ce.eval()
    rx.dd.eval()
    return rx, log


# --------------------------------------------------------------------------
# checkpoint format
# --------------------------------------------------------------------------
# bytes 0..7   magic "FSIPCKPT"
# bytes 8..11  uint32 LE format version
# bytes 12..15 uint32 LE header length h
# next h bytes UTF-8 JSON header: config, dims, blocks, M_max, byte order,
#              dtype and the (name, shape) list of tensors in order
# remainder    the tensors as little-endian float32, in header order

def _tensors(rx: NeuralReceiver):
    for prefix, mod in (("ce", rx.ce), ("dd", rx.dd)):
        for name, t in mod.state_dict().items():
            if name.endswith("num_batches_tracked"):
                continue
            yield f"{prefix}.{name}", t


def checkpoint_bytes(rx: NeuralReceiver, extra: dict | None = None) -> bytes:
    entries = list(_tensors(rx))
    cfg = rx.config
    header = {
        "config": cfg.to_dict(), "width": cfg.width, "n_blocks": cfg.n_blocks,
        "m_max": cfg.m_max, "Nr": cfg.Nr, "byte_order": "little", "dtype": "float32",
        "tensors": [[n, list(t.shape)] for n, t in entries], "extra": extra or {},
    }
    hb = json.dumps(header, sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(CKPT_MAGIC)
    buf.write(struct.pack("<II", CKPT_VERSION, len(hb)))
    buf.write(hb)
    for _, t in entries:
        buf.write(t.detach().cpu().to(torch.float32).numpy().astype("<f4").tobytes())
    return buf.getvalue()


def save_checkpoint(rx: NeuralReceiver, path, extra: dict | None = None) -> None:
    with open(path, "wb") as f:
        f.write(checkpoint_bytes(rx, extra))


def checkpoint_from_bytes(data: bytes) -> tuple[NeuralReceiver, dict]:
    if data[:8] != CKPT_MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version, hlen = struct.unpack("<II", data[8:16])
    if version != CKPT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    header = json.loads(data[16:16 + hlen].decode())
    if header.get("byte_order") != "little" or header.get("dtype") != "float32":
        raise CheckpointError("unsupported tensor encoding")
    try:
        cfg = NeuralConfig(**header["config"])
    except (TypeError, ValueError) as e:
        raise CheckpointError(f"checkpoint configuration rejected: {e}") from e
    rx = NeuralReceiver.init(cfg)
    expected = {n: t for n, t in _tensors(rx)}
    off = 16 + hlen
    states = {"ce": {}, "dd": {}}
    for name, shape in header["tensors"]:
        if name not in expected or list(expected[name].shape) != shape:
            raise CheckpointError(f"tensor {name} {shape} does not fit the configured model")
        count = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=off).reshape(shape)
        off += 4 * count
        prefix, rest = name.split(".", 1)
        states[prefix][rest] = torch.from_numpy(arr.copy())
    if off != len(data):
        raise CheckpointError("trailing bytes after the last tensor")
    if set(expected) != {n for n, _ in header["tensors"]}:
        raise CheckpointError("checkpoint is missing tensors")
    rx.ce.load_state_dict(states["ce"], strict=False)
    rx.dd.load_state_dict(states["dd"], strict=False)
    rx.ce.eval()
    rx.dd.eval()
    return rx, header


def load_checkpoint(path) -> tuple[NeuralReceiver, dict]:
    with open(path, "rb") as f:
        return checkpoint_from_bytes(f.read())


def pilot_book_for(cfg: NeuralConfig, L: int) -> PilotBook:
    return build_pilot_book(cfg.dims(L), cfg.pilot_seed)
