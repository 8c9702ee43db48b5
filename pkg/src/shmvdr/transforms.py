"""Time-frequency and spherical-harmonic analysis/synthesis.

Array layouts:

* ``TFTensor.data`` is ``(frames, bins, channels)``.
* ``SHTensor.data`` is ``(frames, band_bins, Lmax)``; bin ``k`` uses only the
  first ``(N_k + 1)**2`` entries, the rest are zero.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal.windows import hann

from .specfun import max_order, sh_count, sh_indices, sh_matrix, sph_bessel_j_all

FRAME_SIZE = 16384
HOP = FRAME_SIZE // 4

BESSEL_GUARD = 1e-4
TIKHONOV = 1e-8
MAX_COND = 1e6

# per-bin flag bits
FLAG_BESSEL_GUARD = 1
FLAG_ILL_CONDITIONED = 2


class SignalTooShort(ValueError):
    pass


class IllConditioned(np.linalg.LinAlgError):
    pass


class OutsideSweetArea(ValueError):
    pass


# ------------------------------------------------------------------ STFT ---

@dataclass
class TFTensor:
    data: np.ndarray
    frame_size: int
    hop: int
    sample_rate: int
    n_samples: int

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @property
    def bins(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def freqs(self) -> np.ndarray:
        return np.arange(self.bins) * self.sample_rate / self.frame_size

    def with_data(self, data: np.ndarray) -> "TFTensor":
        return replace(self, data=data)


def analysis_window(frame_size: int) -> np.ndarray:
    return hann(frame_size, sym=False)


def stft(signal, frame_size: int = FRAME_SIZE, hop: Optional[int] = None, sample_rate: int = 16000) -> TFTensor:
    """Periodic-Hann STFT of a ``(channels, samples)`` or mono signal.

    Only complete frames are produced: ``1 + (n - frame_size) // hop`` of them.
    """
    hop = frame_size // 4 if hop is None else hop
    x = np.asarray(signal, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    n = x.shape[-1]
    if n < frame_size:
        raise SignalTooShort(f"signal has {n} samples, need at least {frame_size}")
    win = analysis_window(frame_size)
    n_frames = 1 + (n - frame_size) // hop
    out = np.empty((n_frames, frame_size // 2 + 1, x.shape[0]), dtype=complex)
    for c in range(x.shape[0]):
        frames = sliding_window_view(x[c], frame_size)[::hop][:n_frames]
        out[:, :, c] = np.fft.rfft(frames * win, axis=-1)
    return TFTensor(out, frame_size, hop, sample_rate, n)


def istft(tensor: TFTensor, length: Optional[int] = None) -> np.ndarray:
    """Weighted overlap-add inverse; returns ``(channels, samples)``.

    Samples not covered by any frame with a non-zero window are returned as 0.
    """
    fs, hop = tensor.frame_size, tensor.hop
    win = analysis_window(fs)
    n_out = (tensor.frames - 1) * hop + fs
    length = tensor.n_samples if length is None else length
    y = np.zeros((tensor.channels, max(n_out, length)))
    norm = np.zeros(max(n_out, length))
    for t in range(tensor.frames):
        seg = np.fft.irfft(tensor.data[t], n=fs, axis=0).T
        y[:, t * hop:t * hop + fs] += seg * win
        norm[t * hop:t * hop + fs] += win * win
    nz = norm > 1e-10
    y[:, nz] /= norm[nz]
    y[:, ~nz] = 0.0
    return y[:, :length]


# ------------------------------------------------------------- band plan ---

@dataclass
class BandPlan:
    """Processed STFT bins with their wavenumbers and truncation orders."""

    bins: np.ndarray
    freqs: np.ndarray
    k: np.ndarray
    orders: np.ndarray
    f_low: float = 300.0
    f_high: float = 3400.0

    def __len__(self) -> int:
        return len(self.bins)

    @property
    def max_order(self) -> int:
        return int(self.orders.max())

    @property
    def L_max(self) -> int:
        return sh_count(self.max_order)

    def groups(self) -> Iterator[tuple[int, np.ndarray]]:
        """``(order, band indices)`` for each distinct truncation order."""
        for n in np.unique(self.orders):
            yield int(n), np.flatnonzero(self.orders == n)

    def index_of(self, freq: float) -> int:
        """Band index of the bin closest to ``freq``."""
        return int(np.argmin(np.abs(self.freqs - freq)))

    def to_json(self) -> dict:
        return {"f_low": self.f_low, "f_high": self.f_high, "bins": self.bins.tolist(),
                "freqs": self.freqs.tolist(), "k": self.k.tolist(), "orders": self.orders.tolist()}

    @classmethod
    def from_json(cls, d: dict) -> "BandPlan":
        return cls(np.asarray(d["bins"], dtype=int), np.asarray(d["freqs"], dtype=float),
                   np.asarray(d["k"], dtype=float), np.asarray(d["orders"], dtype=int),
                   d["f_low"], d["f_high"])


def band_plan(radius: float, frame_size: int = FRAME_SIZE, sample_rate: int = 16000, c: float = 343.0,
              f_low: float = 300.0, f_high: float = 3400.0) -> BandPlan:
    freqs_all = np.arange(frame_size // 2 + 1) * sample_rate / frame_size
    bins = np.flatnonzero((freqs_all >= f_low) & (freqs_all <= f_high))
    freqs = freqs_all[bins]
    k = 2 * np.pi * freqs / c
    orders = np.array([max_order(kk, radius) for kk in k], dtype=int)
    return BandPlan(bins, freqs, k, orders, f_low, f_high)


# ------------------------------------------------------------ SH tensors ---

@dataclass
class SHTensor:
    data: np.ndarray
    band: BandPlan
    frames: np.ndarray = None
    flags: np.ndarray = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        T, K, _ = self.data.shape
        if self.frames is None:
            self.frames = np.arange(T)
        if self.flags is None:
            self.flags = np.zeros(K, dtype=np.int64)

    def coeffs(self, kidx: int) -> np.ndarray:
        """``(frames, L_k)`` coefficients of one band bin."""
        return self.data[:, kidx, : sh_count(int(self.band.orders[kidx]))]

    def with_data(self, data: np.ndarray) -> "SHTensor":
        return SHTensor(data, self.band, self.frames.copy(), self.flags.copy(), dict(self.meta))

    def select_frames(self, idx) -> "SHTensor":
        idx = np.asarray(idx)
        return SHTensor(self.data[idx], self.band, self.frames[idx], self.flags.copy(), dict(self.meta))

    def __add__(self, other: "SHTensor") -> "SHTensor":
        out = self.with_data(self.data + other.data)
        out.flags |= other.flags
        return out


def sht_matrix(order: int, k, r, theta, phi) -> np.ndarray:
    """Forward model ``E[..., q, nm] = j_n(k r_q) Y_nm(theta_q, phi_q)``.

    ``k`` may be an array; the result then has shape ``k.shape + (Q, L)``.
    """
    k = np.asarray(k, dtype=float)
    n_idx, _ = sh_indices(order)
    kr = k[..., None] * np.asarray(r, dtype=float)
    jn = np.moveaxis(sph_bessel_j_all(order, kr), 0, -1)[..., n_idx]
    return jn * sh_matrix(order, theta, phi)


def _solve_matrices(E: np.ndarray, guard: np.ndarray):
    """Least-squares (optionally Tikhonov) inverses of a stack of forward matrices.

    Returns ``(P, cond)`` where ``P @ p`` gives coefficients and ``cond`` is
    the effective condition number after regularisation.
    """
    U, s, Vh = np.linalg.svd(E, full_matrices=False)
    lam = np.where(guard, TIKHONOV * s[..., 0] ** 2, 0.0)
    filt = s / (s * s + lam[..., None])
    P = np.einsum("...ji,...j,...kj->...ik", np.conj(Vh), filt, np.conj(U))
    cond = np.sqrt((s[..., 0] ** 2 + lam) / np.maximum(s[..., -1] ** 2 + lam, np.finfo(float).tiny))
    return P, cond


def _weighted_inverse(E, guard, weights):
    if weights is None:
        return _solve_matrices(E, guard)
    sw = np.sqrt(np.asarray(weights, dtype=float))
    P, cond = _solve_matrices(E * sw[:, None], guard)
    return P * sw, cond


def _needs_guard(order: int, k, r) -> np.ndarray:
    kr = np.asarray(k, dtype=float)[..., None] * np.asarray(r, dtype=float)
    jn = sph_bessel_j_all(order, kr)
    return np.any(np.abs(jn) < BESSEL_GUARD, axis=(0, -1))


def sht(mic_frame, geometry, k: float, order: int) -> np.ndarray:
    """Coefficients ``x_nm`` (length ``(order+1)**2``) fitted to one bin of capsule pressures.

    Solves the forward model in least squares with the radial term inside
    the matrix. If some active ``|j_n(k r)|`` is below ``1e-4`` the normal
    equations are Tikhonov-regularised with ``1e-8 * ||E||**2``.

    Raises
    ------
    IllConditioned
        If the (regularised) condition number exceeds ``1e6``.
    """
    p = np.asarray(mic_frame, dtype=complex)
    if sh_count(order) > len(p):
        raise ValueError("order too high for the number of microphones")
    E = sht_matrix(order, k, geometry.r, geometry.theta, geometry.phi)
    guard = _needs_guard(order, k, geometry.r)
    P, cond = _weighted_inverse(E, np.asarray(guard), geometry.weights)
    if cond > MAX_COND:
        raise IllConditioned(f"condition number {cond:.3g} at k={k:.4g}")
    return P @ p


def sht_operators(geometry, band: BandPlan):
    """Per-order-group inverse operators ``(order, idx, P[K_g, L, Q], flags[K_g], cond[K_g])``."""
    out = []
    for order, idx in band.groups():
        E = sht_matrix(order, band.k[idx], geometry.r, geometry.theta, geometry.phi)
        guard = _needs_guard(order, band.k[idx], geometry.r)
        P, cond = _weighted_inverse(E, guard, geometry.weights)
        flags = np.where(guard, FLAG_BESSEL_GUARD, 0) | np.where(cond > MAX_COND, FLAG_ILL_CONDITIONED, 0)
        out.append((order, idx, P, flags.astype(np.int64), cond))
    return out


def sht_tensor(tf: TFTensor, geometry, band: BandPlan, operators=None) -> SHTensor:
    """Apply the SHT to every frame at every band bin of a capsule-domain tensor."""
    return sht_band(tf.data[:, band.bins, :], geometry, band, operators)


def sht_band(x_band: np.ndarray, geometry, band: BandPlan, operators=None) -> SHTensor:
    """SHT of capsule data already restricted to the band bins, ``(T, K, Q)``."""
    if operators is None:
        operators = sht_operators(geometry, band)
    data = np.zeros((x_band.shape[0], len(band), band.L_max), dtype=complex)
    flags = np.zeros(len(band), dtype=np.int64)
    cond = np.zeros(len(band))
    for order, idx, P, fl, cn in operators:
        L = sh_count(order)
        data[:, idx, :L] = np.einsum("klq,tkq->tkl", P, x_band[:, idx, :])
        flags[idx] = fl
        cond[idx] = cn
    return SHTensor(data, band, flags=flags, meta={"condition": cond})


def stft_band(signal, band: BandPlan, frame_size: int = FRAME_SIZE, hop: Optional[int] = None,
              sample_rate: int = 16000) -> np.ndarray:
    """STFT restricted to the band bins, ``(T, K, channels)``."""
    return stft(signal, frame_size, hop, sample_rate).data[:, band.bins, :]


def band_to_tf(x_band: np.ndarray, band: BandPlan, frame_size: int = FRAME_SIZE, hop: Optional[int] = None,
               sample_rate: int = 16000, n_samples: Optional[int] = None) -> TFTensor:
    """Embed band-bin data in a full-spectrum tensor (zeros elsewhere)."""
    hop = frame_size // 4 if hop is None else hop
    T, _, C = x_band.shape
    data = np.zeros((T, frame_size // 2 + 1, C), dtype=complex)
    data[:, band.bins, :] = x_band
    n = (T - 1) * hop + frame_size if n_samples is None else n_samples
    return TFTensor(data, frame_size, hop, sample_rate, n)


def isht_matrix(order: int, k: float, points) -> np.ndarray:
    """``B[p, nm] = j_n(k r_p) Y_nm(theta_p, phi_p)`` for points ``(r, theta, phi)``."""
    pts = np.asarray(points, dtype=float)
    return sht_matrix(order, k, pts[:, 0], pts[:, 1], pts[:, 2])


def isht_pressure(coeffs, k: float, points, r_sweet: Optional[float] = None) -> np.ndarray:
    """Pressure ``sum_nm c_nm j_n(k r) Y_nm(theta, phi)`` at each point."""
    c = np.asarray(coeffs, dtype=complex)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if r_sweet is not None and np.any(pts[:, 0] > r_sweet * (1 + 1e-12)):
        raise OutsideSweetArea(f"points beyond the sweet-area radius {r_sweet}")
    order = math.isqrt(len(c)) - 1
    if sh_count(order) != len(c):
        raise ValueError("coefficient vector length is not a square")
    return isht_matrix(order, k, pts) @ c


# ------------------------------------------------------------- container ---

MAGIC = b"SHTC"
VERSION = 1


def write_shtensor(path, tensor: SHTensor, extra: Optional[dict] = None) -> None:
    """Binary container: magic, version, JSON header length, JSON header, complex128 payload."""
    header = {
        "dims": list(tensor.data.shape),
        "dtype": "<c16",
        "ordering": "ACN n*n+n+m; orthonormal complex SH with Condon-Shortley phase",
        "band": tensor.band.to_json(),
        "frames": tensor.frames.tolist(),
        "flags": tensor.flags.tolist(),
        "meta": _jsonable(tensor.meta),
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<HI", VERSION, len(blob)))
        fh.write(blob)
        fh.write(np.ascontiguousarray(tensor.data, dtype="<c16").tobytes())


def read_shtensor(path) -> tuple[SHTensor, dict]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: not an SH tensor container")
    version, hlen = struct.unpack("<HI", raw[4:10])
    if version != VERSION:
        raise ValueError(f"{path}: unsupported container version {version}")
    header = json.loads(raw[10:10 + hlen])
    data = np.frombuffer(raw[10 + hlen:], dtype="<c16").reshape(header["dims"]).copy()
    meta = {k: np.asarray(v) if isinstance(v, list) else v for k, v in header["meta"].items()}
    tensor = SHTensor(data, BandPlan.from_json(header["band"]), np.asarray(header["frames"], dtype=int),
                      np.asarray(header["flags"], dtype=np.int64), meta)
    return tensor, header["extra"]


def _jsonable(d: dict) -> dict:
    return {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in d.items()}
