"""SH-domain multi-output MVDR enhancement driven by relative harmonic coefficients.

For every band bin a bank of ``L`` beamformers is built from the
interference-plus-noise PSD and the relative coefficients
``h = d / d_00``; applying the bank to the mixture coefficients yields an
estimate of the desired coefficients with their spatial structure intact.
PSDs and relative coefficients are treated as time-invariant, so one bank
per bin serves every frame.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .linalg import DEFAULT_LOADING, hermitize, mvdr_multi_output_batch
from .specfun import sh_count
from .transforms import BandPlan, SHTensor, stft

FLAG_DEGENERATE = 4
FLAG_ZERO_REFERENCE = 8


class NoFrames(ValueError):
    pass


class ZeroReference(ValueError):
    """The desired field has no order-0 energy at this bin."""


def estimate_psd(frames) -> np.ndarray:
    """Sample PSD ``(1/T) sum_t x(t) x(t)^H`` of a ``(T, L)`` stack of coefficient vectors."""
    x = np.asarray(frames, dtype=complex)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[0] == 0:
        raise NoFrames("at least one frame is required")
    return hermitize(x.T @ np.conj(x) / x.shape[0])


def psd_per_bin(sh: SHTensor) -> np.ndarray:
    """Sample PSD at every band bin, ``(K, Lmax, Lmax)``; unused entries are zero."""
    if sh.data.shape[0] == 0:
        raise NoFrames("at least one frame is required")
    R = np.einsum("tkl,tkm->klm", sh.data, np.conj(sh.data)) / sh.data.shape[0]
    return hermitize(R)


def source_psd(dry, frame_size: int, hop: int, sample_rate: int = 16000) -> np.ndarray:
    """Per-bin power ``mean_t |S(t, k)|^2`` of a dry source signal."""
    S = stft(dry, frame_size, hop, sample_rate).data[:, :, 0]
    return np.mean(np.abs(S) ** 2, axis=0)


def transfer_functions(rirs: np.ndarray, frame_size: int) -> np.ndarray:
    """ATFs ``(bins, Q)`` from RIRs ``(Q, taps)``; RIRs longer than a frame are rejected."""
    if rirs.shape[-1] > frame_size:
        raise ValueError("RIR longer than the analysis frame")
    return np.fft.rfft(rirs, n=frame_size, axis=-1).T


def oracle_interference_psd(atf_band: np.ndarray, src_power: np.ndarray, operators, band: BandPlan) -> np.ndarray:
    """Rank-one SH-domain interference PSD ``sigma^2 g g^H`` per band bin.

    ``atf_band`` is ``(K, Q)`` (capsule ATFs at the band bins), ``src_power``
    the source PSD at those bins, ``operators`` the output of
    :func:`transforms.sht_operators`.
    """
    R = np.zeros((len(band), band.L_max, band.L_max), dtype=complex)
    for order, idx, P, _, _ in operators:
        L = sh_count(order)
        g = np.einsum("klq,kq->kl", P, atf_band[idx])
        R[idx, :L, :L] = src_power[idx, None, None] * g[:, :, None] * np.conj(g[:, None, :])
    return R


def sh_transfer_functions(atf_band: np.ndarray, operators, band: BandPlan) -> np.ndarray:
    """SHT of per-capsule ATFs, ``(K, Lmax)``."""
    g = np.zeros((len(band), band.L_max), dtype=complex)
    for order, idx, P, _, _ in operators:
        g[idx, : sh_count(order)] = np.einsum("klq,kq->kl", P, atf_band[idx])
    return g


@dataclass
class PSDSet:
    """Per-bin SH-domain PSDs ``(K, Lmax, Lmax)``."""

    R_v: np.ndarray
    R_u: np.ndarray
    R_du: Optional[np.ndarray] = None

    @property
    def R_vu(self) -> np.ndarray:
        return self.R_v + self.R_u


def estimate_rehc(R) -> np.ndarray:
    """Relative coefficients ``R e1 / (e1^H R e1)`` from a desired(+noise) PSD.

    Raises
    ------
    ZeroReference
        If ``R[0, 0] <= 1e-14 * trace(R)``.
    """
    R = np.asarray(R, dtype=complex)
    ref = np.real(R[0, 0])
    if ref <= 1e-14 * np.real(np.trace(R)) or ref <= 0:
        raise ZeroReference("order-0 desired power is numerically zero")
    h = R[:, 0] / ref
    h[0] = 1.0
    return h


def estimate_rehc_batch(R: np.ndarray, band: BandPlan):
    """Relative coefficients per band bin, ``(K, Lmax)``, and zero-reference flags."""
    K = len(band)
    h = np.zeros((K, band.L_max), dtype=complex)
    flags = np.zeros(K, dtype=np.int64)
    for i in range(K):
        L = sh_count(int(band.orders[i]))
        try:
            h[i, :L] = estimate_rehc(R[i, :L, :L])
        except ZeroReference:
            h[i, 0] = 1.0
            flags[i] = FLAG_ZERO_REFERENCE
    return h, flags


@dataclass
class BankSet:
    """One beamformer bank per band bin; ``W[k, :L_k, :L_k]`` holds the columns ``w_nm``."""

    W: np.ndarray
    band: BandPlan
    flags: np.ndarray

    def apply(self, sh: SHTensor) -> SHTensor:
        """``d_nm = w_nm^H x`` at every frame and bin."""
        out = np.einsum("tkl,klm->tkm", sh.data, np.conj(self.W))
        res = sh.with_data(out)
        res.flags = res.flags | self.flags
        return res


def build_banks(R_vu: np.ndarray, h: np.ndarray, band: BandPlan, loading: float = DEFAULT_LOADING,
                flags: Optional[np.ndarray] = None) -> BankSet:
    """Multi-output MVDR bank for every band bin.

    Bins already flagged (e.g. zero reference) and bins whose constraint is
    degenerate get identity weights, i.e. pass the mixture through.
    """
    K = len(band)
    W = np.zeros((K, band.L_max, band.L_max), dtype=complex)
    flags = np.zeros(K, dtype=np.int64) if flags is None else flags.copy()
    for order, idx in band.groups():
        L = sh_count(order)
        Wg, degenerate = mvdr_multi_output_batch(R_vu[idx, :L, :L], h[idx, :L], loading)
        flags[idx[degenerate]] |= FLAG_DEGENERATE
        pre = (flags[idx] & FLAG_ZERO_REFERENCE) > 0
        Wg[pre] = np.eye(L)
        W[idx, :L, :L] = Wg
    return BankSet(W, band, flags)


def enhance(x_sh: SHTensor, psd: PSDSet, h: np.ndarray, loading: float = DEFAULT_LOADING,
            flags: Optional[np.ndarray] = None) -> tuple[SHTensor, BankSet]:
    """Estimate the desired coefficients from the mixture; returns the estimate and the banks."""
    banks = build_banks(psd.R_vu, h, x_sh.band, loading, flags)
    return banks.apply(x_sh), banks
