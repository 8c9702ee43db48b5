"""Beamforming-and-projection reference method.

1. A TF-domain single-output MVDR steered by a plane wave from the known
   DoA estimates the desired source signal.
2. Capsule ATFs relative to that estimate are fitted in least squares,
   pooling a 9-bin neighbourhood (clipped at the band edges).
3. The estimate is projected back onto the capsules through those ATFs;
   the SHT of the result is compared with the proposed method.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import DEFAULT_LOADING, mvdr_single_output_batch
from .transforms import BandPlan, SHTensor, TFTensor, sht_tensor

FLAG_BEAM_DEGENERATE = 16
FLAG_ZERO_BEAM = 32

SMOOTH_BINS = 9


class ZeroBeamOutput(ValueError):
    pass


def doa_from_positions(center, source) -> tuple[float, float]:
    """``(theta, phi)`` of ``source`` as seen from ``center``."""
    d = np.asarray(source, dtype=float) - np.asarray(center, dtype=float)
    r = np.linalg.norm(d)
    return float(np.arccos(d[2] / r)), float(np.arctan2(d[1], d[0]))


def steering_from_doa(doa, geometry, k) -> np.ndarray:
    """Plane-wave steering ``exp(1j * k * r_q . u)``, ``u`` pointing towards the source.

    With the ``exp(-1j w t)`` transform convention, a capsule displaced
    towards the source receives the wave earlier, i.e. with positive phase.
    ``k`` may be scalar (``(Q,)`` result) or an array (``k.shape + (Q,)``).
    """
    theta, phi = doa
    u = np.array([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)])
    proj = geometry.offsets @ u
    return np.exp(1j * np.multiply.outer(np.asarray(k, dtype=float), proj))


def smoothing_windows(n_bins: int, width: int = SMOOTH_BINS) -> tuple[np.ndarray, np.ndarray]:
    """Inclusive ``[lo, hi]`` band indices of the centred window at each bin, clipped to the band."""
    half = width // 2
    i = np.arange(n_bins)
    return np.maximum(i - half, 0), np.minimum(i + half, n_bins - 1)


def _window_sum(a: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Sum of ``a`` over band windows along axis 0."""
    c = np.concatenate([np.zeros((1,) + a.shape[1:], dtype=a.dtype), np.cumsum(a, axis=0)])
    return c[hi + 1] - c[lo]


@dataclass
class BaselineFilters:
    """Frozen stage-1 beamformers ``w`` and stage-2 ATFs ``atf`` (both ``(K, Q)``)."""

    w: np.ndarray
    atf: np.ndarray
    band: BandPlan
    flags: np.ndarray

    def beam(self, x_band: np.ndarray) -> np.ndarray:
        """Stage 1: ``s(t, k) = w(k)^H x(t, k)`` for ``x_band`` of shape ``(T, K, Q)``."""
        return np.einsum("kq,tkq->tk", np.conj(self.w), x_band)

    def apply(self, x_band: np.ndarray) -> np.ndarray:
        """Stages 1 and 3 with frozen filters: ``d_q(t, k) = atf_q(k) s(t, k)``."""
        return self.atf[None, :, :] * self.beam(x_band)[:, :, None]


def fit_atf(x_band: np.ndarray, s: np.ndarray, width: int = SMOOTH_BINS):
    """Least-squares ATFs of the capsules relative to ``s`` pooled over a window of bins.

    ``atf_q(k) = sum_{k' in W(k)} sum_t x_q(t,k') conj(s(t,k')) / sum_{k' in W(k)} sum_t |s(t,k')|^2``.
    Returns the ATFs and a mask of bins whose denominator vanished.
    """
    num = np.einsum("tkq,tk->kq", x_band, np.conj(s))
    den = np.sum(np.abs(s) ** 2, axis=0)
    lo, hi = smoothing_windows(x_band.shape[1], width)
    num_s = _window_sum(num, lo, hi)
    den_s = _window_sum(den, lo, hi)
    scale = np.max(den_s) if den_s.size else 0.0
    zero = den_s <= 1e-300 + 1e-14 * scale
    atf = np.zeros_like(num_s)
    atf[~zero] = num_s[~zero] / den_s[~zero, None]
    return atf, zero


def baseline_filters(x_band: np.ndarray, R_vu_tf: np.ndarray, doa, geometry, band: BandPlan,
                     loading: float = DEFAULT_LOADING, width: int = SMOOTH_BINS) -> BaselineFilters:
    """Design the baseline from the mixture ``x_band`` (``(T, K, Q)``, band bins only)."""
    a = steering_from_doa(doa, geometry, band.k)
    w, degenerate = mvdr_single_output_batch(R_vu_tf, a, loading)
    flags = np.where(degenerate, FLAG_BEAM_DEGENERATE, 0).astype(np.int64)
    s = np.einsum("kq,tkq->tk", np.conj(w), x_band)
    atf, zero = fit_atf(x_band, s, width)
    flags[zero] |= FLAG_ZERO_BEAM
    return BaselineFilters(w, atf, band, flags)


def baseline_enhance(x_tf: TFTensor, R_vu_tf: np.ndarray, doa, geometry, band: BandPlan,
                     loading: float = DEFAULT_LOADING) -> tuple[TFTensor, BaselineFilters]:
    """Estimated desired capsule signals (zero outside the band) and the frozen filters."""
    x_band = x_tf.data[:, band.bins, :]
    filt = baseline_filters(x_band, R_vu_tf, doa, geometry, band, loading)
    out = np.zeros_like(x_tf.data)
    out[:, band.bins, :] = filt.apply(x_band)
    return x_tf.with_data(out), filt


def baseline_to_sh(d_mic_tf: TFTensor, geometry, band: BandPlan, operators=None) -> SHTensor:
    return sht_tensor(d_mic_tf, geometry, band, operators)


def tf_oracle_psd(atf_band: np.ndarray, src_power: np.ndarray, noise_power: np.ndarray) -> np.ndarray:
    """``sigma_s^2 g g^H + sigma_u^2 I`` per band bin, ``(K, Q, Q)``."""
    Q = atf_band.shape[1]
    R = src_power[:, None, None] * atf_band[:, :, None] * np.conj(atf_band[:, None, :])
    return R + noise_power[:, None, None] * np.eye(Q)
