import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import random_psd
from shmvdr.baseline import (FLAG_ZERO_BEAM, SMOOTH_BINS, baseline_enhance, baseline_filters, baseline_to_sh,
                             doa_from_positions, fit_atf, smoothing_windows, steering_from_doa, tf_oracle_psd)
from shmvdr.scene import ArrayGeometry, em32_geometry
from shmvdr.transforms import TFTensor, band_plan, stft


def random_field(rng, shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def plane_wave_mixture(rng, band, geom, doa, frames=6):
    a = steering_from_doa(doa, geom, band.k)
    s = random_field(rng, (frames, len(band)))
    return a, s, a[None] * s[:, :, None]


def test_steering_unit_modulus_and_brute_force():
    rng = np.random.default_rng(0)
    geom = ArrayGeometry(np.zeros(3), 0.05, rng.uniform(0, np.pi, 7), rng.uniform(-np.pi, np.pi, 7))
    offs = geom.offsets
    theta, phi, k = 1.2, -0.4, 37.0
    a = steering_from_doa((theta, phi), geom, k)
    assert np.allclose(np.abs(a), 1.0)
    u = [np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)]
    brute = [np.exp(1j * k * sum(o[i] * u[i] for i in range(3))) for o in offs]
    np.testing.assert_allclose(a, brute, rtol=1e-12)
    assert steering_from_doa((theta, phi), geom, np.array([1.0, 2.0])).shape == (2, 7)


def test_steering_centre_capsule():
    geom = ArrayGeometry(np.zeros(3), 0.0, np.full(1, 0.7), np.full(1, 1.1))
    assert steering_from_doa((0.3, 2.0), geom, 50.0)[0] == 1.0


def test_doa_from_positions():
    theta, phi = doa_from_positions((1.0, 1.0, 1.0), (2.0, 2.0, 1.0))
    assert theta == pytest.approx(np.pi / 2)
    assert phi == pytest.approx(np.pi / 4)
    assert doa_from_positions((0, 0, 0), (0, 0, 3))[0] == pytest.approx(0.0)


def test_steering_sign_matches_simulated_delay():
    # a capsule closer to the source receives the wave earlier: positive phase under exp(-i w t)
    fs, n = 16000, 4096
    geom = em32_geometry()
    doa = (np.pi / 2, 0.0)
    q = int(np.argmax(geom.offsets[:, 0]))
    lead = geom.offsets[q, 0] / 343.0
    t = np.arange(n) / fs
    f0 = 1000.0
    ref, cap = np.cos(2 * np.pi * f0 * t), np.cos(2 * np.pi * f0 * (t + lead))
    S = stft(np.stack([ref, cap]), 1024, sample_rate=fs).data[2]
    b = int(round(f0 * 1024 / fs))
    measured = np.angle(S[b, 1] / S[b, 0])
    expected = np.angle(steering_from_doa(doa, geom, 2 * np.pi * f0 / 343.0)[q])
    assert measured == pytest.approx(expected, abs=1e-6)


def test_smoothing_windows_clip_at_edges():
    lo, hi = smoothing_windows(20)
    assert (lo[0], hi[0]) == (0, 4)
    assert hi[0] - lo[0] + 1 == 5
    assert (lo[10], hi[10]) == (6, 14) and hi[10] - lo[10] + 1 == SMOOTH_BINS
    assert (lo[-1], hi[-1]) == (15, 19)


def test_stage_one_distortionless():
    rng = np.random.default_rng(1)
    geom = em32_geometry()
    band = band_plan(0.042, 512, 16000, 343.0)
    a = steering_from_doa((1.0, 2.0), geom, band.k)
    R = np.stack([random_psd(rng, geom.Q) for _ in range(len(band))])
    filt = baseline_filters(random_field(rng, (3, len(band), geom.Q)), R, (1.0, 2.0), geom, band)
    assert np.max(np.abs(np.einsum("kq,kq->k", filt.w.conj(), a) - 1)) < 1e-10


def test_free_field_exact_without_smoothing():
    rng = np.random.default_rng(2)
    geom = em32_geometry()
    band = band_plan(0.042, 512, 16000, 343.0)
    doa = (0.8, 1.3)
    a, s, x = plane_wave_mixture(rng, band, geom, doa)
    R = tf_oracle_psd(a, np.ones(len(band)), np.full(len(band), 1e-3))
    filt = baseline_filters(x, R, doa, geom, band, width=1)
    np.testing.assert_allclose(filt.beam(x), s, rtol=1e-8)
    out = filt.apply(x)
    assert np.linalg.norm(out - x) <= 1e-6 * np.linalg.norm(x)


def test_free_field_nine_bin_smoothing_bias_is_small():
    # pooling a frequency-dependent ATF over 9 bins is not exact; the bias
    # follows the phase ramp across the window
    rng = np.random.default_rng(3)
    geom = em32_geometry()
    band = band_plan(0.042, 16384, 16000, 343.0)
    doa = (0.8, 1.3)
    a, s, x = plane_wave_mixture(rng, band, geom, doa, frames=4)
    R = tf_oracle_psd(a, np.ones(len(band)), np.full(len(band), 1e-3))
    filt = baseline_filters(x, R, doa, geom, band)
    np.testing.assert_allclose(filt.beam(x), s, rtol=1e-8)
    ramp = 4 * (band.k[1] - band.k[0]) * 0.042
    assert np.max(np.abs(filt.atf - a)) <= ramp


def test_frequency_flat_atf_unchanged_by_smoothing():
    rng = np.random.default_rng(4)
    K, Q = 30, 5
    atf = random_field(rng, Q)
    s = random_field(rng, (8, K))
    x = atf[None, None, :] * s[:, :, None]
    wide, _ = fit_atf(x, s, 9)
    narrow, _ = fit_atf(x, s, 1)
    np.testing.assert_allclose(wide, narrow, rtol=1e-12)
    np.testing.assert_allclose(wide, np.broadcast_to(atf, (K, Q)), rtol=1e-12)


def test_fit_atf_brute_force():
    rng = np.random.default_rng(5)
    x = random_field(rng, (3, 12, 2))
    s = random_field(rng, (3, 12))
    atf, _ = fit_atf(x, s)
    k = 0
    num = sum(x[t, j] * np.conj(s[t, j]) for t in range(3) for j in range(0, 5))
    den = sum(abs(s[t, j]) ** 2 for t in range(3) for j in range(0, 5))
    np.testing.assert_allclose(atf[k], num / den, rtol=1e-12)


def test_zero_beam_output_flagged():
    geom = em32_geometry()
    band = band_plan(0.042, 512, 16000, 343.0)
    R = np.broadcast_to(np.eye(geom.Q, dtype=complex), (len(band), geom.Q, geom.Q))
    filt = baseline_filters(np.zeros((2, len(band), geom.Q), dtype=complex), R, (1.0, 1.0), geom, band)
    assert np.all(filt.flags & FLAG_ZERO_BEAM)
    assert not filt.atf.any()


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_rank_one_output_and_frozen_linearity(seed):
    rng = np.random.default_rng(seed)
    geom = em32_geometry()
    band = band_plan(0.042, 256, 16000, 343.0)
    R = np.broadcast_to(np.eye(geom.Q, dtype=complex), (len(band), geom.Q, geom.Q))
    x = random_field(rng, (3, len(band), geom.Q))
    filt = baseline_filters(x, R, (1.0, 2.0), geom, band)
    out = filt.apply(x)
    np.testing.assert_allclose(out, filt.atf[None] * filt.beam(x)[:, :, None])
    y = random_field(rng, x.shape)
    np.testing.assert_allclose(filt.apply(x + 2 * y), out + 2 * filt.apply(y), atol=1e-10)


def test_tf_oracle_psd():
    rng = np.random.default_rng(6)
    g = random_field(rng, (4, 3))
    R = tf_oracle_psd(g, np.array([1.0, 2.0, 0.0, 1.0]), np.array([0.1, 0.0, 0.5, 0.0]))
    np.testing.assert_allclose(R[0], np.outer(g[0], g[0].conj()) + 0.1 * np.eye(3))
    np.testing.assert_allclose(R[2], 0.5 * np.eye(3))
    assert np.linalg.matrix_rank(R[3]) == 1


def test_enhance_and_sht_shapes():
    rng = np.random.default_rng(7)
    geom = em32_geometry()
    band = band_plan(0.042, 512, 16000, 343.0)
    x_tf = stft(rng.standard_normal((geom.Q, 4096)), 512)
    R = np.broadcast_to(np.eye(geom.Q, dtype=complex), (len(band), geom.Q, geom.Q))
    out, filt = baseline_enhance(x_tf, R, (1.0, 1.0), geom, band)
    assert isinstance(out, TFTensor)
    assert out.data.shape == x_tf.data.shape
    mask = np.ones(out.data.shape[1], bool)
    mask[band.bins] = False
    assert not out.data[:, mask].any()
    sh = baseline_to_sh(out, geom, band)
    assert sh.data.shape == (x_tf.frames, len(band), band.L_max)
