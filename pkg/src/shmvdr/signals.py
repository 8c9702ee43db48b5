"""Deterministic stand-ins for the dry source recordings.

``synthetic_speech`` produces a voiced/unvoiced syllable sequence with a
gliding pitch, formant resonances and pauses, so it has the harmonic,
non-stationary spectrum that makes relative-coefficient estimation hard.
``synthetic_washer`` is a near-stationary coloured noise with a motor hum.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.signal import butter, lfilter, sosfilt


def _resonator(x, freq, bw, fs):
    r = math.exp(-math.pi * bw / fs)
    a = [1.0, -2 * r * math.cos(2 * math.pi * freq / fs), r * r]
    b = [1.0 - r]
    return lfilter(b, a, x)


def _envelope(n, fs, attack=0.02):
    ramp = min(int(attack * fs), n // 2)
    env = np.ones(n)
    if ramp > 0:
        w = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
        env[:ramp] = w
        env[n - ramp:] = w[::-1]
    return env


def synthetic_speech(n: int, fs: int = 16000, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng([seed, 0x5BEEC4])
    out = np.zeros(n)
    pos = int(0.05 * fs)
    hp = butter(4, 2000, "highpass", fs=fs, output="sos")
    while pos < n:
        if rng.random() < 0.15:
            pos += int(rng.uniform(0.08, 0.35) * fs)
            continue
        length = min(int(rng.uniform(0.12, 0.32) * fs), n - pos)
        if length < 16:
            break
        gain = rng.uniform(0.4, 1.0)
        if rng.random() < 0.8:
            f0 = np.linspace(rng.uniform(95, 170), rng.uniform(95, 170), length)
            phase = 2 * np.pi * np.cumsum(f0) / fs + rng.uniform(0, 2 * np.pi)
            src = np.zeros(length)
            for h in range(1, 60):
                alive = h * f0 < 0.45 * fs
                if not np.any(alive):
                    break
                src += alive * np.sin(h * phase) / h
            src += 0.02 * rng.standard_normal(length)
            seg = src
            for f, bw in ((rng.uniform(300, 850), 90), (rng.uniform(900, 2300), 120),
                          (rng.uniform(2400, 3200), 180), (3800, 250)):
                seg = seg + 0.6 * _resonator(src, f, bw, fs) * (bw / 100.0)
        else:
            seg = sosfilt(hp, rng.standard_normal(length)) * 0.5
        seg = seg * _envelope(length, fs) * gain / (np.std(seg) + 1e-12)
        out[pos:pos + length] += seg
        pos += length + int(rng.uniform(0.0, 0.06) * fs)
    return out / (np.std(out) + 1e-12) * 0.1


def synthetic_washer(n: int, fs: int = 16000, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng([seed, 0x3A5E])
    noise = rng.standard_normal(n)
    # roughly -3 dB/octave colouring plus a broad low-mid hump
    pink = lfilter([0.049922035, -0.095993537, 0.050612699, -0.004408786],
                   [1.0, -2.494956002, 2.017265875, -0.522189400], noise)
    hump = sosfilt(butter(2, [150, 1200], "bandpass", fs=fs, output="sos"), noise)
    t = np.arange(n) / fs
    hum = sum(np.sin(2 * np.pi * 47.0 * h * t + rng.uniform(0, 2 * np.pi)) / h for h in range(1, 8))
    sig = pink / np.std(pink) + 0.7 * hump / np.std(hump) + 0.3 * hum / np.std(hum)
    sig *= 1.0 + 0.1 * np.sin(2 * np.pi * 0.8 * t)
    return sig / np.std(sig) * 0.1
