"""WAV input/output (16-bit PCM or float32, mono or multichannel)."""

from __future__ import annotations

import numpy as np
from scipy.io import wavfile


def read_wav(path):
    """Return ``(rate, data)`` with ``data`` as float64 in [-1, 1], shape ``(n,)`` or ``(n, ch)``."""
    rate, data = wavfile.read(path)
    if data.dtype == np.int16:
        data = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        data = data.astype(np.float64) / 2147483648.0
    else:
        data = data.astype(np.float64)
    return rate, data


def write_wav(path, rate: int, data: np.ndarray, pcm16: bool = False) -> None:
    """Write ``data`` shaped ``(n,)`` or ``(channels, n)``."""
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 2:
        data = data.T
    if pcm16:
        peak = max(np.max(np.abs(data)), 1e-12)
        scaled = data / peak * 0.99 if peak > 1 else data
        wavfile.write(path, rate, np.round(scaled * 32767).astype(np.int16))
    else:
        wavfile.write(path, rate, data.astype(np.float32))
