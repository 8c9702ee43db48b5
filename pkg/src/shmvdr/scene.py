"""Room acoustics simulation for an open spherical microphone array.

Image-source RIRs (uniform wall absorption, omnidirectional receivers,
windowed-sinc fractional delays) and synthesis of the separated microphone
components ``d``, ``v`` and ``u``.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy.signal import fftconvolve

from . import signals

DATA_ENV = "SHMVDR_DATA"

# RNG stream identifiers; every random component has its own generator.
STREAM_SENSOR_NOISE = 1
STREAM_REHC_NOISE = 2
STREAM_WHITE_SOURCE = 3
STREAM_REHC_WHITE_NOISE = 4


class InvalidGeometry(ValueError):
    pass


class EmptySignal(ValueError):
    pass


# ---------------------------------------------------------------- config ---

Vec3 = tuple[float, float, float]


class RoomSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    dims: Vec3 = (5.0, 6.0, 4.0)
    t60: float = Field(0.2, ge=0.0)
    c: float = Field(343.0, gt=0.0)
    absorption: Literal["sabine", "eyring"] = "sabine"

    @field_validator("dims")
    @classmethod
    def _positive(cls, v):
        if min(v) <= 0:
            raise ValueError("room dimensions must be positive")
        return v

    @property
    def volume(self) -> float:
        lx, ly, lz = self.dims
        return lx * ly * lz

    @property
    def surface(self) -> float:
        lx, ly, lz = self.dims
        return 2.0 * (lx * ly + lx * lz + ly * lz)

    def reflection_coefficient(self) -> float:
        """Uniform pressure reflection coefficient for the configured ``t60``.

        ``sabine`` inverts ``T60 = 24 ln10 V / (c S a)`` as classic RIR
        generators do. ``eyring`` inverts ``T60 = -24 ln10 V / (c S ln(1 - a))``;
        with uniform walls the image-source decay then comes out noticeably
        longer than requested, because directions with few reflections dominate
        the late tail.
        """
        if self.t60 < 0.01:
            return 0.0
        x = 24.0 * math.log(10.0) * self.volume / (self.c * self.surface * self.t60)
        if self.absorption == "sabine":
            if x > 1.0:
                raise InvalidGeometry(f"t60={self.t60} s is below the Sabine limit for this room")
            alpha = x
        else:
            alpha = 1.0 - math.exp(-x)
        return math.sqrt(1.0 - alpha)

    def contains(self, p) -> bool:
        p = np.asarray(p, dtype=float)
        return bool(np.all(p > 0) and np.all(p < np.asarray(self.dims)))


class SourceSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    position: Vec3
    signal: str = Field(..., description="WAV path or 'synthetic:speech' / 'synthetic:washer'")


class ArrayConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    center: Vec3 = (1.60, 4.05, 1.70)
    radius: float = Field(0.042, gt=0.0)
    layout: str = Field("em32", description="'em32' or path to a CSV of theta_deg,phi_deg rows")


class SceneConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    room: RoomSpec = RoomSpec()
    desired: SourceSpec = SourceSpec(position=(4.60, 4.05, 1.70), signal="synthetic:speech")
    interference: SourceSpec = SourceSpec(position=(1.60, 1.05, 1.20), signal="synthetic:washer")
    array: ArrayConfig = ArrayConfig()
    snr_db: float = 0.0
    ssnr_db: float = 35.0
    seed: int = 0
    sample_rate: int = 16000
    duration: float = Field(10.0, gt=0.0)

    @model_validator(mode="after")
    def _check_positions(self):
        center = np.asarray(self.array.center)
        for name, pos in (("array.center", center),
                          ("desired.position", self.desired.position),
                          ("interference.position", self.interference.position)):
            if not self.room.contains(pos):
                raise ValueError(f"{name} {tuple(pos)} is outside the room {self.room.dims}")
        for name, src in (("desired", self.desired), ("interference", self.interference)):
            if np.linalg.norm(np.asarray(src.position) - center) <= self.array.radius:
                raise ValueError(f"{name} source lies inside the array sphere")
        if not self.room.contains(center + self.array.radius) or not self.room.contains(center - self.array.radius):
            raise ValueError("array sphere crosses a wall")
        return self

    def geometry(self) -> "ArrayGeometry":
        if self.array.layout == "em32":
            return em32_geometry(center=self.array.center, radius=self.array.radius)
        return load_geometry_csv(self.array.layout, radius=self.array.radius, center=self.array.center)


def paper_default() -> SceneConfig:
    """Scene used for every reported experiment (room, sources, em32 array)."""
    return SceneConfig()


# -------------------------------------------------------------- geometry ---

@dataclass
class ArrayGeometry:
    """Capsule directions on a sphere of ``radius`` around ``center``.

    ``weights`` are optional least-squares row weights (e.g. quadrature
    weights of a sampling scheme); ``None`` means uniform.
    """

    center: np.ndarray
    radius: float
    theta: np.ndarray
    phi: np.ndarray
    weights: Optional[np.ndarray] = None

    @property
    def Q(self) -> int:
        return len(self.theta)

    @property
    def unit_vectors(self) -> np.ndarray:
        st = np.sin(self.theta)
        return np.stack([st * np.cos(self.phi), st * np.sin(self.phi), np.cos(self.theta)], axis=-1)

    @property
    def offsets(self) -> np.ndarray:
        """Capsule positions relative to the centre, shape ``(Q, 3)``."""
        return self.radius * self.unit_vectors

    @property
    def positions(self) -> np.ndarray:
        return np.asarray(self.center, dtype=float) + self.offsets

    @property
    def r(self) -> np.ndarray:
        return np.full(self.Q, self.radius)


def _read_direction_table(text: str) -> tuple[np.ndarray, np.ndarray]:
    rows = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    reader = csv.reader(io.StringIO("\n".join(rows)))
    th, ph = [], []
    for i, row in enumerate(reader):
        if i == 0 and not _is_number(row[0]):
            continue
        if len(row) < 2:
            raise ValueError(f"geometry row {i + 1}: expected theta_deg,phi_deg")
        th.append(float(row[0]))
        ph.append(float(row[1]))
    return np.deg2rad(th), np.deg2rad(ph)


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def em32_geometry(center=(0.0, 0.0, 0.0), radius: float = 0.042) -> ArrayGeometry:
    """The 32 capsule directions of the em32 at radius 4.2 cm."""
    text = resources.files("shmvdr").joinpath("data/em32.csv").read_text()
    th, ph = _read_direction_table(text)
    return ArrayGeometry(np.asarray(center, dtype=float), radius, th, ph)


def gauss_grid_geometry(n_theta: int, radius: float, center=(0.0, 0.0, 0.0)) -> ArrayGeometry:
    """Gauss-Legendre x equiangular grid with its quadrature weights.

    Exact for harmonics up to degree ``2 * n_theta - 1``; used as an
    alias-free reference geometry.
    """
    x, w = np.polynomial.legendre.leggauss(n_theta)
    n_phi = 2 * n_theta
    phi = 2 * np.pi * np.arange(n_phi) / n_phi
    th, ph = np.meshgrid(np.arccos(x), phi, indexing="ij")
    wt = np.repeat(w, n_phi) * (2 * np.pi / n_phi)
    return ArrayGeometry(np.asarray(center, dtype=float), radius, th.ravel(), ph.ravel(), wt)


def load_geometry_csv(path, radius: float, center=(0.0, 0.0, 0.0)) -> ArrayGeometry:
    th, ph = _read_direction_table(Path(path).read_text())
    if len(th) == 0:
        raise ValueError(f"{path}: no microphone directions")
    return ArrayGeometry(np.asarray(center, dtype=float), radius, th, ph)


# ------------------------------------------------------------------- ISM ---

SINC_HALF_WIDTH = 16


def rir_length(room: RoomSpec, fs: int) -> int:
    return int(math.ceil((room.t60 + 0.1) * fs))


def _axis_images(s: float, L: float, nmax: int):
    n = np.arange(-nmax, nmax + 1)
    pos = np.concatenate([s + 2 * n * L, -s + 2 * n * L])
    refl = np.concatenate([2 * np.abs(n), np.abs(n - 1) + np.abs(n)])
    return pos, refl


def simulate_rir(room: RoomSpec, src, mic, fs: int = 16000, length: Optional[int] = None) -> np.ndarray:
    """Allen-Berkley image-source impulse response from ``src`` to ``mic``.

    The response covers ``t60 + 100 ms`` (or ``length`` samples); every image
    whose arrival falls inside that window is included, so the reflection
    order adapts to the room and ``t60``. ``t60 < 0.01`` gives the direct
    path only.
    """
    src = np.asarray(src, dtype=float)
    mic = np.asarray(mic, dtype=float)
    if not room.contains(src) or not room.contains(mic):
        raise InvalidGeometry("source and microphone must lie strictly inside the room")
    if np.allclose(src, mic):
        raise InvalidGeometry("source and microphone coincide")
    hw = SINC_HALF_WIDTH
    beta = room.reflection_coefficient()
    direct = np.linalg.norm(src - mic) / room.c * fs
    if length is None:
        length = max(rir_length(room, fs), int(math.ceil(direct)) + hw + 1)

    if beta == 0.0:
        dist = np.array([np.linalg.norm(src - mic)])
        amp = 1.0 / (4 * math.pi * dist)
    else:
        dmax = length / fs * room.c
        per_axis = []
        for ax in range(3):
            L = room.dims[ax]
            pos, refl = _axis_images(src[ax], L, int(math.ceil(dmax / (2 * L))) + 1)
            per_axis.append(((pos - mic[ax]) ** 2, refl))
        (dx2, rx), (dy2, ry), (dz2, rz) = per_axis
        d2 = dx2[:, None, None] + dy2[None, :, None] + dz2[None, None, :]
        keep = d2 < dmax * dmax
        refl = (rx[:, None, None] + ry[None, :, None] + rz[None, None, :])[keep]
        dist = np.sqrt(d2[keep])
        amp = beta ** refl / (4 * math.pi * dist)

    delay = dist / room.c * fs
    base = np.floor(delay).astype(np.int64)
    taps = np.arange(-hw + 1, hw + 1)
    idx = base[:, None] + taps[None, :]
    x = idx - delay[:, None]
    win = 0.5 * (1.0 + np.cos(np.pi * x / hw))
    vals = amp[:, None] * np.sinc(x) * win
    ok = (idx >= 0) & (idx < length)
    return np.bincount(idx[ok], weights=vals[ok], minlength=length)[:length]


def simulate_array_rirs(room: RoomSpec, src, geometry: ArrayGeometry, fs: int = 16000,
                        length: Optional[int] = None, executor=None) -> np.ndarray:
    """RIRs from ``src`` to every capsule, shape ``(Q, length)``."""
    positions = geometry.positions
    if length is None:
        far = max(np.linalg.norm(np.asarray(src) - p) for p in positions) / room.c * fs
        length = max(rir_length(room, fs), int(math.ceil(far)) + SINC_HALF_WIDTH + 1)
    job = lambda p: simulate_rir(room, src, p, fs, length)  # noqa: E731
    rows = list(executor.map(job, positions)) if executor is not None else [job(p) for p in positions]
    return np.stack(rows)


def schroeder_curve_db(rir: np.ndarray) -> np.ndarray:
    """Backward-integrated energy decay in dB, normalised to 0 dB at t=0."""
    e = np.cumsum(np.asarray(rir, dtype=float)[::-1] ** 2)[::-1]
    return 10 * np.log10(np.maximum(e / e[0], 1e-300))


# ------------------------------------------------------------- synthesis ---

@dataclass
class ComponentSignals:
    """Separated microphone components, each of shape ``(Q, samples)``."""

    d: np.ndarray
    v: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        if not (self.d.shape == self.v.shape == self.u.shape):
            raise ValueError("component shapes differ")

    @property
    def x(self) -> np.ndarray:
        return self.d + self.v + self.u


def power(x) -> float:
    return float(np.mean(np.abs(np.asarray(x)) ** 2))


def rng_for(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, stream])


def sensor_noise(shape, noise_power: float, seed: int, stream: int = STREAM_SENSOR_NOISE) -> np.ndarray:
    if noise_power == 0:
        return np.zeros(shape)
    return math.sqrt(noise_power) * rng_for(seed, stream).standard_normal(shape)


def scale_to_snr(reference, signal, snr_db: float) -> np.ndarray:
    """Scale ``signal`` so that ``power(reference) / power(signal)`` is ``snr_db``."""
    p = power(signal)
    if p == 0:
        return np.asarray(signal, dtype=float)
    return np.asarray(signal, dtype=float) * math.sqrt(power(reference) / p / 10 ** (snr_db / 10))


def convolve_rirs(dry: np.ndarray, rirs: np.ndarray) -> np.ndarray:
    """Convolve a mono signal with each row of ``rirs``; output trimmed to ``len(dry)``."""
    return fftconvolve(rirs, np.asarray(dry, dtype=float)[None, :], axes=-1)[:, : len(dry)]


def _check_dry(x, name):
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size == 0:
        raise EmptySignal(f"{name} must be a non-empty mono signal")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite samples")
    return x


def synthesize(scene: SceneConfig, dry_desired, dry_interference, rirs=None,
               noise_stream: int = STREAM_SENSOR_NOISE) -> ComponentSignals:
    """Reverberant array recording split into its three components.

    ``dry_interference`` is rescaled so the dry-signal power ratio equals
    ``scene.snr_db``; sensor noise is white, independent per capsule, with
    power set so that mean capsule-level desired power over noise power
    equals ``scene.ssnr_db``. ``rirs`` may be passed as ``(rirs_d, rirs_v)``
    to reuse a previous simulation.
    """
    s_d = _check_dry(dry_desired, "dry_desired")
    s_v = _check_dry(dry_interference, "dry_interference")
    n = max(len(s_d), len(s_v))
    s_d = np.pad(s_d, (0, n - len(s_d)))
    s_v = scale_to_snr(s_d, np.pad(s_v, (0, n - len(s_v))), scene.snr_db)
    if rirs is None:
        geom = scene.geometry()
        rirs = (simulate_array_rirs(scene.room, scene.desired.position, geom, scene.sample_rate),
                simulate_array_rirs(scene.room, scene.interference.position, geom, scene.sample_rate))
    d = convolve_rirs(s_d, rirs[0])
    v = convolve_rirs(s_v, rirs[1])
    u = sensor_noise(d.shape, noise_power_for(d, scene.ssnr_db), scene.seed, noise_stream)
    return ComponentSignals(d, v, u)


def noise_power_for(d: np.ndarray, ssnr_db: float) -> float:
    if math.isinf(ssnr_db) and ssnr_db > 0:
        return 0.0
    return power(d) / 10 ** (ssnr_db / 10)


# ---------------------------------------------------------- dry signals ---

def resolve_signal_path(name: str) -> Path:
    p = Path(name)
    if p.is_file():
        return p
    for root in os.environ.get(DATA_ENV, "").split(os.pathsep):
        if root and (Path(root) / name).is_file():
            return Path(root) / name
    raise FileNotFoundError(f"dry signal {name!r} not found (searched cwd and ${DATA_ENV})")


def load_dry_signal(name: str, fs: int, duration: float) -> np.ndarray:
    """Load a mono dry signal, or generate a built-in synthetic stand-in.

    Files are truncated or zero-padded to ``duration`` seconds.
    """
    n = int(round(duration * fs))
    if name.startswith("synthetic:"):
        kind, _, seed = name[len("synthetic:"):].partition("?seed=")
        seed = int(seed) if seed else 0
        if kind == "speech":
            return signals.synthetic_speech(n, fs, seed)
        if kind == "washer":
            return signals.synthetic_washer(n, fs, seed)
        raise ValueError(f"unknown synthetic signal {kind!r}")
    from .audio import read_wav

    rate, data = read_wav(resolve_signal_path(name))
    if rate != fs:
        raise ValueError(f"{name}: sample rate {rate} Hz, expected {fs} Hz")
    if data.ndim > 1:
        data = data[:, 0]
    data = data[:n]
    return np.pad(data, (0, n - len(data)))


def scene_to_json(scene: SceneConfig) -> str:
    return json.dumps(scene.model_dump(mode="json"), indent=2, sort_keys=True)
