"""Sound-field estimation error, SDR and NR over observation points in the sweet area."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .specfun import sh_count
from .transforms import BandPlan, SHTensor, sht_matrix

DB_FLOOR = -120.0
DB_CEIL = 120.0


class ZeroReference(ValueError):
    pass


def _db(num, den):
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        val = 10 * np.log10(num / den)
    val = np.where(num == 0, DB_FLOOR, val)
    val = np.where(den == 0, DB_CEIL, val)
    return np.clip(val, DB_FLOOR, DB_CEIL)


def pointwise_error(d, d_hat) -> float:
    """Normalised squared error ``|d - d_hat|^2 / |d|^2`` in dB, clamped to [-120, 120]."""
    if abs(d) == 0:
        raise ZeroReference("true pressure is zero at this point")
    return float(_db(abs(d - d_hat) ** 2, abs(d) ** 2))


def pointwise_error_map(d, d_hat) -> np.ndarray:
    """Elementwise :func:`pointwise_error`; points with ``d == 0`` give NaN."""
    d = np.asarray(d)
    out = _db(np.abs(d - d_hat) ** 2, np.abs(d) ** 2)
    return np.where(np.abs(d) == 0, np.nan, out)


def region_metrics(true_d, est_d, true_v, res_d, res_v, res_u, axis=-1):
    """Error, SDR and NR (dB) over a set of observation points.

    ``Error = ||d - d_hat||^2 / ||d||^2``, ``SDR = ||d||^2 / ||d_res - d||^2``,
    ``NR = ||v||^2 / ||v_res + u_res||^2``; norms run along ``axis``.
    """
    arrs = [np.asarray(a) for a in (true_d, est_d, true_v, res_d, res_v, res_u)]
    if len({a.shape for a in arrs}) != 1:
        raise ValueError("pressure arrays must share one shape")
    d, d_hat, v, d_res, v_res, u_res = arrs
    e = lambda a: np.sum(np.abs(a) ** 2, axis=axis)  # noqa: E731
    error = _db(e(d - d_hat), e(d))
    sdr = _db(e(d), e(d_res - d))
    nr = _db(e(v), e(v_res + u_res))
    return error, sdr, nr


# ------------------------------------------------------------ point sets ---

@dataclass
class ObservationSet:
    """Points ``(r, theta, phi)``; ``inside`` marks those within the sweet area."""

    points: np.ndarray
    kind: str
    r_s: float
    inside: np.ndarray
    grid_shape: tuple = None

    def __len__(self) -> int:
        return len(self.points)


def fibonacci_sphere(count: int) -> tuple[np.ndarray, np.ndarray]:
    i = np.arange(count)
    z = 1 - (2 * i + 1) / count
    golden = math.pi * (3 - math.sqrt(5))
    return np.arccos(z), np.mod(i * golden, 2 * math.pi)


def observation_points(kind: str, r_s: float, points=None) -> ObservationSet:
    """``sphere107``: Fibonacci points on the sphere of radius ``r_s``;
    ``plane441``: 21 x 21 grid spanning ``[-r_s, r_s]^2`` in the x-y plane, corners
    outside the disc kept but marked as outside; ``custom``: ``points`` as given."""
    if r_s <= 0:
        raise ValueError("sweet-area radius must be positive")
    if kind == "sphere107":
        th, ph = fibonacci_sphere(107)
        pts = np.stack([np.full(107, r_s), th, ph], axis=-1)
        return ObservationSet(pts, kind, r_s, np.ones(107, dtype=bool))
    if kind == "plane441":
        g = np.linspace(-r_s, r_s, 21)
        X, Y = np.meshgrid(g, g, indexing="xy")
        r = np.hypot(X, Y).ravel()
        pts = np.stack([r, np.full(r.shape, math.pi / 2), np.arctan2(Y, X).ravel()], axis=-1)
        return ObservationSet(pts, kind, r_s, r <= r_s * (1 + 1e-12), (21, 21))
    if kind == "custom":
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return ObservationSet(pts, kind, r_s, pts[:, 0] <= r_s * (1 + 1e-12))
    raise ValueError(f"unknown observation set {kind!r}")


def min_angular_separation(theta, phi) -> float:
    u = np.stack([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)], axis=-1)
    g = np.clip(u @ u.T, -1, 1)
    np.fill_diagonal(g, -1)
    return float(np.arccos(g.max()))


# ---------------------------------------------------------- field values ---

def pressures(sh: SHTensor, obs: ObservationSet, only_inside: bool = True) -> np.ndarray:
    """Reconstructed pressure at the observation points, ``(frames, K, P)``."""
    pts = obs.points[obs.inside] if only_inside else obs.points
    band = sh.band
    out = np.zeros(sh.data.shape[:2] + (len(pts),), dtype=complex)
    for order, idx in band.groups():
        L = sh_count(order)
        B = sht_matrix(order, band.k[idx], pts[:, 0], pts[:, 1], pts[:, 2])
        out[:, idx, :] = np.einsum("kpl,tkl->tkp", B, sh.data[:, idx, :L])
    return out


@dataclass
class MetricReport:
    """Per (frame, bin) metrics for one method; flagged bins are excluded from aggregates."""

    method: str
    frames: np.ndarray
    band: BandPlan
    error_db: np.ndarray
    sdr_db: np.ndarray
    nr_db: np.ndarray
    flags: np.ndarray
    info: dict = field(default_factory=dict)

    @property
    def valid(self) -> np.ndarray:
        return self.flags == 0

    def per_bin(self) -> dict:
        """Frame-averaged metrics per band bin (NaN at flagged bins)."""
        out = {}
        for name in ("error_db", "sdr_db", "nr_db"):
            m = np.mean(getattr(self, name), axis=0)
            out[name] = np.where(self.valid, m, np.nan)
        return out

    def aggregate(self) -> dict:
        v = self.valid
        return {name: float(np.mean(getattr(self, name)[:, v])) if np.any(v) else float("nan")
                for name in ("error_db", "sdr_db", "nr_db")}

    def rows(self):
        freqs = self.band.freqs
        for ti, t in enumerate(self.frames):
            for k in range(len(self.band)):
                yield [self.method, int(t), int(self.band.bins[k]), f"{freqs[k]:.4f}",
                       f"{self.error_db[ti, k]:.6f}", f"{self.sdr_db[ti, k]:.6f}",
                       f"{self.nr_db[ti, k]:.6f}", int(self.flags[k])]
        agg = self.aggregate()
        yield [self.method, "mean", "band", "", f"{agg['error_db']:.6f}", f"{agg['sdr_db']:.6f}",
               f"{agg['nr_db']:.6f}", int(np.count_nonzero(~self.valid))]


CSV_HEADER = ["method", "frame", "bin", "freq_hz", "error_db", "sdr_db", "nr_db", "flags"]


def write_report_csv(path, reports) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(CSV_HEADER)
        for rep in reports:
            w.writerows(rep.rows())


def evaluate(method: str, true_d: SHTensor, true_v: SHTensor, est_d: SHTensor,
             res_d: SHTensor, res_v: SHTensor, res_u: SHTensor, obs: ObservationSet) -> MetricReport:
    """Region metrics at every (frame, bin) of the given SH tensors."""
    p = [pressures(t, obs) for t in (true_d, est_d, true_v, res_d, res_v, res_u)]
    error, sdr, nr = region_metrics(*p, axis=-1)
    flags = true_d.flags | est_d.flags | res_d.flags | res_v.flags | res_u.flags
    return MetricReport(method, true_d.frames, true_d.band, error, sdr, nr, flags,
                        {"observation": obs.kind, "points": int(np.count_nonzero(obs.inside))})


# -------------------------------------------------------------- heatmaps ---

def to_gray(values, vmin: float, vmax: float) -> np.ndarray:
    v = np.nan_to_num(np.asarray(values, dtype=float), nan=vmin)
    return np.round(255 * np.clip((v - vmin) / (vmax - vmin), 0, 1)).astype(np.uint8)


def write_pgm(path, values, vmin: float, vmax: float) -> None:
    """8-bit binary PGM (P5); row 0 is the top of the image."""
    img = to_gray(values, vmin, vmax)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(img.tobytes())


def write_png(path, values, vmin: float, vmax: float, upscale: int = 12) -> None:
    from PIL import Image

    img = Image.fromarray(to_gray(values, vmin, vmax), mode="L")
    img = img.resize((img.width * upscale, img.height * upscale), Image.NEAREST)
    img.save(path)
