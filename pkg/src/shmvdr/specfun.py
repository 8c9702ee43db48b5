"""Spherical Bessel functions, complex spherical harmonics and the order rule.

Conventions used throughout the package:

* ``theta`` is the polar angle measured from +z (0 at the north pole, pi at
  the south pole), ``phi`` the azimuth measured from +x towards +y.
* Harmonics are orthonormal on the unit sphere and carry the Condon-Shortley
  phase, so that ``conj(Y[n, m]) == (-1)**m * Y[n, -m]``.
* Coefficients are stacked in ACN order ``(0,0), (1,-1), (1,0), (1,1), ...``
  with flat index ``n*n + n + m``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "SHIndex",
    "sh_count",
    "sh_indices",
    "sph_bessel_j",
    "sph_bessel_j_all",
    "sph_harmonic",
    "sh_matrix",
    "max_order",
]


@dataclass(frozen=True)
class SHIndex:
    """Order/mode pair ``(n, m)`` with ``|m| <= n``."""

    n: int
    m: int

    def __post_init__(self):
        if self.n < 0 or abs(self.m) > self.n:
            raise ValueError(f"invalid SH index (n={self.n}, m={self.m})")

    @property
    def flat(self) -> int:
        return self.n * self.n + self.n + self.m

    @classmethod
    def from_flat(cls, i: int) -> "SHIndex":
        if i < 0:
            raise ValueError("flat index must be non-negative")
        n = math.isqrt(i)
        return cls(n, i - n * n - n)


def sh_count(order: int) -> int:
    """Number of coefficients ``(N+1)**2`` up to and including ``order``."""
    return (order + 1) ** 2


def sh_indices(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Return arrays ``(n, m)`` listing every coefficient up to ``order`` in ACN order."""
    n = np.concatenate([np.full(2 * k + 1, k) for k in range(order + 1)])
    m = np.concatenate([np.arange(-k, k + 1) for k in range(order + 1)])
    return n, m


# ---------------------------------------------------------------- Bessel ---

def _series(n: int, x: np.ndarray) -> np.ndarray:
    # x^n/(2n+1)!! * sum_k (-x^2/2)^k / (k! (2n+3)(2n+5)...(2n+2k+1))
    dfact = 1.0
    for k in range(1, 2 * n + 2, 2):
        dfact *= k
    term = np.ones_like(x)
    total = np.ones_like(x)
    y = -0.5 * x * x
    for k in range(1, 40):
        term = term * y / (k * (2 * n + 2 * k + 1))
        total = total + term
        if np.all(np.abs(term) <= 1e-17 * np.abs(total)):
            break
    return x**n / dfact * total


def _closed(n: int, x: np.ndarray) -> np.ndarray:
    s, c = np.sin(x), np.cos(x)
    if n == 0:
        return s / x
    if n == 1:
        return s / x**2 - c / x
    return (3.0 / x**3 - 1.0 / x) * s - 3.0 * c / x**2


def _downward(nmax: int, x: np.ndarray) -> np.ndarray:
    """Miller's downward recurrence, returning orders ``0..nmax`` (``nmax >= 1``) for ``x > 0``."""
    start = int(max(nmax, float(np.max(x)))) + 32
    out = np.empty((nmax + 1,) + x.shape)
    f_next = np.zeros_like(x)
    f = np.full_like(x, 1e-30)
    for k in range(start, 0, -1):
        f_prev = (2 * k + 1) / x * f - f_next
        f_next, f = f, f_prev
        if k - 1 <= nmax:
            out[k - 1] = f
        big = np.abs(f) > 1e200
        if np.any(big):
            scale = np.where(big, 1e-200, 1.0)
            f = f * scale
            f_next = f_next * scale
            out[: nmax + 1] *= scale
    # normalise against whichever of j0, j1 is better conditioned at each x
    j0 = np.sin(x) / x
    j1 = np.sin(x) / x**2 - np.cos(x) / x
    use_j0 = np.abs(j0) >= np.abs(j1)
    ref = np.where(use_j0, out[0], out[1])
    return out * (np.where(use_j0, j0, j1) / ref)


def _bessel(n: int, x: np.ndarray) -> np.ndarray:
    res = np.empty_like(x)
    small = x < 0.1 * (n + 1)
    if np.any(small):
        res[small] = _series(n, x[small])
    rest = ~small
    if np.any(rest):
        xr = x[rest]
        if n <= 2:
            res[rest] = _closed(n, xr)
        else:
            res[rest] = _downward(n, xr)[n]
    return res


def sph_bessel_j(n: int, x):
    """Spherical Bessel function of the first kind ``j_n(x)`` for ``x >= 0``.

    Uses the Taylor series near the origin, the closed trigonometric forms for
    ``n <= 2`` and a normalised downward recurrence otherwise.
    """
    if n < 0:
        raise ValueError("order must be non-negative")
    xa = np.asarray(x, dtype=float)
    if np.any(xa < 0) or not np.all(np.isfinite(xa)):
        raise ValueError("argument must be finite and non-negative")
    res = _bessel(n, xa.reshape(-1)).reshape(xa.shape)
    return float(res) if res.ndim == 0 else res


def sph_bessel_j_all(nmax: int, x) -> np.ndarray:
    """Table of ``j_n(x)`` for ``n = 0..nmax``; shape ``(nmax + 1,) + x.shape``."""
    xa = np.asarray(x, dtype=float)
    return np.stack([np.asarray(sph_bessel_j(n, xa)) for n in range(nmax + 1)])


# ------------------------------------------------------------ harmonics ---

def _legendre_table(order: int, theta: np.ndarray) -> np.ndarray:
    """Orthonormalised associated Legendre values for ``m >= 0``.

    Returns ``p`` with ``p[n, m]`` such that ``Y_nm = p[n, m] * exp(1j*m*phi)``
    (Condon-Shortley phase included). Shape ``(order+1, order+1) + theta.shape``.
    """
    ct, st = np.cos(theta), np.sin(theta)
    p = np.zeros((order + 1, order + 1) + theta.shape)
    p[0, 0] = 1.0 / math.sqrt(4.0 * math.pi)
    for m in range(1, order + 1):
        p[m, m] = -math.sqrt((2 * m + 1) / (2.0 * m)) * st * p[m - 1, m - 1]
    for m in range(order):
        p[m + 1, m] = math.sqrt(2 * m + 3) * ct * p[m, m]
    for m in range(order + 1):
        for n in range(m + 2, order + 1):
            a = math.sqrt((4 * n * n - 1) / (n * n - m * m))
            b = math.sqrt(((n - 1) ** 2 - m * m) / (4 * (n - 1) ** 2 - 1))
            p[n, m] = a * (ct * p[n - 1, m] - b * p[n - 2, m])
    return p


def sh_matrix(order: int, theta, phi) -> np.ndarray:
    """Harmonics up to ``order`` at the given directions.

    Returns an array of shape ``theta.shape + ((order+1)**2,)``.
    """
    theta = np.asarray(theta, dtype=float)
    phi = np.broadcast_to(np.asarray(phi, dtype=float), theta.shape)
    p = _legendre_table(order, theta)
    out = np.empty(theta.shape + (sh_count(order),), dtype=complex)
    for n in range(order + 1):
        for m in range(0, n + 1):
            y = p[n, m] * np.exp(1j * m * phi)
            out[..., n * n + n + m] = y
            if m:
                out[..., n * n + n - m] = (-1) ** m * np.conj(y)
    return out


def sph_harmonic(idx: SHIndex, theta, phi):
    """Single harmonic ``Y_nm(theta, phi)``; scalar in, scalar out."""
    if isinstance(idx, tuple):
        idx = SHIndex(*idx)
    theta_a = np.asarray(theta, dtype=float)
    y = sh_matrix(idx.n, theta_a, phi)[..., idx.flat]
    return complex(y) if y.ndim == 0 else y


def max_order(k: float, r_a: float) -> int:
    """Truncation order ``ceil(k * r_a)`` for wavenumber ``k`` and radius ``r_a``."""
    if k <= 0 or r_a <= 0:
        raise ValueError("wavenumber and radius must be positive")
    return int(math.ceil(k * r_a))
