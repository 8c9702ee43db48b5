"""Hermitian solves and closed-form MVDR beamformers.

All solvers accept a single matrix ``(n, n)`` or a stack ``(..., n, n)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_LOADING = 1e-9


class NotFactorizable(np.linalg.LinAlgError):
    """The (loaded) matrix is not numerically positive definite."""


class DegenerateConstraint(ValueError):
    """``h^H R^-1 h`` is too small for the distortionless constraint to be usable."""


def is_hermitian_psd(a: np.ndarray, rtol: float = 1e-12, eig_tol: float = 1e-10) -> bool:
    a = np.asarray(a)
    scale = max(float(np.max(np.abs(a))), np.finfo(float).tiny)
    if np.max(np.abs(a - np.conj(np.swapaxes(a, -1, -2)))) > rtol * scale:
        return False
    dim = a.shape[-1]
    tr = np.real(np.trace(a, axis1=-2, axis2=-1))
    lam = np.linalg.eigvalsh(a)
    return bool(np.all(lam.min(axis=-1) >= -eig_tol * np.abs(tr) / dim))


def hermitize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + np.conj(np.swapaxes(a, -1, -2)))


def _loaded(a: np.ndarray, loading: float) -> np.ndarray:
    a = np.asarray(a, dtype=complex)
    if loading == 0:
        return a
    dim = a.shape[-1]
    mean_diag = np.real(np.trace(a, axis1=-2, axis2=-1)) / dim
    return a + (loading * mean_diag)[..., None, None] * np.eye(dim)


def loaded_hermitian_solve(a, b, loading: float = 0.0) -> np.ndarray:
    """Solve ``(A + loading * trace(A)/dim * I) X = B`` through a Cholesky factor.

    ``b`` may be a vector (``(..., n)``) or a matrix (``(..., n, k)``).

    Raises
    ------
    NotFactorizable
        If the loaded matrix is not positive definite, e.g. a rank-deficient
        PSD with too little loading.
    """
    if loading < 0:
        raise ValueError("loading must be non-negative")
    a = _loaded(a, loading)
    b = np.asarray(b, dtype=complex)
    vec = b.ndim == a.ndim - 1
    if vec:
        b = b[..., None]
    try:
        chol = np.linalg.cholesky(hermitize(a))
    except np.linalg.LinAlgError as exc:
        raise NotFactorizable(str(exc)) from None
    if not np.all(np.isfinite(chol)) or np.any(np.abs(np.diagonal(chol, axis1=-2, axis2=-1)) == 0):
        raise NotFactorizable("singular Cholesky factor")
    y = np.linalg.solve(chol, b)
    x = np.linalg.solve(np.conj(np.swapaxes(chol, -1, -2)), y)
    return x[..., 0] if vec else x


def _check_degenerate(a_loaded: np.ndarray, h: np.ndarray, denom: np.ndarray) -> np.ndarray:
    lam_min = np.linalg.eigvalsh(a_loaded)[..., 0]
    inv_norm = 1.0 / np.maximum(lam_min, np.finfo(float).tiny)
    hn2 = np.sum(np.abs(h) ** 2, axis=-1)
    return denom <= 1e-14 * hn2 * inv_norm


@dataclass
class BeamformerBank:
    """Per-bin multi-output beamformer; column ``nm`` of ``W`` is ``w_nm``."""

    W: np.ndarray
    h: np.ndarray
    degenerate: bool = False

    def apply(self, x: np.ndarray) -> np.ndarray:
        """``d_nm = w_nm^H x`` for a coefficient vector or a ``(frames, L)`` stack."""
        return np.asarray(x) @ np.conj(self.W)

    def constraint_residual(self) -> float:
        return float(np.linalg.norm(np.conj(self.W).T @ self.h - self.h))


def mvdr_multi_output(R, h, loading: float = DEFAULT_LOADING) -> BeamformerBank:
    """Multi-output MVDR bank for one bin.

    Each column minimises ``w^H R w`` subject to ``w^H h = h_nm``. The stacked
    problem is block diagonal with identical blocks, so it separates into
    ``w_nm = R^-1 h (h^H R^-1 h)^-1 conj(h_nm)`` and the large block matrices
    are never built.
    """
    R = np.asarray(R, dtype=complex)
    h = np.asarray(h, dtype=complex)
    W, degenerate = mvdr_multi_output_batch(R[None], h[None], loading)
    if degenerate[0]:
        raise DegenerateConstraint("h^H R^-1 h is numerically zero")
    return BeamformerBank(W[0], h)


def mvdr_multi_output_batch(R, h, loading: float = DEFAULT_LOADING):
    """Stacked version of :func:`mvdr_multi_output`.

    Parameters
    ----------
    R : (K, L, L) complex
    h : (K, L) complex

    Returns
    -------
    W : (K, L, L) complex
        Degenerate or non-factorisable bins hold the identity (pass-through).
    degenerate : (K,) bool
    """
    R = np.asarray(R, dtype=complex)
    h = np.asarray(h, dtype=complex)
    K, L = h.shape
    W = np.broadcast_to(np.eye(L, dtype=complex), (K, L, L)).copy()
    degenerate = np.zeros(K, dtype=bool)
    g, ok = _stacked_solve(R, h, loading)
    degenerate |= ~ok
    denom = np.real(np.einsum("kl,kl->k", np.conj(h), g))
    if np.any(ok):
        degenerate[ok] |= _check_degenerate(_loaded(R[ok], loading), h[ok], denom[ok])
    good = ~degenerate
    W[good] = (g[good] / denom[good, None])[:, :, None] * np.conj(h[good])[:, None, :]
    return W, degenerate


def mvdr_single_output(R, a, loading: float = DEFAULT_LOADING) -> np.ndarray:
    """Distortionless single-output MVDR ``w = R^-1 a / (a^H R^-1 a)``."""
    w, degenerate = mvdr_single_output_batch(np.asarray(R)[None], np.asarray(a)[None], loading)
    if degenerate[0]:
        raise DegenerateConstraint("a^H R^-1 a is numerically zero")
    return w[0]


def mvdr_single_output_batch(R, a, loading: float = DEFAULT_LOADING):
    """Stacked single-output MVDR; degenerate bins return zeros and are flagged."""
    R = np.asarray(R, dtype=complex)
    a = np.asarray(a, dtype=complex)
    g, ok = _stacked_solve(R, a, loading)
    degenerate = ~ok
    denom = np.real(np.einsum("kq,kq->k", np.conj(a), g))
    if np.any(ok):
        degenerate[ok] |= _check_degenerate(_loaded(R[ok], loading), a[ok], denom[ok])
    w = np.zeros_like(a)
    good = ~degenerate
    w[good] = g[good] / denom[good, None]
    return w, degenerate


def _stacked_solve(R, b, loading):
    """Solve each system; returns the solutions and a per-item success mask."""
    try:
        return loaded_hermitian_solve(R, b, loading), np.ones(len(b), dtype=bool)
    except NotFactorizable:
        pass
    out = np.zeros_like(b)
    ok = np.ones(len(b), dtype=bool)
    for i in range(len(b)):
        try:
            out[i] = loaded_hermitian_solve(R[i], b[i], loading)
        except NotFactorizable:
            ok[i] = False
    return out, ok
