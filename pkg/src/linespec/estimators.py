"""Classical baselines on the shared circular grid: periodogram and MUSIC."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import kernels
from .errors import ConfigError, EigenConvergenceError

WINDOWS = ("rectangular", "hann", "gaussian")

EIG_TOL = 1e-12
EIG_MAX_SWEEPS = 100


def hermitian_eig_batch(mats, tol=EIG_TOL, max_sweeps=EIG_MAX_SWEEPS):
    """Eigendecomposition of a stack of Hermitian matrices by cyclic Jacobi.

    Returns eigenvalues in ascending order, shape ``(B, L)``, and unitary
    eigenvector matrices ``(B, L, L)`` with eigenvectors as columns.
    """
    mats = np.asarray(mats, dtype=np.complex128)
    vals, vecs, sweeps = kernels.jacobi_eigh_batch(mats, tol, max_sweeps)
    bad = np.flatnonzero(sweeps < 0)
    if bad.size:
        raise EigenConvergenceError(
            f"Jacobi did not converge in {max_sweeps} sweeps (matrix {int(bad[0])})")
    order = np.argsort(vals, axis=1, kind="stable")
    vals = np.take_along_axis(vals, order, axis=1)
    vecs = np.take_along_axis(vecs, order[:, None, :], axis=2)
    return vals, vecs


def hermitian_eig(M, tol=EIG_TOL, max_sweeps=EIG_MAX_SWEEPS):
    M = np.asarray(M, dtype=np.complex128)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("expected a square matrix")
    scale = max(1.0, float(np.max(np.abs(M)))) if M.size else 1.0
    if M.size and np.max(np.abs(M - M.conj().T)) > 1e-12 * scale:
        raise ValueError("matrix is not Hermitian")
    vals, vecs = hermitian_eig_batch(M[None], tol, max_sweeps)
    return vals[0], vecs[0]


@lru_cache(maxsize=16)
def _fourier_matrix(indices, g, sign):
    # exp(sign * 2 pi i * (bin * index) / g) with the phase reduced exactly in integers
    k = np.asarray(indices, dtype=np.int64)
    phase = np.mod(np.outer(k, np.arange(g, dtype=np.int64)), g) / g
    out = np.exp(sign * 2j * np.pi * phase)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class PeriodogramConfig:
    window: str = "hann"
    g: int = 1000
    gaussian_std: float | None = None  # in samples; n/6 when unset

    def __post_init__(self):
        if self.window not in WINDOWS:
            raise ConfigError(f"unknown window {self.window!r}")
        if self.g < 2:
            raise ConfigError("g must be >= 2")


def window(n, kind="hann", gaussian_std=None):
    """Taper normalized so its samples sum to ``n``."""
    k = np.arange(1, n + 1)
    if kind == "rectangular":
        w = np.ones(n)
    elif kind == "hann":
        w = np.sin(np.pi * k / (n + 1)) ** 2
    elif kind == "gaussian":
        std = gaussian_std if gaussian_std is not None else n / 6.0
        w = np.exp(-0.5 * ((k - (n + 1) / 2.0) / std) ** 2)
    else:
        raise ConfigError(f"unknown window {kind!r}")
    return w * (n / w.sum())


def periodogram_batch(Y, cfg=PeriodogramConfig()):
    Y = np.atleast_2d(np.asarray(Y, dtype=np.complex128))
    n = Y.shape[1]
    if cfg.g < n:
        raise ConfigError("periodogram grid must have g >= n")
    E = _fourier_matrix(tuple(range(1, n + 1)), cfg.g, -1)
    X = (Y * window(n, cfg.window, cfg.gaussian_std)) @ E
    return X.real ** 2 + X.imag ** 2


def periodogram(y, cfg=PeriodogramConfig()):
    """``|sum_k w_k y_k exp(-i 2 pi (i/g) k)|^2`` on every grid bin."""
    return periodogram_batch(np.asarray(y)[None], cfg)[0]


@dataclass(frozen=True)
class MusicConfig:
    L: int = 20
    g: int = 1000
    forward_backward: bool = True

    def __post_init__(self):
        if self.L < 2:
            raise ConfigError("subvector length L must be >= 2")
        if self.g < 2:
            raise ConfigError("g must be >= 2")


def covariance_batch(Y, L, forward_backward=True):
    """Sample covariance of the length-``L`` sliding snapshots."""
    Y = np.atleast_2d(np.asarray(Y, dtype=np.complex128))
    n = Y.shape[1]
    if not 1 < L <= n - 1:
        raise ConfigError(f"need 1 < L <= n - 1 (L={L}, n={n})")
    snaps = np.lib.stride_tricks.sliding_window_view(Y, L, axis=1)  # (B, n-L+1, L)
    R = np.einsum("bkl,bkj->blj", snaps, snaps.conj()) / snaps.shape[1]
    if forward_backward:
        R = 0.5 * (R + R[:, ::-1, ::-1].conj())
    return R


def music_from_covariance(R, m, g):
    """MUSIC pseudo-spectra ``1 / ||E_noise^H a(f)||^2`` for a stack of
    covariances sharing the signal count ``m``."""
    R = np.asarray(R, dtype=np.complex128)
    if R.ndim == 2:
        return music_from_covariance(R[None], m, g)[0]
    L = R.shape[-1]
    if not 0 <= m < L:
        raise ConfigError(f"MUSIC needs m < L (m={m}, L={L})")
    _, vecs = hermitian_eig_batch(R)
    noise = vecs[:, :, : L - m]
    A = _fourier_matrix(tuple(range(L)), g, 1)
    P = np.einsum("blr,lg->brg", noise.conj(), A)
    return 1.0 / np.sum(P.real ** 2 + P.imag ** 2, axis=1)


def music_batch(Y, m, cfg=MusicConfig()):
    """MUSIC on a batch; ``m`` is a scalar or one signal count per row."""
    Y = np.atleast_2d(np.asarray(Y, dtype=np.complex128))
    ms = np.broadcast_to(np.asarray(m, dtype=np.int64), (Y.shape[0],))
    if np.any(ms >= cfg.L) or np.any(ms < 1):
        raise ConfigError(f"MUSIC needs 1 <= m < L={cfg.L}")
    R = covariance_batch(Y, cfg.L, cfg.forward_backward)
    out = np.empty((Y.shape[0], cfg.g))
    for mv in np.unique(ms):
        idx = np.flatnonzero(ms == mv)
        out[idx] = music_from_covariance(R[idx], int(mv), cfg.g)
    return out


def music(y, m, cfg=MusicConfig()):
    return music_batch(np.asarray(y)[None], m, cfg)[0]
