"""Rasterized pseudo-spectra and peak-based frequency extraction.

A pseudo-spectrum lives on a circular grid of ``g`` bins, bin ``i`` standing
for frequency ``i / g``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .sigmodel import LineSpectrum, circular_distance


@dataclass(frozen=True)
class KernelSpec:
    """Triangular kernel ``K(u) = max(0, 1 - |u| / half_width)``."""

    half_width: float
    kind: str = "triangular"

    def __post_init__(self):
        if self.kind != "triangular":
            raise ValueError(f"unsupported kernel {self.kind!r}")
        if not self.half_width > 0:
            raise ValueError("half_width must be positive")

    @classmethod
    def for_n(cls, n):
        return cls(1.0 / n)

    def __call__(self, u):
        return np.maximum(0.0, 1.0 - np.abs(u) / self.half_width)


def grid(g):
    return np.arange(g) / g


def _freqs(spec):
    return spec.freqs if isinstance(spec, LineSpectrum) else np.asarray(spec, dtype=np.float64)


def rasterize(spec, kernel, g):
    """Sum of kernels centred on each frequency, sampled on the circular grid."""
    if g < 2:
        raise ValueError("g must be >= 2")
    f = _freqs(spec)
    d = circular_distance(grid(g)[:, None], f[None, :])
    return kernel(d).sum(axis=1)


def rasterize_many(freq_lists, kernel, g, dtype=np.float64):
    out = np.empty((len(freq_lists), g), dtype=dtype)
    for i, f in enumerate(freq_lists):
        out[i] = rasterize(f, kernel, g)
    return out


def _parabolic_offset(left, mid, right):
    den = left - 2.0 * mid + right
    if not den < 0.0:
        return 0.0
    return min(0.5, max(-0.5, 0.5 * (left - right) / den))


def extract_peaks(values, m):
    """The ``m`` highest circular local maxima, as frequencies in ``[0, 1)``.

    Plateaus count once, at their centroid bin. Each peak is refined by a
    three-point parabola through its neighbours. Ties in height go to the
    lower bin. When fewer than ``m`` maxima exist the remaining slots take
    the highest bins not already used.
    """
    v = np.ascontiguousarray(values, dtype=np.float64)
    g = v.shape[0]
    if not 1 <= m <= g:
        raise ValueError("need 1 <= m <= g")
    bins, heights = kernels.plateau_peaks(v)
    # lexsort: last key is primary
    order = np.lexsort((bins, -heights))[:m]
    chosen = bins[order]
    out = np.empty(m)
    for j, b in enumerate(chosen):
        off = _parabolic_offset(v[b - 1], v[b], v[(b + 1) % g])
        out[j] = (b + off) / g
    if chosen.size < m:
        rest = np.setdiff1d(np.arange(g), chosen)
        fill = rest[np.lexsort((rest, -v[rest]))][: m - chosen.size]
        out[chosen.size:] = fill / g
    out = np.mod(out, 1.0)
    out[out >= 1.0] = 0.0
    return out
