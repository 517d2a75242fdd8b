"""Pure-Python/numpy twins of the compiled kernels in ``_core.pyx``.

Same signatures, same return conventions. Used when the extension is not
built or when ``LINESPEC_PURE_PYTHON`` is set.
"""
import math

import numpy as np


def _jacobi(a, tol_rel, max_sweeps):
    L = a.shape[0]
    v = np.eye(L, dtype=np.complex128)
    thresh = tol_rel * math.sqrt(float(np.sum(np.abs(a) ** 2)))
    offmask = ~np.eye(L, dtype=bool)
    for sweep in range(max_sweeps + 1):
        off = math.sqrt(float(np.sum(np.abs(a[offmask]) ** 2)))
        if off <= thresh:
            return v, sweep
        if sweep == max_sweeps:
            return v, -1
        for p in range(L - 1):
            for q in range(p + 1, L):
                apq = a[p, q]
                b = abs(apq)
                if b == 0.0:
                    continue
                u = apq.conjugate() / b
                app = a[p, p].real
                aqq = a[q, q].real
                theta = (aqq - app) / (2.0 * b)
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = 1.0 / (abs(theta) + math.sqrt(theta * theta + 1.0))
                    if theta < 0.0:
                        t = -t
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                x = a[:, p].copy()
                uy = u * a[:, q]
                a[:, p] = c * x - s * uy
                a[:, q] = s * x + c * uy
                x = a[p, :].copy()
                uy = u.conjugate() * a[q, :]
                a[p, :] = c * x - s * uy
                a[q, :] = s * x + c * uy
                a[p, p] = app - t * b
                a[q, q] = aqq + t * b
                a[p, q] = 0.0
                a[q, p] = 0.0
                x = v[:, p].copy()
                uy = u * v[:, q]
                v[:, p] = c * x - s * uy
                v[:, q] = s * x + c * uy
    return v, -1


def jacobi_eigh_batch(mats, tol_rel=1e-12, max_sweeps=100):
    work = np.array(mats, dtype=np.complex128, copy=True)
    nb, L = work.shape[0], work.shape[1]
    vals = np.empty((nb, L))
    vecs = np.empty((nb, L, L), dtype=np.complex128)
    sweeps = np.empty(nb, dtype=np.int64)
    for i in range(nb):
        vecs[i], sweeps[i] = _jacobi(work[i], tol_rel, max_sweeps)
        vals[i] = work[i].diagonal().real
    return vals, vecs, sweeps


def circconv_forward(x, w, bias):
    B, C, W = x.shape
    O, _, K = w.shape
    pad = K // 2
    out = np.empty((B, O, W), dtype=x.dtype)
    out[:] = bias[None, :, None]
    for c in range(C):
        for k in range(K):
            shifted = np.roll(x[:, c, :], -(k - pad), axis=1)
            out += w[None, :, c, k, None] * shifted[:, None, :]
    return out


def circconv_backward(x, w, dout):
    B, C, W = x.shape
    O, _, K = w.shape
    pad = K // 2
    dx = np.zeros_like(x)
    dw = np.empty_like(w)
    db = dout.sum(axis=(0, 2))
    for k in range(K):
        sh = k - pad
        shifted = np.roll(x, -sh, axis=2)
        dw[:, :, k] = np.einsum("bow,bcw->oc", dout, shifted)
        dx += np.roll(np.einsum("oc,bow->bcw", w[:, :, k], dout), sh, axis=2)
    return dx, dw, db


def adam_update(p, g, m, v, lr, beta1, beta2, eps, c1, c2):
    dt = p.dtype.type
    m *= dt(beta1)
    m += dt(1.0 - beta1) * g
    v *= dt(beta2)
    v += dt(1.0 - beta2) * (g * g)
    step = lr * (m.astype(np.float64) / c1) / (np.sqrt(v.astype(np.float64) / c2) + eps)
    p[...] = (p - step).astype(p.dtype)


def plateau_peaks(v):
    v = np.asarray(v, dtype=np.float64)
    g = v.shape[0]
    change = v != np.roll(v, 1)
    if not change.any():
        return np.zeros(1, dtype=np.int64), v[:1].copy()
    starts = np.flatnonzero(change)
    lengths = np.diff(np.append(starts, starts[0] + g))
    vals = v[starts]
    prev = np.roll(vals, 1)
    nxt = np.roll(vals, -1)
    is_peak = (vals > prev) & (vals > nxt)
    bins = (starts[is_peak] + (lengths[is_peak] - 1) // 2) % g
    pv = vals[is_peak]
    order = np.argsort(bins, kind="stable")
    return bins[order].astype(np.int64), pv[order]
