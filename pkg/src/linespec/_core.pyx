"""Compiled inner loops.

Every function here has a drop-in twin in ``_purepy``; ``kernels`` picks one
at import. Accumulation order in ``circconv_forward`` matches the Python
version element for element, so both produce bit-identical outputs.
"""
import numpy as np

cimport numpy as cnp
from libc.math cimport fabs, hypot, sqrt

cnp.import_array()

ctypedef fused real:
    float
    double


cdef int _jacobi(double complex[:, ::1] a, double complex[:, ::1] v,
                 double tol_rel, int max_sweeps) noexcept nogil:
    cdef Py_ssize_t L = a.shape[0]
    cdef Py_ssize_t i, j, k, p, q
    cdef double fro2 = 0.0, off2, thresh, b, app, aqq, theta, t, c, s
    cdef double complex apq, u, ub, x, y, uy
    cdef int sweep

    for i in range(L):
        for j in range(L):
            v[i, j] = 1.0 if i == j else 0.0
            fro2 += a[i, j].real * a[i, j].real + a[i, j].imag * a[i, j].imag
    thresh = tol_rel * sqrt(fro2)

    for sweep in range(max_sweeps + 1):
        off2 = 0.0
        for i in range(L):
            for j in range(L):
                if i != j:
                    off2 += a[i, j].real * a[i, j].real + a[i, j].imag * a[i, j].imag
        if sqrt(off2) <= thresh:
            return sweep
        if sweep == max_sweeps:
            return -1
        for p in range(L - 1):
            for q in range(p + 1, L):
                apq = a[p, q]
                b = hypot(apq.real, apq.imag)
                if b == 0.0:
                    continue
                # phase rotation makes the (p, q) entry real and positive
                u = (apq.real - 1j * apq.imag) / b
                ub = (apq.real + 1j * apq.imag) / b
                app = a[p, p].real
                aqq = a[q, q].real
                theta = (aqq - app) / (2.0 * b)
                if fabs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = 1.0 / (fabs(theta) + sqrt(theta * theta + 1.0))
                    if theta < 0.0:
                        t = -t
                c = 1.0 / sqrt(t * t + 1.0)
                s = t * c
                for k in range(L):
                    x = a[k, p]
                    uy = u * a[k, q]
                    a[k, p] = c * x - s * uy
                    a[k, q] = s * x + c * uy
                for k in range(L):
                    x = a[p, k]
                    uy = ub * a[q, k]
                    a[p, k] = c * x - s * uy
                    a[q, k] = s * x + c * uy
                a[p, p] = app - t * b
                a[q, q] = aqq + t * b
                a[p, q] = 0.0
                a[q, p] = 0.0
                for k in range(L):
                    x = v[k, p]
                    uy = u * v[k, q]
                    v[k, p] = c * x - s * uy
                    v[k, q] = s * x + c * uy
    return -1


def jacobi_eigh_batch(mats, double tol_rel=1e-12, int max_sweeps=100):
    """Unsorted eigenpairs of a stack of Hermitian matrices.

    Returns ``(eigvals, eigvecs, sweeps)``; ``sweeps[i] == -1`` flags a
    matrix that hit the sweep cap.
    """
    cdef double complex[:, :, ::1] work = np.array(mats, dtype=np.complex128, order="C", copy=True)
    cdef Py_ssize_t nb = work.shape[0], L = work.shape[1], i, k
    vecs = np.empty((nb, L, L), dtype=np.complex128)
    vals = np.empty((nb, L), dtype=np.float64)
    sweeps = np.empty(nb, dtype=np.int64)
    cdef double complex[:, :, ::1] vv = vecs
    cdef double[:, ::1] ww = vals
    cdef long long[::1] ss = sweeps
    with nogil:
        for i in range(nb):
            ss[i] = _jacobi(work[i], vv[i], tol_rel, max_sweeps)
            for k in range(L):
                ww[i, k] = work[i, k, k].real
    return vals, vecs, sweeps


def circconv_forward(real[:, :, ::1] x, real[:, :, ::1] w, real[::1] bias):
    """Circular cross-correlation, ``out[b,o,i] = bias[o] + sum w[o,c,k] x[b,c,i+k-K//2]``."""
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], W = x.shape[2]
    cdef Py_ssize_t O = w.shape[0], K = w.shape[2], pad = K // 2
    cdef Py_ssize_t b, o, c, k, i, sh, lo, hi
    cdef real wk
    dtype = np.float32 if real is float else np.float64
    out = np.empty((B, O, W), dtype=dtype)
    cdef real[:, :, ::1] y = out
    with nogil:
        for b in range(B):
            for o in range(O):
                for i in range(W):
                    y[b, o, i] = bias[o]
                for c in range(C):
                    for k in range(K):
                        wk = w[o, c, k]
                        sh = k - pad
                        lo = -sh if sh < 0 else 0
                        hi = W - sh if sh > 0 else W
                        for i in range(lo):
                            y[b, o, i] = y[b, o, i] + wk * x[b, c, i + sh + W]
                        for i in range(lo, hi):
                            y[b, o, i] = y[b, o, i] + wk * x[b, c, i + sh]
                        for i in range(hi, W):
                            y[b, o, i] = y[b, o, i] + wk * x[b, c, i + sh - W]
    return out


def circconv_backward(real[:, :, ::1] x, real[:, :, ::1] w, real[:, :, ::1] dout):
    """Gradients ``(dx, dw, dbias)`` of ``circconv_forward``."""
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], W = x.shape[2]
    cdef Py_ssize_t O = w.shape[0], K = w.shape[2], pad = K // 2
    cdef Py_ssize_t b, o, c, k, i, sh, lo, hi
    cdef real wk, acc
    dtype = np.float32 if real is float else np.float64
    dx_arr = np.zeros((B, C, W), dtype=dtype)
    dw_arr = np.zeros((O, C, K), dtype=dtype)
    db_arr = np.zeros(O, dtype=dtype)
    cdef real[:, :, ::1] dx = dx_arr
    cdef real[:, :, ::1] dw = dw_arr
    cdef real[::1] db = db_arr
    with nogil:
        for b in range(B):
            for o in range(O):
                acc = 0
                for i in range(W):
                    acc = acc + dout[b, o, i]
                db[o] = db[o] + acc
            for c in range(C):
                for o in range(O):
                    for k in range(K):
                        sh = k - pad
                        lo = -sh if sh < 0 else 0
                        hi = W - sh if sh > 0 else W
                        wk = w[o, c, k]
                        acc = 0
                        for i in range(lo):
                            dx[b, c, i + sh + W] = dx[b, c, i + sh + W] + wk * dout[b, o, i]
                            acc = acc + dout[b, o, i] * x[b, c, i + sh + W]
                        for i in range(lo, hi):
                            dx[b, c, i + sh] = dx[b, c, i + sh] + wk * dout[b, o, i]
                        for i in range(lo, hi):
                            acc = acc + dout[b, o, i] * x[b, c, i + sh]
                        for i in range(hi, W):
                            dx[b, c, i + sh - W] = dx[b, c, i + sh - W] + wk * dout[b, o, i]
                            acc = acc + dout[b, o, i] * x[b, c, i + sh - W]
                        dw[o, c, k] = dw[o, c, k] + acc
    return dx_arr, dw_arr, db_arr


def adam_update(real[::1] p, real[::1] g, real[::1] m, real[::1] v,
                double lr, double beta1, double beta2, double eps, double c1, double c2):
    """Fused in-place Adam step on flat arrays; ``c1``, ``c2`` are the bias corrections."""
    cdef Py_ssize_t i, N = p.shape[0]
    cdef real b1 = <real>beta1, b2 = <real>beta2
    cdef real a1 = <real>(1.0 - beta1), a2 = <real>(1.0 - beta2)
    cdef double mh, vh
    with nogil:
        for i in range(N):
            m[i] = b1 * m[i] + a1 * g[i]
            v[i] = b2 * v[i] + a2 * (g[i] * g[i])
            mh = m[i] / c1
            vh = v[i] / c2
            p[i] = <real>(p[i] - lr * mh / (sqrt(vh) + eps))


def plateau_peaks(double[::1] v):
    """Circular local maxima, each plateau collapsed to its centroid bin.

    Returns ``(bins, values)`` in increasing bin order of the plateau start.
    A constant input is a single plateau reported at bin 0.
    """
    cdef Py_ssize_t g = v.shape[0], s = -1, i, idx, r, nruns = 0, start, length
    cdef double prev, nxt, val
    for i in range(g):
        if v[i] != v[i - 1 if i > 0 else g - 1]:
            s = i
            break
    if s < 0:
        return np.zeros(1, dtype=np.int64), np.array([v[0]], dtype=np.float64)

    starts = np.empty(g, dtype=np.int64)
    lengths = np.empty(g, dtype=np.int64)
    cdef long long[::1] st = starts
    cdef long long[::1] ln = lengths
    idx = s
    i = 0
    while i < g:
        start = idx
        length = 1
        i += 1
        idx = (idx + 1) % g
        while i < g and v[idx] == v[start]:
            length += 1
            i += 1
            idx = (idx + 1) % g
        st[nruns] = start
        ln[nruns] = length
        nruns += 1

    bins = []
    vals = []
    for r in range(nruns):
        val = v[st[r]]
        prev = v[st[(r - 1 + nruns) % nruns]]
        nxt = v[st[(r + 1) % nruns]]
        if val > prev and val > nxt:
            bins.append((st[r] + (ln[r] - 1) // 2) % g)
            vals.append(val)
    order = np.argsort(np.asarray(bins, dtype=np.int64), kind="stable")
    return (np.asarray(bins, dtype=np.int64)[order],
            np.asarray(vals, dtype=np.float64)[order])
