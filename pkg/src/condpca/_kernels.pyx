# cython: language_level=3
"""Compiled inner loops.

Every function here has a numpy twin in ``_kernels_py`` with the same
signature and results; ``condpca._backend`` picks one at import time.
MEWMA kernels take data that is already centred on the in-control mean and
whitened by the inverse square root of the asymptotic covariance, so the control
statistic is a plain sum of squares.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp

cnp.import_array()


def kernel_smooth(const double[::1] z, const double[:, ::1] Y,
                  const double[::1] z0, const double[::1] bandwidths,
                  const cnp.intp_t[::1] groups):
    """Gaussian-weighted column averages of ``Y`` at each query in ``z0``.

    Column ``c`` uses ``bandwidths[groups[c]]``. Returns ``(est, weight)``
    where ``weight[t, g]`` is the sum of peak-normalised kernel weights for
    bandwidth ``g`` at query ``t``; ``est`` is NaN where that sum is zero.
    """
    cdef Py_ssize_t n = z.shape[0], q = Y.shape[1], m = z0.shape[0]
    cdef Py_ssize_t G = bandwidths.shape[0]
    cdef Py_ssize_t t, i, c, g
    cdef double d, w, s
    est_arr = np.zeros((m, q), dtype=np.float64)
    wsum_arr = np.zeros((m, G), dtype=np.float64)
    wbuf_arr = np.empty(G, dtype=np.float64)
    inv_arr = np.empty(G, dtype=np.float64)
    cdef double[:, ::1] est = est_arr
    cdef double[:, ::1] wsum = wsum_arr
    cdef double[::1] wbuf = wbuf_arr
    cdef double[::1] inv2 = inv_arr
    for g in range(G):
        inv2[g] = 0.5 / (bandwidths[g] * bandwidths[g])
    with nogil:
        for t in range(m):
            for i in range(n):
                d = z[i] - z0[t]
                for g in range(G):
                    w = d * d * inv2[g]
                    # exp underflows to exactly zero past 746
                    w = exp(-w) if w < 746.0 else 0.0
                    wbuf[g] = w
                    wsum[t, g] += w
                for c in range(q):
                    est[t, c] += wbuf[groups[c]] * Y[i, c]
            for c in range(q):
                s = wsum[t, groups[c]]
                if s > 0.0:
                    est[t, c] /= s
    # zero weight sums give an undefined ratio
    est_arr[wsum_arr[:, np.asarray(groups)] <= 0.0] = np.nan
    return est_arr, wsum_arr


def mewma_trace(const double[:, ::1] Xw, double kappa, double h4,
                const cnp.uint8_t[::1] reset, const double[::1] omega0):
    """Run the MEWMA recursion over ``Xw`` from ``omega0``.

    Returns ``(t2, alarm, omega_end)``. After an alarm on a row whose
    ``reset`` flag is set, the smoothed vector restarts from zero.
    """
    cdef Py_ssize_t m = Xw.shape[0], p = Xw.shape[1], i, j
    cdef double keep = 1.0 - kappa, s, v
    t2_arr = np.empty(m, dtype=np.float64)
    alarm_arr = np.zeros(m, dtype=np.uint8)
    om_arr = np.array(omega0, dtype=np.float64, copy=True)
    cdef double[::1] t2 = t2_arr
    cdef cnp.uint8_t[::1] alarm = alarm_arr
    cdef double[::1] om = om_arr
    with nogil:
        for i in range(m):
            s = 0.0
            for j in range(p):
                v = keep * om[j] + kappa * Xw[i, j]
                om[j] = v
                s += v * v
            t2[i] = s
            if s > h4:
                alarm[i] = 1
                if reset[i]:
                    for j in range(p):
                        om[j] = 0.0
    return t2_arr, alarm_arr, om_arr


def block_run_lengths(const double[:, ::1] Xw, const cnp.int64_t[::1] starts,
                      Py_ssize_t block_len, const cnp.int64_t[:, ::1] bidx,
                      double kappa, double h4, Py_ssize_t cap):
    """Run length of the chart on each block-bootstrap stream.

    Stream ``r`` is the concatenation of blocks ``starts[bidx[r, k]]``;
    each stream is followed until the first alarm or ``cap`` rows.
    Returns ``(run_length, censored)``.
    """
    cdef Py_ssize_t reps = bidx.shape[0], p = Xw.shape[1]
    cdef Py_ssize_t r, t, j, row
    cdef double keep = 1.0 - kappa, s, v
    rl_arr = np.empty(reps, dtype=np.int64)
    cens_arr = np.zeros(reps, dtype=np.uint8)
    om_arr = np.empty(p, dtype=np.float64)
    cdef cnp.int64_t[::1] rl = rl_arr
    cdef cnp.uint8_t[::1] cens = cens_arr
    cdef double[::1] om = om_arr
    with nogil:
        for r in range(reps):
            for j in range(p):
                om[j] = 0.0
            rl[r] = cap
            cens[r] = 1
            for t in range(cap):
                row = starts[bidx[r, t // block_len]] + t % block_len
                s = 0.0
                for j in range(p):
                    v = keep * om[j] + kappa * Xw[row, j]
                    om[j] = v
                    s += v * v
                if s > h4:
                    rl[r] = t + 1
                    cens[r] = 0
                    break
    return rl_arr, cens_arr


def stream_run_lengths(const double[:, ::1] Xw, double kappa, double h4,
                       Py_ssize_t cap, const double[::1] omega0, Py_ssize_t run0):
    """Split a continuous in-control stream into consecutive runs.

    A run ends at an alarm or after ``cap`` rows; either way the chart
    restarts from zero. ``omega0``/``run0`` carry an unfinished run in from
    a previous chunk. Returns ``(lengths, censored, omega_end, run_end)``.
    """
    cdef Py_ssize_t m = Xw.shape[0], p = Xw.shape[1], i, j, k = 0
    cdef Py_ssize_t run = run0
    cdef double keep = 1.0 - kappa, s, v
    len_arr = np.empty(m, dtype=np.int64)
    cens_arr = np.empty(m, dtype=np.uint8)
    om_arr = np.array(omega0, dtype=np.float64, copy=True)
    cdef cnp.int64_t[::1] lens = len_arr
    cdef cnp.uint8_t[::1] cens = cens_arr
    cdef double[::1] om = om_arr
    with nogil:
        for i in range(m):
            s = 0.0
            for j in range(p):
                v = keep * om[j] + kappa * Xw[i, j]
                om[j] = v
                s += v * v
            run += 1
            if s > h4 or run >= cap:
                lens[k] = run
                cens[k] = 0 if s > h4 else 1
                k += 1
                run = 0
                for j in range(p):
                    om[j] = 0.0
    return len_arr[:k].copy(), cens_arr[:k].copy(), om_arr, run
