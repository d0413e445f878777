"""Pure numpy implementations of the compiled kernels in ``_kernels.pyx``.

Signatures and return values match the compiled module. Results agree to
floating point round-off; summation order differs, so the two backends are
not bit-identical with each other.
"""

import numpy as np
from scipy.signal import lfilter

_QUERY_CHUNK = 512


def kernel_smooth(z, Y, z0, bandwidths, groups):
    z = np.asarray(z, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    z0 = np.asarray(z0, dtype=np.float64)
    bandwidths = np.asarray(bandwidths, dtype=np.float64)
    groups = np.asarray(groups, dtype=np.intp)
    m, q, G = z0.shape[0], Y.shape[1], bandwidths.shape[0]
    est = np.empty((m, q))
    wsum = np.empty((m, G))
    for g in range(G):
        cols = np.flatnonzero(groups == g)
        for lo in range(0, m, _QUERY_CHUNK):
            hi = min(lo + _QUERY_CHUNK, m)
            d = (z[None, :] - z0[lo:hi, None]) / bandwidths[g]
            W = np.exp(-0.5 * d * d)
            s = W.sum(axis=1)
            wsum[lo:hi, g] = s
            if cols.size:
                with np.errstate(invalid="ignore", divide="ignore"):
                    est[lo:hi, cols] = (W @ Y[:, cols]) / s[:, None]
    est[wsum[:, groups] <= 0.0] = np.nan
    return est, wsum


def _filter(Xw, kappa, omega):
    """MEWMA values for rows of ``Xw`` starting from state ``omega``."""
    zi = ((1.0 - kappa) * omega)[None, :]
    out, _ = lfilter([kappa], [1.0, -(1.0 - kappa)], Xw, axis=0, zi=zi)
    return out


def mewma_trace(Xw, kappa, h4, reset, omega0):
    Xw = np.asarray(Xw, dtype=np.float64)
    reset = np.asarray(reset, dtype=bool)
    m = Xw.shape[0]
    om = np.array(omega0, dtype=np.float64)
    t2 = np.empty(m)
    alarm = np.zeros(m, dtype=np.uint8)
    i = 0
    while i < m:
        W = _filter(Xw[i:], kappa, om)
        s = np.einsum("ij,ij->i", W, W)
        hit = np.flatnonzero((s > h4) & reset[i:])
        k = hit[0] if hit.size else m - i - 1
        t2[i:i + k + 1] = s[:k + 1]
        if hit.size:
            om = np.zeros_like(om)
        else:
            om = W[k].copy()
        i += k + 1
    alarm[t2 > h4] = 1
    return t2, alarm, om


def block_run_lengths(Xw, starts, block_len, bidx, kappa, h4, cap):
    Xw = np.asarray(Xw, dtype=np.float64)
    starts = np.asarray(starts, dtype=np.int64)
    bidx = np.asarray(bidx, dtype=np.int64)
    reps, p = bidx.shape[0], Xw.shape[1]
    rl = np.full(reps, cap, dtype=np.int64)
    cens = np.ones(reps, dtype=np.uint8)
    active = np.arange(reps)
    om = np.zeros((reps, p))
    keep = 1.0 - kappa
    t = 0
    while t < cap and active.size:
        rows = starts[bidx[active, t // block_len]] + t % block_len
        om = keep * om + kappa * Xw[rows]
        s = np.einsum("ij,ij->i", om, om)
        done = s > h4
        if done.any():
            rl[active[done]] = t + 1
            cens[active[done]] = 0
            active = active[~done]
            om = om[~done]
        t += 1
    return rl, cens


def stream_run_lengths(Xw, kappa, h4, cap, omega0, run0):
    Xw = np.asarray(Xw, dtype=np.float64)
    m = Xw.shape[0]
    om = np.array(omega0, dtype=np.float64)
    run = int(run0)
    lens, cens = [], []
    i = 0
    while i < m:
        stop = min(m, i + cap - run)
        W = _filter(Xw[i:stop], kappa, om)
        s = np.einsum("ij,ij->i", W, W)
        hit = np.flatnonzero(s > h4)
        if hit.size:
            k = hit[0]
            lens.append(run + k + 1)
            cens.append(0)
            run, om, i = 0, np.zeros_like(om), i + k + 1
        elif run + (stop - i) >= cap:
            lens.append(cap)
            cens.append(1)
            run, om, i = 0, np.zeros_like(om), stop
        else:
            run += stop - i
            om = W[-1].copy()
            i = stop
    return (np.asarray(lens, dtype=np.int64), np.asarray(cens, dtype=np.uint8),
            om, run)
