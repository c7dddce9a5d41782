"""Numba-jitted implementations of the hot kernels.

Loop nests are ordered so the innermost reduction runs over contiguous
memory on both operands (the kernel is pre-transposed in the wrappers).
prange parallelism only ever splits independent output cells, so results
are bit-identical at any thread count.
"""

import numpy as np
from numba import njit, prange


@njit(cache=True, fastmath=True, parallel=True)
def _xcorr_valid_jit(x, wt, out):
    # wt is (k, k, co, ci) so the ic reduction is stride-1 on both sides
    n, hh, ww, ci = x.shape
    k = wt.shape[0]
    co = wt.shape[2]
    oh = hh - k + 1
    ow = ww - k + 1
    for idx in prange(n * oh):
        b = idx // oh
        oy = idx % oh
        for ox in range(ow):
            for oc in range(co):
                acc = 0.0
                for ky in range(k):
                    for kx in range(k):
                        for ic in range(ci):
                            acc += x[b, oy + ky, ox + kx, ic] * wt[ky, kx, oc, ic]
                out[b, oy, ox, oc] = acc


@njit(cache=True, fastmath=True, parallel=True)
def _corr_weights_jit(big, small, out):
    n, _, _, cb = big.shape
    _, oh, ow, cs = small.shape
    kh = out.shape[0]
    kw = out.shape[1]
    for kidx in prange(kh * kw):
        ky = kidx // kw
        kx = kidx % kw
        for b in range(cb):
            for s in range(cs):
                acc = 0.0
                for bi in range(n):
                    for oy in range(oh):
                        for ox in range(ow):
                            acc += big[bi, ky + oy, kx + ox, b] * small[bi, oy, ox, s]
                out[ky, kx, b, s] = acc


@njit(cache=True)
def _raw_fill_jit(state, out):
    s = state
    for i in range(out.shape[0]):
        s ^= s >> np.uint64(12)
        s ^= (s << np.uint64(25))
        s ^= s >> np.uint64(27)
        out[i] = s * np.uint64(0x2545F4914F6CDD1D)
    return s


def xcorr_valid(x, w):
    """Valid cross-correlation of x:(n,h,w,ci) with w:(k,k,ci,co)."""
    n, hh, ww, _ = x.shape
    k, _, _, co = w.shape
    out = np.empty((n, hh - k + 1, ww - k + 1, co))
    wt = np.ascontiguousarray(w.transpose(0, 1, 3, 2))
    _xcorr_valid_jit(np.ascontiguousarray(x), wt, out)
    return out


def corr_weights(big, small):
    """Correlate big:(n,H,W,cb) against small:(n,oh,ow,cs) over (n,oh,ow)."""
    kh = big.shape[1] - small.shape[1] + 1
    kw = big.shape[2] - small.shape[2] + 1
    out = np.empty((kh, kw, big.shape[3], small.shape[3]))
    _corr_weights_jit(np.ascontiguousarray(big), np.ascontiguousarray(small), out)
    return out


def raw_fill(state, n):
    """Fill n raw 64-bit draws from the xorshift64* stream."""
    out = np.empty(n, dtype=np.uint64)
    end = _raw_fill_jit(np.uint64(state), out)
    return out, int(end)
