"""Brute-force reference implementations kept permanently as oracles.

These are deliberately written as literal loop transcriptions of the layer
definitions, with no shared code with the fast kernels. The test suite and
the `verify` command hold the fast paths to within 1e-10 of these, and the
backward passes to within 1e-5 of central finite differences.
"""

import numpy as np


def conv2d_forward_ref(x, kernel, bias):
    """Sextuple-loop valid cross-correlation."""
    n, hh, ww, ci = x.shape
    k, _, _, co = kernel.shape
    oh, ow = hh - k + 1, ww - k + 1
    out = np.zeros((n, oh, ow, co))
    for b in range(n):
        for oy in range(oh):
            for ox in range(ow):
                for oc in range(co):
                    acc = bias[oc]
                    for ky in range(k):
                        for kx in range(k):
                            for ic in range(ci):
                                acc += x[b, oy + ky, ox + kx, ic] * kernel[ky, kx, ic, oc]
                    out[b, oy, ox, oc] = acc
    return out


def tconv2d_forward_ref(x, kernel, bias):
    """Scatter-form transposed convolution: every input pixel deposits a
    kernel-sized patch into the (h+k-1, w+k-1) output."""
    n, hh, ww, ci = x.shape
    k, _, _, co = kernel.shape
    out = np.zeros((n, hh + k - 1, ww + k - 1, co))
    out[:] = bias
    for b in range(n):
        for iy in range(hh):
            for ix in range(ww):
                for ic in range(ci):
                    v = x[b, iy, ix, ic]
                    for ky in range(k):
                        for kx in range(k):
                            for oc in range(co):
                                out[b, iy + ky, ix + kx, oc] += v * kernel[ky, kx, ic, oc]
    return out


def subpixel_forward_ref(x, r):
    """Direct evaluation of the periodic-shuffle index formula, one output
    position at a time (x = column, y = row)."""
    n, hh, ww, crr = x.shape
    c = crr // (r * r)
    out = np.empty((n, hh * r, ww * r, c))
    for b in range(n):
        for y in range(hh * r):
            for xx in range(ww * r):
                for cc in range(c):
                    ch = c * r * (y % r) + c * (xx % r) + cc
                    out[b, y, xx, cc] = x[b, y // r, xx // r, ch]
    return out


def finite_difference_grad(f, x, step=1e-6):
    """Central finite differences of a scalar function over array x."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + step
        hi = f()
        flat[i] = keep - step
        lo = f()
        flat[i] = keep
        gflat[i] = (hi - lo) / (2.0 * step)
    return g


def relative_gap(a, b, floor=1e-8):
    """Max relative disagreement, ignoring entries where both are tiny."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-30)
    gap = np.abs(a - b) / denom
    gap[(np.abs(a) < floor) & (np.abs(b) < floor)] = 0.0
    return float(gap.max()) if gap.size else 0.0
