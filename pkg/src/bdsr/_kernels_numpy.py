"""Pure-numpy implementations of the hot kernels.

Two strategies are used for the correlation kernels and chosen per call:

* shift-and-matmul: one BLAS matmul per kernel tap; wins for small kernels.
* FFT: frequency-domain correlation; wins for the large 17x17 / 33x33
  upscaling kernels where the tap loop would be overhead-bound.

Both strategies are deterministic run-to-run and agree with the brute-force
reference implementations to ~1e-12; the switch point only affects speed.
"""

import numpy as np

# Kernels at least this wide go through the FFT route.
FFT_MIN_K = 9

# im2col materializes n*oh*ow*k*k*ci doubles; cap it at ~64 MB
_IM2COL_CAP = 8 << 20

_MASK64 = (1 << 64) - 1


def _xcorr_matmul(x, w):
    n, hh, ww, _ = x.shape
    k = w.shape[0]
    co = w.shape[3]
    oh = hh - k + 1
    ow = ww - k + 1
    out = np.zeros((n, oh, ow, co))
    for ky in range(k):
        for kx in range(k):
            out += x[:, ky:ky + oh, kx:kx + ow, :] @ w[ky, kx]
    return out


def _xcorr_im2col(x, w):
    n, hh, ww, ci = x.shape
    k = w.shape[0]
    co = w.shape[3]
    oh = hh - k + 1
    ow = ww - k + 1
    sn, sh, sw, sc = x.strides
    cols = np.lib.stride_tricks.as_strided(
        x, (n, oh, ow, k, k, ci), (sn, sh, sw, sh, sw, sc))
    flat = cols.reshape(n * oh * ow, k * k * ci)  # copies the windows
    out = flat @ w.reshape(k * k * ci, co)
    return out.reshape(n, oh, ow, co)


def _xcorr_fft(x, w):
    n, hh, ww, _ = x.shape
    k = w.shape[0]
    oh = hh - k + 1
    ow = ww - k + 1
    fx = np.fft.rfft2(x, s=(hh, ww), axes=(1, 2))
    fw = np.fft.rfft2(w, s=(hh, ww), axes=(0, 1))
    # correlation = product with the conjugated kernel spectrum
    fo = np.einsum("nhwi,hwio->nhwo", fx, np.conj(fw))
    out = np.fft.irfft2(fo, s=(hh, ww), axes=(1, 2))
    return np.ascontiguousarray(out[:, :oh, :ow, :])


def xcorr_valid(x, w):
    """Valid cross-correlation of x:(n,h,w,ci) with w:(k,k,ci,co).

    Route by geometry: FFT for wide kernels, one flat matmul (im2col) for
    thin columns where the per-tap loop would be call-bound, otherwise a
    matmul per kernel tap.
    """
    n, hh, ww, ci = x.shape
    k = w.shape[0]
    if k >= FFT_MIN_K:
        return _xcorr_fft(x, w)
    cols = k * k * ci
    if cols <= 256 and n * (hh - k + 1) * (ww - k + 1) * cols <= _IM2COL_CAP:
        return _xcorr_im2col(x, w)
    return _xcorr_matmul(x, w)


def _corr_weights_tensordot(big, small):
    _, hh, ww, cb = big.shape
    _, oh, ow, cs = small.shape
    kh = hh - oh + 1
    kw = ww - ow + 1
    out = np.empty((kh, kw, cb, cs))
    for ky in range(kh):
        for kx in range(kw):
            out[ky, kx] = np.tensordot(
                big[:, ky:ky + oh, kx:kx + ow, :], small,
                axes=([0, 1, 2], [0, 1, 2]))
    return out


def _corr_weights_fft(big, small):
    _, hh, ww, _ = big.shape
    _, oh, ow, _ = small.shape
    kh = hh - oh + 1
    kw = ww - ow + 1
    fb = np.fft.rfft2(big, s=(hh, ww), axes=(1, 2))
    fs = np.fft.rfft2(small, s=(hh, ww), axes=(1, 2))
    fo = np.einsum("nhwb,nhws->hwbs", fb, np.conj(fs))
    out = np.fft.irfft2(fo, s=(hh, ww), axes=(0, 1))
    return np.ascontiguousarray(out[:kh, :kw, :, :])


def corr_weights(big, small):
    """Correlate big:(n,H,W,cb) against small:(n,oh,ow,cs) over (n,oh,ow).

    Returns (H-oh+1, W-ow+1, cb, cs); this is the weight-gradient primitive
    shared by the convolution and transposed-convolution backward passes.
    """
    kh = big.shape[1] - small.shape[1] + 1
    if kh >= FFT_MIN_K:
        return _corr_weights_fft(big, small)
    return _corr_weights_tensordot(big, small)


def raw_fill(state, n):
    """Fill n raw 64-bit draws from the xorshift64* stream.

    Python-integer loop; exact uint64 semantics via masking. Returns the
    array and the advanced state.
    """
    out = np.empty(n, dtype=np.uint64)
    s = state
    for i in range(n):
        s ^= s >> 12
        s = (s ^ (s << 25)) & _MASK64
        s ^= s >> 27
        out[i] = (s * 0x2545F4914F6CDD1D) & _MASK64
    return out, s
