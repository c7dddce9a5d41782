"""Forward and reverse-mode backward passes for every layer kind.

Conventions, fixed once and used everywhere:

* Convolution means cross-correlation (no kernel flip), valid padding,
  unit stride. There is deliberately no stride knob: growing-kernel
  unit-stride upscaling is what keeps checkerboard artifacts out, so
  the restriction is enforced at the type level.
* Transposed convolution is the exact adjoint of that map: each input
  pixel deposits a kernel-sized patch, output side = input side + k - 1.
  It is computed as a valid cross-correlation of the (k-1)-zero-padded
  input with the spatially flipped kernel.
* The periodic shuffle (sub-pixel) layer treats x as column and y as row;
  out[y, x, c] = in[y//r, x//r, C*r*(y%r) + C*(x%r) + c]. Any consistent
  axis choice gives the same architectures up to a transposed shuffle
  pattern; this one is pinned so the tests can assert exact placement.
"""

import os

import numpy as np
from dataclasses import dataclass

from . import backend
from .errors import ParameterError, ShapeError
from .numtensor import Tensor

# Verification hook: set to a non-empty value to skip the kernel flip in
# tconv2d_forward. Exists so `verify` can prove the adjointness check has
# teeth; never set it in real use.
BREAK_TCONV_ENV = "BDSR_TEST_BREAK_TCONV_FLIP"


@dataclass
class ConvParams:
    """Kernel (k,k,c_in,c_out) and per-output-channel bias.

    Used by both conv and tconv layers; stride is 1 and padding 0 (valid)
    by construction.
    """

    kernel: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.kernel = np.ascontiguousarray(self.kernel, dtype=np.float64)
        self.bias = np.ascontiguousarray(self.bias, dtype=np.float64)
        if self.kernel.ndim != 4 or self.kernel.shape[0] != self.kernel.shape[1]:
            raise ShapeError(f"kernel must be (k,k,c_in,c_out), got {self.kernel.shape}")
        if self.bias.shape != (self.kernel.shape[3],):
            raise ShapeError(
                f"bias must have {self.kernel.shape[3]} entries, got {self.bias.shape}")

    @property
    def k(self):
        return self.kernel.shape[0]

    @property
    def c_in(self):
        return self.kernel.shape[2]

    @property
    def c_out(self):
        return self.kernel.shape[3]


@dataclass
class PReluParams:
    """Learnable per-channel negative-side slopes."""

    alpha: np.ndarray

    def __post_init__(self):
        self.alpha = np.ascontiguousarray(self.alpha, dtype=np.float64)
        if self.alpha.ndim != 1:
            raise ShapeError(f"alpha must be a 1-d per-channel array, got {self.alpha.shape}")
        if not np.all(np.isfinite(self.alpha)):
            raise ParameterError("alpha must be finite")

    @classmethod
    def init(cls, channels, value=0.25):
        return cls(np.full(channels, value))


@dataclass
class SubpixelConfig:
    """Periodic-shuffle upscale factor; the layer has no parameters."""

    r: int

    def __post_init__(self):
        if self.r not in (2, 4):
            raise ParameterError(f"shuffle factor must be 2 or 4, got {self.r}")


def _pad_spatial(values, pad):
    return np.pad(values, ((0, 0), (pad, pad), (pad, pad), (0, 0)))


def _check_channels(x, p, op):
    if x.c != p.c_in:
        raise ShapeError(f"{op}: input has {x.c} channels, kernel expects {p.c_in}")


# -- convolution -----------------------------------------------------------

def conv2d_forward(x, p):
    """Valid cross-correlation; output (n, h-k+1, w-k+1, c_out)."""
    _check_channels(x, p, "conv2d")
    if x.h < p.k or x.w < p.k:
        raise ShapeError(f"conv2d: {p.k}x{p.k} kernel larger than {x.h}x{x.w} input")
    out = backend.xcorr_valid(x.values, p.kernel)
    out += p.bias
    return Tensor(out)


def conv2d_backward(x, p, grad_out):
    """Gradients of conv2d_forward w.r.t. input, kernel, and bias."""
    _check_channels(x, p, "conv2d_backward")
    oh, ow = x.h - p.k + 1, x.w - p.k + 1
    if grad_out.dims != (x.n, oh, ow, p.c_out):
        raise ShapeError(
            f"conv2d_backward: grad_out {grad_out.dims} != {(x.n, oh, ow, p.c_out)}")
    g = grad_out.values
    grad_bias = g.sum(axis=(0, 1, 2))
    grad_kernel = backend.corr_weights(x.values, g)
    # d/dx is the adjoint map: full correlation with the flipped,
    # channel-swapped kernel
    wback = np.ascontiguousarray(p.kernel[::-1, ::-1].transpose(0, 1, 3, 2))
    grad_x = backend.xcorr_valid(_pad_spatial(g, p.k - 1), wback)
    return grad_x, grad_kernel, grad_bias


# -- transposed convolution -------------------------------------------------

def tconv2d_forward(x, p):
    """Adjoint of conv2d_forward; output (n, h+k-1, w+k-1, c_out)."""
    _check_channels(x, p, "tconv2d")
    if os.environ.get(BREAK_TCONV_ENV):
        wflip = p.kernel  # verification hook: deliberately wrong
    else:
        wflip = np.ascontiguousarray(p.kernel[::-1, ::-1])
    out = backend.xcorr_valid(_pad_spatial(x.values, p.k - 1), wflip)
    out += p.bias
    return Tensor(out)


def tconv2d_backward(x, p, grad_out):
    """Gradients of tconv2d_forward w.r.t. input, kernel, and bias."""
    _check_channels(x, p, "tconv2d_backward")
    oh, ow = x.h + p.k - 1, x.w + p.k - 1
    if grad_out.dims != (x.n, oh, ow, p.c_out):
        raise ShapeError(
            f"tconv2d_backward: grad_out {grad_out.dims} != {(x.n, oh, ow, p.c_out)}")
    g = grad_out.values
    grad_bias = g.sum(axis=(0, 1, 2))
    # each x pixel saw the unflipped kernel patch of grad_out
    wswap = np.ascontiguousarray(p.kernel.transpose(0, 1, 3, 2))
    grad_x = backend.xcorr_valid(g, wswap)
    grad_kernel = np.ascontiguousarray(backend.corr_weights(g, x.values).transpose(0, 1, 3, 2))
    return grad_x, grad_kernel, grad_bias


# -- periodic shuffle --------------------------------------------------------

def subpixel_out_channels(c_in, r):
    if c_in % (r * r) != 0:
        raise ShapeError(f"subpixel: {c_in} channels not divisible by {r}*{r}")
    return c_in // (r * r)


def subpixel_forward(x, cfg):
    """Rearrange (n,h,w,C*r^2) into (n,h*r,w*r,C); a pure permutation."""
    r = cfg.r
    c = subpixel_out_channels(x.c, r)
    v = x.values.reshape(x.n, x.h, x.w, r, r, c)
    v = v.transpose(0, 1, 3, 2, 4, 5)
    return Tensor(v.reshape(x.n, x.h * r, x.w * r, c))


def subpixel_backward(grad_out, cfg):
    """Exact inverse shuffle of subpixel_forward."""
    r = cfg.r
    n, hr, wr, c = grad_out.dims
    if hr % r or wr % r:
        raise ShapeError(f"subpixel_backward: {hr}x{wr} not divisible by r={r}")
    v = grad_out.values.reshape(n, hr // r, r, wr // r, r, c)
    v = v.transpose(0, 1, 3, 2, 4, 5)
    return Tensor(v.reshape(n, hr // r, wr // r, r * r * c))


# -- activations -------------------------------------------------------------

def relu_forward(x):
    return Tensor(np.maximum(x.values, 0.0))


def relu_backward(x, grad_out):
    if x.dims != grad_out.dims:
        raise ShapeError(f"relu_backward: {x.dims} != {grad_out.dims}")
    # slope 1 at exactly 0, matching the x >= 0 branch of prelu
    return grad_out.values * (x.values >= 0.0)


def prelu_forward(x, p):
    if p.alpha.shape[0] != x.c:
        raise ShapeError(f"prelu: {p.alpha.shape[0]} alphas for {x.c} channels")
    v = x.values
    return Tensor(np.where(v >= 0.0, v, p.alpha * v))


def prelu_backward(x, p, grad_out):
    """Returns (grad_x, grad_alpha); alpha collects grad*input over the
    negative-input positions of its channel."""
    if x.dims != grad_out.dims:
        raise ShapeError(f"prelu_backward: {x.dims} != {grad_out.dims}")
    if p.alpha.shape[0] != x.c:
        raise ShapeError(f"prelu_backward: {p.alpha.shape[0]} alphas for {x.c} channels")
    v = x.values
    neg = v < 0.0
    grad_x = grad_out.values * np.where(neg, p.alpha, 1.0)
    grad_alpha = np.where(neg, grad_out.values * v, 0.0).sum(axis=(0, 1, 2))
    return grad_x, grad_alpha


# -- merge --------------------------------------------------------------------

def merge_add(a, b):
    """Elementwise sum; backward routes the gradient to both inputs."""
    if a.dims != b.dims:
        raise ShapeError(f"merge_add: {a.dims} != {b.dims}")
    return Tensor(a.values + b.values)
