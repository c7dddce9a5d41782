"""Dense rank-4 tensors, seeded randomness, and the Adam update rule.

Everything is 64-bit: the gradient checks in the test suite assert 1e-5
relative agreement with finite differences, which 32-bit arithmetic cannot
reliably deliver.

The random stream is xorshift64* seeded through one splitmix64 mixing step
(constants below). Gaussian variates come from Box-Muller applied to the
raw stream; the uint64 generation is backend-accelerated while the float
transform is shared numpy code, so all backends emit bit-identical draws.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import backend
from .errors import ParameterError, ShapeError, SizeError

_MASK64 = (1 << 64) - 1
_SPLITMIX_GAMMA = 0x9E3779B97F4A7C15
_TWO_PI = 2.0 * math.pi

# Guard against absurd allocations from corrupt inputs (2^32 elements).
MAX_ELEMENTS = 1 << 32


def _splitmix64(z):
    """One output of the splitmix64 generator for state z."""
    z = (z + _SPLITMIX_GAMMA) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(seed, index):
    """Deterministic child seed for stream index >= 0.

    This is the documented seed-derivation rule: parallel or per-item
    generators must split seeds this way instead of sharing one stream.
    """
    return _splitmix64((seed + (index + 1) * _SPLITMIX_GAMMA) & _MASK64)


@dataclass
class Tensor:
    """Dense (batch, rows, cols, channels) array with an optional gradient
    plane of the same shape."""

    values: np.ndarray
    grad: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.values.ndim != 4:
            raise ShapeError(f"tensor must be rank 4, got {self.values.ndim}")
        if min(self.values.shape) < 1:
            raise SizeError(f"all dims must be >= 1, got {self.values.shape}")
        if self.grad is not None:
            self.grad = np.ascontiguousarray(self.grad, dtype=np.float64)
            if self.grad.shape != self.values.shape:
                raise ShapeError(
                    f"grad shape {self.grad.shape} != values shape {self.values.shape}")

    @property
    def dims(self):
        return self.values.shape

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def h(self):
        return self.values.shape[1]

    @property
    def w(self):
        return self.values.shape[2]

    @property
    def c(self):
        return self.values.shape[3]


def tensor_new(dims, fill=0.0):
    """Allocate an (n,h,w,c) tensor, every value set to fill, no grad."""
    if len(dims) != 4:
        raise ShapeError(f"dims must have 4 entries, got {dims}")
    n, h, w, c = (int(d) for d in dims)
    if min(n, h, w, c) < 1:
        raise SizeError(f"all dims must be >= 1, got {dims}")
    if n * h * w * c > MAX_ELEMENTS:
        raise SizeError(f"tensor of {dims} exceeds the element limit")
    return Tensor(np.full((n, h, w, c), float(fill)))


class Rng:
    """Deterministic xorshift64* stream with Box-Muller Gaussian draws.

    Same seed gives a bit-identical sequence on every platform. One Rng is
    single-owner; use derive_seed() to split streams for parallel work.
    """

    __slots__ = ("state", "_spare")

    def __init__(self, seed):
        state = _splitmix64(seed & _MASK64)
        # xorshift64* needs a nonzero state
        self.state = state if state != 0 else _SPLITMIX_GAMMA
        self._spare = None

    # -- raw stream ------------------------------------------------------

    def next_u64(self):
        s = self.state
        s ^= s >> 12
        s = (s ^ (s << 25)) & _MASK64
        s ^= s >> 27
        self.state = s
        return (s * 0x2545F4914F6CDD1D) & _MASK64

    def _raw_fill(self, n):
        out, self.state = backend.raw_fill(self.state, n)
        return out

    # -- uniforms --------------------------------------------------------

    def uniform(self):
        """One double in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * 2.0 ** -53

    def uniform_fill(self, n):
        raw = self._raw_fill(n)
        return (raw >> np.uint64(11)).astype(np.float64) * 2.0 ** -53

    def randint(self, n):
        """Integer in [0, n) via modulo (bias < 2^-50 for our n)."""
        return self.next_u64() % n

    def shuffle(self, n):
        """Fisher-Yates permutation of range(n), consuming n-1 draws."""
        perm = np.arange(n, dtype=np.int64)
        for i in range(n - 1, 0, -1):
            j = self.next_u64() % (i + 1)
            perm[i], perm[j] = perm[j], perm[i]
        return perm

    # -- gaussians -------------------------------------------------------

    def gaussian_fill(self, n, mu=0.0, sigma=1.0):
        """n Gaussian variates; draws mu + sigma * z over the standard
        normal stream z, so affine-transformed streams match exactly."""
        if sigma <= 0:
            raise ParameterError(f"sigma must be > 0, got {sigma}")
        if n == 0:
            return np.empty(0)
        z = np.empty(n)
        have = 0
        if self._spare is not None:
            z[0] = self._spare
            self._spare = None
            have = 1
        need = n - have
        if need > 0:
            pairs = (need + 1) // 2
            raw = self._raw_fill(2 * pairs)
            # u1 in (0,1] keeps the log finite; u2 in [0,1)
            u1 = ((raw[0::2] >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0 ** -53
            u2 = (raw[1::2] >> np.uint64(11)).astype(np.float64) * 2.0 ** -53
            r = np.sqrt(-2.0 * np.log(u1))
            ang = _TWO_PI * u2
            z0 = r * np.cos(ang)
            z1 = r * np.sin(ang)
            if 2 * pairs > need:
                self._spare = float(z1[-1])
            inter = np.empty(2 * pairs)
            inter[0::2] = z0
            inter[1::2] = z1
            z[have:] = inter[:need]
        return mu + sigma * z

    def gaussian(self, mu=0.0, sigma=1.0):
        return float(self.gaussian_fill(1, mu, sigma)[0])

    # -- checkpointing ---------------------------------------------------

    def get_state(self):
        return self.state, self._spare

    def set_state(self, state):
        self.state, self._spare = state


def gaussian_pdf(x, mu=0.0, sigma=1.0):
    """Density of the sampling distribution; exposed for self-tests."""
    if sigma <= 0:
        raise ParameterError(f"sigma must be > 0, got {sigma}")
    return math.exp(-((x - mu) ** 2) / (2.0 * sigma * sigma)) / (sigma * math.sqrt(_TWO_PI))


# -- Adam -----------------------------------------------------------------

@dataclass
class AdamState:
    """Per-parameter Adam moment estimates and hyperparameters."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_param(cls, param, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        return cls(m=np.zeros_like(param), v=np.zeros_like(param),
                   lr=lr, beta1=beta1, beta2=beta2, eps=eps)


def adam_step_arrays(param, grad, state):
    """Bias-corrected Adam update applied to param in place."""
    if param.shape != grad.shape or param.shape != state.m.shape:
        raise ShapeError(
            f"param {param.shape}, grad {grad.shape}, moments {state.m.shape} disagree")
    state.t += 1
    state.m *= state.beta1
    state.m += (1.0 - state.beta1) * grad
    state.v *= state.beta2
    state.v += (1.0 - state.beta2) * grad * grad
    mhat = state.m / (1.0 - state.beta1 ** state.t)
    vhat = state.v / (1.0 - state.beta2 ** state.t)
    param -= state.lr * mhat / (np.sqrt(vhat) + state.eps)


def adam_step(params, grads, state):
    """Tensor-level wrapper around adam_step_arrays."""
    if params.dims != grads.dims:
        raise ShapeError(f"params {params.dims} != grads {grads.dims}")
    adam_step_arrays(params.values, grads.values, state)
    return params, state
