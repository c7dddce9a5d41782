"""Full-page upscaling: tile, run the model, stitch, post-process, score.

The architectures upscale by exactly r only at their native 16x16 input,
so pages are processed as overlapping 16x16 tiles whose 16r outputs are
averaged back together (uniform weights, background padding at the rim,
crop at the end). Overlap averaging satisfies partition of unity: a model
emitting a constant produces exactly that constant everywhere.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import models
from .datasynth import BinaryImage
from .errors import InputError, ParameterError, ShapeError
from .numtensor import Tensor

GAMMA_GRID = tuple(round(0.1 * k, 1) for k in range(1, 11))


@dataclass
class GrayImage:
    """Ink-high intensities in [0, 1]."""

    vals: np.ndarray

    def __post_init__(self):
        self.vals = np.ascontiguousarray(self.vals, dtype=np.float64)
        if self.vals.ndim != 2 or min(self.vals.shape) < 1:
            raise InputError(f"gray image must be 2-d, got {self.vals.shape}")
        if not np.all(np.isfinite(self.vals)):
            raise ParameterError("gray image contains non-finite values")

    @property
    def h(self):
        return self.vals.shape[0]

    @property
    def w(self):
        return self.vals.shape[1]


@dataclass
class TileConfig:
    r: int
    stride: int = 8
    lr_tile: int = 16

    def __post_init__(self):
        if self.lr_tile != 16:
            raise ParameterError("the models only accept 16x16 tiles")
        if not 1 <= self.stride <= self.lr_tile:
            raise ParameterError(f"stride must be in [1, 16], got {self.stride}")


@dataclass
class GammaConfig:
    gamma: float = 1.0
    c: float = 1.0
    binarize_threshold: float = 0.5

    def __post_init__(self):
        if self.gamma <= 0:
            raise ParameterError(f"gamma must be > 0, got {self.gamma}")
        if not 0 < self.binarize_threshold < 1:
            raise ParameterError(
                f"binarize threshold must be in (0,1), got {self.binarize_threshold}")


def _padded_side(side, tile, stride):
    if side <= tile:
        return tile
    return tile + stride * math.ceil((side - tile) / stride)


def upscale_page(page, graph, tc, chunk=64):
    """Tiled inference over a full page; returns the stitched gray output
    cropped back to r times the page size."""
    if graph.r != tc.r:
        raise ShapeError(f"model is x{graph.r} but tiling asks x{tc.r}")
    t, r = tc.lr_tile, tc.r
    ph = _padded_side(page.h, t, tc.stride)
    pw = _padded_side(page.w, t, tc.stride)
    if ph < t or pw < t:
        raise InputError(f"page still smaller than {t}x{t} after padding")
    padded = np.zeros((ph, pw), np.float64)
    padded[:page.h, :page.w] = page.bits
    origins = [(y, x)
               for y in range(0, ph - t + 1, tc.stride)
               for x in range(0, pw - t + 1, tc.stride)]
    acc = np.zeros((ph * r, pw * r))
    cnt = np.zeros((ph * r, pw * r))
    for lo in range(0, len(origins), chunk):
        batch = origins[lo:lo + chunk]
        tiles = np.stack([padded[y:y + t, x:x + t] for y, x in batch])[..., None]
        out = models.forward(graph, Tensor(tiles)).values[..., 0]
        for (y, x), tile in zip(batch, out):
            acc[y * r:(y + t) * r, x * r:(x + t) * r] += tile
            cnt[y * r:(y + t) * r, x * r:(x + t) * r] += 1.0
    stitched = acc / cnt
    cropped = stitched[:page.h * r, :page.w * r]
    return GrayImage(np.clip(cropped, 0.0, 1.0))


def power_law(img, gc):
    """Pointwise c * v^gamma; gamma < 1 lifts midtones, thickening and
    reconnecting strokes ahead of binarization."""
    if gc.gamma == 1.0 and gc.c == 1.0:
        return GrayImage(img.vals.copy())
    return GrayImage(gc.c * np.power(img.vals, gc.gamma))


def binarize(img, threshold=0.5):
    """Ink wherever intensity meets the threshold."""
    if not 0 < threshold < 1:
        raise ParameterError(f"threshold must be in (0,1), got {threshold}")
    return BinaryImage((img.vals >= threshold).astype(np.uint8))


def nearest_neighbor_upscale(page, r):
    """Pixel-replication baseline used for comparisons."""
    return BinaryImage(np.repeat(np.repeat(page.bits, r, axis=0), r, axis=1),
                       page.density * r if page.density else None)


def psnr(a, b):
    """Peak-signal-to-noise ratio in dB on [0,1] images; inf when equal."""
    if a.vals.shape != b.vals.shape:
        raise ShapeError(f"psnr: {a.vals.shape} != {b.vals.shape}")
    mse = float(np.mean((a.vals - b.vals) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * math.log10(1.0 / mse)


def pixel_fscore(pred, gt):
    """Harmonic mean of ink precision and recall; 1.0 for identical
    images, including the blank-on-blank case."""
    if pred.bits.shape != gt.bits.shape:
        raise ShapeError(f"fscore: {pred.bits.shape} != {gt.bits.shape}")
    tp = int((pred.bits & gt.bits).sum())
    p_ink = pred.ink_count()
    g_ink = gt.ink_count()
    if p_ink == 0 and g_ink == 0:
        return 1.0
    if tp == 0:
        return 0.0
    precision = tp / p_ink
    recall = tp / g_ink
    return 2.0 * precision * recall / (precision + recall)


def gamma_sweep(gray, gt=None, threshold=0.5, gammas=GAMMA_GRID):
    """Binarize the page at every gamma on the grid.

    Returns [(gamma, ink_count, fscore-or-None), ...]; the caller picks the
    argmax when a ground truth was supplied.
    """
    rows = []
    for g in gammas:
        binar = binarize(power_law(gray, GammaConfig(gamma=g)), threshold)
        score = pixel_fscore(binar, gt) if gt is not None else None
        rows.append((g, binar.ink_count(), score))
    return rows


def best_gamma(sweep_rows):
    scored = [(s, g) for g, _, s in sweep_rows if s is not None]
    if not scored:
        raise InputError("gamma sweep has no scores; supply a ground truth")
    return max(scored)[1]
