"""Training-corpus synthesis for binary document upscaling.

Four kinds of aligned LR-HR pairs are produced, mirroring how low-quality
scans arise in practice:

* decimated — the LR image keeps every r-th pixel of a high-resolution
  rendering in both axes.
* masked    — decimated pairs whose LR patch is further multiplied by a
  random 0/1 mask (thresholded Gaussian), simulating dropped pixels.
* glyph     — isolated single-glyph canvases, rotated variants included,
  degraded by the two procedures above.
* rendered  — the same page layout rasterized independently at two pixel
  densities; the LR side is a genuine low-resolution rendering rather
  than a decimation, standing in for physically rescanned pages.

No scanner optics are modeled (no bleed, blur, or skew). Glyphs come from
a small built-in geometric set; any monochrome bitmaps can be substituted.
"""

import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import (DimensionError, FormatError, InputError, ParameterError)
from .numtensor import Rng, derive_seed

ARCHIVE_MAGIC = b"BDPA"
ARCHIVE_VERSION = 1

PROVENANCE_CODES = {"decimated": 0, "masked": 1, "glyph": 2, "rendered": 3}
PROVENANCE_NAMES = {v: k for k, v in PROVENANCE_CODES.items()}

LR_PATCH = 16

# 15 rotation variants; the spread is our choice, the count is the contract.
DEFAULT_ROTATIONS = tuple(range(-14, 16, 2))


@dataclass
class BinaryImage:
    """2-D ink bitmap; 1 = ink, 0 = background. density is advisory dpi."""

    bits: np.ndarray
    density: int | None = None

    def __post_init__(self):
        self.bits = np.ascontiguousarray(self.bits, dtype=np.uint8)
        if self.bits.ndim != 2 or min(self.bits.shape) < 1:
            raise DimensionError(f"bitmap must be 2-d and non-empty, got {self.bits.shape}")
        if self.bits.max(initial=0) > 1:
            raise ParameterError("bitmap values must be 0 or 1")

    @property
    def h(self):
        return self.bits.shape[0]

    @property
    def w(self):
        return self.bits.shape[1]

    def ink_count(self):
        return int(self.bits.sum())


@dataclass
class MaskParams:
    mu: float = 0.0
    sigma: float = 1.0
    threshold: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.sigma <= 0:
            raise ParameterError(f"sigma must be > 0, got {self.sigma}")


@dataclass
class PatchPairSet:
    """Aligned LR/HR patch pairs with per-pair provenance codes."""

    r: int
    lr: np.ndarray          # (n, 16, 16) uint8
    hr: np.ndarray          # (n, 16r, 16r) uint8
    provenance: np.ndarray  # (n,) uint8

    def __post_init__(self):
        if self.r not in (2, 4):
            raise ParameterError(f"upscale factor must be 2 or 4, got {self.r}")
        n = len(self.lr)
        if len(self.hr) != n or len(self.provenance) != n:
            raise DimensionError("lr, hr, provenance lengths disagree")
        if n and (self.lr.shape[1:] != (LR_PATCH, LR_PATCH)
                  or self.hr.shape[1:] != (LR_PATCH * self.r, LR_PATCH * self.r)):
            raise DimensionError(
                f"patch sides {self.lr.shape[1:]} / {self.hr.shape[1:]} do not fit r={self.r}")

    def __len__(self):
        return len(self.lr)

    @property
    def lr_side(self):
        return LR_PATCH

    @property
    def hr_side(self):
        return LR_PATCH * self.r

    def subset(self, idx):
        return PatchPairSet(self.r, self.lr[idx], self.hr[idx], self.provenance[idx])

    def class_counts(self):
        return {name: int((self.provenance == code).sum())
                for name, code in PROVENANCE_CODES.items()}

    @classmethod
    def empty(cls, r):
        side = LR_PATCH * r
        return cls(r, np.zeros((0, LR_PATCH, LR_PATCH), np.uint8),
                   np.zeros((0, side, side), np.uint8), np.zeros(0, np.uint8))

    @classmethod
    def concat(cls, sets):
        sets = [s for s in sets if len(s)]
        if not sets:
            raise InputError("no pairs to concatenate")
        r = sets[0].r
        if any(s.r != r for s in sets):
            raise DimensionError("cannot mix upscale factors in one set")
        return cls(r, np.concatenate([s.lr for s in sets]),
                   np.concatenate([s.hr for s in sets]),
                   np.concatenate([s.provenance for s in sets]))


# -- degradations -------------------------------------------------------------

def decimate(hr, r):
    """Keep every r-th pixel in both axes: out(x,y) = hr(r*x, r*y)."""
    if r not in (2, 4):
        raise ParameterError(f"decimation step must be 2 or 4, got {r}")
    if hr.h % r or hr.w % r:
        raise DimensionError(f"{hr.h}x{hr.w} image not divisible by {r}")
    density = hr.density // r if hr.density else None
    return BinaryImage(hr.bits[::r, ::r].copy(), density)


def random_mask(dims, p):
    """0/1 mask: 1 where a Gaussian draw meets the threshold."""
    h, w = dims
    rng = Rng(p.seed)
    draws = rng.gaussian_fill(h * w, p.mu, p.sigma)
    return BinaryImage((draws >= p.threshold).astype(np.uint8).reshape(h, w))


def apply_mask(lr, mask):
    """Elementwise product on {0,1}; knocks masked pixels out of lr."""
    if lr.bits.shape != mask.bits.shape:
        raise DimensionError(f"mask {mask.bits.shape} does not fit image {lr.bits.shape}")
    return BinaryImage(lr.bits & mask.bits, lr.density)


# -- glyph rendering -----------------------------------------------------------

_T = 0.11  # half stroke width in glyph-box units


def _glyph_predicates():
    t = _T
    d = t * math.sqrt(2.0)

    def vbar(u, v):
        return (np.abs(u - 0.5) < t) & (v > 0.1) & (v < 0.9)

    def hbar(u, v):
        return (np.abs(v - 0.5) < t) & (u > 0.1) & (u < 0.9)

    def cross(u, v):
        return vbar(u, v) | hbar(u, v)

    def ell(u, v):
        stem = (np.abs(u - 0.25) < t) & (v > 0.1) & (v < 0.85 + t)
        foot = (np.abs(v - 0.85) < t) & (u > 0.25 - t) & (u < 0.8)
        return stem | foot

    def tee(u, v):
        top = (np.abs(v - 0.15) < t) & (u > 0.1) & (u < 0.9)
        stem = (np.abs(u - 0.5) < t) & (v > 0.15) & (v < 0.9)
        return top | stem

    def box(u, v):
        m = np.maximum(np.abs(u - 0.5), np.abs(v - 0.5))
        return (m < 0.38) & (m > 0.38 - 2 * t)

    def disk(u, v):
        return (u - 0.5) ** 2 + (v - 0.5) ** 2 < 0.3 ** 2

    def ring(u, v):
        rr = np.sqrt((u - 0.5) ** 2 + (v - 0.5) ** 2)
        return (rr < 0.38) & (rr > 0.38 - 2 * t)

    def diag(u, v):
        return (np.abs(u - v) < d) & (u > 0.08) & (u < 0.92) & (v > 0.08) & (v < 0.92)

    def diag2(u, v):
        return (np.abs(u + v - 1.0) < d) & (u > 0.08) & (u < 0.92) & (v > 0.08) & (v < 0.92)

    def vee(u, v):
        arm = np.abs((0.9 - v) * 0.5 - np.abs(u - 0.5))
        return (arm < d) & (v > 0.1) & (v < 0.9)

    def bars2(u, v):
        return ((np.abs(v - 0.33) < t) | (np.abs(v - 0.67) < t)) & (u > 0.12) & (u < 0.88)

    return [vbar, hbar, cross, ell, tee, box, disk, ring, diag, diag2, vee, bars2]


GLYPH_PREDICATES = _glyph_predicates()
GLYPH_COUNT = len(GLYPH_PREDICATES)


def rasterize_glyph(glyph_id, size):
    """Rasterize a built-in glyph at the given pixel size by sampling the
    predicate at pixel centers; scale-consistent by construction."""
    if not 0 <= glyph_id < GLYPH_COUNT:
        raise ParameterError(f"glyph id must be in [0, {GLYPH_COUNT}), got {glyph_id}")
    idx = (np.arange(size) + 0.5) / size
    u, v = np.meshgrid(idx, idx)  # u = column, v = row
    return BinaryImage(GLYPH_PREDICATES[glyph_id](u, v).astype(np.uint8))


def rotate_nn(bits, degrees):
    """Nearest-neighbor rotation about the bitmap center; out-of-frame
    pixels become background."""
    h, w = bits.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    rad = math.radians(degrees)
    c, s = math.cos(rad), math.sin(rad)
    yy, xx = np.indices((h, w))
    dy, dx = yy - cy, xx - cx
    sy = np.rint(cy + c * dy - s * dx).astype(np.int64)
    sx = np.rint(cx + s * dy + c * dx).astype(np.int64)
    ok = (sy >= 0) & (sy < h) & (sx >= 0) & (sx < w)
    out = np.zeros_like(bits)
    out[ok] = bits[sy[ok], sx[ok]]
    return out


def render_glyph_set(glyphs, rotations=DEFAULT_ROTATIONS):
    """Rotated variants of each glyph bitmap, re-binarized at 0.5 (a no-op
    for 0/1 sources under nearest-neighbor sampling)."""
    if not glyphs:
        raise InputError("empty glyph set")
    out = []
    for g in glyphs:
        bits = g.bits if isinstance(g, BinaryImage) else np.asarray(g, dtype=np.uint8)
        for angle in rotations:
            rotated = rotate_nn(bits, angle)
            out.append(BinaryImage((rotated >= 0.5).astype(np.uint8)))
    return out


# -- page rendering -------------------------------------------------------------

def _page_geometry(n_glyphs, scale, cols, gap):
    if gap is None:
        gap = max(2, scale // 3)
    if cols is None:
        cols = max(1, math.ceil(math.sqrt(n_glyphs))) if n_glyphs else 1
    rows = math.ceil(n_glyphs / cols) if n_glyphs else 1
    h = gap + rows * (scale + gap)
    w = gap + cols * (scale + gap)
    return gap, cols, rows, h, w


def render_page(text, scale, cols=None, density=None, gap=None):
    """Rasterize a glyph-id sequence as a page at the given glyph size."""
    gap, cols, _, h, w = _page_geometry(len(text), scale, cols, gap)
    page = np.zeros((h, w), np.uint8)
    for i, gid in enumerate(text):
        row, col = divmod(i, cols)
        y = gap + row * (scale + gap)
        x = gap + col * (scale + gap)
        page[y:y + scale, x:x + scale] = rasterize_glyph(gid, scale).bits
    return BinaryImage(page, density)


def pad_to_multiple(img, r):
    """Background-pad on the bottom/right so both sides divide by r."""
    h = r * math.ceil(img.h / r)
    w = r * math.ceil(img.w / r)
    if (h, w) == (img.h, img.w):
        return img
    out = np.zeros((h, w), np.uint8)
    out[:img.h, :img.w] = img.bits
    return BinaryImage(out, img.density)


def render_page_pair(text, base_scale, r=2, cols=None):
    """The same layout rasterized at two pixel densities: LR at base_scale,
    HR at r*base_scale. Substitutes for physically rescanning a page; no
    scanner noise model is applied. The HR gap is scaled from the LR gap so
    the HR page comes out exactly r times the LR page."""
    if base_scale < 8:
        raise InputError(f"glyph height must be >= 8 px, got {base_scale}")
    gap = max(2, base_scale // 3)
    lr = render_page(text, base_scale, cols, density=75, gap=gap)
    hr = render_page(text, base_scale * r, cols, density=75 * r, gap=gap * r)
    return lr, hr


# -- patch extraction ------------------------------------------------------------

def extract_patch_pairs(lr, hr, r, provenance="decimated", origin_stride=1):
    """All aligned 16 / 16r windows: LR origins on a unit-stride grid map
    to HR origins at r times the coordinates."""
    if hr.h != r * lr.h or hr.w != r * lr.w:
        raise DimensionError(
            f"hr {hr.h}x{hr.w} is not {r}x the lr {lr.h}x{lr.w}")
    code = PROVENANCE_CODES[provenance]
    side = LR_PATCH
    hside = side * r
    ys = range(0, lr.h - side + 1, origin_stride)
    xs = range(0, lr.w - side + 1, origin_stride)
    lrs, hrs = [], []
    for y in ys:
        for x in xs:
            lrs.append(lr.bits[y:y + side, x:x + side])
            hrs.append(hr.bits[r * y:r * y + hside, r * x:r * x + hside])
    if not lrs:
        return PatchPairSet.empty(r)
    return PatchPairSet(r, np.stack(lrs), np.stack(hrs),
                        np.full(len(lrs), code, np.uint8))


# -- archive format ---------------------------------------------------------------

_HEADER = struct.Struct("<4sHBBIHH")  # magic, version, r, reserved, count, lr, hr


def write_archive(pairs, path):
    with open(path, "wb") as fh:
        fh.write(archive_bytes(pairs))


def archive_bytes(pairs):
    out = [_HEADER.pack(ARCHIVE_MAGIC, ARCHIVE_VERSION, pairs.r, 0,
                        len(pairs), pairs.lr_side, pairs.hr_side)]
    for i in range(len(pairs)):
        out.append(bytes([pairs.provenance[i]]))
        out.append(pairs.lr[i].tobytes())
        out.append(pairs.hr[i].tobytes())
    return b"".join(out)


def read_archive(path):
    with open(path, "rb") as fh:
        data = fh.read()
    return parse_archive(data)


def parse_archive(data):
    if len(data) < _HEADER.size:
        raise FormatError("archive shorter than its header")
    magic, version, r, _, count, lr_side, hr_side = _HEADER.unpack_from(data)
    if magic != ARCHIVE_MAGIC:
        raise FormatError(f"bad archive magic {magic!r}")
    if version != ARCHIVE_VERSION:
        raise FormatError(f"unsupported archive version {version}")
    if r not in (2, 4) or lr_side != LR_PATCH or hr_side != LR_PATCH * r:
        raise FormatError(f"archive geometry r={r} lr={lr_side} hr={hr_side} is invalid")
    pair_bytes = 1 + lr_side * lr_side + hr_side * hr_side
    expected = _HEADER.size + count * pair_bytes
    if len(data) != expected:
        raise FormatError(f"archive is {len(data)} bytes, expected {expected}")
    lrs = np.empty((count, lr_side, lr_side), np.uint8)
    hrs = np.empty((count, hr_side, hr_side), np.uint8)
    prov = np.empty(count, np.uint8)
    off = _HEADER.size
    for i in range(count):
        prov[i] = data[off]
        off += 1
        lrs[i] = np.frombuffer(data, np.uint8, lr_side * lr_side, off).reshape(lr_side, lr_side)
        off += lr_side * lr_side
        hrs[i] = np.frombuffer(data, np.uint8, hr_side * hr_side, off).reshape(hr_side, hr_side)
        off += hr_side * hr_side
    if prov.max(initial=0) > 3 or lrs.max(initial=0) > 1 or hrs.max(initial=0) > 1:
        raise FormatError("archive contains out-of-range pixel or provenance bytes")
    return PatchPairSet(r, lrs, hrs, prov)


# -- corpus assembly ----------------------------------------------------------------

def _mask_lr_patches(pairs, page_seed, mu, sigma_range, threshold):
    """Fresh-seeded mask per LR patch; sigma drawn once per page."""
    rng = Rng(derive_seed(page_seed, 0))
    sigma = sigma_range[0] + (sigma_range[1] - sigma_range[0]) * rng.uniform()
    lr = pairs.lr.copy()
    for i in range(len(pairs)):
        p = MaskParams(mu, sigma, threshold, seed=derive_seed(page_seed, i + 1))
        mask = random_mask((LR_PATCH, LR_PATCH), p)
        lr[i] &= mask.bits
    return PatchPairSet(pairs.r, lr, pairs.hr,
                        np.full(len(pairs), PROVENANCE_CODES["masked"], np.uint8))


def make_corpus(r=2, seed=0, pages=4, glyph_scale=8, chars_per_page=36,
                patch_stride=4, classes=("decimated", "masked", "glyph", "rendered"),
                mask_threshold=-1.0, sigma_range=(0.8, 1.2), rotations=DEFAULT_ROTATIONS):
    """Build a full training corpus; deterministic in (seed, settings).

    mask_threshold -1.0 keeps ~84% of pixels per mask, harsh enough to
    teach reconnection without erasing whole strokes.
    """
    for name in classes:
        if name not in PROVENANCE_CODES:
            raise ParameterError(f"unknown corpus class {name!r}")
    parts = []
    for page in range(pages):
        page_seed = derive_seed(seed, page)
        rng = Rng(page_seed)
        text = [int(rng.randint(GLYPH_COUNT)) for _ in range(chars_per_page)]
        hr = pad_to_multiple(render_page(text, r * glyph_scale, density=75 * r), r)
        lr = decimate(hr, r)
        base = extract_patch_pairs(lr, hr, r, "decimated", origin_stride=patch_stride)
        if "decimated" in classes:
            parts.append(base)
        if "masked" in classes:
            parts.append(_mask_lr_patches(base, page_seed, 0.0, sigma_range, mask_threshold))
        if "rendered" in classes:
            plr, phr = render_page_pair(text, glyph_scale, r)
            parts.append(extract_patch_pairs(plr, phr, r, "rendered",
                                             origin_stride=patch_stride))
    if "glyph" in classes:
        parts.append(_glyph_class(r, seed, glyph_scale, rotations,
                                  mask_threshold, sigma_range))
    out = PatchPairSet.concat(parts)
    if not len(out):
        raise InputError("corpus came out empty; widen the settings")
    return out


def _glyph_class(r, seed, glyph_scale, rotations, mask_threshold, sigma_range):
    """Single-glyph canvases: each rotated HR glyph centered on a 16r
    canvas, decimated, plus a masked variant of each."""
    canvas = LR_PATCH * r
    gsize = glyph_scale * r
    hr_glyphs = [rasterize_glyph(i, gsize) for i in range(GLYPH_COUNT)]
    variants = render_glyph_set(hr_glyphs, rotations)
    lrs, hrs = [], []
    margin = (canvas - gsize) // 2
    for img in variants:
        page = np.zeros((canvas, canvas), np.uint8)
        page[margin:margin + gsize, margin:margin + gsize] = img.bits
        hr = BinaryImage(page, density=75 * r)
        lr = decimate(hr, r)
        lrs.append(lr.bits)
        hrs.append(hr.bits)
    n = len(lrs)
    plain = PatchPairSet(r, np.stack(lrs), np.stack(hrs),
                         np.full(n, PROVENANCE_CODES["glyph"], np.uint8))
    masked = _mask_lr_patches(plain, derive_seed(seed, 1 << 20), 0.0,
                              sigma_range, mask_threshold)
    masked.provenance[:] = PROVENANCE_CODES["glyph"]
    return PatchPairSet.concat([plain, masked])
