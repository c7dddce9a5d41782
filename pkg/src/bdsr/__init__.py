"""Super-resolution toolkit for low-resolution binary document images.

Upscales 1-bit document pages by 2x or 4x with small convolutional
networks trained on synthesized LR/HR patch pairs, entirely on numpy
(numba-accelerated kernels optional, see bdsr.backend).
"""

from .datasynth import (BinaryImage, MaskParams, PatchPairSet, apply_mask,
                        decimate, extract_patch_pairs, make_corpus,
                        random_mask, read_archive, render_glyph_set,
                        render_page_pair, write_archive)
from .layers import ConvParams, PReluParams, SubpixelConfig
from .models import (ModelGraph, build, build_ctc, build_cts,
                     build_multistream, build_psc, forward, backward,
                     load_model, save_model, shape_trace)
from .numtensor import AdamState, Rng, Tensor, adam_step, derive_seed, tensor_new
from .srpipeline import (GammaConfig, GrayImage, TileConfig, binarize,
                         gamma_sweep, pixel_fscore, power_law, psnr,
                         upscale_page)
from .trainer import TrainConfig, TrainState, evaluate_loss, mse_loss, train

__version__ = "0.1.0"
