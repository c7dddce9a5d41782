"""Self-check suite behind `bdsr verify`.

Runs the oracle batteries — architecture shape traces, the transposed-
convolution size rule, fast-vs-reference kernel equivalence, adjointness,
shuffle bijection, and gradient spot checks — and prints one PASS/FAIL
line per check. Designed to finish in well under a minute.
"""

import numpy as np

from . import layers, models, reference
from .numtensor import Rng, Tensor

GOLDEN_TRACES = {
    ("ctc", 2): {"input": (16, 16, 1), "conv1": (12, 12, 48), "conv2": (8, 8, 16),
                 "trconv1": (16, 16, 16), "trconv2": (32, 32, 1)},
    ("ctc", 4): {"input": (16, 16, 1), "conv1": (12, 12, 48), "conv2": (8, 8, 16),
                 "trconv1": (16, 16, 16), "trconv2": (32, 32, 8),
                 "trconv3": (64, 64, 1)},
    ("psc", 2): {"input": (16, 16, 1), "conv1": (12, 12, 48), "conv2": (8, 8, 16),
                 "trconv1": (16, 16, 16), "trconv2": (32, 32, 1),
                 "conv3": (16, 16, 1), "add_res": (16, 16, 1),
                 "trconv3": (32, 32, 1), "add_out": (32, 32, 1)},
    ("psc", 4): {"input": (16, 16, 1), "conv1": (12, 12, 48), "conv2": (8, 8, 16),
                 "trconv1": (16, 16, 16), "trconv2": (32, 32, 8),
                 "trconv4": (64, 64, 1), "conv3": (16, 16, 1),
                 "trconv3": (32, 32, 1), "trconv5": (64, 64, 1),
                 "add_out": (64, 64, 1)},
    ("cts", 2): {"input": (16, 16, 1), "conv1": (12, 12, 48), "conv2": (8, 8, 16),
                 "trconv1": (16, 16, 4), "subpixel1": (32, 32, 1)},
    ("cts", 4): {"input": (16, 16, 1), "conv1": (12, 12, 48), "conv2": (8, 8, 16),
                 "trconv1": (16, 16, 48), "conv3": (16, 16, 16),
                 "subpixel1": (64, 64, 1)},
}


def _rand_tensor(rng, shape, sigma=1.0):
    return Tensor(rng.gaussian_fill(int(np.prod(shape)), 0.0, sigma).reshape(shape))


def _rand_conv(rng, k, ci, co):
    kernel = rng.gaussian_fill(k * k * ci * co).reshape(k, k, ci, co)
    return layers.ConvParams(kernel, rng.gaussian_fill(co))


def check_shape_traces():
    """14 golden traces: 12 single-stream variants + 2 multistream."""
    bad = []
    for (arch, r), want in GOLDEN_TRACES.items():
        for act in ("relu", "prelu"):
            trace = dict(models.shape_trace(models.build(arch, r, act)))
            for name, dims in want.items():
                if trace.get(name) != dims:
                    bad.append(f"{arch}-x{r}-{act}:{name}={trace.get(name)}")
    for r in (2, 4):
        trace = models.shape_trace(models.build("multi", r, "relu"))
        if trace[-1][1] != (16 * r, 16 * r, 1):
            bad.append(f"multi-x{r}:{trace[-1]}")
    return not bad, f"{len(bad)} mismatches" if bad else "14/14 traces match"


def check_size_rule(rng):
    """Output side of tconv equals input side + k - 1, exhaustively."""
    for side in range(4, 33):
        for k in (3, 5, 9, 17, 33):
            x = _rand_tensor(rng, (1, side, side, 1))
            p = _rand_conv(rng, k, 1, 1)
            out = layers.tconv2d_forward(x, p)
            if out.dims != (1, side + k - 1, side + k - 1, 1):
                return False, f"side {side} k {k} gave {out.dims}"
    return True, "29x5 size combinations exact"


def check_fast_vs_reference(rng):
    """Fast conv/tconv paths against the loop references, <= 1e-10."""
    worst = 0.0
    cases = [((1, 8, 8, 2), 3, 2), ((2, 10, 10, 3), 5, 2),
             ((1, 12, 12, 2), 9, 1), ((1, 20, 20, 1), 17, 1)]
    for shape, k, co in cases:
        x = _rand_tensor(rng, shape)
        p = _rand_conv(rng, k, shape[3], co)
        gap = np.abs(layers.conv2d_forward(x, p).values
                     - reference.conv2d_forward_ref(x.values, p.kernel, p.bias)).max()
        worst = max(worst, gap)
        gap = np.abs(layers.tconv2d_forward(x, p).values
                     - reference.tconv2d_forward_ref(x.values, p.kernel, p.bias)).max()
        worst = max(worst, gap)
    return worst <= 1e-10, f"max abs gap {worst:.2e}"


def check_adjointness(rng, trials=20):
    """<tconv_W(x), y> == <x, conv_W'(y)> with channel-swapped W."""
    worst = 0.0
    for _ in range(trials):
        ci = 1 + int(rng.randint(3))
        co = 1 + int(rng.randint(3))
        k = int([3, 5, 9][rng.randint(3)])
        side = 4 + int(rng.randint(8))
        x = _rand_tensor(rng, (1, side, side, ci))
        w = rng.gaussian_fill(k * k * ci * co).reshape(k, k, ci, co)
        y = _rand_tensor(rng, (1, side + k - 1, side + k - 1, co))
        lhs = float((layers.tconv2d_forward(x, layers.ConvParams(w, np.zeros(co))).values
                     * y.values).sum())
        wswap = np.ascontiguousarray(w.transpose(0, 1, 3, 2))
        rhs = float((x.values * layers.conv2d_forward(
            y, layers.ConvParams(wswap, np.zeros(ci))).values).sum())
        scale = max(1.0, abs(lhs))
        worst = max(worst, abs(lhs - rhs) / scale)
    return worst <= 1e-10, f"max relative gap {worst:.2e} over {trials} trials"


def check_shuffle(rng):
    """Shuffle against the direct index formula, plus exact inversion."""
    for r in (2, 4):
        x = _rand_tensor(rng, (2, 3, 3, 2 * r * r))
        fwd = layers.subpixel_forward(x, layers.SubpixelConfig(r))
        ref = reference.subpixel_forward_ref(x.values, r)
        if not np.array_equal(fwd.values, ref):
            return False, f"r={r} disagrees with the index formula"
        back = layers.subpixel_backward(fwd, layers.SubpixelConfig(r))
        if not np.array_equal(back.values, x.values):
            return False, f"r={r} round trip not exact"
    return True, "index formula and round trip exact"


def check_gradients(rng, trials=4):
    """Finite-difference spot checks for conv, tconv, prelu, merge, mse."""
    from .trainer import mse_loss
    worst = 0.0
    for _ in range(trials):
        x = _rand_tensor(rng, (1, 6, 6, 2))
        p = _rand_conv(rng, 3, 2, 2)
        gout = _rand_tensor(rng, (1, 4, 4, 2))
        gx, gk, gb = layers.conv2d_backward(x, p, gout)

        def score():
            return float((layers.conv2d_forward(x, p).values * gout.values).sum())
        for got, arr in ((gx, x.values), (gk, p.kernel), (gb, p.bias)):
            fd = reference.finite_difference_grad(score, arr)
            worst = max(worst, reference.relative_gap(got, fd))

        xt = _rand_tensor(rng, (1, 4, 4, 2))
        gout_t = _rand_tensor(rng, (1, 6, 6, 2))
        gx, gk, gb = layers.tconv2d_backward(xt, p, gout_t)

        def score_t():
            return float((layers.tconv2d_forward(xt, p).values * gout_t.values).sum())
        for got, arr in ((gx, xt.values), (gk, p.kernel), (gb, p.bias)):
            fd = reference.finite_difference_grad(score_t, arr)
            worst = max(worst, reference.relative_gap(got, fd))

        pa = layers.PReluParams(rng.gaussian_fill(2, 0.25, 0.1))
        gxa, ga = layers.prelu_backward(x, pa, gout_t2 := _rand_tensor(rng, (1, 6, 6, 2)))

        def score_p():
            return float((layers.prelu_forward(x, pa).values * gout_t2.values).sum())
        worst = max(worst, reference.relative_gap(gxa, reference.finite_difference_grad(score_p, x.values)))
        worst = max(worst, reference.relative_gap(ga, reference.finite_difference_grad(score_p, pa.alpha)))

        pred = _rand_tensor(rng, (2, 5, 5, 1))
        gt = _rand_tensor(rng, (2, 5, 5, 1))
        _, lgrad = mse_loss(pred, gt)

        def score_m():
            return mse_loss(pred, gt)[0]
        fd = reference.finite_difference_grad(score_m, pred.values)
        worst = max(worst, reference.relative_gap(lgrad.values, fd))
    return worst <= 1e-5, f"max relative error {worst:.2e}"


def run_all(seed=0, out=print):
    checks = [
        ("shape-traces", check_shape_traces),
        ("tconv-size-rule", lambda: check_size_rule(Rng(seed + 1))),
        ("fast-vs-reference", lambda: check_fast_vs_reference(Rng(seed + 2))),
        ("tconv-adjointness", lambda: check_adjointness(Rng(seed + 3))),
        ("subpixel-shuffle", lambda: check_shuffle(Rng(seed + 4))),
        ("gradient-checks", lambda: check_gradients(Rng(seed + 5))),
    ]
    all_ok = True
    for name, fn in checks:
        ok, detail = fn()
        all_ok &= ok
        out(f"{name}: {'PASS' if ok else 'FAIL'} ({detail})")
    return all_ok
