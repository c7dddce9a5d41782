"""The upscaler architectures as explicit layer graphs.

Three families, each built for x2 and x4 with ReLU or PReLU activations:

* ctc — two feature convolutions, then growing-kernel transposed
  convolutions carry all the upscaling.
* psc — ctc trunk plus a parallel residual stream: a 1x1 projection of the
  first upscaled feature map is added back onto the input, upscaled
  separately, and the two stream outputs are summed.
* cts — ctc trunk but the final upscaling is a parameter-free periodic
  shuffle of r^2 feature channels.

`multi` runs all three and sums their outputs.

Activation follows every parameterized layer except the last one of each
stream (the output stays unconstrained for squared-error training), and
never follows a merge. The residual 1x1 projection is a pure projection
with no activation.
"""

import io
import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, ParameterError, ShapeError
from .layers import (ConvParams, PReluParams, SubpixelConfig, conv2d_backward,
                     conv2d_forward, merge_add, prelu_backward, prelu_forward,
                     relu_backward, relu_forward, subpixel_backward,
                     subpixel_forward, subpixel_out_channels, tconv2d_backward,
                     tconv2d_forward)
from .numtensor import Rng, Tensor, derive_seed

KINDS = ("conv", "tconv", "subpixel", "relu", "prelu", "add")
_KIND_CODE = {k: i + 1 for i, k in enumerate(KINDS)}
_CODE_KIND = {v: k for k, v in _KIND_CODE.items()}
_ARCH_CODE = {"ctc": 1, "psc": 2, "cts": 3, "multi": 4}
_CODE_ARCH = {v: k for k, v in _ARCH_CODE.items()}
_ACT_CODE = {"relu": 1, "prelu": 2}
_CODE_ACT = {v: k for k, v in _ACT_CODE.items()}

MAGIC = b"BDSR"
VERSION = 1

# He-style fan-in scaling suits the ReLU family; the paper's source is
# silent on initialization.
INIT_ALPHA = 0.25


@dataclass
class LayerSpec:
    """One node of the graph. inputs holds producer node indices, -1 being
    the graph input; add nodes have two inputs, everything else one."""

    kind: str
    inputs: tuple
    name: str
    k: int = 0
    c_out: int = 0
    r: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"unknown layer kind {self.kind!r}")
        want = 2 if self.kind == "add" else 1
        if len(self.inputs) != want:
            raise ShapeError(f"{self.name}: {self.kind} takes {want} inputs")


@dataclass
class ModelGraph:
    """Topologically ordered nodes, their parameters, and identity."""

    nodes: list
    params: dict
    arch: str
    r: int
    act: str

    def param_nodes(self):
        return sorted(self.params)

    def param_count(self):
        total = 0
        for i in self.param_nodes():
            p = self.params[i]
            if isinstance(p, ConvParams):
                total += p.kernel.size + p.bias.size
            else:
                total += p.alpha.size
        return total


class _Builder:
    def __init__(self, act):
        self.nodes = []
        self.act = act

    def add(self, spec):
        self.nodes.append(spec)
        return len(self.nodes) - 1

    def conv(self, name, src, k, c_out, kind="conv"):
        return self.add(LayerSpec(kind, (src,), name, k=k, c_out=c_out))

    def tconv(self, name, src, k, c_out):
        return self.conv(name, src, k, c_out, kind="tconv")

    def activation(self, name, src):
        kind = "relu" if self.act == "relu" else "prelu"
        return self.add(LayerSpec(kind, (src,), name))

    def subpixel(self, name, src, r):
        return self.add(LayerSpec("subpixel", (src,), name, r=r))

    def merge(self, name, a, b):
        return self.add(LayerSpec("add", (a, b), name))


def _check_r(r):
    if r not in (2, 4):
        raise ParameterError(f"upscale factor must be 2 or 4, got {r}")


def _check_act(act):
    if act not in ("relu", "prelu"):
        raise ParameterError(f"activation must be relu or prelu, got {act!r}")


def _ctc_nodes(b, prefix=""):
    p = prefix
    n = b.conv(p + "conv1", -1, 5, 48)
    n = b.activation(p + "act1", n)
    n = b.conv(p + "conv2", n, 5, 16)
    n = b.activation(p + "act2", n)
    n = b.tconv(p + "trconv1", n, 9, 16)
    n = b.activation(p + "act3", n)
    return n  # trconv1 activation output


def _build_ctc_into(b, r, prefix=""):
    p = prefix
    n = _ctc_nodes(b, prefix)
    if r == 2:
        return b.tconv(p + "trconv2", n, 17, 1)
    n = b.tconv(p + "trconv2", n, 17, 8)
    n = b.activation(p + "act4", n)
    return b.tconv(p + "trconv3", n, 33, 1)


def _build_psc_into(b, r, prefix=""):
    p = prefix
    t1 = _ctc_nodes(b, prefix)
    # stream A: keep upscaling the feature stack
    if r == 2:
        out_a = b.tconv(p + "trconv2", t1, 17, 1)
    else:
        a = b.tconv(p + "trconv2", t1, 17, 8)
        a = b.activation(p + "act4", a)
        out_a = b.tconv(p + "trconv4", a, 33, 1)
    # stream B: 1x1 projection added back onto the input, then upscaled
    proj = b.conv(p + "conv3", t1, 1, 1)
    res = b.merge(p + "add_res", proj, -1)
    if r == 2:
        out_b = b.tconv(p + "trconv3", res, 17, 1)
    else:
        bb = b.tconv(p + "trconv3", res, 17, 1)
        bb = b.activation(p + "act5", bb)
        out_b = b.tconv(p + "trconv5", bb, 33, 1)
    return b.merge(p + "add_out", out_a, out_b)


def _build_cts_into(b, r, prefix=""):
    p = prefix
    n = b.conv(p + "conv1", -1, 5, 48)
    n = b.activation(p + "act1", n)
    n = b.conv(p + "conv2", n, 5, 16)
    n = b.activation(p + "act2", n)
    if r == 2:
        n = b.tconv(p + "trconv1", n, 9, 4)
    else:
        n = b.tconv(p + "trconv1", n, 9, 48)
        n = b.activation(p + "act3", n)
        n = b.conv(p + "conv3", n, 1, 16)
    return b.subpixel(p + "subpixel1", n, r)


def _finish(b, arch, r, act, seed):
    g = ModelGraph(nodes=b.nodes, params={}, arch=arch, r=r, act=act)
    init_params(g, seed)
    shape_trace(g)  # fail fast if the topology is inconsistent
    return g


def build_ctc(r, act="relu", seed=0):
    _check_r(r)
    _check_act(act)
    b = _Builder(act)
    _build_ctc_into(b, r)
    return _finish(b, "ctc", r, act, seed)


def build_psc(r, act="relu", seed=0):
    _check_r(r)
    _check_act(act)
    b = _Builder(act)
    _build_psc_into(b, r)
    return _finish(b, "psc", r, act, seed)


def build_cts(r, act="relu", seed=0):
    _check_r(r)
    _check_act(act)
    b = _Builder(act)
    _build_cts_into(b, r)
    return _finish(b, "cts", r, act, seed)


def build_multistream(r, act="relu", seed=0):
    """All three streams on the same input, outputs summed pairwise."""
    _check_r(r)
    _check_act(act)
    b = _Builder(act)
    o1 = _build_ctc_into(b, r, "ctc/")
    o2 = _build_psc_into(b, r, "psc/")
    o3 = _build_cts_into(b, r, "cts/")
    m = b.merge("add_streams1", o1, o2)
    b.merge("add_streams2", m, o3)
    return _finish(b, "multi", r, act, seed)


BUILDERS = {"ctc": build_ctc, "psc": build_psc, "cts": build_cts,
            "multi": build_multistream}


def build(arch, r, act="relu", seed=0):
    if arch not in BUILDERS:
        raise ParameterError(f"unknown architecture {arch!r}")
    return BUILDERS[arch](r, act, seed)


# -- initialization ----------------------------------------------------------

def init_params(g, seed):
    """Seeded fan-in-scaled Gaussian kernels, zero biases, alpha = 0.25.

    Channel counts are inferred by a static shape pass so conv inputs are
    known before any parameters exist.
    """
    rng = Rng(derive_seed(seed, 0))
    channels = _infer_channels(g)
    g.params.clear()
    for i, node in enumerate(g.nodes):
        if node.kind in ("conv", "tconv"):
            c_in = channels[node.inputs[0]]
            k = node.k
            std = np.sqrt(2.0 / (k * k * c_in))
            kernel = rng.gaussian_fill(k * k * c_in * node.c_out, 0.0, std)
            g.params[i] = ConvParams(kernel.reshape(k, k, c_in, node.c_out),
                                     np.zeros(node.c_out))
        elif node.kind == "prelu":
            g.params[i] = PReluParams.init(channels[node.inputs[0]], INIT_ALPHA)


def _infer_channels(g):
    """Channel count of every node's output; key -1 is the graph input."""
    ch = {-1: 1}
    for i, node in enumerate(g.nodes):
        if node.kind in ("conv", "tconv"):
            ch[i] = node.c_out
        elif node.kind == "subpixel":
            ch[i] = subpixel_out_channels(ch[node.inputs[0]], node.r)
        elif node.kind == "add":
            a, b = (ch[j] for j in node.inputs)
            if a != b:
                raise ShapeError(f"{node.name}: channel mismatch {a} vs {b}")
            ch[i] = a
        else:
            ch[i] = ch[node.inputs[0]]
    return ch


# -- static shape propagation -------------------------------------------------

def shape_trace(g, n=1, h=16, w=16):
    """Propagate (h, w, c) through the graph without touching parameters.

    Returns [(name, (h, w, c)), ...] starting with ("input", ...). Raises
    ShapeError naming the offending node if propagation fails.
    """
    dims = {-1: (h, w, 1)}
    trace = [("input", (h, w, 1))]
    for i, node in enumerate(g.nodes):
        try:
            if node.kind == "conv":
                ih, iw, ic = dims[node.inputs[0]]
                if ih < node.k or iw < node.k:
                    raise ShapeError(f"kernel {node.k} larger than input {ih}x{iw}")
                dims[i] = (ih - node.k + 1, iw - node.k + 1, node.c_out)
            elif node.kind == "tconv":
                ih, iw, ic = dims[node.inputs[0]]
                dims[i] = (ih + node.k - 1, iw + node.k - 1, node.c_out)
            elif node.kind == "subpixel":
                ih, iw, ic = dims[node.inputs[0]]
                dims[i] = (ih * node.r, iw * node.r,
                           subpixel_out_channels(ic, node.r))
            elif node.kind == "add":
                da, db = dims[node.inputs[0]], dims[node.inputs[1]]
                if da != db:
                    raise ShapeError(f"merge of {da} and {db}")
                dims[i] = da
            else:
                dims[i] = dims[node.inputs[0]]
        except ShapeError as exc:
            raise ShapeError(f"node {node.name!r}: {exc}") from None
        trace.append((node.name, dims[i]))
    return trace


# -- execution ----------------------------------------------------------------

def forward(g, x, keep_cache=False):
    """Run the graph on x:(n,h,w,1). Returns the sink output, or
    (output, cache) when keep_cache is set for a later backward pass."""
    if x.c != 1:
        raise ShapeError(f"graph input must have 1 channel, got {x.c}")
    if x.h < 16 or x.w < 16:
        raise ShapeError(f"graph input must be at least 16x16, got {x.h}x{x.w}")
    outs = {-1: x}
    for i, node in enumerate(g.nodes):
        src = outs[node.inputs[0]]
        try:
            if node.kind == "conv":
                out = conv2d_forward(src, g.params[i])
            elif node.kind == "tconv":
                out = tconv2d_forward(src, g.params[i])
            elif node.kind == "subpixel":
                out = subpixel_forward(src, SubpixelConfig(node.r))
            elif node.kind == "relu":
                out = relu_forward(src)
            elif node.kind == "prelu":
                out = prelu_forward(src, g.params[i])
            else:
                out = merge_add(src, outs[node.inputs[1]])
        except ShapeError as exc:
            raise ShapeError(f"node {node.name!r}: {exc}") from None
        outs[i] = out
    result = outs[len(g.nodes) - 1]
    if keep_cache:
        return result, outs
    return result


def backward(g, cache, loss_grad):
    """Reverse-mode sweep. cache is forward's second return; loss_grad is
    d(loss)/d(output). Returns {node_index: {"kernel": .., "bias": ..} or
    {"alpha": ..}} for every parameterized node."""
    sink = len(g.nodes) - 1
    if loss_grad.dims != cache[sink].dims:
        raise ShapeError(
            f"loss grad {loss_grad.dims} != output {cache[sink].dims}")
    grad_at = {sink: loss_grad.values}
    param_grads = {}

    def send(dst, arr):
        if dst in grad_at:
            grad_at[dst] = grad_at[dst] + arr
        else:
            grad_at[dst] = arr

    for i in range(sink, -1, -1):
        if i not in grad_at:
            continue  # node feeds nothing that was differentiated
        node = g.nodes[i]
        gout = Tensor(grad_at.pop(i))
        src = cache[node.inputs[0]]
        if node.kind == "conv":
            gx, gk, gb = conv2d_backward(src, g.params[i], gout)
            param_grads[i] = {"kernel": gk, "bias": gb}
            send(node.inputs[0], gx)
        elif node.kind == "tconv":
            gx, gk, gb = tconv2d_backward(src, g.params[i], gout)
            param_grads[i] = {"kernel": gk, "bias": gb}
            send(node.inputs[0], gx)
        elif node.kind == "subpixel":
            send(node.inputs[0], subpixel_backward(gout, SubpixelConfig(node.r)).values)
        elif node.kind == "relu":
            send(node.inputs[0], relu_backward(src, gout))
        elif node.kind == "prelu":
            gx, ga = prelu_backward(src, g.params[i], gout)
            param_grads[i] = {"alpha": ga}
            send(node.inputs[0], gx)
        else:
            send(node.inputs[0], gout.values)
            send(node.inputs[1], gout.values)
    return param_grads


# -- serialization --------------------------------------------------------------

def _param_records(g):
    for i in g.param_nodes():
        p = g.params[i]
        node = g.nodes[i]
        if isinstance(p, ConvParams):
            dims = p.kernel.shape
            payload = np.concatenate([p.kernel.reshape(-1), p.bias])
        else:
            dims = (1, 1, 1, p.alpha.size)
            payload = p.alpha
        yield i, node.kind, dims, payload


def save_model_bytes(g):
    buf = io.BytesIO()
    records = list(_param_records(g))
    buf.write(struct.pack("<4sHBBBI", MAGIC, VERSION, _ARCH_CODE[g.arch],
                          g.r, _ACT_CODE[g.act], len(records)))
    for i, kind, dims, payload in records:
        buf.write(struct.pack("<IB4I", i, _KIND_CODE[kind], *dims))
        buf.write(payload.astype("<f8").tobytes())
    return buf.getvalue()


def save_model(g, path):
    with open(path, "wb") as fh:
        fh.write(save_model_bytes(g))


def _read_exact(fh, n, what):
    data = fh.read(n)
    if len(data) != n:
        raise FormatError(f"checkpoint truncated while reading {what}")
    return data


def load_model_from(fh):
    head = _read_exact(fh, struct.calcsize("<4sHBBBI"), "header")
    magic, version, arch_code, r, act_code, count = struct.unpack("<4sHBBBI", head)
    if magic != MAGIC:
        raise FormatError(f"bad checkpoint magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    if arch_code not in _CODE_ARCH or act_code not in _CODE_ACT or r not in (2, 4):
        raise FormatError("checkpoint header fields out of range")
    g = build(_CODE_ARCH[arch_code], r, _CODE_ACT[act_code], seed=0)
    expected = {i: (kind, dims, payload.size)
                for i, kind, dims, payload in _param_records(g)}
    if count != len(expected):
        raise FormatError(f"checkpoint has {count} records, expected {len(expected)}")
    for _ in range(count):
        rec = _read_exact(fh, struct.calcsize("<IB4I"), "record header")
        idx, kind_code, d0, d1, d2, d3 = struct.unpack("<IB4I", rec)
        if idx not in expected:
            raise FormatError(f"unexpected parameter record for node {idx}")
        kind, dims, size = expected.pop(idx)
        if _KIND_CODE[kind] != kind_code or (d0, d1, d2, d3) != tuple(dims):
            raise FormatError(f"record for node {idx} does not match the architecture")
        payload = np.frombuffer(_read_exact(fh, 8 * size, f"node {idx} payload"),
                                dtype="<f8").astype(np.float64)
        if kind == "prelu":
            g.params[idx] = PReluParams(payload.copy())
        else:
            ksize = d0 * d1 * d2 * d3
            g.params[idx] = ConvParams(payload[:ksize].reshape(d0, d1, d2, d3).copy(),
                                       payload[ksize:].copy())
    if expected:
        raise FormatError(f"missing parameter records for nodes {sorted(expected)}")
    return g


def load_model(path):
    with open(path, "rb") as fh:
        g = load_model_from(fh)
        if fh.read(1):
            raise FormatError("trailing bytes after checkpoint payload")
    return g
