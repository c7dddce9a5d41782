"""Mini-batch squared-error training with Adam.

Determinism contract: given the same seed, corpus, and config, two runs
produce bit-identical parameters and loss logs, and a run interrupted at a
checkpoint and resumed reproduces the exact loss sequence of an
uninterrupted run. The shuffle stream is the only in-training consumer of
randomness; its state at the start of the current epoch is stored in the
checkpoint so a mid-epoch resume can re-derive the permutation.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from . import models
from .errors import (ConfigError, DivergenceError, FormatError, InputError,
                     ShapeError)
from .numtensor import AdamState, Rng, Tensor, adam_step_arrays, derive_seed

ADAM_MAGIC = b"ADAM"
ADAM_VERSION = 1

# Abort threshold: squared error on [0,1 ]pixels sits well below 1; losses
# beyond this mean the run blew up and every later step is wasted work.
LOSS_ABORT = 1e3


@dataclass
class TrainConfig:
    batch_size: int = 32
    epochs: int = 1
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    checkpoint_every: int = 0          # steps; 0 disables periodic saves
    checkpoint_path: str | None = None
    log_path: str | None = None
    max_steps: int | None = None
    stop_loss: float | None = None     # early stop on corpus loss, checked per epoch

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        # lr = 0 is allowed: a frozen run is the cheapest way to check that
        # logged train loss matches evaluate_loss exactly
        if self.lr < 0:
            raise ConfigError(f"lr must be >= 0, got {self.lr}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("beta1 and beta2 must lie in [0, 1)")


@dataclass
class TrainState:
    graph: "models.ModelGraph"
    adam: dict                         # node id -> {param name -> AdamState}
    rng: Rng
    t: int = 0
    epoch: int = 0
    batch_index: int = 0
    epoch_start_rng: tuple = field(default=None)


def mse_loss(pred, gt):
    """Mean squared error normalized by batch * height * width (outputs are
    single-channel), and its gradient w.r.t. pred."""
    if pred.dims != gt.dims:
        raise ShapeError(f"prediction {pred.dims} != ground truth {gt.dims}")
    n, h, w, _ = pred.dims
    scale = 1.0 / (n * h * w)
    diff = pred.values - gt.values
    loss = float((diff * diff).sum() * scale)
    return loss, Tensor(2.0 * scale * diff)


def _fresh_state(graph, cfg):
    adam = {}
    for i in graph.param_nodes():
        p = graph.params[i]
        if hasattr(p, "kernel"):
            adam[i] = {"kernel": AdamState.for_param(p.kernel, cfg.lr, cfg.beta1,
                                                     cfg.beta2, cfg.eps),
                       "bias": AdamState.for_param(p.bias, cfg.lr, cfg.beta1,
                                                   cfg.beta2, cfg.eps)}
        else:
            adam[i] = {"alpha": AdamState.for_param(p.alpha, cfg.lr, cfg.beta1,
                                                    cfg.beta2, cfg.eps)}
    return TrainState(graph=graph, adam=adam, rng=Rng(derive_seed(cfg.seed, 1)))


def _corpus_tensors(graph, pairs):
    if pairs.r != graph.r:
        raise ConfigError(f"archive is x{pairs.r} but the model is x{graph.r}")
    if len(pairs) == 0:
        raise InputError("cannot train on an empty pair set")
    lr = pairs.lr.astype(np.float64)[..., None]   # ink = 1, background = 0
    hr = pairs.hr.astype(np.float64)[..., None]
    return lr, hr


def _apply_grads(state, grads):
    for i in sorted(grads):
        p = state.graph.params[i]
        for name, g in sorted(grads[i].items()):
            target = getattr(p, name)
            adam_step_arrays(target, g, state.adam[i][name])


def train(graph, pairs, cfg, state=None):
    """Run (or continue) training; returns the final TrainState."""
    lr_all, hr_all = _corpus_tensors(graph, pairs)
    n = len(pairs)
    if state is None:
        state = _fresh_state(graph, cfg)
    log = open(cfg.log_path, "a") if cfg.log_path else None
    try:
        while state.epoch < cfg.epochs:
            if cfg.max_steps is not None and state.t >= cfg.max_steps:
                break
            if state.batch_index == 0:
                state.epoch_start_rng = state.rng.get_state()
            else:
                state.rng.set_state(state.epoch_start_rng)
            perm = state.rng.shuffle(n)
            nbatches = (n + cfg.batch_size - 1) // cfg.batch_size
            for b in range(state.batch_index, nbatches):
                if cfg.max_steps is not None and state.t >= cfg.max_steps:
                    break
                idx = perm[b * cfg.batch_size:(b + 1) * cfg.batch_size]
                x = Tensor(lr_all[idx])
                gt = Tensor(hr_all[idx])
                out, cache = models.forward(graph, x, keep_cache=True)
                loss, lgrad = mse_loss(out, gt)
                if not np.isfinite(loss) or loss > LOSS_ABORT:
                    raise DivergenceError(
                        f"loss {loss} at step {state.t + 1} (epoch {state.epoch})")
                grads = models.backward(graph, cache, lgrad)
                _apply_grads(state, grads)
                state.t += 1
                state.batch_index = b + 1
                if log:
                    log.write(f"{state.t}\t{state.epoch}\t{loss:.17g}\n")
                    log.flush()
                if (cfg.checkpoint_every and cfg.checkpoint_path
                        and state.t % cfg.checkpoint_every == 0):
                    save_checkpoint(cfg.checkpoint_path, state)
            else:
                state.batch_index = 0
                state.epoch += 1
                if cfg.stop_loss is not None:
                    if evaluate_loss(graph, pairs) <= cfg.stop_loss:
                        break
                continue
            break  # inner break (max_steps) falls through here
    finally:
        if log:
            log.close()
    if cfg.checkpoint_path:
        save_checkpoint(cfg.checkpoint_path, state)
    return state


def evaluate_loss(graph, pairs, chunk=64):
    """Forward-only corpus loss; no state is touched."""
    lr_all, hr_all = _corpus_tensors(graph, pairs)
    n = len(pairs)
    sse = 0.0
    for lo in range(0, n, chunk):
        x = Tensor(lr_all[lo:lo + chunk])
        gt = hr_all[lo:lo + chunk]
        out = models.forward(graph, x)
        diff = out.values - gt
        sse += float((diff * diff).sum())
    _, h, w, _ = hr_all.shape
    return sse / (n * h * w)


# -- checkpointing -----------------------------------------------------------

def save_checkpoint(path, state):
    """Model in its native format followed by an optimizer sidecar block."""
    blob = [models.save_model_bytes(state.graph)]
    # mid-epoch the permutation must be re-derivable, so the epoch-start
    # state is stored; at an epoch boundary the live state is next
    if state.batch_index > 0 and state.epoch_start_rng is not None:
        rng_state, spare = state.epoch_start_rng
    else:
        rng_state, spare = state.rng.get_state()
    blob.append(struct.pack("<4sHHQQQQBd", ADAM_MAGIC, ADAM_VERSION, 0,
                            state.t, state.epoch, state.batch_index,
                            rng_state, 1 if spare is not None else 0,
                            spare if spare is not None else 0.0))
    any_state = next(iter(next(iter(state.adam.values())).values()))
    blob.append(struct.pack("<dddd", any_state.lr, any_state.beta1,
                            any_state.beta2, any_state.eps))
    for i in sorted(state.adam):
        for name in sorted(state.adam[i]):
            st = state.adam[i][name]
            blob.append(struct.pack("<IQ", i, st.m.size))
            blob.append(st.m.astype("<f8").tobytes())
            blob.append(st.v.astype("<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(blob))


def load_any_model(path):
    """Accept either a bare model file or a training checkpoint; returns
    just the graph."""
    try:
        return load_checkpoint(path).graph
    except FormatError:
        return models.load_model(path)


def load_checkpoint(path):
    """Rebuild a TrainState able to continue exactly where training stopped."""
    with open(path, "rb") as fh:
        graph = models.load_model_from(fh)
        head_fmt = "<4sHHQQQQBd"
        head = fh.read(struct.calcsize(head_fmt))
        if len(head) != struct.calcsize(head_fmt):
            raise FormatError("checkpoint has no optimizer sidecar")
        magic, version, _, t, epoch, batch_index, rng_state, has_spare, spare = \
            struct.unpack(head_fmt, head)
        if magic != ADAM_MAGIC:
            raise FormatError(f"bad optimizer sidecar magic {magic!r}")
        if version != ADAM_VERSION:
            raise FormatError(f"unsupported optimizer sidecar version {version}")
        hp = fh.read(32)
        if len(hp) != 32:
            raise FormatError("optimizer sidecar truncated in hyperparameters")
        lr, beta1, beta2, eps = struct.unpack("<dddd", hp)
        rng = Rng(0)
        rng.set_state((rng_state, spare if has_spare else None))
        state = TrainState(graph=graph, adam={}, rng=rng, t=t, epoch=epoch,
                           batch_index=batch_index,
                           epoch_start_rng=(rng_state, spare if has_spare else None))
        for i in graph.param_nodes():
            p = graph.params[i]
            names = ("bias", "kernel") if hasattr(p, "kernel") else ("alpha",)
            state.adam[i] = {}
            for name in sorted(names):
                rec = fh.read(12)
                if len(rec) != 12:
                    raise FormatError("optimizer sidecar truncated in records")
                idx, size = struct.unpack("<IQ", rec)
                target = getattr(p, name)
                if idx != i or size != target.size:
                    raise FormatError(
                        f"optimizer record ({idx}, {size}) does not match node {i} {name}")
                raw = fh.read(16 * size)
                if len(raw) != 16 * size:
                    raise FormatError("optimizer sidecar truncated in moments")
                m = np.frombuffer(raw[:8 * size], "<f8").astype(np.float64)
                v = np.frombuffer(raw[8 * size:], "<f8").astype(np.float64)
                state.adam[i][name] = AdamState(
                    m=m.reshape(target.shape), v=v.reshape(target.shape),
                    t=t, lr=lr, beta1=beta1, beta2=beta2, eps=eps)
        if fh.read(1):
            raise FormatError("trailing bytes after checkpoint payload")
    return state
