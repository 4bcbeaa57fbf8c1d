"""Stacked convolutional auto-encoder: channel-halving encoders, mirrored
decoders, denoising corruptions, the multi-stage reconstruction loss, exact
backpropagation, and plain SGD training.

All layers are 3x3 convolutions with zero same-padding (spatial size is
preserved) followed by ReLU. Training arithmetic runs in float64; inference
follows the input dtype so float32 feature maps stay cheap.
"""

from __future__ import annotations

import struct
import threading
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, FormatError, IndexOutOfRange, ShapeMismatch

AEMD_MAGIC = b"AEMD"
AEMD_VERSION = 1


def _round_half_away(x: float) -> int:
    return int(np.floor(x + 0.5)) if x >= 0 else -int(np.floor(-x + 0.5))


class ConvLayer:
    """3x3 same-padded convolution plus ReLU."""

    def __init__(self, kernel: np.ndarray, bias: np.ndarray):
        kernel = np.asarray(kernel, dtype=np.float64)
        bias = np.asarray(bias, dtype=np.float64)
        if kernel.ndim != 4 or kernel.shape[:2] != (3, 3):
            raise ShapeMismatch(f"kernel must be (3, 3, cin, cout), got {kernel.shape}")
        if bias.shape != (kernel.shape[3],):
            raise ShapeMismatch("bias length must match output channels")
        if not (np.isfinite(kernel).all() and np.isfinite(bias).all()):
            raise ValueError("non-finite layer weights")
        self.kernel = kernel
        self.bias = bias
        # per-thread scratch for the padded input and column matrix; reusing
        # these keeps repeated inference off the allocator's mmap path
        self._scratch = threading.local()

    @property
    def in_channels(self) -> int:
        return self.kernel.shape[2]

    @property
    def out_channels(self) -> int:
        return self.kernel.shape[3]

    def copy(self) -> "ConvLayer":
        return ConvLayer(self.kernel.copy(), self.bias.copy())

    def _columns(self, x: np.ndarray, scratch: bool) -> np.ndarray:
        """Column matrix of 3x3 neighborhoods. With scratch=True the padded
        input and column buffers are reused per thread, so the result is only
        valid until this layer's next scratch-backed call."""
        h, w, cin = x.shape
        if scratch:
            key = (h, w, x.dtype.str)
            bufs = getattr(self._scratch, "bufs", None)
            if bufs is None:
                bufs = self._scratch.bufs = {}
            pair = bufs.get(key)
            if pair is None:
                pair = bufs[key] = (
                    np.zeros((h + 2, w + 2, cin), dtype=x.dtype),
                    np.empty((h, w, 1, 3, 3, cin), dtype=x.dtype),
                )
            xp, cols = pair
        else:
            xp = np.zeros((h + 2, w + 2, cin), dtype=x.dtype)
            cols = np.empty((h, w, 1, 3, 3, cin), dtype=x.dtype)
        xp[1:-1, 1:-1] = x
        np.copyto(cols, sliding_window_view(xp, (3, 3, cin)))
        return cols.reshape(h * w, 9 * cin)

    def _apply(self, cols: np.ndarray, dtype) -> np.ndarray:
        kmat = self.kernel.reshape(9 * self.in_channels, self.out_channels)
        return cols @ kmat.astype(dtype, copy=False) + self.bias.astype(
            dtype, copy=False
        )

    def forward(self, x: np.ndarray):
        """Returns (activation, cache); cache feeds backward()."""
        if x.ndim != 3 or x.shape[2] != self.in_channels:
            raise ShapeMismatch(
                f"layer expects {self.in_channels} input channels, got {x.shape}"
            )
        h, w, _ = x.shape
        cols = self._columns(x, scratch=False)
        pre = self._apply(cols, x.dtype)
        out = np.maximum(pre, 0.0).reshape(h, w, self.out_channels)
        return out, (cols, pre > 0.0, (h, w))

    def infer(self, x: np.ndarray) -> np.ndarray:
        """Forward pass without gradient bookkeeping (scratch-backed)."""
        if x.ndim != 3 or x.shape[2] != self.in_channels:
            raise ShapeMismatch(
                f"layer expects {self.in_channels} input channels, got {x.shape}"
            )
        h, w, _ = x.shape
        pre = self._apply(self._columns(x, scratch=True), x.dtype)
        return np.maximum(pre, 0.0).reshape(h, w, self.out_channels)

    def backward(self, dout: np.ndarray, cache):
        """Gradient w.r.t. input, kernel, and bias for one forward pass."""
        cols, mask, (h, w) = cache
        dpre = dout.reshape(h * w, self.out_channels) * mask
        db = dpre.sum(axis=0)
        dk = (cols.T @ dpre).reshape(self.kernel.shape)
        dcols = dpre @ self.kernel.reshape(9 * self.in_channels, self.out_channels).T
        dcols = dcols.reshape(h, w, 3, 3, self.in_channels)
        dxp = np.zeros((h + 2, w + 2, self.in_channels), dtype=dout.dtype)
        for dy in range(3):
            for dx in range(3):
                dxp[dy : dy + h, dx : dx + w] += dcols[:, :, dy, dx, :]
        return dxp[1:-1, 1:-1], dk, db


class AutoEncoderModel:
    """Encoder stack halving channels per stage, mirrored decoder stack.

    decoders[k] restores stage k's input width, so the decode path for stage
    i applies decoders[i-1], ..., decoders[0].
    """

    def __init__(self, encoders: list[ConvLayer], decoders: list[ConvLayer]):
        if len(encoders) != len(decoders) or not encoders:
            raise ConfigError("encoder/decoder stacks must be nonempty and mirrored")
        c1 = encoders[0].in_channels
        for l, enc in enumerate(encoders):
            want_in = c1 >> l
            if enc.in_channels != want_in or enc.out_channels * 2 != want_in:
                raise ConfigError(f"encoder {l} does not halve {want_in} channels")
        for k, dec in enumerate(decoders):
            want_out = c1 >> k
            if dec.out_channels != want_out or dec.in_channels * 2 != want_out:
                raise ConfigError(f"decoder {k} does not restore {want_out} channels")
        self.encoders = encoders
        self.decoders = decoders

    @property
    def depth(self) -> int:
        return len(self.encoders)

    @property
    def input_channels(self) -> int:
        return self.encoders[0].in_channels

    @property
    def compressed_channels(self) -> int:
        return self.encoders[-1].out_channels

    def copy(self) -> "AutoEncoderModel":
        return AutoEncoderModel(
            [l.copy() for l in self.encoders], [l.copy() for l in self.decoders]
        )

    def layers(self) -> list[ConvLayer]:
        return self.encoders + self.decoders


def new_autoencoder(
    input_channels: int, depth: int, rng: np.random.Generator, init_std: float = 0.01
) -> AutoEncoderModel:
    """Seeded Gaussian weight init (std `init_std`), zero biases."""
    if depth < 1:
        raise ConfigError("depth must be >= 1")
    if input_channels % (1 << depth) != 0:
        raise ConfigError(
            f"{input_channels} channels not divisible by 2^{depth}"
        )
    encoders, decoders = [], []
    for l in range(depth):
        cin = input_channels >> l
        encoders.append(
            ConvLayer(rng.normal(0.0, init_std, (3, 3, cin, cin // 2)), np.zeros(cin // 2))
        )
    for k in range(depth):
        cout = input_channels >> k
        decoders.append(
            ConvLayer(rng.normal(0.0, init_std, (3, 3, cout // 2, cout)), np.zeros(cout))
        )
    return AutoEncoderModel(encoders, decoders)


@dataclass
class TrainConfig:
    """SGD schedule and denoising proportions for auto-encoder training."""

    learning_rate: float = 1e-4
    epochs: int = 10
    batch_size: int = 10
    corrupt_fraction: float = 0.10
    exchange_fraction: float = 0.10
    seed: int = 0
    depth: int = 2
    init_std: float = 0.01


@dataclass
class LayerGrads:
    kernel: np.ndarray
    bias: np.ndarray


@dataclass
class ModelGrads:
    encoders: list[LayerGrads] = field(default_factory=list)
    decoders: list[LayerGrads] = field(default_factory=list)

    def scale(self, s: float) -> None:
        for g in self.encoders + self.decoders:
            g.kernel *= s
            g.bias *= s


def zero_grads(model: AutoEncoderModel) -> ModelGrads:
    return ModelGrads(
        encoders=[
            LayerGrads(np.zeros_like(l.kernel), np.zeros_like(l.bias))
            for l in model.encoders
        ],
        decoders=[
            LayerGrads(np.zeros_like(l.kernel), np.zeros_like(l.bias))
            for l in model.decoders
        ],
    )


def apply_sgd(model: AutoEncoderModel, grads: ModelGrads, lr: float) -> None:
    for layer, g in zip(model.encoders, grads.encoders):
        layer.kernel -= lr * g.kernel
        layer.bias -= lr * g.bias
    for layer, g in zip(model.decoders, grads.decoders):
        layer.kernel -= lr * g.kernel
        layer.bias -= lr * g.bias


def flatten_params(model: AutoEncoderModel) -> np.ndarray:
    parts = []
    for l in model.layers():
        parts.append(l.kernel.ravel())
        parts.append(l.bias.ravel())
    return np.concatenate(parts)


def set_params(model: AutoEncoderModel, vec: np.ndarray) -> None:
    pos = 0
    for l in model.layers():
        n = l.kernel.size
        l.kernel[...] = vec[pos : pos + n].reshape(l.kernel.shape)
        pos += n
        n = l.bias.size
        l.bias[...] = vec[pos : pos + n]
        pos += n
    if pos != vec.size:
        raise ShapeMismatch("parameter vector length mismatch")


def flatten_grads(grads: ModelGrads) -> np.ndarray:
    parts = []
    for g in grads.encoders + grads.decoders:
        parts.append(g.kernel.ravel())
        parts.append(g.bias.ravel())
    return np.concatenate(parts)


def _check_input(model: AutoEncoderModel, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 3 or x.shape[2] != model.input_channels:
        raise ShapeMismatch(
            f"expected (h, w, {model.input_channels}) input, got {x.shape}"
        )
    return x


def forward_partial(model: AutoEncoderModel, x: np.ndarray, i: int) -> np.ndarray:
    """Reconstruction through the first i encoder and last i decoder layers."""
    if not 1 <= i <= model.depth:
        raise IndexOutOfRange(f"stage {i} outside 1..{model.depth}")
    out = _check_input(model, x)
    for enc in model.encoders[:i]:
        out = enc.infer(out)
    for k in range(i - 1, -1, -1):
        out = model.decoders[k].infer(out)
    return out


def forward_full(model: AutoEncoderModel, x: np.ndarray) -> np.ndarray:
    return forward_partial(model, x, model.depth)


def compress(model: AutoEncoderModel, x: np.ndarray) -> np.ndarray:
    """Encoder-only pass; output has input_channels / 2^depth channels."""
    out = _check_input(model, x)
    for enc in model.encoders:
        out = enc.infer(out)
    return out


def corrupt_channels(
    x: np.ndarray, fraction: float, rng: np.random.Generator
) -> np.ndarray:
    """Zero a uniformly chosen set of round(fraction*c) whole channels."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must lie in [0, 1]")
    c = x.shape[2]
    n = _round_half_away(fraction * c)
    out = x.copy()
    if n > 0:
        idx = rng.choice(c, size=n, replace=False)
        out[:, :, idx] = 0.0
    return out


def exchange_vectors(
    x: np.ndarray, fraction: float, rng: np.random.Generator
) -> np.ndarray:
    """Swap round(fraction*w*h/2) disjoint pairs of spatial feature vectors."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must lie in [0, 1]")
    h, w, c = x.shape
    n_pairs = _round_half_away(fraction * w * h / 2.0)
    out = x.copy()
    if n_pairs > 0:
        flat = out.reshape(h * w, c)
        perm = rng.permutation(h * w)
        a, b = perm[:n_pairs], perm[n_pairs : 2 * n_pairs]
        flat[a], flat[b] = flat[b].copy(), flat[a].copy()
    return out


def multistage_pass(
    model: AutoEncoderModel,
    target: np.ndarray,
    inp: np.ndarray,
    grads: ModelGrads | None,
    stage_hook=None,
) -> float:
    """One sample's sum over stages of squared reconstruction error, with
    gradients accumulated into `grads` when given.

    `stage_hook(i, activation)` may return (extra_loss, extra_delta) to tap
    extra loss terms off encoder stage i's output (used by the adaptation
    loss); extra_delta joins the encoder backward pass.
    """
    target = np.asarray(target, dtype=np.float64)
    inp = np.asarray(inp, dtype=np.float64)
    if target.shape != inp.shape:
        raise ShapeMismatch("target/input shapes differ")
    _check_input(model, inp)

    acts = [inp]
    enc_caches = []
    for enc in model.encoders:
        out, cache = enc.forward(acts[-1])
        acts.append(out)
        enc_caches.append(cache)

    loss = 0.0
    enc_delta = [None] * (model.depth + 1)
    for i in range(1, model.depth + 1):
        out = acts[i]
        dec_caches = []
        for k in range(i - 1, -1, -1):
            out, cache = model.decoders[k].forward(out)
            dec_caches.append((k, cache))
        diff = out - target
        loss += float((diff * diff).sum())
        if stage_hook is not None:
            extra_loss, extra_delta = stage_hook(i, acts[i])
            loss += extra_loss
        if grads is not None:
            delta = 2.0 * diff
            for k, cache in reversed(dec_caches):
                dnext, dk, db = model.decoders[k].backward(delta, cache)
                grads.decoders[k].kernel += dk
                grads.decoders[k].bias += db
                delta = dnext
            if stage_hook is not None and extra_delta is not None:
                delta = delta + extra_delta
            if enc_delta[i] is None:
                enc_delta[i] = delta
            else:
                enc_delta[i] = enc_delta[i] + delta

    if grads is not None:
        delta = None
        for l in range(model.depth, 0, -1):
            if enc_delta[l] is not None:
                delta = enc_delta[l] if delta is None else delta + enc_delta[l]
            dnext, dk, db = model.encoders[l - 1].backward(delta, enc_caches[l - 1])
            grads.encoders[l - 1].kernel += dk
            grads.encoders[l - 1].bias += db
            delta = dnext
    return loss


def multistage_loss(
    model: AutoEncoderModel, x_batch, noisy_batch
) -> float:
    """Batch-mean, stage-summed squared reconstruction error of noisy inputs
    against their clean originals."""
    if len(x_batch) != len(noisy_batch) or not x_batch:
        raise ShapeMismatch("batches must be nonempty and of equal length")
    total = 0.0
    for x, xn in zip(x_batch, noisy_batch):
        total += multistage_pass(model, x, xn, grads=None)
    return total / len(x_batch)


def backward(model: AutoEncoderModel, x_batch, noisy_batch) -> ModelGrads:
    """Exact gradient of multistage_loss w.r.t. every kernel and bias."""
    return _loss_and_grads(model, x_batch, noisy_batch)[1]


def _loss_and_grads(model, x_batch, noisy_batch):
    if len(x_batch) != len(noisy_batch) or not x_batch:
        raise ShapeMismatch("batches must be nonempty and of equal length")
    grads = zero_grads(model)
    total = 0.0
    for x, xn in zip(x_batch, noisy_batch):
        total += multistage_pass(model, x, xn, grads)
    inv_m = 1.0 / len(x_batch)
    grads.scale(inv_m)
    return total * inv_m, grads


def _sgd_epochs(model, samples, cfg: TrainConfig, rng) -> list[float]:
    history = []
    n = len(samples)
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            clean = [samples[j] for j in idx]
            noisy = [
                exchange_vectors(
                    corrupt_channels(x, cfg.corrupt_fraction, rng),
                    cfg.exchange_fraction,
                    rng,
                )
                for x in clean
            ]
            loss, grads = _loss_and_grads(model, clean, noisy)
            apply_sgd(model, grads, cfg.learning_rate)
            epoch_loss += loss * len(idx)
        history.append(epoch_loss / n)
    return history


def _validate_samples(samples):
    if not samples:
        raise ConfigError("no training samples")
    shape = np.asarray(samples[0]).shape
    for s in samples:
        if np.asarray(s).shape != shape:
            raise ShapeMismatch("training samples must share one shape")


def pretrain_base(
    samples, cfg: TrainConfig, history: list | None = None
) -> AutoEncoderModel:
    """Train a fresh auto-encoder on the full sample set with both denoising
    corruptions applied to every mini-batch."""
    _validate_samples(samples)
    samples = [np.asarray(s, dtype=np.float64) for s in samples]
    rng = np.random.default_rng(cfg.seed)
    model = new_autoencoder(samples[0].shape[2], cfg.depth, rng, cfg.init_std)
    losses = _sgd_epochs(model, samples, cfg, rng)
    if history is not None:
        history.extend(losses)
    return model


def train_expert(
    base: AutoEncoderModel, cluster_samples, cfg: TrainConfig, history: list | None = None
) -> AutoEncoderModel:
    """Fine-tune a copy of the base model on one cluster's samples; identical
    procedure, different data and learning rate."""
    _validate_samples(cluster_samples)
    cluster_samples = [np.asarray(s, dtype=np.float64) for s in cluster_samples]
    if cluster_samples[0].shape[2] != base.input_channels:
        raise ShapeMismatch("cluster samples do not match the base model")
    rng = np.random.default_rng(cfg.seed)
    model = base.copy()
    losses = _sgd_epochs(model, cluster_samples, cfg, rng)
    if history is not None:
        history.extend(losses)
    return model


def save_model(model: AutoEncoderModel, path) -> None:
    """Serialize to the AEMD checkpoint layout (little-endian, f32 payloads)."""
    with open(path, "wb") as fh:
        fh.write(AEMD_MAGIC)
        fh.write(struct.pack("<III", AEMD_VERSION, model.depth, model.input_channels))
        for layer in model.layers():
            fh.write(struct.pack("<IIII", *layer.kernel.shape))
            fh.write(np.ascontiguousarray(layer.kernel, dtype="<f4").tobytes())
            fh.write(np.ascontiguousarray(layer.bias, dtype="<f4").tobytes())


def load_model(path) -> AutoEncoderModel:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != AEMD_MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r}")
    try:
        version, depth, c1 = struct.unpack_from("<III", data, 4)
        if version != AEMD_VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        pos = 16
        layers = []
        for _ in range(2 * depth):
            kh, kw, cin, cout = struct.unpack_from("<IIII", data, pos)
            pos += 16
            nk = kh * kw * cin * cout
            kernel = np.frombuffer(data, dtype="<f4", count=nk, offset=pos).reshape(
                kh, kw, cin, cout
            )
            pos += 4 * nk
            bias = np.frombuffer(data, dtype="<f4", count=cout, offset=pos)
            pos += 4 * cout
            layers.append(ConvLayer(kernel.astype(np.float64), bias.astype(np.float64)))
    except (struct.error, ValueError) as exc:
        raise FormatError(f"{path}: truncated or corrupt checkpoint") from exc
    model = AutoEncoderModel(layers[:depth], layers[depth:])
    if model.input_channels != c1:
        raise FormatError(f"{path}: header channels {c1} disagree with layers")
    return model
