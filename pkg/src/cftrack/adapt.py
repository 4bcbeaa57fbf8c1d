"""First-frame adaptation of the selected expert model: gradient descent on
the filter-orthogonality loss, and pruning of compressed channels whose
response mass lies outside the target box.

The orthogonality term measures, for every pair of compressed channels at
every encoder stage, the squared normalized inner product of the spatial
correlation filters estimated from those channels. Its gradient flows
through the inverse transform, the per-bin quotient, and the forward
transform of each channel. Complex gradients below use the holder
convention g = dL/d(re) + i*dL/d(im).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft as _fft

from . import autoencoder as ae
from . import numerics
from .errors import ConfigError, InvalidChannelCount, ShapeMismatch, ZeroVector
from .features import BoundingBox


@dataclass
class AdaptationConfig:
    lambda_theta: float = 1e3
    adapt_lr: float = 1e-7
    adapt_epochs: int = 30
    n_keep: int = 25
    cf_lambda: float = 1.0


@dataclass
class ChannelRanking:
    """Foreground-mass ratio per channel and the retained channel indices,
    ordered by descending ratio."""

    ratios: np.ndarray
    kept: np.ndarray


def orthogonality(u: np.ndarray, v: np.ndarray) -> float:
    """(u.v)^2 / (|u|^2 |v|^2): 1 for parallel vectors, 0 for orthogonal,
    invariant to nonzero rescaling of either argument."""
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    nu = float(u @ u)
    nv = float(v @ v)
    if nu == 0.0 or nv == 0.0:
        raise ZeroVector("orthogonality undefined for zero vectors")
    s = float(u @ v)
    return s * s / (nu * nv)


def _stage_filters(z_stage: np.ndarray, label_spectrum: np.ndarray, lam: float):
    """Spatial correlation filters for every channel of one stage's
    compressed map, plus the intermediates the backward pass reuses."""
    zf = _fft.fft2(z_stage.astype(np.float64), axes=(0, 1))
    denom = (zf * zf.conj()).real + lam
    wf = zf * label_spectrum[:, :, None] / denom
    w = _fft.ifft2(wf, axes=(0, 1)).real
    return w, wf, zf, denom


def _theta_sum_and_filter_grads(w: np.ndarray):
    """Pairwise orthogonality total over channel filters (h, w, c) and the
    gradient w.r.t. each filter. Channels whose filter is identically zero
    contribute nothing and receive no gradient."""
    h, wdt, c = w.shape
    v = w.reshape(h * wdt, c).T  # (c, n)
    gram = v @ v.T
    norms = np.diag(gram).copy()
    alive = norms > 0.0
    n_alive = int(alive.sum())
    if n_alive == 0:
        return 0.0, np.zeros_like(w)
    ga = gram[np.ix_(alive, alive)]
    na = norms[alive]
    ratio = ga * ga / np.outer(na, na)
    total = float(ratio.sum())
    # dTheta(u_k, u_l)/du_k = (2 s / (n_k n_l)) u_l - (2 s^2 / (n_k^2 n_l)) u_k,
    # summed over l twice (the pair sum is over ordered pairs).
    coef_other = 4.0 * ga / np.outer(na, na)  # weight of u_l in grad of u_k
    coef_self = (4.0 * ga * ga / na[None, :]).sum(axis=1) / (na * na)
    grad_alive = coef_other @ v[alive] - coef_self[:, None] * v[alive]
    grads = np.zeros((c, h * wdt))
    grads[alive] = grad_alive
    return total, grads.T.reshape(h, wdt, c)


def _theta_delta_on_stage(z_stage, label_spectrum, lam, lambda_theta):
    """Orthogonality loss at one stage and its gradient w.r.t. the stage's
    compressed map, backpropagated through the filter estimation."""
    w, wf, zf, denom = _stage_filters(z_stage, label_spectrum, lam)
    total, gw = _theta_sum_and_filter_grads(w)
    if lambda_theta == 0.0:
        return 0.0, None
    gw *= lambda_theta
    n = z_stage.shape[0] * z_stage.shape[1]
    # Adjoint of the real inverse transform: g_wf = fft2(gw) / n.
    g_wf = _fft.fft2(gw, axes=(0, 1)) / n
    # Adjoint of the per-bin quotient wf = zf*y/(zf*conj(zf) + lam).
    yc = label_spectrum.conj()[:, :, None]
    g_zf = (g_wf * yc - 2.0 * zf * (g_wf * wf.conj()).real) / denom
    # Adjoint of the forward transform of a real plane: delta = n * Re(ifft2).
    delta = _fft.ifft2(g_zf, axes=(0, 1)).real * n
    return lambda_theta * total, delta


def _adaptation_pass(model, x_aug, label, cfg: AdaptationConfig, want_grads: bool):
    if len(x_aug) == 0:
        raise ConfigError("no adaptation samples")
    label = np.asarray(label, dtype=np.float64)
    first = np.asarray(x_aug[0])
    if label.shape != first.shape[:2]:
        raise ShapeMismatch(f"label {label.shape} vs map {first.shape[:2]}")
    label_spectrum = numerics.fft2(label)
    grads = ae.zero_grads(model) if want_grads else None
    total = 0.0

    def hook(_stage, activation):
        return _theta_delta_on_stage(
            activation, label_spectrum, cfg.cf_lambda, cfg.lambda_theta
        )

    for x in x_aug:
        total += ae.multistage_pass(model, x, x, grads, stage_hook=hook)
    return total, grads


def adaptation_loss(model, x_aug, label, cfg: AdaptationConfig) -> float:
    """Stage-summed reconstruction error plus the weighted pairwise
    orthogonality of per-channel filters, summed over all samples (no
    denoising, no batch averaging)."""
    return _adaptation_pass(model, x_aug, label, cfg, want_grads=False)[0]


def adaptation_grad(model, x_aug, label, cfg: AdaptationConfig) -> ae.ModelGrads:
    """Exact gradient of adaptation_loss w.r.t. every kernel and bias."""
    return _adaptation_pass(model, x_aug, label, cfg, want_grads=True)[1]


def fine_tune_initial(
    model, x_aug, label, cfg: AdaptationConfig, history: list | None = None
):
    """Full-batch gradient descent over the augmented first-frame samples."""
    if cfg.adapt_epochs < 0:
        raise ConfigError("adapt_epochs must be >= 0")
    tuned = model.copy()
    for _ in range(cfg.adapt_epochs):
        loss, grads = _adaptation_pass(tuned, x_aug, label, cfg, want_grads=True)
        if history is not None:
            history.append(loss)
        ae.apply_sgd(tuned, grads, cfg.adapt_lr)
    return tuned


def background_channel_removal(
    z: np.ndarray, box: BoundingBox, n_keep: int
) -> ChannelRanking:
    """Rank channels by the fraction of their L1 mass falling inside the
    target box (cell-center containment) and keep the strongest n_keep.
    All-zero channels rank last with ratio 0."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 3:
        raise ShapeMismatch(f"expected (h, w, c) map, got {z.shape}")
    h, w, c = z.shape
    if not 1 <= n_keep <= c:
        raise InvalidChannelCount(f"n_keep {n_keep} outside 1..{c}")
    xs = np.arange(w) + 0.5
    ys = np.arange(h) + 0.5
    inside = (
        (xs[None, :] >= box.x)
        & (xs[None, :] < box.x + box.w)
        & (ys[:, None] >= box.y)
        & (ys[:, None] < box.y + box.h)
    )
    mass = np.abs(z)
    total = mass.sum(axis=(0, 1))
    fg = mass[inside].sum(axis=0) if inside.any() else np.zeros(c)
    ratios = np.divide(fg, total, out=np.zeros(c), where=total > 0)
    order = np.argsort(-ratios, kind="stable")
    return ChannelRanking(ratios=ratios, kept=order[:n_keep].copy())
