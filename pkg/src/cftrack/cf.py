"""Closed-form frequency-domain correlation filters: estimation, response,
running update, validation-score fusion, and sub-pixel peak refinement.

Filters live in the spectrum domain; the running update is linear, so
interpolating spectra equals interpolating spatial filters. Per-bin algebra:

    estimate:  W = (Z * Y) / (Z * conj(Z) + lam)
    response:  r = ifft2(W * conj(Z'))

With this orientation, content that moves by +d in the test plane moves the
response peak by -d relative to the label center; callers decoding motion
must subtract the peak from the center (see tracker.py).
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.fft as _fft

from . import numerics
from .errors import ShapeMismatch, SingularBin

_scratch = threading.local()


def _buf(key: str, shape, dtype) -> np.ndarray:
    """Per-thread scratch array; contents are undefined between calls."""
    bufs = getattr(_scratch, "bufs", None)
    if bufs is None:
        bufs = _scratch.bufs = {}
    arr = bufs.get(key)
    if arr is None or arr.shape != shape or arr.dtype != dtype:
        arr = bufs[key] = np.empty(shape, dtype)
    return arr


@dataclass
class FilterChannel:
    """Frequency-domain filter for one feature channel."""

    spectrum: np.ndarray  # complex128, (h, w)

    @property
    def size(self):
        return self.spectrum.shape


@dataclass
class FilterBank:
    """Per-channel running-average filter spectra plus shared label/knobs."""

    spectra: np.ndarray  # complex128, (n_channels, h, w)
    label: np.ndarray  # float64, (h, w)
    lam: float
    gamma: float

    @property
    def n_channels(self) -> int:
        return self.spectra.shape[0]

    def channels(self) -> list[FilterChannel]:
        return [FilterChannel(s) for s in self.spectra]

    def copy(self) -> "FilterBank":
        return FilterBank(self.spectra.copy(), self.label, self.lam, self.gamma)


@dataclass
class ResponseMap:
    """Real response plane with its maximum and (x, y) integer peak."""

    plane: np.ndarray
    max_value: float
    peak: tuple[int, int]


def make_response(plane: np.ndarray) -> ResponseMap:
    p = np.asarray(plane, dtype=np.float64)
    flat = int(p.argmax())
    py, px = divmod(flat, p.shape[1])
    return ResponseMap(plane=p, max_value=float(p[py, px]), peak=(px, py))


def spectra_of(planes: np.ndarray) -> np.ndarray:
    """Forward transforms of stacked (n, h, w) real planes."""
    return _fft.fft2(np.asarray(planes, dtype=np.float64), axes=(-2, -1))


def estimate_from_spectra(
    plane_spectra: np.ndarray, label_spectrum: np.ndarray, lam: float
) -> np.ndarray:
    denom = _buf("est_denom", plane_spectra.shape, np.float64)
    np.square(plane_spectra.real, out=denom)
    denom += np.square(plane_spectra.imag)
    denom += lam
    if lam == 0.0 and (denom == 0.0).any():
        raise SingularBin("zero-magnitude frequency bin with lam = 0")
    out = plane_spectra * label_spectrum
    out /= denom
    return out


def estimate_spectra(
    planes: np.ndarray, label_spectrum: np.ndarray, lam: float
) -> np.ndarray:
    """Batched filter estimation over stacked (n, h, w) training planes."""
    return estimate_from_spectra(spectra_of(planes), label_spectrum, lam)


def response_from_spectra(
    filter_spectra: np.ndarray, plane_spectra: np.ndarray
) -> np.ndarray:
    prod = _buf("resp_prod", plane_spectra.shape, np.complex128)
    np.conjugate(plane_spectra, out=prod)
    np.multiply(filter_spectra, prod, out=prod)
    return np.ascontiguousarray(
        _fft.ifft2(prod, axes=(-2, -1), overwrite_x=True).real
    )


def response_stack(spectra: np.ndarray, planes: np.ndarray) -> np.ndarray:
    """Batched responses of stacked filters to stacked (n, h, w) test planes."""
    if spectra.shape != np.shape(planes):
        raise ShapeMismatch(
            f"filter stack {spectra.shape} vs plane stack {np.shape(planes)}"
        )
    return response_from_spectra(spectra, spectra_of(planes))


def estimate_filter(z: np.ndarray, y: np.ndarray, lam: float) -> FilterChannel:
    """Closed-form single-channel filter for training plane z and label y."""
    z = np.asarray(z, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if z.shape != y.shape:
        raise ShapeMismatch(f"plane {z.shape} vs label {y.shape}")
    if lam < 0:
        raise ValueError("lam must be >= 0")
    spec = estimate_spectra(z[None], numerics.fft2(y), lam)[0]
    return FilterChannel(spectrum=spec)


def response(f: FilterChannel, zp: np.ndarray) -> ResponseMap:
    """Response of a filter to a test plane; equals circular cross-correlation
    of the spatial filter with the plane."""
    zp = np.asarray(zp, dtype=np.float64)
    if f.spectrum.shape != zp.shape:
        raise ShapeMismatch(f"filter {f.spectrum.shape} vs plane {zp.shape}")
    plane = numerics.ifft2(f.spectrum * numerics.fft2(zp).conj())
    return make_response(plane)


def update_bank(bank: FilterBank, fresh) -> FilterBank:
    """Convex per-bin interpolation of the bank toward fresh filters."""
    if isinstance(fresh, np.ndarray):
        fresh_spectra = fresh
    else:
        fresh_spectra = np.stack([fc.spectrum for fc in fresh])
    if fresh_spectra.shape != bank.spectra.shape:
        raise ShapeMismatch(
            f"bank {bank.spectra.shape} vs fresh {fresh_spectra.shape}"
        )
    mixed = (1.0 - bank.gamma) * bank.spectra + bank.gamma * fresh_spectra
    return FilterBank(spectra=mixed, label=bank.label, lam=bank.lam, gamma=bank.gamma)


def _ideal_response(shape, peak, sigma: float) -> np.ndarray:
    h, w = shape
    px, py = peak
    ys = np.arange(h, dtype=np.float64)[:, None]
    xs = np.arange(w, dtype=np.float64)[None, :]
    return np.exp(-((xs - px) ** 2 + (ys - py) ** 2) / (2.0 * sigma * sigma))


def validation_score(r: ResponseMap, sigma: float, lambda_s: float) -> float:
    """exp(-lambda_s * squared distance to an ideal Gaussian centered at the
    response's own peak); 1 for a perfectly Gaussian response."""
    if sigma <= 0 or lambda_s <= 0:
        raise ValueError("sigma and lambda_s must be positive")
    ideal = _ideal_response(r.plane.shape, r.peak, sigma)
    d = r.plane - ideal
    return float(np.exp(-lambda_s * (d * d).sum()))


@lru_cache(maxsize=8)
def _gauss_rows(size: int, sigma: float) -> np.ndarray:
    """Row p holds exp(-(i - p)^2 / (2 sigma^2)) for integer peaks p."""
    idx = np.arange(size, dtype=np.float64)
    d = idx[None, :] - idx[:, None]
    return np.exp(-(d * d) / (2.0 * sigma * sigma))


def validation_scores_stack(
    planes: np.ndarray, sigma: float, lambda_s: float
) -> np.ndarray:
    """Batched validation scores for stacked (n, h, w) response planes; the
    ideal Gaussian at each plane's integer peak is built separably from
    cached 1-D profiles."""
    n, h, w = planes.shape
    flat = np.ascontiguousarray(planes).reshape(n, h * w).argmax(axis=1)
    pys, pxs = np.divmod(flat, w)
    d = _buf("val_diff", planes.shape, np.float64)
    np.multiply(
        _gauss_rows(h, sigma)[pys][:, :, None],
        _gauss_rows(w, sigma)[pxs][:, None, :],
        out=d,
    )
    np.subtract(planes, d, out=d)
    np.square(d, out=d)
    return np.exp(-lambda_s * d.reshape(n, -1).sum(axis=1))


def integrate(responses, scores) -> ResponseMap:
    """Score-weighted sum of response maps (no normalization)."""
    if len(responses) != len(scores) or not len(responses):
        raise ShapeMismatch("responses and scores must be nonempty and aligned")
    if isinstance(responses, np.ndarray) and responses.ndim == 3:
        total = np.tensordot(np.asarray(scores, dtype=np.float64), responses, axes=1)
        return make_response(total)
    planes = [
        r.plane if isinstance(r, ResponseMap) else np.asarray(r, dtype=np.float64)
        for r in responses
    ]
    shape = planes[0].shape
    for p in planes:
        if p.shape != shape:
            raise ShapeMismatch("response maps differ in size")
    total = np.zeros(shape, dtype=np.float64)
    for p, s in zip(planes, scores):
        total += s * p
    return make_response(total)


def _parabolic_offset(left: float, mid: float, right: float) -> float:
    denom = left - 2.0 * mid + right
    if denom == 0.0:
        return 0.0
    return float(np.clip(0.5 * (left - right) / denom, -0.5, 0.5))


def subpixel_peak(r: ResponseMap) -> tuple[float, float]:
    """Separable quadratic refinement of the integer peak; circular neighbors,
    offsets clamped to [-0.5, 0.5], degenerate curvature yields offset 0."""
    h, w = r.plane.shape
    if h < 3 or w < 3:
        raise ShapeMismatch("sub-pixel refinement needs at least 3x3 maps")
    px, py = r.peak
    row = r.plane[py]
    col = r.plane[:, px]
    ox = _parabolic_offset(row[(px - 1) % w], row[px], row[(px + 1) % w])
    oy = _parabolic_offset(col[(py - 1) % h], col[py], col[(py + 1) % h])
    return (px + ox, py + oy)
