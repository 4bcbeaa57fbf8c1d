"""Planar tensors, 2-D DFT wrappers, and window/label generators.

Conventions used throughout the package:
  * a plane is a float64 array of shape (height, width),
  * a spectrum is a complex128 array of the same shape,
  * a feature map is a float array of shape (height, width, channels),
  * public peak/box coordinates are (x, y) ordered; array indexing is [y, x].

The forward transform is unnormalized (DC bin equals the plane sum); the
inverse carries the 1/(w*h) factor so that ``ifft2(fft2(p)) == p``.
"""

from __future__ import annotations

import numpy as np
import scipy.fft as _fft

from .errors import ImaginaryResidue

# Largest imaginary residue tolerated when a spectrum is claimed to be
# conjugate-symmetric, relative to max(|real part|, 1).
IMAG_RESIDUE_TOL = 1e-5


def fft2(plane: np.ndarray) -> np.ndarray:
    """Forward 2-D DFT of a real plane."""
    p = np.asarray(plane, dtype=np.float64)
    if p.ndim != 2:
        raise ValueError(f"expected a 2-D plane, got shape {p.shape}")
    return _fft.fft2(p)


def ifft2(spectrum: np.ndarray) -> np.ndarray:
    """Inverse 2-D DFT, returning the real plane.

    The spectrum must be conjugate-symmetric up to rounding; the discarded
    imaginary part is checked against IMAG_RESIDUE_TOL.
    """
    s = np.asarray(spectrum, dtype=np.complex128)
    if s.ndim != 2:
        raise ValueError(f"expected a 2-D spectrum, got shape {s.shape}")
    out = _fft.ifft2(s)
    bound = IMAG_RESIDUE_TOL * max(float(np.abs(out.real).max()), 1.0)
    residue = float(np.abs(out.imag).max())
    if residue >= bound:
        raise ImaginaryResidue(
            f"imaginary residue {residue:.3e} exceeds bound {bound:.3e}"
        )
    return np.ascontiguousarray(out.real)


def gaussian_centered(size: int, sigma: float, cx: float, cy: float) -> np.ndarray:
    """Isotropic Gaussian bump on a size x size grid, peak value 1 at (cx, cy)."""
    if size < 1:
        raise ValueError("size must be >= 1")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    ys = np.arange(size, dtype=np.float64)[:, None]
    xs = np.arange(size, dtype=np.float64)[None, :]
    d2 = (xs - cx) ** 2 + (ys - cy) ** 2
    return np.exp(-d2 / (2.0 * sigma * sigma))


def gaussian_label(size: int, sigma: float) -> np.ndarray:
    """Regression target: Gaussian bump with its peak at (size//2, size//2)."""
    c = size // 2
    return gaussian_centered(size, sigma, c, c)


def cosine_window(size: int) -> np.ndarray:
    """Separable Hann window, zero on the border and maximal at the center."""
    if size < 2:
        raise ValueError("cosine window needs size >= 2")
    h = np.hanning(size)
    return np.outer(h, h)
