"""Independent reference implementations used to pin expected values.

Everything here is deliberately written the slow, obvious way (explicit
loops over output bins) so the fast paths are checked against arithmetic
that shares no code with them.
"""

import numpy as np


def dft2_direct(plane: np.ndarray) -> np.ndarray:
    """Unnormalized forward DFT by direct summation over every output bin."""
    p = np.asarray(plane, dtype=np.float64)
    h, w = p.shape
    ys = np.arange(h)
    xs = np.arange(w)
    out = np.empty((h, w), dtype=np.complex128)
    for v in range(h):
        for u in range(w):
            phase = -2j * np.pi * (u * xs[None, :] / w + v * ys[:, None] / h)
            out[v, u] = (p * np.exp(phase)).sum()
    return out


def idft2_direct(spectrum: np.ndarray) -> np.ndarray:
    """Normalized inverse DFT by direct summation; returns the real part."""
    s = np.asarray(spectrum, dtype=np.complex128)
    h, w = s.shape
    ys = np.arange(h)
    xs = np.arange(w)
    out = np.empty((h, w), dtype=np.complex128)
    for y in range(h):
        for x in range(w):
            phase = 2j * np.pi * (x * xs[None, :] / w + y * ys[:, None] / h)
            out[y, x] = (s * np.exp(phase)).sum() / (w * h)
    return out.real


def circular_correlation(filt: np.ndarray, plane: np.ndarray) -> np.ndarray:
    """Spatial-domain circular cross-correlation: out[k] is the inner product
    of the plane with the filter rolled back by k."""
    f = np.asarray(filt, dtype=np.float64)
    p = np.asarray(plane, dtype=np.float64)
    h, w = p.shape
    out = np.empty((h, w))
    for ky in range(h):
        for kx in range(w):
            out[ky, kx] = (np.roll(f, (-ky, -kx), axis=(0, 1)) * p).sum()
    return out


def conv3x3_same_relu(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Per-pixel 3x3 same-padded convolution plus ReLU, all explicit loops."""
    h, w, cin = x.shape
    cout = kernel.shape[3]
    out = np.zeros((h, w, cout))
    for y in range(h):
        for xx in range(w):
            for o in range(cout):
                acc = bias[o]
                for dy in range(3):
                    for dx in range(3):
                        sy, sx = y + dy - 1, xx + dx - 1
                        if 0 <= sy < h and 0 <= sx < w:
                            acc += float(kernel[dy, dx, :, o] @ x[sy, sx, :])
                out[y, xx, o] = max(acc, 0.0)
    return out


def central_difference(f, p0: np.ndarray, eps: float = 1e-4) -> np.ndarray:
    """Central finite-difference gradient of a scalar function of a vector."""
    g = np.zeros_like(p0)
    for i in range(p0.size):
        up = p0.copy()
        dn = p0.copy()
        up[i] += eps
        dn[i] -= eps
        g[i] = (f(up) - f(dn)) / (2.0 * eps)
    return g


def max_relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float((np.abs(a - b) / denom).max())
