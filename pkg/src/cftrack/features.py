"""ROI extraction, initial-frame augmentation, the built-in desk-scale
feature extractor, and the FMAP binary tensor format.

Image frames are uint8 arrays of shape (height, width, channels) with
channels 1 or 3. ROI patches are always emitted with 3 channels (grayscale
input is replicated).
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, DegenerateBox, FormatError, ShapeMismatch

FMAP_MAGIC = b"FMAP"
FMAP_VERSION = 1
_HEADER = struct.Struct("<4sIIIII")

BLUR_VARIANCES = (0.5, 1.0, 1.5, 2.0)


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box, top-left (x, y), extent (w, h), in pixels."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"box extent must be positive, got {self.w}x{self.h}")

    @property
    def cx(self) -> float:
        return self.x + self.w / 2.0

    @property
    def cy(self) -> float:
        return self.y + self.h / 2.0

    def moved(self, dx: float, dy: float) -> "BoundingBox":
        return replace(self, x=self.x + dx, y=self.y + dy)

    def scaled_about_center(self, factor: float) -> "BoundingBox":
        w, h = self.w * factor, self.h * factor
        return BoundingBox(self.cx - w / 2.0, self.cy - h / 2.0, w, h)


@dataclass(frozen=True)
class RoiPatch:
    """Square resampled crop plus the rectangle it came from."""

    image: np.ndarray  # uint8, (side, side, 3)
    source_box: BoundingBox

    @property
    def side(self) -> int:
        return self.image.shape[0]


class FeatureSource:
    """Maps an RoiPatch to a feature map of fixed (S, S, c1) shape."""

    def extract(self, patch: RoiPatch) -> np.ndarray:
        raise NotImplementedError

    def set_frame(self, stem: str) -> None:
        """Hook for sources that pair features with named frames."""


def _as_rgb_frame(frame: np.ndarray) -> np.ndarray:
    f = np.asarray(frame)
    if f.ndim == 2:
        f = f[:, :, None]
    if f.ndim != 3 or f.shape[2] not in (1, 3):
        raise ShapeMismatch(f"expected (h, w, 1|3) frame, got {f.shape}")
    if f.shape[2] == 1:
        f = np.repeat(f, 3, axis=2)
    return f


def extract_roi(
    frame: np.ndarray, target: BoundingBox, factor: float, out_size: int
) -> RoiPatch:
    """Crop a region `factor` times the target size, centered on the target,
    and resample it bilinearly to out_size x out_size.

    Samples falling outside the frame replicate the nearest border pixel, so
    the output never contains undefined values.
    """
    if factor <= 0:
        raise ValueError("factor must be positive")
    fw, fh = target.w * factor, target.h * factor
    if fw < 1.0 or fh < 1.0:
        raise DegenerateBox(f"ROI extent {fw:.3f}x{fh:.3f} below one pixel")
    roi = BoundingBox(target.cx - fw / 2.0, target.cy - fh / 2.0, fw, fh)

    import cv2

    f = np.ascontiguousarray(_as_rgb_frame(frame))
    h, w = f.shape[:2]
    xs = roi.x + (np.arange(out_size) + 0.5) * fw / out_size - 0.5
    ys = roi.y + (np.arange(out_size) + 0.5) * fh / out_size - 0.5
    map_x = np.ascontiguousarray(
        np.broadcast_to(np.clip(xs, 0.0, w - 1.0), (out_size, out_size)),
        dtype=np.float32,
    )
    map_y = np.ascontiguousarray(
        np.broadcast_to(np.clip(ys, 0.0, h - 1.0)[:, None], (out_size, out_size)),
        dtype=np.float32,
    )
    img = cv2.remap(
        f, map_x, map_y, cv2.INTER_LINEAR, borderMode=cv2.BORDER_REPLICATE
    )
    return RoiPatch(image=img, source_box=roi)


def _blur_axis(arr: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    r = (len(kernel) - 1) // 2
    pad = [(0, 0)] * arr.ndim
    pad[axis] = (r, r)
    padded = np.pad(arr, pad, mode="edge")
    out = np.zeros_like(arr)
    for i, k in enumerate(kernel):
        sl = [slice(None)] * arr.ndim
        sl[axis] = slice(i, i + arr.shape[axis])
        out += k * padded[tuple(sl)]
    return out


def gaussian_blur(image: np.ndarray, variance: float) -> np.ndarray:
    """Separable Gaussian blur of a uint8 image; kernel truncated at radius
    ceil(3*sigma) and renormalized, borders replicated."""
    sigma = math.sqrt(variance)
    r = math.ceil(3.0 * sigma)
    taps = np.exp(-np.arange(-r, r + 1, dtype=np.float64) ** 2 / (2.0 * variance))
    taps /= taps.sum()
    out = _blur_axis(image.astype(np.float64), taps, axis=0)
    out = _blur_axis(out, taps, axis=1)
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def augment_initial(patch: RoiPatch) -> list[RoiPatch]:
    """Seven training variants of the first-frame patch: the original, four
    Gaussian blurs of increasing variance, a horizontal flip, and a vertical
    flip."""
    out = [patch]
    for v in BLUR_VARIANCES:
        out.append(replace(patch, image=gaussian_blur(patch.image, v)))
    out.append(replace(patch, image=np.ascontiguousarray(patch.image[:, ::-1])))
    out.append(replace(patch, image=np.ascontiguousarray(patch.image[::-1, :])))
    return out


@dataclass(frozen=True)
class BuiltinFeatureConfig:
    """Recipe for the built-in cell-grid extractor.

    Channels: one grayscale mean, eight gradient-orientation histogram bins,
    and (channels - 9) nonnegative random projections of the raw cell pixels,
    drawn once from `seed`.
    """

    input_size: int = 224
    cell_size: int = 4
    channels: int = 32
    seed: int = 0

    @property
    def grid_size(self) -> int:
        return self.input_size // self.cell_size


_N_GRAD_BINS = 8


def _projection_matrix(cfg: BuiltinFeatureConfig) -> np.ndarray:
    n_proj = cfg.channels - 1 - _N_GRAD_BINS
    dim = cfg.cell_size * cfg.cell_size * 3
    rng = np.random.default_rng(cfg.seed)
    return (rng.standard_normal((dim, n_proj)) / math.sqrt(dim)).astype(np.float32)


def builtin_features(
    patch: RoiPatch, cfg: BuiltinFeatureConfig, projection: np.ndarray | None = None
) -> np.ndarray:
    """Deterministic (S, S, channels) float32 feature map of an ROI patch."""
    if cfg.input_size % cfg.cell_size != 0:
        raise ConfigError(
            f"input size {cfg.input_size} not divisible by cell {cfg.cell_size}"
        )
    if cfg.channels < 1 + _N_GRAD_BINS + 1:
        raise ConfigError(f"need at least {_N_GRAD_BINS + 2} channels")
    if patch.side != cfg.input_size:
        raise ShapeMismatch(f"patch side {patch.side} != input {cfg.input_size}")

    s, cs = cfg.grid_size, cfg.cell_size
    img = patch.image.astype(np.float32) * np.float32(1.0 / 255.0)
    gray = img.mean(axis=2, dtype=np.float32)

    mean_ch = gray.reshape(s, cs, s, cs).mean(axis=(1, 3), dtype=np.float32)

    gy, gx = np.gradient(gray)
    mag = np.hypot(gx, gy)
    ang = np.mod(np.arctan2(gy, gx), np.float32(np.pi))
    bins = np.minimum(
        (ang * np.float32(_N_GRAD_BINS / np.pi)).astype(np.intp), _N_GRAD_BINS - 1
    )
    cell_row = np.arange(cfg.input_size, dtype=np.intp) // cs
    cell_id = cell_row[:, None] * s + cell_row[None, :]
    hist = np.bincount(
        (cell_id * _N_GRAD_BINS + bins).ravel(),
        weights=mag.ravel().astype(np.float64),
        minlength=s * s * _N_GRAD_BINS,
    ).reshape(s, s, _N_GRAD_BINS)

    if projection is None:
        projection = _projection_matrix(cfg)
    blocks = img.reshape(s, cs, s, cs, 3).transpose(0, 2, 1, 3, 4).reshape(s, s, -1)
    proj = np.maximum(blocks @ projection.astype(np.float32), 0.0)

    out = np.concatenate(
        [mean_ch[:, :, None], hist.astype(np.float32), proj], axis=2
    )
    return np.ascontiguousarray(out, dtype=np.float32)


class BuiltinFeatureSource(FeatureSource):
    """Feature source backed by the built-in extractor; the projection matrix
    is drawn once so repeated calls are bit-identical."""

    def __init__(self, cfg: BuiltinFeatureConfig | None = None):
        self.cfg = cfg or BuiltinFeatureConfig()
        self._projection = _projection_matrix(self.cfg)

    def extract(self, patch: RoiPatch) -> np.ndarray:
        return builtin_features(patch, self.cfg, self._projection)


def save_fmap(fmap: np.ndarray, path) -> None:
    """Write a feature map as an FMAP file (little-endian, float32 payload in
    row-major channel-last order)."""
    m = np.asarray(fmap)
    if m.ndim != 3:
        raise ShapeMismatch(f"expected (h, w, c) map, got {m.shape}")
    h, w, c = m.shape
    payload = np.ascontiguousarray(m, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(FMAP_MAGIC, FMAP_VERSION, w, h, c, 0))
        fh.write(payload)


def load_fmap(path) -> np.ndarray:
    """Read an FMAP file back into an (h, w, c) float32 array."""
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise FormatError(f"{path}: truncated header")
        magic, version, w, h, c, _reserved = _HEADER.unpack(head)
        if magic != FMAP_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        if version != FMAP_VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        if w < 1 or h < 1 or c < 1:
            raise FormatError(f"{path}: bad dimensions {w}x{h}x{c}")
        payload = fh.read()
    expected = w * h * c * 4
    if len(payload) != expected:
        raise FormatError(f"{path}: payload {len(payload)} bytes, want {expected}")
    data = np.frombuffer(payload, dtype="<f4")
    return np.ascontiguousarray(data.reshape(h, w, c))


class FmapDirectorySource(FeatureSource):
    """Feature source reading per-frame FMAP files by frame stem.

    The tracker asks for features of ROI patches; this source returns the
    current frame's precomputed map regardless of patch geometry, so scale
    candidates see identical features.
    """

    def __init__(self, directory):
        from pathlib import Path

        self.directory = Path(directory)
        self._current: np.ndarray | None = None

    def set_frame(self, stem: str) -> None:
        path = self.directory / f"{stem}.fmap"
        if not path.exists():
            raise FormatError(f"no feature file for frame {stem!r}: {path}")
        self._current = load_fmap(path)

    def extract(self, patch: RoiPatch) -> np.ndarray:
        if self._current is None:
            raise ConfigError("set_frame() must be called before extract()")
        return self._current
