"""Synthetic scene generation for demos and regression tests: textured
sprites moving, zooming, or disappearing over a smooth background, written
out in the same directory layout the benchmark loader reads."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .features import BoundingBox


def smooth_background(height: int, width: int, rng, contrast: float = 30.0):
    """Low-frequency gray background around mid-level."""
    coarse = rng.uniform(-1.0, 1.0, (height // 16 + 2, width // 16 + 2))
    ys = np.linspace(0, coarse.shape[0] - 1.001, height)
    xs = np.linspace(0, coarse.shape[1] - 1.001, width)
    y0 = ys.astype(int)
    x0 = xs.astype(int)
    ty = (ys - y0)[:, None]
    tx = (xs - x0)[None, :]
    up = (
        coarse[y0[:, None], x0[None, :]] * (1 - ty) * (1 - tx)
        + coarse[y0[:, None], x0[None, :] + 1] * (1 - ty) * tx
        + coarse[y0[:, None] + 1, x0[None, :]] * ty * (1 - tx)
        + coarse[y0[:, None] + 1, x0[None, :] + 1] * ty * tx
    )
    return np.clip(128 + contrast * up, 0, 255).astype(np.uint8)


def textured_sprite(side: int, rng) -> np.ndarray:
    """High-contrast random texture used as the tracking target."""
    blocks = rng.integers(0, 2, (side // 4 + 1, side // 4 + 1)) * 200 + 30
    tex = np.kron(blocks, np.ones((4, 4)))[:side, :side]
    noise = rng.integers(-20, 21, (side, side))
    return np.clip(tex + noise, 0, 255).astype(np.uint8)


def _resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    h, w = img.shape
    ys = np.clip((np.arange(out_h) + 0.5) * h / out_h - 0.5, 0, h - 1)
    xs = np.clip((np.arange(out_w) + 0.5) * w / out_w - 0.5, 0, w - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    ty = (ys - y0)[:, None]
    tx = (xs - x0)[None, :]
    f = img.astype(np.float64)
    out = (
        f[y0[:, None], x0[None, :]] * (1 - ty) * (1 - tx)
        + f[y0[:, None], x1[None, :]] * (1 - ty) * tx
        + f[y1[:, None], x0[None, :]] * ty * (1 - tx)
        + f[y1[:, None], x1[None, :]] * ty * tx
    )
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def render_frame(
    background: np.ndarray,
    sprite: np.ndarray,
    center: tuple[float, float],
    scale: float = 1.0,
    visible: bool = True,
) -> np.ndarray:
    """Stamp the (optionally rescaled) sprite onto a copy of the background,
    clipped at the frame border."""
    frame = background.copy()
    if not visible:
        return frame
    side = max(4, int(round(sprite.shape[0] * scale)))
    spr = sprite if side == sprite.shape[0] else _resize_bilinear(sprite, side, side)
    cx, cy = center
    x0 = int(round(cx - side / 2.0))
    y0 = int(round(cy - side / 2.0))
    h, w = frame.shape
    sx0, sy0 = max(0, -x0), max(0, -y0)
    fx0, fy0 = max(0, x0), max(0, y0)
    fx1, fy1 = min(w, x0 + side), min(h, y0 + side)
    if fx1 > fx0 and fy1 > fy0:
        frame[fy0:fy1, fx0:fx1] = spr[sy0 : sy0 + fy1 - fy0, sx0 : sx0 + fx1 - fx0]
    return frame


def box_at(center: tuple[float, float], side: float) -> BoundingBox:
    return BoundingBox(center[0] - side / 2.0, center[1] - side / 2.0, side, side)


def translating_sequence(
    n_frames: int,
    frame_size: int = 200,
    sprite_side: int = 32,
    start=(60.0, 60.0),
    velocity=(1.0, 0.5),
    seed: int = 7,
):
    """Target moving on a straight line. Returns (frames, boxes)."""
    rng = np.random.default_rng(seed)
    bg = smooth_background(frame_size, frame_size, rng)
    sprite = textured_sprite(sprite_side, rng)
    frames, boxes = [], []
    for t in range(n_frames):
        c = (start[0] + velocity[0] * t, start[1] + velocity[1] * t)
        frames.append(render_frame(bg, sprite, c))
        boxes.append(box_at(c, sprite_side))
    return frames, boxes


def zooming_sequence(
    n_frames: int,
    growth: float = 1.015,
    frame_size: int = 240,
    sprite_side: int = 32,
    seed: int = 11,
):
    """Static target growing by a fixed factor per frame.
    Returns (frames, boxes, scales)."""
    rng = np.random.default_rng(seed)
    bg = smooth_background(frame_size, frame_size, rng)
    sprite = textured_sprite(sprite_side, rng)
    center = (frame_size / 2.0, frame_size / 2.0)
    frames, boxes, scales = [], [], []
    for t in range(n_frames):
        s = growth**t
        frames.append(render_frame(bg, sprite, center, scale=s))
        boxes.append(box_at(center, sprite_side * s))
        scales.append(s)
    return frames, boxes, scales


def occlusion_sequence(
    n_frames: int,
    hide_from: int,
    hide_until: int,
    frame_size: int = 200,
    sprite_side: int = 32,
    seed: int = 23,
):
    """Target static at the frame center, fully hidden on frames
    [hide_from, hide_until), then reappearing in place.
    Returns (frames, boxes, visibility)."""
    rng = np.random.default_rng(seed)
    bg = smooth_background(frame_size, frame_size, rng)
    sprite = textured_sprite(sprite_side, rng)
    center = (frame_size / 2.0, frame_size / 2.0)
    frames, boxes, visible = [], [], []
    for t in range(n_frames):
        vis = not (hide_from <= t < hide_until)
        frames.append(render_frame(bg, sprite, center, visible=vis))
        boxes.append(box_at(center, sprite_side))
        visible.append(vis)
    return frames, boxes, visible


def write_sequence(directory, frames, boxes) -> Path:
    """Write frames and one-based ground truth in the benchmark layout."""
    import cv2

    root = Path(directory)
    img_dir = root / "img"
    img_dir.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(frames, start=1):
        cv2.imwrite(str(img_dir / f"{i:04d}.png"), frame)
    lines = [f"{b.x + 1:.2f},{b.y + 1:.2f},{b.w:.2f},{b.h:.2f}" for b in boxes]
    (root / "groundtruth_rect.txt").write_text("\n".join(lines) + "\n")
    return root
