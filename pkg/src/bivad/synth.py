"""Synthetic surveillance-style videos with scripted anomalies.

Normal behaviour is a handful of bright square sprites drifting at constant
speed and bouncing off the frame border.  Anomalies perturb one sprite for a
bounded window:

    speed_jump          velocity magnitude jumps by a fixed factor
    direction_reversal  the sprite ping-pongs, flipping direction every few frames
    novel_shape         the sprite renders as a cross instead of a square
    off_path            a sinusoidal drift orthogonal to the velocity

Each test video gets at least one window.  Frame labels mark window frames
and pixel masks cover the perturbed sprite, so the output supports frame,
region and track scoring.  Generation is deterministic in the seed, with an
independent stream per video.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, replace

import numpy as np

from .config import SynthConfig
from .data import write_gray_image
from .errors import InvalidArgumentError
from .storage import save_tensor

ANOMALY_KINDS = ("speed_jump", "direction_reversal", "novel_shape", "off_path")
# Anomalies must clear the normal behavior range to be detectable, while
# per-frame displacement stays below sprite_size - 1 so consecutive masks
# keep overlapping after pixel rounding (track grouping needs the chain):
# with the default speed range [0.5, 1.5] and sprite_size 8, jumped speeds
# span [1.75, 5.25] (always above speed_max, always below 7) and the
# off-path offset flips by at most 2 * 3.5 = 7 when the base path bounces.
SPEED_JUMP_FACTOR = 3.5
REVERSAL_PERIOD = 4
NOVEL_SHAPE_SCALE = 2
OFF_PATH_AMPLITUDE = 3.5
OFF_PATH_PERIOD = 10.0
EDGE_GUARD = 20     # keep anomaly windows away from video ends


@dataclass
class Sprite:
    x: float
    y: float
    vx: float
    vy: float
    size: int
    intensity: float
    shape: str = "square"


def _spawn_sprite(rng: np.random.Generator, cfg: SynthConfig) -> Sprite:
    lim = cfg.image_size - cfg.sprite_size
    speed = rng.uniform(cfg.speed_min, cfg.speed_max)
    angle = rng.uniform(0.0, 2.0 * np.pi)
    return Sprite(
        x=float(rng.uniform(0, lim)),
        y=float(rng.uniform(0, lim)),
        vx=float(speed * np.cos(angle)),
        vy=float(speed * np.sin(angle)),
        size=cfg.sprite_size,
        intensity=float(rng.uniform(180.0, 255.0)),
    )


def _advance(s: Sprite, bound: int, scale: float = 1.0) -> None:
    lim = bound - s.size
    s.x += s.vx * scale
    s.y += s.vy * scale
    if s.x < 0:
        s.x, s.vx = -s.x, -s.vx
    elif s.x > lim:
        s.x, s.vx = 2 * lim - s.x, -s.vx
    if s.y < 0:
        s.y, s.vy = -s.y, -s.vy
    elif s.y > lim:
        s.y, s.vy = 2 * lim - s.y, -s.vy


def render_sprite(canvas: np.ndarray, s: Sprite, x: float | None = None,
                  y: float | None = None) -> np.ndarray:
    """Draw the sprite (max blend) and return its boolean pixel mask."""
    bound = canvas.shape[0]
    px = int(round(min(max(s.x if x is None else x, 0), bound - s.size)))
    py = int(round(min(max(s.y if y is None else y, 0), bound - s.size)))
    mask = np.zeros_like(canvas, dtype=bool)
    k = s.size
    if s.shape == "square":
        mask[py:py + k, px:px + k] = True
    elif s.shape == "cross":
        bar = max(k // 3, 1)
        off = (k - bar) // 2
        mask[py + off:py + off + bar, px:px + k] = True
        mask[py:py + k, px + off:px + off + bar] = True
    else:
        raise InvalidArgumentError(f"unknown sprite shape {s.shape!r}")
    np.maximum(canvas, np.where(mask, np.float64(s.intensity), 0.0), out=canvas)
    return mask


@dataclass
class AnomalyWindow:
    kind: str
    start: int
    end: int       # exclusive


def _plan_windows(cfg: SynthConfig, rng: np.random.Generator,
                  kinds: list[str]) -> list[AnomalyWindow]:
    span = cfg.test_frames - 2 * EDGE_GUARD
    if cfg.windows_per_video < 1:
        raise InvalidArgumentError("windows_per_video must be >= 1 for test videos")
    slot = span // cfg.windows_per_video
    if slot < cfg.window_len:
        raise InvalidArgumentError(
            f"cannot fit {cfg.windows_per_video} windows of {cfg.window_len} "
            f"frames into {cfg.test_frames} frames")
    windows = []
    for i in range(cfg.windows_per_video):
        lo = EDGE_GUARD + i * slot
        start = int(rng.integers(lo, lo + slot - cfg.window_len + 1))
        kind = kinds[int(rng.integers(len(kinds)))]
        windows.append(AnomalyWindow(kind, start, start + cfg.window_len))
    return windows


def simulate_video(cfg: SynthConfig, rng: np.random.Generator,
                   windows: list[AnomalyWindow] | None = None,
                   n_frames: int | None = None):
    """Run the sprite world for one video.

    Returns (frames uint8 [T, H, W], labels float32 [T], masks float32
    [T, H, W]); labels and masks are all zero when windows is None.
    """
    t_total = n_frames if n_frames is not None else (
        cfg.test_frames if windows else cfg.train_frames)
    size = cfg.image_size
    sprites = [_spawn_sprite(rng, cfg) for _ in range(max(cfg.sprites, 1))]
    windows = windows or []

    frames = np.zeros((t_total, size, size), dtype=np.uint8)
    labels = np.zeros(t_total, dtype=np.float32)
    masks = np.zeros((t_total, size, size), dtype=np.float32)

    for t in range(t_total):
        active = next((w for w in windows if w.start <= t < w.end), None)
        canvas = np.zeros((size, size), dtype=np.float64)

        for i, s in enumerate(sprites):
            anomalous = active is not None and i == 0
            kind = active.kind if anomalous else ""

            draw_x = draw_y = None
            shape_before = s.shape
            size_before = s.size
            if kind == "novel_shape":
                s.shape = "cross"
                s.size = NOVEL_SHAPE_SCALE * s.size
            elif kind == "off_path":
                speed = float(np.hypot(s.vx, s.vy))
                if speed > 0:
                    phase = 2.0 * np.pi * (t - active.start) / OFF_PATH_PERIOD
                    amp = OFF_PATH_AMPLITUDE * np.sin(phase)
                    draw_x = s.x + amp * (-s.vy / speed)
                    draw_y = s.y + amp * (s.vx / speed)

            pix = render_sprite(canvas, s, x=draw_x, y=draw_y)
            s.shape = shape_before
            s.size = size_before
            if anomalous:
                labels[t] = 1.0
                masks[t] = np.maximum(masks[t], pix.astype(np.float32))

            if kind == "speed_jump":
                _advance(s, size, scale=SPEED_JUMP_FACTOR)
            elif kind == "direction_reversal":
                if (t - active.start) % REVERSAL_PERIOD == REVERSAL_PERIOD - 1:
                    s.vx, s.vy = -s.vx, -s.vy
                _advance(s, size)
            else:
                _advance(s, size)

        frames[t] = np.clip(canvas, 0, 255).astype(np.uint8)
    return frames, labels, masks


def _kinds_list(cfg: SynthConfig) -> list[str]:
    kinds = [k.strip() for k in cfg.anomalies.split(",") if k.strip()]
    for k in kinds:
        if k not in ANOMALY_KINDS:
            raise InvalidArgumentError(
                f"unknown anomaly kind {k!r}, expected one of {ANOMALY_KINDS}")
    if not kinds:
        raise InvalidArgumentError("at least one anomaly kind is required")
    return kinds


def _write_video(dir_path: str, frames: np.ndarray) -> None:
    os.makedirs(dir_path, exist_ok=True)
    for t in range(frames.shape[0]):
        write_gray_image(os.path.join(dir_path, f"{t:05d}.png"), frames[t])


def generate_dataset(cfg: SynthConfig, root: str) -> dict:
    """Write a full train/test dataset under root; returns a small summary."""
    kinds = _kinds_list(cfg)
    master = np.random.default_rng(cfg.seed)
    train_dir = os.path.join(root, "train")
    test_dir = os.path.join(root, "test")
    os.makedirs(train_dir, exist_ok=True)
    os.makedirs(test_dir, exist_ok=True)

    total_windows = 0
    for vi in range(cfg.train_videos):
        rng = np.random.default_rng([cfg.seed, 0, vi])
        frames, _, _ = simulate_video(cfg, rng)
        _write_video(os.path.join(train_dir, f"{vi:02d}"), frames)

    for vi in range(cfg.test_videos):
        rng = np.random.default_rng([cfg.seed, 1, vi])
        windows = _plan_windows(cfg, rng, kinds)
        frames, labels, masks = simulate_video(cfg, rng, windows=windows)
        name = f"{vi:02d}"
        _write_video(os.path.join(test_dir, name), frames)
        save_tensor(os.path.join(test_dir, name + "_gt.bvt"), labels)
        save_tensor(os.path.join(test_dir, name + "_masks.bvt"), masks[:, None])
        total_windows += len(windows)
    _ = master   # reserved for future global draws
    return {
        "train_videos": cfg.train_videos,
        "test_videos": cfg.test_videos,
        "train_frames": cfg.train_videos * cfg.train_frames,
        "test_frames": cfg.test_videos * cfg.test_frames,
        "anomaly_windows": total_windows,
    }
