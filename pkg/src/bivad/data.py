"""Frame and dataset IO.

A dataset root holds `train/<video>/` and `test/<video>/` directories of
image frames (png, pgm or ppm, consumed in lexicographic order).  Test
videos may carry side files next to their directory:

    <video>_gt.bvt     float vector [T] of 0/1 frame labels
    <video>_masks.bvt  tensor [T, 1, H, W] of 0/1 pixel masks

Frames are resized bilinearly to the model resolution and mapped linearly
from [0, 255] to [-1, 1].
"""

from __future__ import annotations

import os
import queue
import threading
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import FormatError, InvalidArgumentError, IoError
from .storage import load_tensor

FRAME_EXTENSIONS = (".png", ".pgm", ".ppm")


# -- single frames -----------------------------------------------------------


def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize a (C, H, W) image with bilinear sampling.

    Sample positions follow the half-pixel convention
    src = (dst + 0.5) * in/out - 0.5, clamped to the border.
    """
    if img.ndim != 3:
        raise InvalidArgumentError(f"expected (C, H, W) image, got shape {img.shape}")
    if out_h < 1 or out_w < 1:
        raise InvalidArgumentError("output size must be positive")
    c, h, w = img.shape
    if (h, w) == (out_h, out_w):
        return img
    sy = np.clip((np.arange(out_h) + 0.5) * (h / out_h) - 0.5, 0.0, h - 1.0)
    sx = np.clip((np.arange(out_w) + 0.5) * (w / out_w) - 0.5, 0.0, w - 1.0)
    y0 = np.floor(sy).astype(int)
    x0 = np.floor(sx).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (sy - y0).astype(img.dtype)[None, :, None]
    fx = (sx - x0).astype(img.dtype)[None, None, :]
    tl = img[:, y0][:, :, x0]
    tr = img[:, y0][:, :, x1]
    bl = img[:, y1][:, :, x0]
    br = img[:, y1][:, :, x1]
    top = tl + (tr - tl) * fx
    bot = bl + (br - bl) * fx
    return top + (bot - top) * fy


def load_frame(path: str, channels: int) -> np.ndarray:
    """Read an image as float32 (C, H, W) in [0, 255], converting between
    grayscale and RGB as needed."""
    if channels not in (1, 3):
        raise InvalidArgumentError(f"channels must be 1 or 3, got {channels}")
    try:
        with Image.open(path) as im:
            im = im.convert("L" if channels == 1 else "RGB")
            arr = np.asarray(im, dtype=np.float32)
    except OSError as exc:
        raise IoError(f"cannot read frame {path}: {exc}") from exc
    if arr.ndim == 2:
        arr = arr[None]
    else:
        arr = arr.transpose(2, 0, 1)
    return arr


def to_unit_range(img255: np.ndarray) -> np.ndarray:
    """Map [0, 255] to [-1, 1]; 127.5 lands on 0."""
    return (img255.astype(np.float32) / 127.5) - 1.0


def to_byte_range(x: np.ndarray) -> np.ndarray:
    """Inverse of to_unit_range with rounding and clipping to uint8."""
    return np.clip(np.rint((np.asarray(x, dtype=np.float64) + 1.0) * 127.5),
                   0, 255).astype(np.uint8)


def write_gray_image(path: str, gray: np.ndarray) -> None:
    if gray.ndim != 2 or gray.dtype != np.uint8:
        raise InvalidArgumentError("expected a 2-D uint8 image")
    try:
        Image.fromarray(gray, mode="L").save(path)
    except OSError as exc:
        raise IoError(f"cannot write image {path}: {exc}") from exc


# -- videos ------------------------------------------------------------------


def list_frame_files(video_dir: str) -> list[str]:
    try:
        names = sorted(os.listdir(video_dir))
    except OSError as exc:
        raise IoError(f"cannot list video directory {video_dir}: {exc}") from exc
    files = [os.path.join(video_dir, n) for n in names
             if n.lower().endswith(FRAME_EXTENSIONS)]
    if not files:
        raise IoError(f"no frame images in {video_dir}")
    return files


def load_video(video_dir: str, size: int, channels: int) -> np.ndarray:
    """All frames of one video as float32 [T, C, size, size] in [-1, 1]."""
    frames = []
    native = None
    for path in list_frame_files(video_dir):
        raw = load_frame(path, channels)
        if native is None:
            native = raw.shape[1:]
        elif raw.shape[1:] != native:
            raise FormatError(
                f"frame size changes within {video_dir}: "
                f"{native} then {raw.shape[1:]} at {os.path.basename(path)}")
        frames.append(to_unit_range(bilinear_resize(raw, size, size)))
    return np.stack(frames)


@dataclass
class VideoEntry:
    name: str
    frame_dir: str
    labels_path: str | None = None
    masks_path: str | None = None


def scan_split(root: str, split: str) -> list[VideoEntry]:
    """Enumerate `<root>/<split>/<video>/` directories with their side files."""
    split_dir = os.path.join(root, split)
    if not os.path.isdir(split_dir):
        raise IoError(f"missing dataset split directory {split_dir}")
    entries = []
    for name in sorted(os.listdir(split_dir)):
        frame_dir = os.path.join(split_dir, name)
        if not os.path.isdir(frame_dir):
            continue
        gt = os.path.join(split_dir, name + "_gt.bvt")
        masks = os.path.join(split_dir, name + "_masks.bvt")
        entries.append(VideoEntry(
            name=name,
            frame_dir=frame_dir,
            labels_path=gt if os.path.isfile(gt) else None,
            masks_path=masks if os.path.isfile(masks) else None,
        ))
    if not entries:
        raise IoError(f"no video directories under {split_dir}")
    return entries


def load_labels(path: str, n_frames: int) -> np.ndarray:
    labels = load_tensor(path)
    if labels.ndim != 1:
        raise FormatError(f"frame labels must be rank 1, got rank {labels.ndim}")
    if labels.shape[0] != n_frames:
        raise FormatError(
            f"label count {labels.shape[0]} does not match frame count {n_frames}")
    if not np.isin(labels, (0.0, 1.0)).all():
        raise FormatError("frame labels must be 0/1")
    return labels.astype(np.float64)


def load_masks(path: str, n_frames: int) -> np.ndarray:
    masks = load_tensor(path)
    if masks.ndim != 4 or masks.shape[1] != 1:
        raise FormatError(
            f"pixel masks must have shape [T, 1, H, W], got {masks.shape}")
    if masks.shape[0] != n_frames:
        raise FormatError(
            f"mask count {masks.shape[0]} does not match frame count {n_frames}")
    return masks


# -- clip sampling -------------------------------------------------------------


@dataclass(frozen=True)
class ClipRef:
    video: int
    center: int


def build_clip_index(lengths: list[int], margin: int, hop: int = 1) -> list[ClipRef]:
    """Every scorable clip center across a list of videos, optionally
    thinned to every hop-th center per video."""
    if hop < 1:
        raise InvalidArgumentError("hop must be >= 1")
    refs = []
    for vi, t in enumerate(lengths):
        for c in range(margin, t - margin, hop):
            refs.append(ClipRef(vi, c))
    return refs


def split_train_val(refs: list[ClipRef], val_fraction: float,
                    rng: np.random.Generator) -> tuple[list[ClipRef], list[ClipRef]]:
    """Shuffled clip-level split; validation gets round(frac * n), at least
    one clip of each kind when possible."""
    if not 0.0 <= val_fraction < 1.0:
        raise InvalidArgumentError("val_fraction must be in [0, 1)")
    order = rng.permutation(len(refs))
    n_val = int(round(val_fraction * len(refs)))
    if val_fraction > 0.0 and n_val == 0 and len(refs) > 1:
        n_val = 1
    val = [refs[i] for i in order[:n_val]]
    train = [refs[i] for i in order[n_val:]]
    return train, val


def gather_batch(videos: list[np.ndarray], refs: list[ClipRef],
                 offsets: list[int]) -> np.ndarray:
    """Stack clips into a float32 (B, L, C, H, W) batch."""
    clips = []
    for ref in refs:
        idx = [ref.center + off for off in offsets]
        clips.append(videos[ref.video][idx])
    return np.stack(clips)


class Prefetcher:
    """Runs an iterator on one background thread with a bounded queue.

    A single worker keeps consumption order identical to the source
    iterator, so results stay deterministic while IO and batch assembly
    overlap compute.
    """

    _DONE = object()

    def __init__(self, iterator, depth: int = 2):
        if depth < 1:
            raise InvalidArgumentError("prefetch depth must be >= 1")
        self._q: queue.Queue = queue.Queue(maxsize=depth)
        self._err: BaseException | None = None
        self._thread = threading.Thread(target=self._run, args=(iterator,), daemon=True)
        self._thread.start()

    def _run(self, iterator):
        try:
            for item in iterator:
                self._q.put(item)
        except BaseException as exc:   # surfaced on the consumer side
            self._err = exc
        finally:
            self._q.put(self._DONE)

    def __iter__(self):
        while True:
            item = self._q.get()
            if item is self._DONE:
                if self._err is not None:
                    raise self._err
                return
            yield item
