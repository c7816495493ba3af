"""Prediction objective: windowed SSIM plus Gaussian-weighted local MAE.

Both terms slide the same normalized Gaussian window over every fully
contained (valid) position; no padding is involved, so a window never reads
invented pixels.  Channels are filtered independently and averaged.  Frames
live in [-1, 1], so the SSIM stabilizers use dynamic range L = 2.

The per-clip anomaly score is the combined loss of the midmost fused
prediction against its frame; higher means more anomalous.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import InvalidArgumentError
from .tensor import Tensor

DYNAMIC_RANGE = 2.0
C1 = (0.01 * DYNAMIC_RANGE) ** 2
C2 = (0.03 * DYNAMIC_RANGE) ** 2


def gaussian_window(size: int = 11, sigma: float = 1.5, dtype=np.float32) -> np.ndarray:
    """Normalized 2-D Gaussian tap matrix (sums to exactly 1)."""
    if size < 1 or size % 2 == 0:
        raise InvalidArgumentError(f"window size must be odd and >= 1, got {size}")
    if sigma <= 0:
        raise InvalidArgumentError("window sigma must be positive")
    half = (size - 1) / 2.0
    coords = np.arange(size, dtype=np.float64) - half
    g1 = np.exp(-(coords ** 2) / (2.0 * sigma * sigma))
    win = np.outer(g1, g1)
    return (win / win.sum()).astype(dtype)


def _check_pair(x: Tensor, y: Tensor, size: int):
    if x.shape != y.shape:
        raise InvalidArgumentError(f"prediction/target shapes differ: {x.shape} vs {y.shape}")
    if x.ndim != 4:
        raise InvalidArgumentError(f"expected (B, C, H, W), got {x.shape}")
    if min(x.shape[-2], x.shape[-1]) < size:
        raise InvalidArgumentError(
            f"window {size} does not fit inside frames of {x.shape[-2]}x{x.shape[-1]}")


def _filter(x: Tensor, win: Tensor) -> Tensor:
    """Window-weighted local mean per channel, valid positions only."""
    b, c, h, w = x.shape
    flat = T.reshape(x, (b * c, 1, h, w))
    out = T.conv2d(flat, win, padding="valid")
    oh, ow = out.shape[-2], out.shape[-1]
    return T.reshape(out, (b, c, oh, ow))


def ssim_map(x: Tensor, y: Tensor, window: np.ndarray) -> Tensor:
    win = Tensor(window.reshape((1, 1) + window.shape), dtype=x.data.dtype)
    mx = _filter(x, win)
    my = _filter(y, win)
    mxx = _filter(T.mul(x, x), win)
    myy = _filter(T.mul(y, y), win)
    mxy = _filter(T.mul(x, y), win)
    vx = T.sub(mxx, T.mul(mx, mx))
    vy = T.sub(myy, T.mul(my, my))
    cov = T.sub(mxy, T.mul(mx, my))
    num = T.mul(T.add(T.mul(T.mul(mx, my), 2.0), C1), T.add(T.mul(cov, 2.0), C2))
    den = T.mul(T.add(T.add(T.mul(mx, mx), T.mul(my, my)), C1),
                T.add(T.add(vx, vy), C2))
    return T.div(num, den)


def ssim_loss(x: Tensor, y: Tensor, window: np.ndarray) -> Tensor:
    _check_pair(x, y, window.shape[0])
    return T.sub(1.0, T.mean(ssim_map(x, y, window)))


def local_mae(x: Tensor, y: Tensor, window: np.ndarray) -> Tensor:
    _check_pair(x, y, window.shape[0])
    win = Tensor(window.reshape((1, 1) + window.shape), dtype=x.data.dtype)
    return T.mean(_filter(T.abs_(T.sub(x, y)), win))


@dataclass
class LossParts:
    total: Tensor
    ssim: Tensor
    mae: Tensor


def combined_loss(pred: Tensor, target: Tensor, window: np.ndarray,
                  lam: float = 1.0) -> LossParts:
    s = ssim_loss(pred, target, window)
    m = local_mae(pred, target, window)
    return LossParts(total=T.add(s, T.mul(m, lam)), ssim=s, mae=m)


def anomaly_scores(preds: Tensor, targets: Tensor, window: np.ndarray,
                   lam: float = 1.0) -> np.ndarray:
    """Per-sample combined loss of a (B, C, H, W) prediction batch."""
    _check_pair(preds, targets, window.shape[0])
    b = preds.shape[0]
    out = np.empty(b, dtype=np.float64)
    with T.no_grad():
        for i in range(b):
            p = T.narrow(preds, 0, i, 1)
            t = T.narrow(targets, 0, i, 1)
            out[i] = combined_loss(p, t, window, lam).total.item()
    return out


def error_map(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Per-pixel mean-over-channels absolute error, (C, H, W) -> (H, W)."""
    return np.abs(pred.astype(np.float64) - target.astype(np.float64)).mean(axis=0)


def minmax_normalize(scores: np.ndarray) -> np.ndarray:
    """Map a score series onto [0, 1]; a constant series becomes zeros."""
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0:
        return s.copy()
    lo, hi = float(s.min()), float(s.max())
    if hi - lo < 1e-12:
        return np.zeros_like(s)
    return (s - lo) / (hi - lo)
