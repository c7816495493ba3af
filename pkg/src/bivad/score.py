"""Inference: per-frame anomaly scores, error maps, and speed benchmarks.

Scoring slides the clip window over each test video; the fused prediction of
the centre frame is compared with the real frame and the combined loss is
that frame's raw score.  The first and last `margin` frames of a video carry
no score.  Raw and normalized scores land in `scores/`, per-frame error maps
in `maps/` (and optionally as viewable images).
"""

from __future__ import annotations

import os
import time

import numpy as np

from . import tensor as T
from .config import RunConfig
from .data import (build_clip_index, gather_batch, load_video, scan_split,
                   to_byte_range, write_gray_image)
from .errors import InvalidArgumentError
from .objective import (anomaly_scores, error_map, gaussian_window,
                        minmax_normalize)
from .pipeline import BiVadModel, clip_offsets
from .storage import load_checkpoint, save_tensor


def build_model(cfg: RunConfig, checkpoint: str | None = None,
                seed: int = 0) -> BiVadModel:
    model = BiVadModel(cfg.model, seed=seed)
    if checkpoint:
        model.load_state(load_checkpoint(checkpoint))
    return model


def score_video(model: BiVadModel, video: np.ndarray,
                batch_size: int = 8) -> tuple[np.ndarray, np.ndarray]:
    """Raw scores and error maps for every scorable centre of one video.

    Returns (scores [S], maps [S, 1, H, W]) with S = T - 2*margin.
    """
    cfg = model.cfg
    window = gaussian_window(cfg.window_size, cfg.window_sigma)
    offsets = clip_offsets(cfg)
    t_total = video.shape[0]
    centers = list(range(cfg.margin, t_total - cfg.margin))
    if not centers:
        raise InvalidArgumentError(
            f"video of {t_total} frames is shorter than one clip "
            f"({2 * cfg.margin + 1} frames)")
    scores = np.empty(len(centers), dtype=np.float64)
    maps = np.empty((len(centers), 1, cfg.image_size, cfg.image_size),
                    dtype=np.float32)
    mid = cfg.m
    with T.no_grad():
        for i in range(0, len(centers), batch_size):
            chunk = centers[i:i + batch_size]
            idx = np.array([[c + o for o in offsets] for c in chunk])
            batch = video[idx]
            bundle = model.forward(batch)
            pred = bundle.fused[mid]
            targets = batch[:, cfg.n]
            scores[i:i + len(chunk)] = anomaly_scores(
                pred, T.Tensor(targets), window, cfg.lam)
            for j in range(len(chunk)):
                maps[i + j, 0] = error_map(pred.data[j], targets[j])
    return scores, maps


def _write_scores(path: str, values: np.ndarray) -> None:
    with open(path, "w") as f:
        for v in values:
            f.write(f"{v:.8f}\n")


def run_inference(cfg: RunConfig, log=None) -> dict:
    """Score every test video and write score/map artifacts."""
    say = log if log is not None else (lambda line: None)
    model = build_model(cfg, cfg.infer.checkpoint)
    entries = scan_split(cfg.data.root, "test")
    out = cfg.infer.out_dir
    scores_dir = os.path.join(out, "scores")
    maps_dir = os.path.join(out, "maps")
    os.makedirs(scores_dir, exist_ok=True)
    if cfg.infer.maps:
        os.makedirs(maps_dir, exist_ok=True)

    raw_by_video: dict[str, np.ndarray] = {}
    frames_scored = 0
    t0 = time.perf_counter()
    for e in entries:
        video = load_video(e.frame_dir, cfg.model.image_size,
                           cfg.model.image_channels)
        scores, maps = score_video(model, video, cfg.infer.batch_size)
        raw_by_video[e.name] = scores
        frames_scored += scores.size
        _write_scores(os.path.join(scores_dir, e.name + ".raw.txt"), scores)
        if cfg.infer.maps:
            save_tensor(os.path.join(maps_dir, e.name + ".bvt"), maps)
        if cfg.infer.pgm:
            img_dir = os.path.join(out, "maps_img", e.name)
            os.makedirs(img_dir, exist_ok=True)
            peak = max(float(maps.max()), 1e-12)
            for t in range(maps.shape[0]):
                gray = np.clip(maps[t, 0] / peak * 255.0, 0, 255).astype(np.uint8)
                write_gray_image(os.path.join(img_dir, f"{t:05d}.pgm"), gray)
        say(f"video={e.name} frames={scores.size} "
            f"raw_mean={scores.mean():.6f} raw_max={scores.max():.6f}")
    elapsed = time.perf_counter() - t0

    if cfg.data.score_norm == "global":
        pooled = np.concatenate(list(raw_by_video.values()))
        normed = minmax_normalize(pooled)
        pos = 0
        for name, raw in raw_by_video.items():
            _write_scores(os.path.join(scores_dir, name + ".norm.txt"),
                          normed[pos:pos + raw.size])
            pos += raw.size
    else:
        for name, raw in raw_by_video.items():
            _write_scores(os.path.join(scores_dir, name + ".norm.txt"),
                          minmax_normalize(raw))

    ms = 1000.0 * elapsed / max(frames_scored, 1)
    say(f"videos={len(entries)} frames={frames_scored} ms_per_frame={ms:.2f}")
    return {"videos": len(entries), "frames": frames_scored,
            "ms_per_frame": ms, "out_dir": out}


def run_benchmark(cfg: RunConfig, log=None) -> dict:
    """Inference throughput on synthetic input, warmup excluded.

    Latency is structural: a frame can only be scored once n*stride future
    frames exist.
    """
    say = log if log is not None else (lambda line: None)
    bcfg = cfg.bench
    if bcfg.frames < 1 or bcfg.runs < 1:
        raise InvalidArgumentError("bench needs frames >= 1 and runs >= 1")
    model = build_model(cfg, bcfg.checkpoint)
    mcfg = cfg.model
    rng = np.random.default_rng(0)
    t_total = bcfg.frames + 2 * mcfg.margin
    video = rng.uniform(-1.0, 1.0, size=(
        t_total, mcfg.image_channels, mcfg.image_size, mcfg.image_size)
    ).astype(np.float32)

    warm = video[:2 * mcfg.margin + max(bcfg.warmup, 1)]
    score_video(model, warm, cfg.infer.batch_size)

    per_run = []
    for r in range(bcfg.runs):
        t0 = time.perf_counter()
        scores, _ = score_video(model, video, cfg.infer.batch_size)
        dt = time.perf_counter() - t0
        per_run.append(1000.0 * dt / scores.size)
        say(f"run={r + 1} frames={scores.size} ms_per_frame={per_run[-1]:.2f}")
    ms = float(np.mean(per_run))
    report = {
        "frames": int(bcfg.frames),
        "runs": int(bcfg.runs),
        "ms_per_frame": ms,
        "fps": 1000.0 / ms if ms > 0 else float("inf"),
        "latency_frames": mcfg.margin,
        "per_run_ms": per_run,
    }
    say(f"ms_per_frame={ms:.2f} fps={report['fps']:.1f} "
        f"latency_frames={report['latency_frames']}")
    return report
