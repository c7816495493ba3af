"""Scoring protocol: align score files with ground truth and compute metrics.

Each test video of T frames must come with T - 2*margin scores (the clip
window cannot reach the first and last margin frames).  Frame AUC is
micro-averaged over the concatenated normalized series, with per-video
values reported alongside.  Region and track criteria sweep 50 quantile
thresholds of the pooled error-map distribution and pool regions across
videos on a shared frame axis.
"""

from __future__ import annotations

import os

import numpy as np

from .config import RunConfig
from .data import load_labels, load_masks, scan_split
from .errors import (FormatError, IoError, UndefinedMetricError,
                     UnsupportedMetricError)
from .metrics import (RegionBox, RegionGroundTruth, derive_tracks,
                      extract_regions, frame_auc, rbdc, tbdc)
from .objective import minmax_normalize
from .storage import load_tensor


def read_score_file(path: str) -> np.ndarray:
    try:
        with open(path) as f:
            lines = [ln.strip() for ln in f if ln.strip()]
    except OSError as exc:
        raise IoError(f"cannot read score file {path}: {exc}") from exc
    try:
        return np.array([float(ln) for ln in lines], dtype=np.float64)
    except ValueError as exc:
        raise FormatError(f"bad score line in {path}: {exc}") from exc


def _resize_mask_nearest(mask: np.ndarray, h: int, w: int) -> np.ndarray:
    mh, mw = mask.shape
    if (mh, mw) == (h, w):
        return mask
    ys = np.minimum((np.arange(h) * mh) // h, mh - 1)
    xs = np.minimum((np.arange(w) * mw) // w, mw - 1)
    return mask[ys][:, xs]


def _region_ground_truth(masks_aligned: list[np.ndarray], map_hw: tuple[int, int]):
    """GT boxes per pooled frame plus tracks, one shared frame axis."""
    regions: list[list[RegionBox]] = []
    tracks: list[list[tuple[int, int]]] = []
    base = 0
    for masks in masks_aligned:
        video_regions: list[list[RegionBox]] = []
        for t in range(masks.shape[0]):
            m = _resize_mask_nearest(masks[t, 0], *map_hw)
            video_regions.append(extract_regions(m, 0.5, min_area=1,
                                                 frame=base + t))
        for track in derive_tracks(video_regions):
            tracks.append([(base + f, ri) for f, ri in track])
        regions.extend(video_regions)
        base += masks.shape[0]
    return RegionGroundTruth(regions=regions, tracks=tracks)


def _region_metrics(cfg: RunConfig, entries, lengths, report, say):
    ecfg = cfg.eval
    margin = cfg.model.margin
    maps_dir = os.path.join(ecfg.scores, "maps")
    all_maps, masks_aligned = [], []
    for e, t_total in zip(entries, lengths):
        if e.masks_path is None:
            raise UnsupportedMetricError(
                f"region metrics need pixel masks, none for video {e.name}")
        map_path = os.path.join(maps_dir, e.name + ".bvt")
        if not os.path.isfile(map_path):
            raise IoError(f"missing error maps {map_path}; rerun infer with maps on")
        maps = load_tensor(map_path)
        if maps.ndim != 4 or maps.shape[0] != t_total - 2 * margin:
            raise FormatError(
                f"error maps for {e.name} have shape {maps.shape}, expected "
                f"[{t_total - 2 * margin}, 1, H, W]")
        all_maps.append(maps)
        masks_aligned.append(load_masks(e.masks_path, t_total)[margin:t_total - margin])

    map_hw = all_maps[0].shape[2:]
    gt = _region_ground_truth(masks_aligned, map_hw)
    if gt.total_regions == 0:
        raise UndefinedMetricError("pixel masks contain no anomalous regions")

    pooled = np.concatenate([m.ravel() for m in all_maps])
    thresholds = np.unique(np.quantile(pooled, np.linspace(0.0, 1.0, ecfg.thresholds)))
    n_frames = sum(m.shape[0] for m in all_maps)

    detections: list[list[RegionBox]] = []
    for th in thresholds:
        dets = []
        base = 0
        for maps in all_maps:
            for t in range(maps.shape[0]):
                dets.extend(extract_regions(maps[t, 0], float(th),
                                            min_area=ecfg.min_area,
                                            frame=base + t))
            base += maps.shape[0]
        detections.append(dets)

    if ecfg.rbdc:
        report["rbdc"] = rbdc(detections, gt, n_frames, beta=ecfg.beta,
                              rule=ecfg.region_match)
        say(f"rbdc={report['rbdc']:.4f}")
    if ecfg.tbdc:
        report["tbdc"] = tbdc(detections, gt, n_frames, alpha=ecfg.alpha,
                              beta=ecfg.beta, rule=ecfg.region_match)
        say(f"tbdc={report['tbdc']:.4f}")


def evaluate(cfg: RunConfig, log=None) -> dict:
    """Compare written scores against dataset ground truth."""
    say = log if log is not None else (lambda line: None)
    ecfg = cfg.eval
    margin = cfg.model.margin
    scores_dir = os.path.join(ecfg.scores, "scores")
    if not os.path.isdir(scores_dir):
        raise IoError(f"missing scores directory {scores_dir}")

    entries = [e for e in scan_split(cfg.data.root, "test")
               if e.labels_path is not None]
    if not entries:
        raise UndefinedMetricError("no test video carries frame labels")

    report: dict = {}
    lengths = []
    all_scores, all_labels = [], []
    for e in entries:
        raw = read_score_file(os.path.join(scores_dir, e.name + ".raw.txt"))
        t_total = len(os.listdir(e.frame_dir))
        lengths.append(t_total)
        labels = load_labels(e.labels_path, t_total)
        expect = t_total - 2 * margin
        if raw.size != expect:
            raise FormatError(
                f"video {e.name}: {raw.size} scores for {t_total} frames, "
                f"expected {expect} (frames minus 2*margin)")
        aligned = labels[margin:t_total - margin]
        normed = minmax_normalize(raw)
        all_scores.append(normed)
        all_labels.append(aligned)
        try:
            auc = frame_auc(normed, aligned)
            report[f"auc.{e.name}"] = auc
            say(f"video={e.name} auc={auc:.4f}")
        except UndefinedMetricError:
            report[f"auc.{e.name}"] = float("nan")
            say(f"video={e.name} auc=nan (single-class labels)")

    if cfg.data.score_norm == "global":
        pooled = minmax_normalize(np.concatenate(
            [read_score_file(os.path.join(scores_dir, e.name + ".raw.txt"))
             for e in entries]))
    else:
        pooled = np.concatenate(all_scores)
    report["frame_auc"] = frame_auc(pooled, np.concatenate(all_labels))
    report["frames"] = int(pooled.size)
    say(f"frame_auc={report['frame_auc']:.4f} frames={report['frames']}")

    if ecfg.rbdc or ecfg.tbdc:
        _region_metrics(cfg, entries, lengths, report, say)

    if ecfg.out:
        out_dir = os.path.dirname(ecfg.out)
        if out_dir:
            os.makedirs(out_dir, exist_ok=True)
        with open(ecfg.out, "w") as f:
            for k, v in report.items():
                f.write(f"{k}={v}\n")
    return report
