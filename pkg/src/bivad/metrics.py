"""Detection metrics: frame-level AUC and region/track detection curves.

Frame AUC is the Mann-Whitney rank statistic (ties count half), micro or
per-video depending on what the caller concatenates.

Region metrics work on bounding boxes around thresholded error-map blobs.
For every candidate threshold the caller supplies the extracted detections;
a ground-truth region counts as detected when some detection matches it
(box IoU >= beta by default, intersection-over-GT-area as an alternative
rule), and any detection matching nothing is a false positive.  Curves are
drawn over false positives per frame and the area is normalized on [0, 1],
extending the last detection rate horizontally when the observed FP rate
never reaches 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import InvalidArgumentError, NumericError, UndefinedMetricError, UnsupportedMetricError

EIGHT_CONNECTED = np.ones((3, 3), dtype=int)


# -- frame-level AUC -------------------------------------------------------


def _average_ranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(x.size, dtype=np.float64)
    sx = x[order]
    i = 0
    while i < x.size:
        j = i
        while j < x.size and sx[j] == sx[i]:
            j += 1
        ranks[order[i:j]] = 0.5 * (i + 1 + j)
        i = j
    return ranks


def frame_auc(scores, labels) -> float:
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if s.ndim != 1 or y.ndim != 1 or s.size != y.size:
        raise InvalidArgumentError(
            f"scores and labels must be equal-length vectors, got {s.shape} vs {y.shape}")
    if s.size == 0:
        raise InvalidArgumentError("cannot compute AUC of empty series")
    if not np.isfinite(s).all():
        raise NumericError("scores contain non-finite values")
    if not np.isin(y, (0.0, 1.0)).all():
        raise InvalidArgumentError("labels must be binary 0/1")
    npos = int(y.sum())
    nneg = y.size - npos
    if npos == 0 or nneg == 0:
        raise UndefinedMetricError(
            f"AUC undefined with {npos} positives and {nneg} negatives")
    ranks = _average_ranks(s)
    u = ranks[y == 1.0].sum() - npos * (npos + 1) / 2.0
    return float(u / (npos * nneg))


# -- regions ----------------------------------------------------------------


@dataclass
class RegionBox:
    """Inclusive pixel-coordinate box with the frame it belongs to."""
    frame: int
    x0: int
    y0: int
    x1: int
    y1: int
    score: float = 0.0

    @property
    def area(self) -> int:
        return (self.x1 - self.x0 + 1) * (self.y1 - self.y0 + 1)


def box_iou(a: RegionBox, b: RegionBox) -> float:
    ix = min(a.x1, b.x1) - max(a.x0, b.x0) + 1
    iy = min(a.y1, b.y1) - max(a.y0, b.y0) + 1
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / float(a.area + b.area - inter)


def box_gt_coverage(det: RegionBox, gt: RegionBox) -> float:
    ix = min(det.x1, gt.x1) - max(det.x0, gt.x0) + 1
    iy = min(det.y1, gt.y1) - max(det.y0, gt.y0) + 1
    if ix <= 0 or iy <= 0:
        return 0.0
    return (ix * iy) / float(gt.area)


def extract_regions(error_map: np.ndarray, threshold: float,
                    min_area: int = 9, frame: int = 0) -> list[RegionBox]:
    """Tight boxes around 8-connected blobs of {error >= threshold}.

    Blobs smaller than min_area pixels are dropped; box score is the peak
    error inside the blob.
    """
    m = np.asarray(error_map)
    if m.ndim != 2:
        raise InvalidArgumentError(f"error map must be 2-D, got shape {m.shape}")
    if not np.isfinite(m).all():
        raise NumericError("error map contains non-finite values")
    if min_area < 1:
        raise InvalidArgumentError("min_area must be >= 1")
    mask = m >= threshold
    labels, count = ndimage.label(mask, structure=EIGHT_CONNECTED)
    if count == 0:
        return []
    areas = np.bincount(labels.ravel())
    out = []
    for idx, sl in enumerate(ndimage.find_objects(labels), start=1):
        if areas[idx] < min_area:
            continue
        blob = labels[sl] == idx
        score = float(m[sl][blob].max())
        out.append(RegionBox(frame=frame, x0=sl[1].start, y0=sl[0].start,
                             x1=sl[1].stop - 1, y1=sl[0].stop - 1, score=score))
    return out


@dataclass
class RegionGroundTruth:
    """Per-frame GT region boxes, with optional track grouping."""
    regions: list[list[RegionBox]]                      # index = frame
    tracks: list[list[tuple[int, int]]] | None = None   # (frame, region_idx)

    @property
    def total_regions(self) -> int:
        return sum(len(r) for r in self.regions)


def derive_tracks(regions: list[list[RegionBox]]) -> list[list[tuple[int, int]]]:
    """Group per-frame regions into tracks by box overlap across
    consecutive frames (greedy best-IoU linking)."""
    tracks: list[list[tuple[int, int]]] = []
    open_tracks: dict[int, int] = {}   # region idx in previous frame -> track id
    for f, frame_regions in enumerate(regions):
        next_open: dict[int, int] = {}
        taken = set()
        for ri, reg in enumerate(frame_regions):
            best, best_iou = None, 0.0
            for prev_ri, tid in open_tracks.items():
                if tid in taken:
                    continue
                prev_reg = regions[f - 1][prev_ri]
                v = box_iou(reg, prev_reg)
                if v > best_iou:
                    best, best_iou = tid, v
            if best is not None and best_iou > 0.0:
                tracks[best].append((f, ri))
                next_open[ri] = best
                taken.add(best)
            else:
                tracks.append([(f, ri)])
                next_open[ri] = len(tracks) - 1
        open_tracks = next_open
    return tracks


def _match_fn(rule: str):
    if rule == "iou":
        return box_iou
    if rule == "gt_coverage":
        return box_gt_coverage
    raise InvalidArgumentError(f"unknown region match rule {rule!r}")


def _detections_per_frame(dets: list[RegionBox]) -> dict[int, list[RegionBox]]:
    by_frame: dict[int, list[RegionBox]] = {}
    for d in dets:
        by_frame.setdefault(d.frame, []).append(d)
    return by_frame


def _sweep(detections: list[list[RegionBox]], gt: RegionGroundTruth,
           beta: float, rule: str):
    """Per threshold: set of detected GT (frame, region_idx) and FP count."""
    match = _match_fn(rule)
    results = []
    for dets in detections:
        detected: set[tuple[int, int]] = set()
        fp = 0
        for f, frame_dets in _detections_per_frame(dets).items():
            gt_regions = gt.regions[f] if 0 <= f < len(gt.regions) else []
            for d in frame_dets:
                hit = False
                for gi, g in enumerate(gt_regions):
                    if match(d, g) >= beta:
                        detected.add((f, gi))
                        hit = True
                if not hit:
                    fp += 1
        results.append((detected, fp))
    return results


def _normalized_curve_auc(points: list[tuple[float, float]]) -> float:
    """Area under rate-vs-FP/frame on [0, 1], horizontal extension at the end."""
    pts = sorted(points)
    xs = [0.0]
    ys = [0.0]
    for x, y in pts:
        xs.append(x)
        ys.append(y)
    if xs[-1] < 1.0:
        xs.append(1.0)
        ys.append(ys[-1])
    elif xs[-1] > 1.0:
        xa, ya = np.array(xs), np.array(ys)
        yat1 = float(np.interp(1.0, xa, ya))
        keep = xa <= 1.0
        xs = list(xa[keep]) + [1.0]
        ys = list(ya[keep]) + [yat1]
    return float(np.trapezoid(ys, xs))


def rbdc(detections: list[list[RegionBox]], gt: RegionGroundTruth,
         n_frames: int, beta: float = 0.1, rule: str = "iou") -> float:
    """Region-based detection criterion over a threshold family."""
    if n_frames < 1:
        raise InvalidArgumentError("n_frames must be >= 1")
    total = gt.total_regions
    if total == 0:
        raise UndefinedMetricError("no ground-truth regions to detect")
    pts = []
    for detected, fp in _sweep(detections, gt, beta, rule):
        pts.append((fp / n_frames, len(detected) / total))
    return _normalized_curve_auc(pts)


def tbdc(detections: list[list[RegionBox]], gt: RegionGroundTruth,
         n_frames: int, alpha: float = 0.1, beta: float = 0.1,
         rule: str = "iou") -> float:
    """Track-based detection criterion: a track counts once >= alpha of its
    regions are detected at a threshold."""
    if gt.tracks is None:
        raise UnsupportedMetricError("ground truth carries no tracks")
    if n_frames < 1:
        raise InvalidArgumentError("n_frames must be >= 1")
    if not gt.tracks:
        raise UndefinedMetricError("no ground-truth tracks to detect")
    pts = []
    for detected, fp in _sweep(detections, gt, beta, rule):
        got = 0
        for track in gt.tracks:
            hits = sum(1 for key in track if key in detected)
            if hits / len(track) >= alpha:
                got += 1
        pts.append((fp / n_frames, got / len(gt.tracks)))
    return _normalized_curve_auc(pts)
