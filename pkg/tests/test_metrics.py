"""Metric checks against brute-force oracles.

AUC is compared with explicit pair counting; region extraction with a
hand-written flood fill.  The curve metrics are pinned on small scenes
where the area can be worked out by hand.
"""

import numpy as np
import pytest

from bivad.errors import (InvalidArgumentError, NumericError,
                          UndefinedMetricError, UnsupportedMetricError)
from bivad.metrics import (RegionBox, RegionGroundTruth, box_gt_coverage,
                           box_iou, derive_tracks, extract_regions, frame_auc,
                           rbdc, tbdc)


def pair_auc(scores, labels):
    """O(n^2) oracle: wins plus half-ties over all positive/negative pairs."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                total += 1.0
            elif p == q:
                total += 0.5
    return total / (len(pos) * len(neg))


def flood_regions(mask):
    """4-neighbour-plus-diagonals flood fill oracle returning component
    pixel sets."""
    h, w = mask.shape
    seen = np.zeros_like(mask, dtype=bool)
    comps = []
    for sy in range(h):
        for sx in range(w):
            if not mask[sy, sx] or seen[sy, sx]:
                continue
            stack = [(sy, sx)]
            seen[sy, sx] = True
            pix = []
            while stack:
                y, x = stack.pop()
                pix.append((y, x))
                for dy in (-1, 0, 1):
                    for dx in (-1, 0, 1):
                        ny, nx = y + dy, x + dx
                        if 0 <= ny < h and 0 <= nx < w and mask[ny, nx] and not seen[ny, nx]:
                            seen[ny, nx] = True
                            stack.append((ny, nx))
            comps.append(pix)
    return comps


def test_auc_known_value():
    assert frame_auc([0.8, 0.7, 0.6, 0.5], [1, 0, 1, 0]) == pytest.approx(0.75)


def test_auc_perfect_and_inverted():
    assert frame_auc([0.1, 0.2, 0.9, 0.8], [0, 0, 1, 1]) == pytest.approx(1.0)
    assert frame_auc([0.9, 0.8, 0.1, 0.2], [0, 0, 1, 1]) == pytest.approx(0.0)


def test_auc_ties_count_half():
    assert frame_auc([0.5, 0.5], [1, 0]) == pytest.approx(0.5)
    assert frame_auc([0.5, 0.5, 0.7], [0, 1, 1]) == pytest.approx(0.75)


def test_auc_matches_pair_counting(rng):
    for _ in range(25):
        n = int(rng.integers(10, 200))
        scores = rng.normal(size=n)
        if rng.random() < 0.5:
            scores = np.round(scores, 1)   # force ties
        labels = (rng.random(n) < 0.3).astype(float)
        if labels.sum() in (0, n):
            labels[0], labels[-1] = 1.0, 0.0
        assert frame_auc(scores, labels) == pytest.approx(
            pair_auc(scores, labels), abs=1e-12)


def test_auc_rejects_degenerate_input():
    with pytest.raises(UndefinedMetricError):
        frame_auc([0.1, 0.2], [1, 1])
    with pytest.raises(UndefinedMetricError):
        frame_auc([0.1, 0.2], [0, 0])
    with pytest.raises(InvalidArgumentError):
        frame_auc([0.1], [1, 0])
    with pytest.raises(InvalidArgumentError):
        frame_auc([0.1, 0.2], [1, 2])
    with pytest.raises(NumericError):
        frame_auc([np.nan, 0.2], [1, 0])


# -- region extraction -------------------------------------------------------


def test_extract_single_block():
    m = np.zeros((12, 12))
    m[2:6, 3:8] = 1.0
    regs = extract_regions(m, 0.5, min_area=1, frame=7)
    assert len(regs) == 1
    r = regs[0]
    assert (r.frame, r.x0, r.y0, r.x1, r.y1) == (7, 3, 2, 7, 5)
    assert r.area == 20
    assert r.score == pytest.approx(1.0)


def test_extract_diagonal_connectivity():
    # two pixels touching only at a corner form one 8-connected blob
    m = np.zeros((4, 4))
    m[0, 0] = m[1, 1] = 1.0
    assert len(extract_regions(m, 0.5, min_area=1)) == 1
    m2 = np.zeros((4, 4))
    m2[0, 0] = m2[0, 2] = 1.0
    assert len(extract_regions(m2, 0.5, min_area=1)) == 2


def test_extract_min_area_filter():
    m = np.zeros((10, 10))
    m[0:3, 0:3] = 1.0          # area 9, kept at default
    m[6:8, 6:8] = 1.0          # area 4, dropped
    regs = extract_regions(m, 0.5)
    assert len(regs) == 1
    assert (regs[0].x0, regs[0].y0) == (0, 0)


def test_extract_matches_flood_fill(rng):
    for _ in range(10):
        m = (rng.random((16, 16)) < 0.25).astype(float)
        regs = extract_regions(m, 0.5, min_area=1)
        comps = flood_regions(m >= 0.5)
        assert len(regs) == len(comps)
        got = {(r.x0, r.y0, r.x1, r.y1) for r in regs}
        want = set()
        for pix in comps:
            ys = [p[0] for p in pix]
            xs = [p[1] for p in pix]
            want.add((min(xs), min(ys), max(xs), max(ys)))
        assert got == want


def test_extract_empty_and_errors():
    assert extract_regions(np.zeros((5, 5)), 0.5) == []
    with pytest.raises(InvalidArgumentError):
        extract_regions(np.zeros((2, 2, 2)), 0.5)
    with pytest.raises(InvalidArgumentError):
        extract_regions(np.zeros((5, 5)), 0.5, min_area=0)
    with pytest.raises(NumericError):
        extract_regions(np.full((5, 5), np.nan), 0.5)


# -- box overlap --------------------------------------------------------------


def test_box_iou_values():
    a = RegionBox(0, 0, 0, 9, 9)       # 10x10
    b = RegionBox(0, 5, 5, 14, 14)     # 10x10, 5x5 overlap
    assert box_iou(a, b) == pytest.approx(25 / 175)
    assert box_iou(a, a) == pytest.approx(1.0)
    assert box_iou(a, RegionBox(0, 20, 20, 25, 25)) == 0.0


def test_gt_coverage_rule():
    det = RegionBox(0, 0, 0, 9, 9)
    gt = RegionBox(0, 8, 8, 11, 11)    # 4x4 gt, 2x2 covered
    assert box_gt_coverage(det, gt) == pytest.approx(4 / 16)


# -- curve metrics -------------------------------------------------------------


def _single_gt(n_frames=10, frames=(2, 3, 4)):
    regions = [[] for _ in range(n_frames)]
    for f in frames:
        regions[f] = [RegionBox(f, 4, 4, 9, 9)]
    tracks = [[(f, 0) for f in frames]]
    return RegionGroundTruth(regions=regions, tracks=tracks)


def test_rbdc_perfect_detection():
    gt = _single_gt()
    dets = [r for frame in gt.regions for r in frame]
    assert rbdc([dets, dets, dets], gt, n_frames=10) == pytest.approx(1.0)


def test_rbdc_zero_detection():
    gt = _single_gt()
    assert rbdc([[], [], []], gt, n_frames=10) == pytest.approx(0.0)


def test_rbdc_low_overlap_is_false_positive():
    gt = _single_gt(frames=(2,))
    # box barely clips the GT corner: IoU well below 0.1
    stray = RegionBox(2, 9, 9, 20, 20)
    assert box_iou(stray, gt.regions[2][0]) < 0.1
    auc = rbdc([[stray]], gt, n_frames=10)
    assert auc == pytest.approx(0.0)


def test_rbdc_partial_curve_area():
    # one threshold: half the regions found, 2 FP over 10 frames.
    gt = _single_gt(frames=(2, 3))
    dets = [gt.regions[2][0],
            RegionBox(5, 0, 0, 3, 3), RegionBox(6, 0, 0, 3, 3)]
    # curve points: (0,0) -> (0.2, 0.5) -> extended to (1, 0.5)
    want = 0.5 * 0.2 * 0.5 + 0.8 * 0.5
    assert rbdc([dets], gt, n_frames=10) == pytest.approx(want)


def test_rbdc_gt_coverage_rule_is_laxer():
    gt = _single_gt(frames=(2,))
    # detection swallows the GT box inside a much larger area: IoU small,
    # but the GT box itself is fully covered.
    big = RegionBox(2, 0, 0, 31, 31)
    assert box_iou(big, gt.regions[2][0]) < 0.1
    assert rbdc([[big]], gt, n_frames=10, rule="iou") == pytest.approx(0.0)
    assert rbdc([[big]], gt, n_frames=10, rule="gt_coverage") == pytest.approx(1.0)


def test_rbdc_no_gt_regions():
    gt = RegionGroundTruth(regions=[[] for _ in range(5)])
    with pytest.raises(UndefinedMetricError):
        rbdc([[]], gt, n_frames=5)


def test_tbdc_full_and_fractional_tracks():
    gt = _single_gt(frames=(2, 3, 4, 5))
    full = [r for frame in gt.regions for r in frame]
    assert tbdc([full], gt, n_frames=10) == pytest.approx(1.0)
    # half the track detected still clears alpha=0.1
    half = [gt.regions[2][0], gt.regions[3][0]]
    assert tbdc([half], gt, n_frames=10, alpha=0.1) == pytest.approx(1.0)
    # but not alpha=0.75
    assert tbdc([half], gt, n_frames=10, alpha=0.75) == pytest.approx(0.0)


def test_tbdc_requires_tracks():
    gt = RegionGroundTruth(regions=[[RegionBox(0, 0, 0, 3, 3)]])
    with pytest.raises(UnsupportedMetricError):
        tbdc([[]], gt, n_frames=1)


def test_curve_clips_beyond_one_fp_per_frame():
    # 20 FPs over 10 frames at the loosest threshold: fp rate 2.0 must be
    # clipped, the area only integrates up to 1 fp/frame.
    gt = _single_gt(frames=(2,))
    hit = gt.regions[2][0]
    strays = [RegionBox(f % 10, 20, 20, 25, 25) for f in range(20)]
    tight = [hit]                         # (0.0, 1.0)
    loose = [hit] + strays                # (2.0, 1.0)
    assert rbdc([tight, loose], gt, n_frames=10) == pytest.approx(1.0)
    only_loose = rbdc([loose], gt, n_frames=10)
    # curve: (0,0) -> interpolated rise to (2.0, 1.0), cut at x=1 -> y=0.5
    assert only_loose == pytest.approx(0.25)


# -- track derivation ----------------------------------------------------------


def test_derive_tracks_links_overlapping_boxes():
    regions = [
        [RegionBox(0, 0, 0, 5, 5)],
        [RegionBox(1, 2, 2, 7, 7)],
        [RegionBox(2, 4, 4, 9, 9)],
    ]
    tracks = derive_tracks(regions)
    assert tracks == [[(0, 0), (1, 0), (2, 0)]]


def test_derive_tracks_splits_on_gap():
    regions = [
        [RegionBox(0, 0, 0, 5, 5)],
        [],
        [RegionBox(2, 0, 0, 5, 5)],
    ]
    tracks = derive_tracks(regions)
    assert sorted(tracks) == [[(0, 0)], [(2, 0)]]


def test_derive_tracks_parallel_objects():
    regions = [
        [RegionBox(0, 0, 0, 5, 5), RegionBox(0, 20, 20, 25, 25)],
        [RegionBox(1, 1, 1, 6, 6), RegionBox(1, 21, 21, 26, 26)],
    ]
    tracks = derive_tracks(regions)
    assert sorted(tracks) == [[(0, 0), (1, 0)], [(0, 1), (1, 1)]]
