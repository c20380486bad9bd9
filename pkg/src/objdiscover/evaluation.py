"""Detection metrics against ground truth boxes."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .geometry import OrientedBox, bev_iou, scale_factors
from .persistence import DYNAMIC, ScenePointSet
from .reward import DEFAULT_SHAPE_PRIOR, ShapePriorMixture

__all__ = [
    "IOU_THRESHOLDS",
    "DISTANCE_THRESHOLDS",
    "RANGE_BANDS",
    "SceneMatches",
    "match_boxes",
    "average_precision",
    "aligned_iou_3d",
    "yaw_error",
    "tp_errors",
    "assign_class",
    "scale_factor_histogram",
    "EvalReport",
    "evaluate",
]

IOU_THRESHOLDS = (0.5, 0.7)
DISTANCE_THRESHOLDS = (0.5, 1.0, 2.0, 4.0)
RANGE_BANDS = ((0.0, 30.0), (30.0, 50.0), (50.0, 80.0), (0.0, 80.0))
TP_DISTANCE = 2.0
N_RECALL_POINTS = 40


def _band_name(band) -> str:
    return f"{band[0]:g}-{band[1]:g}m"


@dataclass
class SceneMatches:
    """Greedy matching outcome for one scene.

    ``pred_gt[i]`` is the matched GT index of prediction i, or -1 for a false
    positive; ``order`` lists predictions by descending score.
    """

    scores: np.ndarray
    pred_gt: np.ndarray
    order: np.ndarray
    n_gt: int

    @property
    def tp(self) -> int:
        return int(np.sum(self.pred_gt >= 0))

    @property
    def fp(self) -> int:
        return int(np.sum(self.pred_gt < 0))

    @property
    def fn(self) -> int:
        return self.n_gt - self.tp

    def pairs(self) -> list[tuple[int, int]]:
        return [(int(i), int(self.pred_gt[i])) for i in self.order if self.pred_gt[i] >= 0]


def _bev_distance(a: OrientedBox, b: OrientedBox) -> float:
    return math.hypot(a.x - b.x, a.y - b.y)


def match_boxes(preds: Sequence[OrientedBox], scores: Sequence[float], gts: Sequence[OrientedBox],
                criterion: str = "iou", threshold: float = 0.5) -> SceneMatches:
    """Greedy score-ordered matching; each GT is matched at most once.

    With ``criterion="iou"`` a prediction takes the unmatched GT of highest
    BEV IoU provided it is >= ``threshold``; with ``"distance"`` the closest
    unmatched GT within ``threshold`` meters (BEV center distance).
    """
    if len(preds) != len(scores):
        raise ValueError("preds and scores differ in length")
    scores = np.asarray(scores, dtype=np.float64)
    order = np.array(sorted(range(len(preds)), key=lambda i: (-scores[i], i)), dtype=np.int64)
    pred_gt = np.full(len(preds), -1, dtype=np.int64)
    taken = np.zeros(len(gts), dtype=bool)
    for i in order:
        best, best_val = -1, None
        for j, g in enumerate(gts):
            if taken[j]:
                continue
            if criterion == "iou":
                v = bev_iou(preds[i], g)
                ok = v >= threshold and (best_val is None or v > best_val)
            elif criterion == "distance":
                v = _bev_distance(preds[i], g)
                ok = v <= threshold and (best_val is None or v < best_val)
            else:
                raise ValueError(f"unknown criterion {criterion!r}")
            if ok:
                best, best_val = j, v
        if best >= 0:
            pred_gt[i] = best
            taken[best] = True
    return SceneMatches(scores, pred_gt, order, len(gts))


def average_precision(matches: Sequence[SceneMatches], n_points: int = N_RECALL_POINTS) -> float | None:
    """Interpolated AP pooled over scenes, sampled at ``n_points`` recall levels.

    Returns None when there is no ground truth.
    """
    n_gt = sum(m.n_gt for m in matches)
    if n_gt == 0:
        return None
    rows = []
    for s, m in enumerate(matches):
        for rank, i in enumerate(m.order):
            rows.append((-m.scores[i], s, rank, m.pred_gt[i] >= 0))
    if not rows:
        return 0.0
    rows.sort()
    tp_flags = np.array([r[3] for r in rows], dtype=np.float64)
    tp_cum = np.cumsum(tp_flags)
    precision = tp_cum / np.arange(1, len(rows) + 1)
    recall = tp_cum / n_gt
    # running max from the right gives the interpolated precision envelope
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    ap = 0.0
    for k in range(1, n_points + 1):
        r = k / n_points
        idx = np.searchsorted(recall, r - 1e-12, side="left")
        if idx < len(recall):
            ap += envelope[idx]
    return ap / n_points


def aligned_iou_3d(a: OrientedBox, b: OrientedBox) -> float:
    """3D IoU after moving both boxes to a common center and yaw."""
    inter = min(a.w, b.w) * min(a.l, b.l) * min(a.h, b.h)
    return inter / (a.w * a.l * a.h + b.w * b.l * b.h - inter)


def yaw_error(a: float, b: float) -> float:
    """Absolute heading difference modulo pi, in [0, pi/2]."""
    d = (a - b) % math.pi
    return min(d, math.pi - d)


def tp_errors(pairs: Sequence[tuple[OrientedBox, OrientedBox]]) -> tuple[float, float, float] | None:
    """Mean translation, scale and orientation errors over matched (pred, gt) pairs."""
    if not pairs:
        return None
    ate = np.mean([_bev_distance(p, g) for p, g in pairs])
    ase = np.mean([1.0 - aligned_iou_3d(p, g) for p, g in pairs])
    aoe = np.mean([yaw_error(p.yaw, g.yaw) for p, g in pairs])
    return float(ate), float(ase), float(aoe)


def assign_class(box: OrientedBox, prior: ShapePriorMixture = DEFAULT_SHAPE_PRIOR) -> str:
    """Most likely class under the unscaled per-class size Gaussians."""
    ll = prior.component_log_likelihood([box.w, box.l, box.h])[0]
    return prior.class_names[int(np.argmax(ll))]


def scale_factor_histogram(scenes: Sequence[ScenePointSet], gt_boxes: Sequence[Sequence[OrientedBox]],
                           bin_width: float = 0.05, s_max: float = 2.0) -> tuple[np.ndarray, np.ndarray]:
    """Histogram of scale factors of dynamic points in the doubled GT boxes.

    Returns (counts, bin_edges) over [0, s_max].
    """
    n_bins = int(round(s_max / bin_width))
    edges = np.linspace(0.0, s_max, n_bins + 1)
    counts = np.zeros(n_bins, dtype=np.int64)
    for scene, boxes in zip(scenes, gt_boxes):
        if not len(boxes):
            continue
        dyn = scene.points[scene.labels == DYNAMIC]
        if len(dyn) == 0:
            continue
        s = scale_factors(dyn, np.stack([b.as_array() for b in boxes]))
        vals = s[s <= s_max]
        counts += np.histogram(vals, bins=edges)[0]
    return counts, edges


@dataclass
class EvalReport:
    ap: dict = field(default_factory=dict)  # (iou threshold, band) -> AP or None
    map: dict = field(default_factory=dict)  # band -> mean AP over distance thresholds, or None
    ap_distance: dict = field(default_factory=dict)  # (distance threshold, band) -> AP or None
    recall: dict = field(default_factory=dict)  # iou threshold -> recall (0-80 m)
    counts: dict = field(default_factory=dict)  # setting -> (tp, fp, fn)
    ate: float | None = None
    ase: float | None = None
    aoe: float | None = None

    def items(self) -> list[tuple[str, object]]:
        out = []
        for (thr, band), v in self.ap.items():
            out.append((f"ap_iou{thr:g}_{_band_name(band)}", v))
        for (thr, band), v in self.ap_distance.items():
            out.append((f"ap_dist{thr:g}_{_band_name(band)}", v))
        for band, v in self.map.items():
            out.append((f"map_{_band_name(band)}", v))
        for thr, v in self.recall.items():
            out.append((f"recall_iou{thr:g}", v))
        for key, (tp, fp, fn) in self.counts.items():
            out.append((f"tp_{key}", tp))
            out.append((f"fp_{key}", fp))
            out.append((f"fn_{key}", fn))
        out += [("ate", self.ate), ("ase", self.ase), ("aoe", self.aoe)]
        return out

    def to_kv(self) -> str:
        lines = []
        for k, v in self.items():
            lines.append(f"{k}={'absent' if v is None else repr(v)}\n")
        return "".join(lines)

    def to_text(self) -> str:
        def fmt(v):
            return "  n/a " if v is None else f"{100 * v:6.2f}"

        lines = ["BEV AP (IoU threshold)"]
        bands = [b for b in RANGE_BANDS]
        lines.append("        " + "".join(f"{_band_name(b):>10}" for b in bands))
        for thr in IOU_THRESHOLDS:
            lines.append(f"IoU {thr:<4g}" + "".join(f"{fmt(self.ap.get((thr, b))):>10}" for b in bands))
        lines.append("")
        lines.append("mAP over center-distance thresholds " + ", ".join(f"{t:g}" for t in DISTANCE_THRESHOLDS) + " m")
        lines.append("        " + "".join(f"{fmt(self.map.get(b)):>10}" for b in bands))
        lines.append("")
        for thr, v in self.recall.items():
            lines.append(f"recall @ IoU {thr:g}: {fmt(v).strip()}")
        tp_line = "n/a" if self.ate is None else f"ATE {self.ate:.3f} m  ASE {self.ase:.3f}  AOE {self.aoe:.3f} rad"
        lines.append(f"TP errors (match distance {TP_DISTANCE:g} m): {tp_line}")
        return "\n".join(lines) + "\n"


def _in_band(box: OrientedBox, band) -> bool:
    r = math.hypot(box.x, box.y)
    lo, hi = band
    return lo <= r < hi or (hi == RANGE_BANDS[-1][1] and r == hi)


def evaluate(preds: Sequence[Sequence[OrientedBox]], scores: Sequence[Sequence[float]],
             gts: Sequence[Sequence[OrientedBox]]) -> EvalReport:
    """Dataset-level report from per-scene predictions, scores and GT boxes."""
    report = EvalReport()

    def matches_for(criterion, thr, band):
        out = []
        for p, s, g in zip(preds, scores, gts):
            keep_p = [i for i, b in enumerate(p) if _in_band(b, band)]
            keep_g = [b for b in g if _in_band(b, band)]
            out.append(match_boxes([p[i] for i in keep_p], [s[i] for i in keep_p], keep_g, criterion, thr))
        return out

    full = RANGE_BANDS[-1]
    for thr in IOU_THRESHOLDS:
        for band in RANGE_BANDS:
            ms = matches_for("iou", thr, band)
            report.ap[(thr, band)] = average_precision(ms)
            if band == full:
                tp = sum(m.tp for m in ms)
                fp = sum(m.fp for m in ms)
                fn = sum(m.fn for m in ms)
                report.counts[f"iou{thr:g}"] = (tp, fp, fn)
                n_gt = tp + fn
                report.recall[thr] = tp / n_gt if n_gt else None
    for band in RANGE_BANDS:
        aps = []
        for thr in DISTANCE_THRESHOLDS:
            ap = average_precision(matches_for("distance", thr, band))
            report.ap_distance[(thr, band)] = ap
            aps.append(ap)
        report.map[band] = None if any(a is None for a in aps) else float(np.mean(aps))

    pairs = []
    for p, s, g in zip(preds, scores, gts):
        m = match_boxes(p, s, g, "distance", TP_DISTANCE)
        pairs += [(p[i], g[j]) for i, j in m.pairs()]
    errs = tp_errors(pairs)
    if errs is not None:
        report.ate, report.ase, report.aoe = errs
    m2 = [match_boxes(p, s, g, "distance", TP_DISTANCE) for p, s, g in zip(preds, scores, gts)]
    tp = sum(m.tp for m in m2)
    report.counts[f"dist{TP_DISTANCE:g}"] = (tp, sum(m.fp for m in m2), sum(m.fn for m in m2))
    return report
