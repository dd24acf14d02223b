"""COCO-style box metrics and per-test-set score aggregation."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .dataset import BBox, Partition

METRICS = ("AP", "AP50", "AP75", "AP_L", "AP_M")
IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * k, 2) for k in range(10))
RECALL_GRID = np.arange(101) / 100.0  # k/100 exactly rounded, comparable to tp/n

# effective side sqrt(w*h) bands, exclusive bounds
SIZE_BANDS = {"all": (0.0, math.inf), "medium": (32.0, 96.0), "large": (96.0, math.inf)}


class IncompleteInputError(ValueError):
    pass


def iou(a: BBox, b: BBox) -> float:
    iw = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    ih = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.w * a.h + b.w * b.h - inter)


def effective_side(b: BBox) -> float:
    return math.sqrt(b.w * b.h)


def _in_band(b: BBox, band) -> bool:
    lo, hi = band
    s = effective_side(b)
    if band == SIZE_BANDS["all"]:
        return True
    return lo < s < hi


@dataclass
class MatchResult:
    pred_tp: list[bool]
    pred_ignored: list[bool]
    pred_gt: list[int | None]
    gt_matched: list[bool]


def match_greedy(preds, gts, iou_thr: float, gt_ignore=None, pred_ignore=None) -> MatchResult:
    """Score-ordered one-to-one matching.

    ``preds`` must already be sorted by descending score. Each prediction takes
    the unmatched non-ignored gt of highest IoU (first index on ties) if it
    reaches ``iou_thr``; failing that it may absorb an ignored gt, which makes
    the prediction ignored too. Unmatched predictions flagged in
    ``pred_ignore`` are ignored rather than counted as false positives.
    """
    n_g = len(gts)
    gt_ignore = list(gt_ignore) if gt_ignore is not None else [False] * n_g
    pred_ignore = list(pred_ignore) if pred_ignore is not None else [False] * len(preds)
    taken = [False] * n_g
    tp, ign, which = [], [], []
    for k, p in enumerate(preds):
        pbox = p.box if hasattr(p, "box") else p
        best, best_iou = None, iou_thr
        for ignored_pass in (False, True):
            for g in range(n_g):
                if taken[g] or gt_ignore[g] != ignored_pass:
                    continue
                v = iou(pbox, gts[g])
                if v >= best_iou and (best is None or v > best_iou):
                    best, best_iou = g, v
            if best is not None:
                break
        if best is None:
            tp.append(False)
            ign.append(pred_ignore[k])
            which.append(None)
        else:
            taken[best] = True
            tp.append(not gt_ignore[best])
            ign.append(gt_ignore[best])
            which.append(best)
    return MatchResult(tp, ign, which, taken)


def average_precision(scores, tp_flags, gt_count: int) -> float | None:
    """101-point interpolated AP over score-sorted detections.

    ``tp_flags`` are True for true positives and False for false positives.
    Returns None when there is nothing to measure (no gts, no detections).
    """
    scores = np.asarray(scores, dtype=np.float64)
    flags = np.asarray(tp_flags, dtype=bool)
    if gt_count == 0:
        return None if len(flags) == 0 else 0.0
    if len(flags) == 0:
        return 0.0
    order = np.argsort(-scores, kind="mergesort")
    flags = flags[order]
    tp = np.cumsum(flags)
    fp = np.cumsum(~flags)
    recall = tp / gt_count
    precision = tp / (tp + fp)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_GRID, side="left")
    q = np.where(idx < len(envelope), envelope[np.minimum(idx, len(envelope) - 1)], 0.0)
    return float(q.mean())


def _as_images(x):
    if isinstance(x, dict):
        return x
    return {0: x}


def _evaluate(preds_by_img, gts_by_img, iou_thr, band) -> float | None:
    scores, flags = [], []
    n_gt = 0
    for key in sorted(set(preds_by_img) | set(gts_by_img), key=str):
        gts = list(gts_by_img.get(key, []))
        preds = sorted(preds_by_img.get(key, []), key=lambda d: -d.score)
        g_ign = [not _in_band(g, band) for g in gts]
        p_ign = [not _in_band(p.box, band) for p in preds]
        n_gt += g_ign.count(False)
        m = match_greedy(preds, gts, iou_thr, g_ign, p_ign)
        for p, t, ig in zip(preds, m.pred_tp, m.pred_ignored):
            if not ig:
                scores.append(p.score)
                flags.append(t)
    return average_precision(scores, flags, n_gt)


def coco_metrics(preds, gts) -> dict[str, float | None]:
    """All five metrics; inputs are lists (one image) or dicts keyed by image."""
    P, G = _as_images(preds), _as_images(gts)
    per_thr = [_evaluate(P, G, t, SIZE_BANDS["all"]) for t in IOU_THRESHOLDS]

    def band_ap(band):
        vals = [_evaluate(P, G, t, SIZE_BANDS[band]) for t in IOU_THRESHOLDS]
        return None if vals[0] is None else float(np.mean(vals))

    return {
        "AP": None if per_thr[0] is None else float(np.mean(per_thr)),
        "AP50": per_thr[0],
        "AP75": per_thr[IOU_THRESHOLDS.index(0.75)],
        "AP_L": band_ap("large"),
        "AP_M": band_ap("medium"),
    }


# -- aggregation ------------------------------------------------------------


@dataclass
class ScoreReport:
    test_set: str
    per_config: dict[str, dict[str, float | None]]
    mean: dict[str, float | None] = field(default_factory=dict)
    std: dict[str, float | None] = field(default_factory=dict)
    sample_std: dict[str, float | None] = field(default_factory=dict)


def score_k(per_config_metrics: dict, partition: Partition, metrics=METRICS) -> ScoreReport:
    """Mean of each metric over a partition's configs; undefined values are skipped.

    ``std`` is the population deviation; ``sample_std`` uses n - 1.
    """
    missing = [c for c in partition.config_ids if c not in per_config_metrics]
    if missing:
        raise IncompleteInputError(f"{partition.name}: missing configs {', '.join(missing)}")
    rows = {c: dict(per_config_metrics[c]) for c in partition.config_ids}
    rep = ScoreReport(partition.name, rows)
    for m in metrics:
        vals = [r.get(m) for r in rows.values()]
        vals = [v for v in vals if v is not None and not (isinstance(v, float) and math.isnan(v))]
        if not vals:
            rep.mean[m] = rep.std[m] = rep.sample_std[m] = None
            continue
        mu = math.fsum(vals) / len(vals)
        rep.mean[m] = mu
        rep.std[m] = math.sqrt(math.fsum((v - mu) ** 2 for v in vals) / len(vals))
        rep.sample_std[m] = (
            math.sqrt(math.fsum((v - mu) ** 2 for v in vals) / (len(vals) - 1)) if len(vals) > 1 else 0.0
        )
    return rep


def _fmt(v):
    return "" if v is None else repr(float(v))


def write_report_csv(path, reports) -> None:
    """Long-format CSV: test_set, config_id, metric, value (mean rows use config_id 'mean')."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["test_set", "config_id", "metric", "value"])
        for rep in reports:
            for cid, vals in rep.per_config.items():
                for m in METRICS:
                    w.writerow([rep.test_set, cid, m, _fmt(vals.get(m))])
            for m in METRICS:
                w.writerow([rep.test_set, "mean", m, _fmt(rep.mean.get(m))])


def read_report_csv(path) -> list[dict]:
    with open(path, newline="") as f:
        return [
            {**r, "value": float(r["value"]) if r["value"] else None}
            for r in csv.DictReader(f)
        ]
