"""Event-density blob detector over stacked histograms."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .dataset import BBox


@dataclass(frozen=True)
class Detection:
    box: BBox
    score: float

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must be in [0, 1], got {self.score}")


@dataclass(frozen=True)
class DetectorParams:
    density_threshold: int = 1
    min_area: int = 300
    dilation_radius: int = 6

    def __post_init__(self):
        if self.density_threshold < 1:
            raise ValueError("density_threshold must be >= 1")
        if self.min_area < 1:
            raise ValueError("min_area must be >= 1")
        if self.dilation_radius < 0:
            raise ValueError("dilation_radius must be >= 0")


def density_map(hist) -> np.ndarray:
    data = hist if isinstance(hist, np.ndarray) else hist.data
    return data.sum(axis=0, dtype=np.int64)


_EIGHT = np.ones((3, 3), dtype=bool)


def detect(hist, params: DetectorParams = DetectorParams()) -> list[Detection]:
    dens = density_map(hist)
    mask = dens >= params.density_threshold
    if not mask.any():
        return []
    grown = mask
    if params.dilation_radius > 0:
        r = params.dilation_radius
        grown = ndimage.binary_dilation(mask, structure=np.ones((2 * r + 1, 2 * r + 1), dtype=bool))
    labels, n = ndimage.label(grown, structure=_EIGHT)
    out = []
    for k, sl in enumerate(ndimage.find_objects(labels), start=1):
        comp = labels[sl] == k
        if comp.sum() < params.min_area:
            continue
        support = comp & mask[sl]
        ys, xs = np.nonzero(support)
        y0, x0 = sl[0].start + ys.min(), sl[1].start + xs.min()
        h, w = ys.max() - ys.min() + 1, xs.max() - xs.min() + 1
        mean = dens[sl][support].mean()
        score = min(1.0, float(mean) / (2.0 * params.density_threshold))
        out.append(Detection(BBox(int(x0), int(y0), int(w), int(h), class_id=0), score))
    out.sort(key=lambda d: (-d.score, d.box.y, d.box.x))
    return out


# -- predictions document ---------------------------------------------------


def write_predictions(path, records) -> None:
    """``records``: iterable of (sequence_id, frame_index, detections)."""
    with open(path, "w") as f:
        for seq_id, frame_index, dets in records:
            boxes = [
                {"x": d.box.x, "y": d.box.y, "w": d.box.w, "h": d.box.h, "score": d.score}
                for d in dets
            ]
            f.write(json.dumps({"sequence_id": seq_id, "frame_index": int(frame_index), "boxes": boxes}) + "\n")


def read_predictions(path) -> dict[tuple[str, int], list[Detection]]:
    out: dict[tuple[str, int], list[Detection]] = {}
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                dets = [
                    Detection(BBox(b["x"], b["y"], b["w"], b["h"]), float(b["score"]))
                    for b in rec["boxes"]
                ]
                key = (str(rec["sequence_id"]), int(rec["frame_index"]))
            except (KeyError, TypeError, ValueError) as e:
                raise ValueError(f"{path}:{lineno}: bad prediction record: {e}") from None
            out.setdefault(key, []).extend(dets)
    return out
