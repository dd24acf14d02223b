"""Ground-truth boxes, town splits, configuration partitions and manifests."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .sensor_model import REGISTRY


class ManifestError(ValueError):
    pass


class UnknownConfigError(ManifestError):
    pass


class DuplicateSequenceError(ManifestError):
    pass


class MissingPathError(ManifestError):
    pass


@dataclass(frozen=True)
class BBox:
    x: float
    y: float
    w: float
    h: float
    class_id: int = 0
    track_id: int = -1

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box size must be positive, got {self.w}x{self.h}")

    @property
    def area(self) -> float:
        return self.w * self.h

    def to_dict(self) -> dict:
        return asdict(self)


def filter_boxes(boxes, min_side: float = 20, min_diag: float = 60) -> list[BBox]:
    """Drop boxes with a side below ``min_side`` or a diagonal below ``min_diag`` pixels."""
    return [
        b for b in boxes
        if min(b.w, b.h) >= min_side and math.hypot(b.w, b.h) >= min_diag
    ]


# -- splits -----------------------------------------------------------------

SPLITS = ("train", "val", "test")


def _round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


def split_sizes(n: int) -> tuple[int, int, int]:
    if n < 3:
        raise ValueError(f"need at least 3 towns to split, got {n}")
    n_val = max(1, _round_half_up(0.15 * n))
    n_train = min(_round_half_up(0.70 * n), n - n_val - 1)
    n_train = max(1, n_train)
    return n_train, n_val, n - n_train - n_val


def split_towns(town_ids, seed: int = 0) -> dict:
    """Seeded 70-15-15 town assignment; returns town_id -> split name."""
    ids = list(town_ids)
    towns = sorted(set(ids), key=str)
    if len(towns) != len(ids):
        raise ValueError("duplicate town ids")
    n_train, n_val, _ = split_sizes(len(towns))
    order = np.random.default_rng(seed).permutation(len(towns))
    out = {}
    for rank, idx in enumerate(order):
        split = "train" if rank < n_train else "val" if rank < n_train + n_val else "test"
        out[towns[idx]] = split
    return out


# -- partitions -------------------------------------------------------------

_PARTITIONS = {
    "train": ("base", "e1", "e3", "e4", "e6", "e7", "e9"),
    "test1": ("base", "e1", "e3", "e4", "e6", "e7", "e9"),
    "test2": ("e2", "e5", "e8"),
    "test3": ("e10", "e11"),
    "test4": ("e12", "e13"),
}


@dataclass(frozen=True)
class Partition:
    name: str
    config_ids: tuple[str, ...]


def partition_names() -> list[str]:
    return list(_PARTITIONS)


def partition_for(name: str) -> Partition:
    try:
        return Partition(name, _PARTITIONS[name])
    except KeyError:
        raise KeyError(f"unknown partition {name!r}; valid: {', '.join(_PARTITIONS)}") from None


# -- labels -----------------------------------------------------------------


@dataclass
class LabelFrame:
    frame_index: int
    t_ns: int
    boxes: list[BBox] = field(default_factory=list)


def write_labels(path, frames) -> None:
    with open(path, "w") as f:
        for fr in frames:
            rec = {"frame_index": fr.frame_index, "t_ns": int(fr.t_ns),
                   "boxes": [b.to_dict() for b in fr.boxes]}
            f.write(json.dumps(rec) + "\n")


def read_labels(path) -> list[LabelFrame]:
    out = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                boxes = [BBox(**b) for b in rec.get("boxes", [])]
                out.append(LabelFrame(int(rec["frame_index"]), int(rec["t_ns"]), boxes))
            except (KeyError, TypeError, ValueError) as e:
                raise ValueError(f"{path}:{lineno}: bad label record: {e}") from None
    return out


# -- manifest ---------------------------------------------------------------


@dataclass(frozen=True)
class SequenceEntry:
    sequence_id: str
    town_id: str
    config_id: str
    frames: str
    events: str
    labels: str


@dataclass
class DatasetManifest:
    sequences: list[SequenceEntry] = field(default_factory=list)
    splits: dict[str, str] = field(default_factory=dict)
    root: Path | None = None

    def validate(self, check_paths: bool = False) -> None:
        seen = set()
        for s in self.sequences:
            if s.sequence_id in seen:
                raise DuplicateSequenceError(f"duplicate sequence_id {s.sequence_id!r}")
            seen.add(s.sequence_id)
            if s.config_id not in REGISTRY:
                raise UnknownConfigError(f"sequence {s.sequence_id!r}: unknown config {s.config_id!r}")
            if check_paths:
                for p in (s.frames, s.events, s.labels):
                    if not self.resolve(p).exists():
                        raise MissingPathError(f"sequence {s.sequence_id!r}: missing {p}")
        for town, split in self.splits.items():
            if split not in SPLITS:
                raise ManifestError(f"town {town!r}: bad split {split!r}")

    def resolve(self, rel: str) -> Path:
        return (self.root or Path(".")) / rel

    def to_dict(self) -> dict:
        return {"sequences": [asdict(s) for s in self.sequences], "splits": dict(self.splits)}


def save_manifest(manifest: DatasetManifest, path) -> None:
    manifest.validate()
    with open(path, "w") as f:
        yaml.safe_dump(manifest.to_dict(), f, sort_keys=False)


def load_manifest(path, check_paths: bool = False) -> DatasetManifest:
    path = Path(path)
    try:
        with open(path) as f:
            doc = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise ManifestError(f"{path}: not a valid document: {e}") from None
    if not isinstance(doc, dict) or not isinstance(doc.get("sequences"), list):
        raise ManifestError(f"{path}: expected a mapping with a 'sequences' list")
    try:
        seqs = [SequenceEntry(**{k: str(v) for k, v in s.items()}) for s in doc["sequences"]]
    except (TypeError, AttributeError) as e:
        raise ManifestError(f"{path}: bad sequence entry: {e}") from None
    splits = {str(k): str(v) for k, v in (doc.get("splits") or {}).items()}
    m = DatasetManifest(seqs, splits, root=path.parent)
    m.validate(check_paths)
    return m
