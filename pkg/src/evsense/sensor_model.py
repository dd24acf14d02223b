"""DVS transduction from grayscale frames to polarity events.

Each pixel keeps a reference log intensity. Between two frames the log
intensity is assumed to change linearly, so every threshold crossing gets an
interpolated sub-frame timestamp. A refractory period suppresses crossings
that come too soon after the previous emission.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from decimal import Decimal
from typing import NamedTuple

import numpy as np

EPS = 1e-3
NEGATIVE = 0
POSITIVE = 1

# in-memory event record; canonical order is (t, y, x, p)
EVENT_DTYPE = np.dtype([("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "u1")])


class Event(NamedTuple):
    t: int
    x: int
    y: int
    polarity: int


class InsufficientInputError(ValueError):
    pass


def ms_to_ns(ms: float) -> int:
    """Exact ms -> ns conversion for decimal inputs with at most 2 fractional digits."""
    d = Decimal(str(ms))
    if d.as_tuple().exponent < -2:
        raise ValueError(f"refractory period {ms} ms has more than 2 fractional digits")
    return int(d * 1_000_000)


@dataclass(frozen=True)
class SensorConfig:
    id: str
    th_p: float
    th_n: float
    T_r: float  # ms
    F_v: float  # degrees
    varied: str = field(default="custom", compare=False)

    def __post_init__(self):
        for name in ("th_p", "th_n"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be > 0, got {v}")
        if not (math.isfinite(self.T_r) and self.T_r >= 0):
            raise ValueError(f"T_r must be >= 0 ms, got {self.T_r}")
        if not (0 < self.F_v < 180):
            raise ValueError(f"F_v must be in (0, 180) degrees, got {self.F_v}")
        ms_to_ns(self.T_r)

    @property
    def refractory_ns(self) -> int:
        return ms_to_ns(self.T_r)

    def params(self) -> tuple[float, float, float, float]:
        return (self.th_p, self.th_n, self.T_r, self.F_v)


# The 14 sensor settings. "varied" names the parameter a single-setting
# sweep moves; base uses a 0.01 ms refractory period (see README).
_TABLE = [
    ("base", 0.5, 0.5, 0.01, 90, "none"),
    ("e1", 0.25, 0.25, 0.01, 90, "threshold"),
    ("e2", 0.75, 0.75, 0.01, 90, "threshold"),
    ("e3", 1.0, 1.0, 0.01, 90, "threshold"),
    ("e4", 0.5, 0.5, 10, 90, "refractory"),
    ("e5", 0.5, 0.5, 25, 90, "refractory"),
    ("e6", 0.5, 0.5, 50, 90, "refractory"),
    ("e7", 0.5, 0.5, 0.01, 45, "fov"),
    ("e8", 0.5, 0.5, 0.01, 135, "fov"),
    ("e9", 0.5, 0.5, 0.01, 160, "fov"),
    ("e10", 0.25, 0.25, 50, 45, "combined"),
    ("e11", 1.0, 0.5, 25, 90, "combined"),
    ("e12", 0.7, 0.7, 20, 65, "combined"),
    ("e13", 0.3, 0.9, 15, 130, "combined"),
]

REGISTRY: dict[str, SensorConfig] = {
    row[0]: SensorConfig(row[0], row[1], row[2], row[3], row[4], row[5]) for row in _TABLE
}


def registry_ids() -> list[str]:
    return list(REGISTRY)


def registry_get(config_id: str) -> SensorConfig:
    try:
        return REGISTRY[config_id]
    except KeyError:
        raise KeyError(
            f"unknown sensor config {config_id!r}; valid ids: {', '.join(REGISTRY)}"
        ) from None


def differing_parameters(a: SensorConfig, b: SensorConfig, joint_threshold: bool = True) -> list[str]:
    """Names of parameters that differ between two configs.

    With ``joint_threshold`` the two polarity thresholds count as one
    parameter, matching how the single-setting sweeps move them together.
    """
    out = []
    if joint_threshold:
        if (a.th_p, a.th_n) != (b.th_p, b.th_n):
            out.append("threshold")
    else:
        if a.th_p != b.th_p:
            out.append("th_p")
        if a.th_n != b.th_n:
            out.append("th_n")
    if a.T_r != b.T_r:
        out.append("T_r")
    if a.F_v != b.F_v:
        out.append("F_v")
    return out


# -- frames -----------------------------------------------------------------


@dataclass
class FrameSequence:
    width: int
    height: int
    frame_rate: float
    timestamps: np.ndarray  # uint64 ns, strictly increasing
    frames: np.ndarray  # (N, H, W) uint8
    F_v: float = 90.0

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.uint64)
        self.frames = np.asarray(self.frames)
        if self.frames.dtype != np.uint8:
            raise ValueError("frames must be 8-bit grayscale")
        if self.frames.ndim != 3 or self.frames.shape[1:] != (self.height, self.width):
            raise ValueError(
                f"frames shape {self.frames.shape} does not match {self.height}x{self.width}"
            )
        if len(self.timestamps) != len(self.frames):
            raise ValueError("one timestamp per frame required")
        if len(self.timestamps) > 1 and np.any(np.diff(self.timestamps.astype(np.int64)) <= 0):
            raise ValueError("frame timestamps must be strictly increasing")

    def __len__(self):
        return len(self.frames)


def frame_timestamps(n: int, frame_rate: float) -> np.ndarray:
    period = 1e9 / frame_rate
    return np.array([round(k * period) for k in range(n)], dtype=np.uint64)


# -- transduction -----------------------------------------------------------

_LUT = np.log(np.arange(256, dtype=np.float64) / 255.0 + EPS)


def log_intensity(i):
    """ln(i/255 + eps) for 8-bit samples; accepts scalars or arrays."""
    arr = np.asarray(i)
    if arr.dtype == np.uint8:
        out = _LUT[arr]
    else:
        if np.any((arr < 0) | (arr > 255)):
            raise ValueError("intensity must be in [0, 255]")
        out = np.log(arr / 255.0 + EPS)
    return float(out) if out.ndim == 0 else out


@dataclass
class PixelState:
    L_ref: float
    t_last_emit: int | None = None


def apply_refractory(times, t_last: int | None, t_ref: int) -> list[int]:
    """Indices of candidate times that survive the refractory filter, in order."""
    kept = []
    for k, t in enumerate(times):
        if t_last is None or t - t_last >= t_ref:
            kept.append(k)
            t_last = t
    return kept


def transduce_pixel_interval(
    state: PixelState, L_new: float, t0: int, t1: int, config: SensorConfig, x: int = 0, y: int = 0
) -> tuple[PixelState, list[Event]]:
    """Emit the events of one pixel between two frame timestamps."""
    if not math.isfinite(L_new):
        raise ValueError(f"non-finite log intensity {L_new}")
    if not t0 < t1:
        raise ValueError("t0 must precede t1")
    dL = L_new - state.L_ref
    if dL == 0:
        return PixelState(state.L_ref, state.t_last_emit), []
    if dL > 0:
        th, pol, sign = config.th_p, POSITIVE, 1.0
    else:
        th, pol, sign = config.th_n, NEGATIVE, -1.0
    mag = abs(dL)
    n_raw = math.floor(mag / th)
    dt = t1 - t0
    times = [t0 + math.floor((i * th) / mag * dt) for i in range(1, n_raw + 1)]
    kept = apply_refractory(times, state.t_last_emit, config.refractory_ns)
    if not kept:
        return PixelState(state.L_ref, state.t_last_emit), []
    events = [Event(times[k], x, y, pol) for k in kept]
    last_i = kept[-1] + 1
    return PixelState(state.L_ref + sign * last_i * th, times[kept[-1]]), events


def _interval_events(L_ref, last, L_new, t0, t1, th_p, th_n, t_ref):
    """Vectorized single interval over all pixels; updates L_ref/last in place.

    ``last`` holds -1 for pixels that never emitted.
    """
    dL = L_new - L_ref
    pos = dL > 0
    th = np.where(pos, th_p, th_n)
    mag = np.abs(dL)
    n_raw = np.floor(mag / th).astype(np.int64)
    active = np.flatnonzero(n_raw)
    if active.size == 0:
        return None
    n_a = n_raw[active]
    mag_a = mag[active]
    th_a = th[active]
    last_a = last[active]
    last_i = np.zeros(active.size, dtype=np.int64)
    dt = t1 - t0
    out_idx, out_t = [], []
    for i in range(1, int(n_a.max()) + 1):
        live = n_a >= i
        t = t0 + np.floor((i * th_a) / mag_a * dt).astype(np.int64)
        emit = live & ((last_a < 0) | (t - last_a >= t_ref))
        if emit.any():
            out_idx.append(active[emit])
            out_t.append(t[emit])
            last_a = np.where(emit, t, last_a)
            last_i = np.where(emit, i, last_i)
    last[active] = last_a
    moved = last_i > 0
    sign = np.where(pos[active], 1.0, -1.0)
    idx = active[moved]
    L_ref[idx] = L_ref[idx] + sign[moved] * last_i[moved] * th_a[moved]
    if not out_idx:
        return None
    idx = np.concatenate(out_idx)
    return idx, np.concatenate(out_t), pos[idx]


def canonical_sort(events: np.ndarray) -> np.ndarray:
    order = np.lexsort((events["p"], events["x"], events["y"], events["t"]))
    return events[order]


def transduce_sequence(seq: FrameSequence, config: SensorConfig) -> np.ndarray:
    """Convert a frame sequence into a canonical-ordered event array (EVENT_DTYPE)."""
    if len(seq) < 2:
        raise InsufficientInputError("transduction needs at least 2 frames")
    W = seq.width
    L_ref = log_intensity(seq.frames[0]).ravel().copy()
    last = np.full(L_ref.shape, -1, dtype=np.int64)
    ts = seq.timestamps.astype(np.int64)
    t_ref = config.refractory_ns
    chunks = []
    for k in range(1, len(seq)):
        L_new = log_intensity(seq.frames[k]).ravel()
        res = _interval_events(L_ref, last, L_new, int(ts[k - 1]), int(ts[k]), config.th_p, config.th_n, t_ref)
        if res is None:
            continue
        idx, t, pos = res
        ev = np.empty(idx.size, dtype=EVENT_DTYPE)
        ev["t"] = t
        ev["y"] = idx // W
        ev["x"] = idx % W
        ev["p"] = pos
        chunks.append(ev)
    if not chunks:
        return np.empty(0, dtype=EVENT_DTYPE)
    return canonical_sort(np.concatenate(chunks))


def events_from_list(events) -> np.ndarray:
    arr = np.array([tuple(e) for e in events], dtype=EVENT_DTYPE)
    return arr if len(arr) else np.empty(0, dtype=EVENT_DTYPE)


def events_to_list(arr: np.ndarray) -> list[Event]:
    return [Event(int(r["t"]), int(r["x"]), int(r["y"]), int(r["p"])) for r in arr]
