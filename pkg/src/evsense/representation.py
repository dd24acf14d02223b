"""Stacked histogram representation of event windows.

A window of ``window_len`` ns is cut into ``n_bins`` equal bins. Channels
``0..n_bins-1`` count negative events per bin, ``n_bins..2*n_bins-1`` count
positive events. Cells saturate at ``clip``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sensor_model import NEGATIVE, POSITIVE

MS = 1_000_000


@dataclass(frozen=True)
class RepresentationSpec:
    W: int
    H: int
    window_len: int = 50 * MS
    n_bins: int = 10
    clip: int = 255

    def __post_init__(self):
        if self.n_bins < 1:
            raise ValueError("n_bins must be >= 1")
        if self.window_len <= 0 or self.window_len % self.n_bins:
            raise ValueError(f"window_len {self.window_len} ns not divisible into {self.n_bins} bins")
        if not 1 <= self.clip <= 255:
            raise ValueError("clip must be in [1, 255] for 8-bit storage")
        if self.W <= 0 or self.H <= 0:
            raise ValueError("W and H must be positive")

    @property
    def bin_width(self) -> int:
        return self.window_len // self.n_bins

    @property
    def channels(self) -> int:
        return 2 * self.n_bins


@dataclass
class StackedHistogram:
    spec: RepresentationSpec
    window_start: int
    data: np.ndarray  # (2*n_bins, H, W) uint8

    @property
    def window_end(self) -> int:
        return self.window_start + self.spec.window_len


def bin_index(t: int, window_start: int, spec: RepresentationSpec) -> int | None:
    """Temporal bin of ``t`` in the half-open window, or None outside it."""
    d = int(t) - int(window_start)
    if d < 0 or d >= spec.window_len:
        return None
    return d // spec.bin_width


def channel_for(polarity: int, b: int, n_bins: int) -> int:
    return b if polarity == NEGATIVE else n_bins + b


def build_stacked_histogram(events: np.ndarray, window_start: int, spec: RepresentationSpec) -> StackedHistogram:
    if len(events):
        if int(events["x"].max()) >= spec.W or int(events["y"].max()) >= spec.H:
            raise ValueError(f"event coordinate outside {spec.W}x{spec.H}")
    t = events["t"].astype(np.int64) - int(window_start)
    keep = (t >= 0) & (t < spec.window_len)
    t = t[keep]
    x = events["x"][keep].astype(np.int64)
    y = events["y"][keep].astype(np.int64)
    p = events["p"][keep].astype(np.int64)
    ch = t // spec.bin_width + np.where(p == POSITIVE, spec.n_bins, 0)
    flat = (ch * spec.H + y) * spec.W + x
    counts = np.bincount(flat, minlength=spec.channels * spec.H * spec.W)
    data = np.minimum(counts, spec.clip).astype(np.uint8).reshape(spec.channels, spec.H, spec.W)
    return StackedHistogram(spec, int(window_start), data)


def label_windows(label_timestamps, window_len: int):
    """One window ending at each label timestamp.

    Returns ``(windows, warnings)`` where windows are ``(start, len)`` pairs.
    Label spacing shorter than the window yields a warning; windows are still
    emitted.
    """
    ts = [int(t) for t in label_timestamps]
    if any(b <= a for a, b in zip(ts, ts[1:])):
        raise ValueError("label timestamps must be strictly increasing")
    warnings = []
    windows = []
    for i, t in enumerate(ts):
        if t < window_len:
            raise ValueError(f"label at {t} ns leaves no room for a {window_len} ns window")
        windows.append((t - window_len, window_len))
        if i and t - ts[i - 1] < window_len:
            warnings.append(f"label {i} at {t} ns overlaps previous window ({t - ts[i - 1]} ns < {window_len} ns)")
    return windows, warnings


def windows_for_sequence(events: np.ndarray, label_timestamps, spec: RepresentationSpec):
    """Stacked histograms aligned to labels; returns ``(histograms, warnings)``."""
    windows, warnings = label_windows(label_timestamps, spec.window_len)
    t = events["t"]
    out = []
    for start, length in windows:
        lo = np.searchsorted(t, np.uint64(start), side="left")
        hi = np.searchsorted(t, np.uint64(start + length), side="left")
        out.append(build_stacked_histogram(events[lo:hi], start, spec))
    return out, warnings
