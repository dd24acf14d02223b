"""Binary containers: EVT1 event streams, FRM1 frame sequences, SHR1 histograms.

All integers are little-endian and fixed width. Layouts::

    EVT1  magic(4) version:u16 width:u16 height:u16 count:u64
          count x [t:u64 x:u16 y:u16 polarity:u8 reserved:u8]      (14 B)
    FRM1  magic(4) version:u16 width:u16 height:u16 frame_count:u32
          frame_count x [t:u64 W*H x u8]
    SHR1  magic(4) version:u16 channels:u16 height:u16 width:u16
          window_start:u64 window_len:u64  channels*H*W x u8
"""

from __future__ import annotations

import struct
from typing import BinaryIO, Iterator

import numpy as np

from .sensor_model import EVENT_DTYPE, FrameSequence

VERSION = 1

EVT_HEADER = struct.Struct("<4sHHHQ")
FRM_HEADER = struct.Struct("<4sHHHI")
SHR_HEADER = struct.Struct("<4sHHHHQQ")

EVT_RECORD = np.dtype(
    [("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "u1"), ("reserved", "u1")]
)
assert EVT_RECORD.itemsize == 14


class FormatError(ValueError):
    """Base class for malformed container input."""


class BadMagicError(FormatError):
    pass


class UnsupportedVersionError(FormatError):
    pass


class TruncatedError(FormatError):
    def __init__(self, msg: str, offset: int):
        super().__init__(f"{msg} (at byte offset {offset})")
        self.offset = offset


class OrderError(FormatError):
    pass


class BoundsError(FormatError):
    pass


class SerializationError(ValueError):
    pass


def _read_exact(src: BinaryIO, n: int, offset: int, what: str) -> bytes:
    buf = src.read(n)
    if len(buf) != n:
        raise TruncatedError(f"truncated {what}: wanted {n} bytes, got {len(buf)}", offset + len(buf))
    return buf


def _check_magic(magic: bytes, version: int, expected: bytes):
    if magic != expected:
        raise BadMagicError(f"bad magic {magic!r}, expected {expected!r}")
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported {expected.decode()} version {version}")


def _is_canonical(ev: np.ndarray) -> bool:
    if len(ev) < 2:
        return True
    keys = [ev["t"].astype(np.uint64), ev["y"], ev["x"], ev["p"]]
    # lexicographic nondecreasing check on adjacent pairs
    gt = np.zeros(len(ev) - 1, dtype=bool)
    eq = np.ones(len(ev) - 1, dtype=bool)
    for k in keys:
        a, b = k[:-1], k[1:]
        gt |= eq & (a > b)
        eq &= a == b
    return not gt.any()


# -- events -----------------------------------------------------------------


def write_events(events: np.ndarray, width: int, height: int, sink: BinaryIO) -> int:
    events = np.asarray(events, dtype=EVENT_DTYPE)
    if len(events):
        if events["x"].max() >= width or events["y"].max() >= height:
            raise SerializationError(f"event coordinate outside {width}x{height}")
        if events["p"].max() > 1:
            raise SerializationError("polarity must be 0 or 1")
    if not _is_canonical(events):
        raise SerializationError("event stream is not in canonical (t, y, x, p) order")
    rec = np.zeros(len(events), dtype=EVT_RECORD)
    for name in ("t", "x", "y", "p"):
        rec[name] = events[name]
    n = sink.write(EVT_HEADER.pack(b"EVT1", VERSION, width, height, len(events)))
    n += sink.write(rec.tobytes())
    return n


def _decode_event_records(buf: bytes, width: int, height: int, offset: int) -> np.ndarray:
    rec = np.frombuffer(buf, dtype=EVT_RECORD)
    ev = np.empty(len(rec), dtype=EVENT_DTYPE)
    for name in ("t", "x", "y", "p"):
        ev[name] = rec[name]
    if len(rec):
        if (rec["x"] >= width).any() or (rec["y"] >= height).any():
            bad = int(np.flatnonzero((rec["x"] >= width) | (rec["y"] >= height))[0])
            raise BoundsError(f"event {bad} outside {width}x{height} (record at byte {offset + 14 * bad})")
        if (rec["p"] > 1).any():
            raise FormatError("polarity byte must be 0 or 1")
    return ev


def read_events_header(source: BinaryIO) -> tuple[int, int, int]:
    head = _read_exact(source, EVT_HEADER.size, 0, "EVT1 header")
    magic, version, width, height, count = EVT_HEADER.unpack(head)
    _check_magic(magic, version, b"EVT1")
    return width, height, count


def _event_chunks(source, width, height, count, chunk_size):
    offset = EVT_HEADER.size
    remaining = count
    prev = None
    while remaining:
        n = min(chunk_size, remaining)
        buf = source.read(n * EVT_RECORD.itemsize)
        if len(buf) != n * EVT_RECORD.itemsize:
            whole = len(buf) // EVT_RECORD.itemsize
            raise TruncatedError(
                f"truncated EVT1 record {count - remaining + whole} of {count}",
                offset + len(buf),
            )
        ev = _decode_event_records(buf, width, height, offset)
        check = ev if prev is None else np.concatenate([prev, ev])
        if not _is_canonical(check):
            raise OrderError("EVT1 records are not in canonical (t, y, x, p) order")
        prev = ev[-1:]
        offset += len(buf)
        remaining -= n
        yield ev


def iter_events(source: BinaryIO, chunk_size: int = 1 << 16) -> Iterator[np.ndarray]:
    """Stream an EVT1 source in chunks of at most ``chunk_size`` events.

    Order is validated across chunk boundaries; reading stops at the declared count.
    """
    yield from _event_chunks(source, *read_events_header(source), chunk_size)


def read_events(source: BinaryIO) -> tuple[tuple[int, int], np.ndarray]:
    """Read a whole EVT1 stream; returns ((width, height), events)."""
    width, height, count = read_events_header(source)
    chunks = list(_event_chunks(source, width, height, count, 1 << 20))
    events = np.concatenate(chunks) if chunks else np.empty(0, dtype=EVENT_DTYPE)
    return (width, height), events


def save_events(path, events, width, height) -> int:
    with open(path, "wb") as f:
        return write_events(events, width, height, f)


def load_events(path):
    with open(path, "rb") as f:
        return read_events(f)


# -- frames -----------------------------------------------------------------


def write_frames(seq: FrameSequence, sink: BinaryIO) -> int:
    ts = np.asarray(seq.timestamps, dtype=np.uint64)
    if len(ts) > 1 and np.any(ts[1:] <= ts[:-1]):
        raise SerializationError("frame timestamps must be strictly increasing")
    n = sink.write(FRM_HEADER.pack(b"FRM1", VERSION, seq.width, seq.height, len(seq)))
    for t, frame in zip(ts, seq.frames):
        n += sink.write(struct.pack("<Q", int(t)))
        n += sink.write(np.ascontiguousarray(frame, dtype=np.uint8).tobytes())
    return n


def read_frames_header(source: BinaryIO) -> tuple[int, int, int]:
    head = _read_exact(source, FRM_HEADER.size, 0, "FRM1 header")
    magic, version, width, height, count = FRM_HEADER.unpack(head)
    _check_magic(magic, version, b"FRM1")
    return width, height, count


def _frame_records(source, width, height, count):
    offset = FRM_HEADER.size
    size = width * height
    prev = None
    for i in range(count):
        (t,) = struct.unpack("<Q", _read_exact(source, 8, offset, f"FRM1 frame {i} timestamp"))
        offset += 8
        if prev is not None and t <= prev:
            raise OrderError(f"FRM1 frame {i} timestamp {t} not after {prev}")
        data = _read_exact(source, size, offset, f"FRM1 frame {i} pixels")
        offset += size
        prev = t
        yield t, np.frombuffer(data, dtype=np.uint8).reshape(height, width)


def iter_frames(source: BinaryIO) -> Iterator[tuple[int, np.ndarray]]:
    yield from _frame_records(source, *read_frames_header(source))


def read_frames(source: BinaryIO, frame_rate: float | None = None, F_v: float = 90.0) -> FrameSequence:
    width, height, count = read_frames_header(source)
    ts, frames = [], []
    for t, fr in _frame_records(source, width, height, count):
        ts.append(t)
        frames.append(fr)
    arr = np.stack(frames) if frames else np.empty((0, height, width), dtype=np.uint8)
    if frame_rate is None:
        frame_rate = 1e9 / (ts[1] - ts[0]) if len(ts) > 1 else 0.0
    return FrameSequence(width, height, frame_rate, np.array(ts, dtype=np.uint64), arr, F_v=F_v)


def save_frames(path, seq: FrameSequence) -> int:
    with open(path, "wb") as f:
        return write_frames(seq, f)


def load_frames(path, **kw) -> FrameSequence:
    with open(path, "rb") as f:
        return read_frames(f, **kw)


# -- stacked histograms -----------------------------------------------------


def write_histogram(data: np.ndarray, window_start: int, window_len: int, sink: BinaryIO) -> int:
    data = np.asarray(data)
    if data.dtype != np.uint8 or data.ndim != 3:
        raise SerializationError("histogram must be a (C, H, W) uint8 array")
    c, h, w = data.shape
    n = sink.write(SHR_HEADER.pack(b"SHR1", VERSION, c, h, w, int(window_start), int(window_len)))
    n += sink.write(np.ascontiguousarray(data).tobytes())
    return n


def read_histogram(source: BinaryIO, offset: int = 0):
    """Read one SHR1 container; returns (data, window_start, window_len) or None at EOF."""
    head = source.read(SHR_HEADER.size)
    if not head:
        return None
    if len(head) != SHR_HEADER.size:
        raise TruncatedError("truncated SHR1 header", offset + len(head))
    magic, version, c, h, w, start, length = SHR_HEADER.unpack(head)
    _check_magic(magic, version, b"SHR1")
    body = _read_exact(source, c * h * w, offset + SHR_HEADER.size, "SHR1 payload")
    return np.frombuffer(body, dtype=np.uint8).reshape(c, h, w), start, length


def iter_histograms(source: BinaryIO):
    offset = 0
    while True:
        item = read_histogram(source, offset)
        if item is None:
            return
        offset += SHR_HEADER.size + item[0].size
        yield item
