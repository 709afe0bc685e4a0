"""Time-tag records and the ``.bpts`` binary container.

Layout (little-endian)::

    header, 32 bytes
        0   4s   magic  b"BPTS"
        4   u16  version (1)
        6   u16  reserved (0)
        8   u64  tick_ps
        16  u64  duration_ps
        24  u16  channel_count
        26  6x   padding
    record, 12 bytes each
        0   u64  time_ps
        8   u16  channel
        10  u16  flags

Records are ordered by ``(time_ps, channel)`` and every time is a multiple of
``tick_ps`` no larger than ``duration_ps``.
"""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"BPTS"
VERSION = 1
HEADER = struct.Struct("<4sHHQQH6x")
HEADER_SIZE = HEADER.size  # 32
RECORD_DTYPE = np.dtype([("time_ps", "<u8"), ("channel", "<u2"), ("flags", "<u2")])
RECORD_SIZE = RECORD_DTYPE.itemsize  # 12

FLAG_DARK = 0x0001


class TagStreamError(ValueError):
    """Malformed or inconsistent tag data. ``offset`` is a byte offset or None."""

    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        where = f" at byte offset {offset}" if offset is not None else ""
        super().__init__(f"{message}{where}")


class BadMagicError(TagStreamError):
    pass


class UnsupportedVersionError(TagStreamError):
    pass


class TruncatedError(TagStreamError):
    pass


class NonMonotonicError(TagStreamError):
    pass


class TickMisalignedError(TagStreamError):
    pass


class OutOfRangeError(TagStreamError):
    pass


class TickMismatchError(TagStreamError):
    pass


@dataclass
class TimeTag:
    time_ps: int
    channel: int
    flags: int = 0


@dataclass(eq=False)
class TagStream:
    tick_ps: int
    duration_ps: int
    channel_count: int
    times: np.ndarray
    channels: np.ndarray
    flags: np.ndarray
    version: int = VERSION

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.uint64)
        self.channels = np.asarray(self.channels, dtype=np.uint16)
        self.flags = np.asarray(self.flags, dtype=np.uint16)
        if not (self.times.shape == self.channels.shape == self.flags.shape):
            raise ValueError("times, channels and flags must have equal length")

    @classmethod
    def empty(cls, tick_ps: int, duration_ps: int, channel_count: int = 1) -> "TagStream":
        z = np.empty(0)
        return cls(tick_ps, duration_ps, channel_count, z, z, z)

    @classmethod
    def from_tags(cls, tags, tick_ps: int, duration_ps: int, channel_count: int) -> "TagStream":
        tags = list(tags)
        return cls(
            tick_ps, duration_ps, channel_count,
            np.array([t.time_ps for t in tags], dtype=np.uint64),
            np.array([t.channel for t in tags], dtype=np.uint16),
            np.array([t.flags for t in tags], dtype=np.uint16),
        )

    def __len__(self):
        return self.times.size

    def __iter__(self):
        for t, c, f in zip(self.times.tolist(), self.channels.tolist(), self.flags.tolist()):
            yield TimeTag(t, c, f)

    def __eq__(self, other):
        if not isinstance(other, TagStream):
            return NotImplemented
        return (
            (self.tick_ps, self.duration_ps, self.channel_count, self.version)
            == (other.tick_ps, other.duration_ps, other.channel_count, other.version)
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.channels, other.channels)
            and np.array_equal(self.flags, other.flags)
        )

    @property
    def duration_s(self) -> float:
        return self.duration_ps * 1e-12

    def channel_times(self, channel: int) -> np.ndarray:
        """Times (ps, int64) of one channel, ready for correlation."""
        return self.times[self.channels == channel].astype(np.int64)

    def validate(self) -> None:
        problem = _first_violation(self)
        if problem is not None:
            cls, msg, index = problem
            raise cls(f"{msg} (record {index})")


def _first_violation(s: TagStream):
    if s.tick_ps <= 0:
        return TagStreamError, "tick must be positive", 0
    n = s.times.size
    if n == 0:
        return None
    bad = np.flatnonzero(s.times % np.uint64(s.tick_ps))
    first_bad = {}
    if bad.size:
        first_bad[int(bad[0])] = (TickMisalignedError, f"time not a multiple of tick {s.tick_ps}")
    if n > 1:
        t0, t1 = s.times[:-1], s.times[1:]
        dec = (t1 < t0) | ((t1 == t0) & (s.channels[1:] < s.channels[:-1]))
        idx = np.flatnonzero(dec)
        if idx.size:
            i = int(idx[0]) + 1
            first_bad.setdefault(i, (NonMonotonicError, "records not ordered by (time, channel)"))
    over = np.flatnonzero(s.times > np.uint64(s.duration_ps))
    if over.size:
        first_bad.setdefault(int(over[0]), (OutOfRangeError, "time exceeds duration"))
    if not first_bad:
        return None
    i = min(first_bad)
    cls, msg = first_bad[i]
    return cls, msg, i


def encode(stream: TagStream) -> bytes:
    problem = _first_violation(stream)
    if problem is not None:
        cls, msg, index = problem
        raise cls(f"refusing to encode: {msg} (record {index})")
    header = HEADER.pack(MAGIC, stream.version, 0, stream.tick_ps, stream.duration_ps,
                         stream.channel_count)
    rec = np.empty(len(stream), dtype=RECORD_DTYPE)
    rec["time_ps"] = stream.times
    rec["channel"] = stream.channels
    rec["flags"] = stream.flags
    return header + rec.tobytes()


def decode(data: bytes) -> TagStream:
    data = bytes(data)
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagicError("bad magic", offset=0)
    if len(data) < HEADER_SIZE:
        raise TruncatedError("truncated header", offset=len(data))
    _, version, _, tick, duration, nch = HEADER.unpack_from(data, 0)
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported version {version}", offset=4)
    if tick == 0:
        raise TagStreamError("tick must be positive", offset=8)
    body = len(data) - HEADER_SIZE
    n, rem = divmod(body, RECORD_SIZE)
    if rem:
        raise TruncatedError("truncated record", offset=HEADER_SIZE + n * RECORD_SIZE)
    rec = np.frombuffer(data, dtype=RECORD_DTYPE, count=n, offset=HEADER_SIZE)
    stream = TagStream(tick, duration, nch, rec["time_ps"].copy(), rec["channel"].copy(),
                       rec["flags"].copy(), version)
    problem = _first_violation(stream)
    if problem is not None:
        cls, msg, index = problem
        raise cls(msg, offset=HEADER_SIZE + index * RECORD_SIZE)
    return stream


def merge(streams: list[TagStream]) -> TagStream:
    """Combine streams into one ordered by (time, channel, input index)."""
    if not streams:
        raise ValueError("nothing to merge")
    tick = streams[0].tick_ps
    for i, s in enumerate(streams):
        if s.tick_ps != tick:
            raise TickMismatchError(f"stream {i} has tick {s.tick_ps} ps, expected {tick} ps")
    times = np.concatenate([s.times for s in streams])
    channels = np.concatenate([s.channels for s in streams])
    flags = np.concatenate([s.flags for s in streams])
    source = np.concatenate([np.full(len(s), i, dtype=np.int64) for i, s in enumerate(streams)])
    order = np.lexsort((source, channels, times))
    return TagStream(
        tick,
        max(s.duration_ps for s in streams),
        max(s.channel_count for s in streams),
        times[order], channels[order], flags[order],
    )


def write_bpts(stream: TagStream, path) -> None:
    Path(path).write_bytes(encode(stream))


def read_bpts(path) -> TagStream:
    return decode(Path(path).read_bytes())


def write_csv(stream: TagStream, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time_ps", "channel", "flags"])
        w.writerows(zip(stream.times.tolist(), stream.channels.tolist(), stream.flags.tolist()))


def read_csv(path, tick_ps: int, duration_ps: int | None = None,
             channel_count: int | None = None) -> TagStream:
    rows = np.loadtxt(Path(path), delimiter=",", skiprows=1, dtype=np.uint64, ndmin=2)
    times = rows[:, 0] if rows.size else np.empty(0, np.uint64)
    channels = rows[:, 1] if rows.size else np.empty(0, np.uint64)
    flags = rows[:, 2] if rows.size else np.empty(0, np.uint64)
    if duration_ps is None:
        duration_ps = int(times.max()) if times.size else 0
    if channel_count is None:
        channel_count = int(channels.max()) + 1 if channels.size else 1
    stream = TagStream(tick_ps, duration_ps, channel_count, times, channels, flags)
    stream.validate()
    return stream
