"""Two-channel photon time-tag records and their file formats.

Records hold integer tick timestamps per detector channel. Two open formats
are supported:

* ``TTAG1`` binary (little-endian)::

      magic      4 bytes  b"TTAG"
      version    u16      1
      resolution f64      seconds per tick
      total_time f64      seconds (<= 0 means "not recorded")
      n_events   u64
      events     n_events x {channel u8, timestamp u64}

* CSV with ``channel,timestamp_ticks`` rows. Lines starting with ``#`` are
  comments; ``# total_time=<s>`` is honoured so that exports round-trip.
"""
from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    ChannelError,
    DomainError,
    EmptyRecordWarning,
    FormatError,
    ParseError,
    PecsWarning,
    TruncationError,
    UnsortedInputWarning,
)

MAGIC = b"TTAG"
VERSION = 1
HEADER = struct.Struct("<4sHddQ")
EVENT_DTYPE = np.dtype([("channel", "u1"), ("timestamp", "<u8")])
CHANNELS = (0, 1)


def _frozen_int64(values) -> np.ndarray:
    arr = np.array(values, dtype=np.int64, copy=True).reshape(-1)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class PhotonTimeSeries:
    """Sorted arrival times (integer ticks) of one detector channel."""

    timestamps: np.ndarray
    tick_resolution: float
    channel_id: int = 0

    def __post_init__(self):
        ts = _frozen_int64(self.timestamps)
        if not np.isfinite(self.tick_resolution) or self.tick_resolution <= 0:
            raise DomainError(f"tick_resolution must be > 0, got {self.tick_resolution!r}")
        if ts.size and ts[0] < 0:
            raise DomainError("timestamps must be non-negative")
        if ts.size > 1 and np.any(np.diff(ts) < 0):
            raise DomainError("timestamps must be sorted ascending")
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "tick_resolution", float(self.tick_resolution))
        object.__setattr__(self, "channel_id", int(self.channel_id))

    def __len__(self):
        return int(self.timestamps.size)

    def __iter__(self):
        return iter(self.timestamps.tolist())

    def __eq__(self, other):
        if not isinstance(other, PhotonTimeSeries):
            return NotImplemented
        return (
            self.channel_id == other.channel_id
            and self.tick_resolution == other.tick_resolution
            and np.array_equal(self.timestamps, other.timestamps)
        )

    __hash__ = None

    @property
    def seconds(self) -> np.ndarray:
        return self.timestamps * self.tick_resolution


@dataclass(frozen=True, eq=False)
class AcquisitionRecord:
    """Both channels of one acquisition plus its duration ``total_time`` (s).

    ``time_source`` says whether ``total_time`` came from the file header or
    from the last recorded event; both candidate values are kept because the
    duration enters the g2 normalisation directly.
    """

    channel_a: PhotonTimeSeries
    channel_b: PhotonTimeSeries
    total_time: float
    header_time: float | None = None
    time_source: str = "header"
    flags: tuple[str, ...] = ()
    rejected_lines: int = 0
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.channel_a.tick_resolution != self.channel_b.tick_resolution:
            raise DomainError("channels must share one tick resolution")
        T = float(self.total_time)
        if not np.isfinite(T) or T < 0:
            raise DomainError(f"total_time must be >= 0, got {T!r}")
        if T < self.max_timestamp_time:
            raise DomainError(
                f"total_time {T!r} s is shorter than the last event at "
                f"{self.max_timestamp_time!r} s"
            )
        object.__setattr__(self, "total_time", T)

    @classmethod
    def from_ticks(cls, ticks_a, ticks_b, tick_resolution, total_time=None, **kwargs):
        """Build a record from raw tick arrays, sorting each channel if needed."""
        a = np.asarray(ticks_a, dtype=np.int64).reshape(-1)
        b = np.asarray(ticks_b, dtype=np.int64).reshape(-1)
        flags = list(kwargs.pop("flags", ()))
        if _needs_sort(a) or _needs_sort(b):
            warnings.warn("events were out of order and have been sorted", UnsortedInputWarning,
                          stacklevel=2)
            a = np.sort(a, kind="stable")
            b = np.sort(b, kind="stable")
            flags.append("unsorted")
        if a.size + b.size == 0:
            flags.append("empty")
        ca = PhotonTimeSeries(a, tick_resolution, 0)
        cb = PhotonTimeSeries(b, tick_resolution, 1)
        last = _last_tick(a, b) * float(tick_resolution)
        header_time = None if total_time is None or total_time <= 0 else float(total_time)
        if header_time is None:
            T, source = last, "max-timestamp"
        elif header_time < last:
            warnings.warn(
                f"recorded total_time {header_time} s precedes the last event ({last} s); "
                "using the last event time instead",
                PecsWarning,
                stacklevel=2,
            )
            T, source = last, "max-timestamp"
        else:
            T, source = header_time, "header"
        return cls(ca, cb, T, header_time=header_time, time_source=source,
                   flags=tuple(flags), **kwargs)

    @property
    def tick_resolution(self) -> float:
        return self.channel_a.tick_resolution

    @property
    def counts_a(self) -> int:
        return len(self.channel_a)

    @property
    def counts_b(self) -> int:
        return len(self.channel_b)

    @property
    def max_timestamp_time(self) -> float:
        return _last_tick(self.channel_a.timestamps, self.channel_b.timestamps) * self.tick_resolution

    @property
    def is_empty(self) -> bool:
        return self.counts_a + self.counts_b == 0

    def __eq__(self, other):
        if not isinstance(other, AcquisitionRecord):
            return NotImplemented
        return (
            self.channel_a == other.channel_a
            and self.channel_b == other.channel_b
            and self.total_time == other.total_time
        )

    __hash__ = None


def _needs_sort(arr):
    return arr.size > 1 and bool(np.any(np.diff(arr) < 0))


def _last_tick(a, b):
    last = 0
    if a.size:
        last = max(last, int(a.max()))
    if b.size:
        last = max(last, int(b.max()))
    return last


def _split_channels(channels, ticks, tick_resolution, total_time, **kwargs):
    bad = ~np.isin(channels, CHANNELS)
    if np.any(bad):
        idx = int(np.flatnonzero(bad)[0])
        raise ChannelError(f"unknown channel id {int(channels[idx])} at event {idx}")
    rec = AcquisitionRecord.from_ticks(
        ticks[channels == 0], ticks[channels == 1], tick_resolution, total_time, **kwargs
    )
    if rec.is_empty:
        warnings.warn("record contains no events", EmptyRecordWarning, stacklevel=3)
    return rec


def import_binary(path) -> AcquisitionRecord:
    """Read a TTAG1 file."""
    data = Path(path).read_bytes()
    if len(data) < HEADER.size:
        raise FormatError(f"file is {len(data)} bytes, shorter than the {HEADER.size}-byte header")
    magic, version, resolution, total_time, n_events = HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"unsupported TTAG version {version}")
    if not np.isfinite(resolution) or resolution <= 0:
        raise FormatError(f"invalid tick resolution {resolution!r}")
    if not np.isfinite(total_time):
        raise FormatError(f"invalid total time {total_time!r}")
    payload = len(data) - HEADER.size
    need = n_events * EVENT_DTYPE.itemsize
    if payload < need:
        complete = payload // EVENT_DTYPE.itemsize
        raise TruncationError(
            f"expected {n_events} events, file ends inside event {complete}",
            HEADER.size + complete * EVENT_DTYPE.itemsize,
        )
    if payload > need:
        raise FormatError(f"{payload - need} trailing bytes after the last event")
    events = np.frombuffer(data, dtype=EVENT_DTYPE, count=n_events, offset=HEADER.size)
    ticks = events["timestamp"]
    if ticks.size and ticks.max() > np.iinfo(np.int64).max:
        raise FormatError("timestamp exceeds the signed 64-bit range")
    return _split_channels(events["channel"], ticks.astype(np.int64), resolution, total_time)


def export_binary(record: AcquisitionRecord, path) -> None:
    channels, ticks = _merged_events(record)
    header = HEADER.pack(MAGIC, VERSION, record.tick_resolution, record.total_time, ticks.size)
    events = np.empty(ticks.size, dtype=EVENT_DTYPE)
    events["channel"] = channels
    events["timestamp"] = ticks
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(events.tobytes())


def _merged_events(record):
    ticks = np.concatenate([record.channel_a.timestamps, record.channel_b.timestamps])
    channels = np.concatenate([
        np.zeros(record.counts_a, dtype=np.uint8),
        np.ones(record.counts_b, dtype=np.uint8),
    ])
    order = np.argsort(ticks, kind="stable")
    return channels[order], ticks[order]


def import_csv(path, resolution: float, strict: bool = True) -> AcquisitionRecord:
    """Read ``channel,timestamp_ticks`` rows.

    With ``strict=False`` malformed rows are skipped (and counted in
    ``rejected_lines``) instead of raising.
    """
    if not np.isfinite(resolution) or resolution <= 0:
        raise DomainError(f"resolution must be > 0, got {resolution!r}")
    channels, ticks = [], []
    total_time = None
    rejected = 0
    seen_data = False
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].partition("=")
                if key.strip() == "total_time":
                    total_time = float(value)
                continue
            parts = [p.strip() for p in line.split(",")]
            if not seen_data and not _is_int(parts[0]):
                seen_data = True  # column header
                continue
            seen_data = True
            try:
                if len(parts) != 2:
                    raise ParseError(f"expected 2 columns, got {len(parts)}", lineno)
                if not _is_int(parts[0]):
                    raise ParseError(f"non-integer channel {parts[0]!r}", lineno)
                if not _is_int(parts[1]):
                    raise ParseError(f"non-integer timestamp {parts[1]!r}", lineno)
                ch, t = int(parts[0]), int(parts[1])
                if t < 0:
                    raise DomainError(f"line {lineno}: negative timestamp {t}")
                if ch not in CHANNELS:
                    raise ChannelError(f"line {lineno}: unknown channel id {ch}")
            except (ParseError, DomainError, ChannelError):
                if strict:
                    raise
                rejected += 1
                continue
            channels.append(ch)
            ticks.append(t)
    return _split_channels(
        np.asarray(channels, dtype=np.uint8),
        np.asarray(ticks, dtype=np.int64),
        resolution,
        total_time,
        rejected_lines=rejected,
    )


def _is_int(text):
    if text[:1] in "+-":
        text = text[1:]
    return text.isdigit()


def export_csv(record: AcquisitionRecord, path) -> None:
    channels, ticks = _merged_events(record)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# tick_resolution={record.tick_resolution!r}\n")
        fh.write(f"# total_time={record.total_time!r}\n")
        fh.write("channel,timestamp_ticks\n")
        for ch, t in zip(channels.tolist(), ticks.tolist()):
            fh.write(f"{ch},{t}\n")
