"""Raw event streams, sliding windows and per-window event clouds.

A stream is held as parallel arrays (see :class:`EventStream`).  Windows are
half-open intervals ``[start, start + length)`` in integer microseconds; every
pixel active inside a window becomes one :class:`EventPoint` carrying the mean
relative timestamp and the positive/negative fractions of its events.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

from .errors import CoordinateError, UnsortedStreamError, ValidationError


class SegLabel(enum.IntEnum):
    LEFT = 0
    RIGHT = 1
    BACKGROUND = 2
    NO_CLASS = 3


class EventRecord(NamedTuple):
    x: int
    y: int
    t: int
    p: int


class EventPoint(NamedTuple):
    x: int
    y: int
    t_mean: float
    P: float
    N: float


@dataclass(frozen=True)
class WindowSpec:
    length_us: int = 2000
    stride_us: int = 1000

    def __post_init__(self):
        if not (0 < self.stride_us <= self.length_us):
            raise ValidationError(
                f"window needs 0 < stride <= length, got length={self.length_us} stride={self.stride_us}")

    @property
    def overlap_us(self) -> int:
        return self.length_us - self.stride_us

    def count(self, t_begin: int, t_end: int) -> int:
        """Number of complete windows starting at ``t_begin`` that end by ``t_end``."""
        span = t_end - t_begin - self.length_us
        return 0 if span < 0 else span // self.stride_us + 1


@dataclass
class EventStream:
    """Column-oriented event stream; ``labels`` holds per-event :class:`SegLabel` codes."""

    x: np.ndarray
    y: np.ndarray
    t: np.ndarray
    p: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.int32)
        self.y = np.asarray(self.y, dtype=np.int32)
        self.t = np.asarray(self.t, dtype=np.int64)
        self.p = np.asarray(self.p, dtype=np.int8)
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.uint8)
        n = len(self.t)
        if not (len(self.x) == len(self.y) == len(self.p) == n):
            raise ValidationError("event columns have different lengths")
        if self.labels is not None and len(self.labels) != n:
            raise ValidationError(f"{len(self.labels)} labels for {n} events")

    @classmethod
    def empty(cls, with_labels=False) -> "EventStream":
        z = np.zeros(0)
        return cls(z, z, z, z, z if with_labels else None)

    @classmethod
    def from_records(cls, records, labels=None) -> "EventStream":
        arr = np.array([tuple(r) for r in records], dtype=np.int64).reshape(-1, 4)
        return cls(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], labels)

    def __len__(self):
        return len(self.t)

    def __getitem__(self, idx) -> "EventStream":
        lab = None if self.labels is None else self.labels[idx]
        return EventStream(self.x[idx], self.y[idx], self.t[idx], self.p[idx], lab)

    def records(self) -> Iterator[EventRecord]:
        for x, y, t, p in zip(self.x.tolist(), self.y.tolist(), self.t.tolist(), self.p.tolist()):
            yield EventRecord(x, y, t, p)

    def first_unsorted(self) -> int | None:
        bad = np.flatnonzero(np.diff(self.t) < 0)
        return int(bad[0]) + 1 if len(bad) else None

    def check(self, sensor: tuple[int, int]) -> None:
        """Validate coordinates, polarities and time order."""
        w, h = sensor
        out = np.flatnonzero((self.x < 0) | (self.x >= w) | (self.y < 0) | (self.y >= h))
        if len(out):
            i = int(out[0])
            raise CoordinateError(i, int(self.x[i]), int(self.y[i]), w, h)
        if np.any((self.p != 1) & (self.p != -1)):
            raise ValidationError("polarity must be -1 or +1")
        if len(self.t) and self.t[0] < 0:
            raise ValidationError("negative timestamp")
        i = self.first_unsorted()
        if i is not None:
            raise UnsortedStreamError(i)

    def sorted_by_time(self) -> "EventStream":
        return self[np.argsort(self.t, kind="stable")]


@dataclass
class EventCloud:
    """Per-pixel aggregation of one window, ordered by pixel index (row-major)."""

    x: np.ndarray
    y: np.ndarray
    t_mean: np.ndarray
    P: np.ndarray
    N: np.ndarray
    window_start_us: int
    spec: WindowSpec
    labels: np.ndarray | None = None
    padded: np.ndarray = field(default=None)
    duplicate: np.ndarray = field(default=None)

    def __post_init__(self):
        m = len(self.x)
        if self.padded is None:
            self.padded = np.zeros(m, dtype=bool)
        if self.duplicate is None:
            self.duplicate = np.zeros(m, dtype=bool)

    def __len__(self):
        return len(self.x)

    def points(self) -> list[EventPoint]:
        return [EventPoint(*r) for r in zip(self.x.tolist(), self.y.tolist(), self.t_mean.tolist(),
                                            self.P.tolist(), self.N.tolist())]

    def take(self, idx) -> "EventCloud":
        lab = None if self.labels is None else self.labels[idx]
        return replace(self, x=self.x[idx], y=self.y[idx], t_mean=self.t_mean[idx], P=self.P[idx],
                       N=self.N[idx], labels=lab, padded=self.padded[idx], duplicate=self.duplicate[idx])


# --- windowing -----------------------------------------------------------------


def slice_stream(events: EventStream, spec: WindowSpec, t_begin: int, t_end: int, *,
                 skip_empty: bool = True, partial: bool = False) -> Iterator[tuple[int, EventStream]]:
    """Yield ``(window_start, events)`` for consecutive windows.

    Windows start at ``t_begin + k * stride``.  Only windows ending by ``t_end``
    are produced unless ``partial`` is set, in which case every window starting
    before ``t_end`` is produced.  Sortedness is checked before anything is
    yielded.
    """
    if t_end < t_begin:
        raise ValidationError(f"t_end {t_end} precedes t_begin {t_begin}")
    bad = events.first_unsorted()
    if bad is not None:
        raise UnsortedStreamError(bad)
    return _windows(events, spec, int(t_begin), int(t_end), skip_empty, partial)


def _windows(events, spec, t_begin, t_end, skip_empty, partial):
    if partial:
        n = 0 if t_end <= t_begin else -(-(t_end - t_begin) // spec.stride_us)
    else:
        n = spec.count(t_begin, t_end)
    starts = t_begin + spec.stride_us * np.arange(n, dtype=np.int64)
    lo = np.searchsorted(events.t, starts, side="left")
    hi = np.searchsorted(events.t, starts + spec.length_us, side="left")
    for s, a, b in zip(starts.tolist(), lo.tolist(), hi.tolist()):
        if skip_empty and a == b:
            continue
        yield s, events[a:b]


def aggregate_window(events: EventStream, sensor: tuple[int, int], window_start: int = 0,
                     spec: WindowSpec | None = None) -> EventCloud:
    """Merge the events of one window into one point per active pixel.

    If the stream carries labels the cloud is labelled as by :func:`label_cloud`.
    """
    spec = spec or WindowSpec()
    w, h = sensor
    if len(events):
        out = np.flatnonzero((events.x < 0) | (events.x >= w) | (events.y < 0) | (events.y >= h))
        if len(out):
            i = int(out[0])
            raise CoordinateError(i, int(events.x[i]), int(events.y[i]), w, h)
        rel = events.t - window_start
        if rel.min() < 0 or rel.max() >= spec.length_us:
            raise ValidationError("event timestamps fall outside the window")
    key = events.y.astype(np.int64) * w + events.x
    pix, inv, counts = np.unique(key, return_inverse=True, return_counts=True)
    inv = inv.reshape(-1)
    # integer-valued sums are exact in float64, so any event order gives the same bits
    tsum = np.bincount(inv, weights=(events.t - window_start).astype(np.float64), minlength=len(pix))
    npos = np.bincount(inv, weights=(events.p > 0).astype(np.float64), minlength=len(pix))
    P = npos / counts
    cloud = EventCloud(
        x=(pix % w).astype(np.int32), y=(pix // w).astype(np.int32),
        t_mean=tsum / counts, P=P, N=1.0 - P,
        window_start_us=int(window_start), spec=spec)
    if events.labels is not None:
        cloud.labels = _merge_labels(inv, counts, events.labels)
    return cloud


def _merge_labels(inv, counts, labels):
    if len(counts) == 0:
        return np.zeros(0, dtype=np.uint8)
    order = np.argsort(inv, kind="stable")
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    lab = labels[order]
    lo = np.minimum.reduceat(lab, starts)
    hi = np.maximum.reduceat(lab, starts)
    return np.where(lo == hi, lo, SegLabel.NO_CLASS).astype(np.uint8)


def label_cloud(cloud: EventCloud, events: EventStream, labels, sensor: tuple[int, int]) -> EventCloud:
    """Attach a :class:`SegLabel` to every point from the labels of its raw events.

    ``events`` must be the raw events the cloud was aggregated from.
    """
    labels = np.asarray(labels, dtype=np.uint8)
    if len(labels) != len(events):
        raise ValidationError(f"{len(labels)} labels for {len(events)} events")
    w, _ = sensor
    key = events.y.astype(np.int64) * w + events.x
    pix, inv, counts = np.unique(key, return_inverse=True, return_counts=True)
    if not np.array_equal(pix, cloud.y.astype(np.int64) * w + cloud.x):
        raise ValidationError("events do not match the cloud's pixels")
    return replace(cloud, labels=_merge_labels(inv.reshape(-1), counts, labels))


def normalize_cloud(cloud: EventCloud, sensor: tuple[int, int]) -> np.ndarray:
    """Network input rows ``(x, y, t, P, N)`` with x, y in [-1, 1] and t in [0, 1].

    Padding sentinels stay all-zero.
    """
    w, h = sensor
    f = np.empty((len(cloud), 5), dtype=np.float64)
    f[:, 0] = 2.0 * cloud.x / (w - 1) - 1.0
    f[:, 1] = 2.0 * cloud.y / (h - 1) - 1.0
    f[:, 2] = cloud.t_mean / cloud.spec.length_us
    f[:, 3] = cloud.P
    f[:, 4] = cloud.N
    f[cloud.padded] = 0.0
    return f


def denormalize_features(features: np.ndarray, sensor: tuple[int, int], length_us: int) -> np.ndarray:
    """Inverse of :func:`normalize_cloud` on the (x, y, t) columns."""
    w, h = sensor
    out = np.array(features, dtype=np.float64)
    out[:, 0] = (features[:, 0] + 1.0) * (w - 1) / 2.0
    out[:, 1] = (features[:, 1] + 1.0) * (h - 1) / 2.0
    out[:, 2] = features[:, 2] * length_us
    return out


def resample_cloud(cloud: EventCloud, target_m: int, seed) -> EventCloud:
    """Return a cloud with exactly ``target_m`` points.

    Larger clouds are subsampled without replacement; smaller ones are padded
    with duplicates drawn with replacement (flagged in ``duplicate``); an empty
    cloud becomes ``target_m`` all-zero sentinels flagged in ``padded``.
    """
    if target_m < 1:
        raise ValidationError("target_m must be >= 1")
    m = len(cloud)
    if m == target_m:
        return cloud
    if m == 0:
        z = np.zeros(target_m)
        lab = None if cloud.labels is None else np.full(target_m, SegLabel.BACKGROUND, np.uint8)
        return replace(cloud, x=z.astype(np.int32), y=z.astype(np.int32), t_mean=z.copy(), P=z.copy(),
                       N=z.copy(), labels=lab, padded=np.ones(target_m, bool),
                       duplicate=np.zeros(target_m, bool))
    rng = np.random.default_rng(seed)
    if m > target_m:
        return cloud.take(np.sort(rng.choice(m, size=target_m, replace=False)))
    extra = rng.integers(0, m, size=target_m - m)
    out = cloud.take(np.concatenate([np.arange(m), extra]))
    out.duplicate[m:] = True
    return out


# --- binary containers ---------------------------------------------------------

EVENT_DTYPE = np.dtype([("x", "<u2"), ("y", "<u2"), ("t", "<u8"), ("p", "i1")])
CLOUD_ROW = 7  # x, y, t_mean, P, N, label, flags
_HEADER = struct.Struct("<4sHHI4x")
_WINDOW = struct.Struct("<QII")
FLAG_PADDED = 1
FLAG_DUPLICATE = 2


def _read_header(buf: bytes, magic: bytes):
    if len(buf) < _HEADER.size:
        raise ValidationError("file too short for header")
    got, w, h, n = _HEADER.unpack_from(buf)
    if got != magic:
        raise ValidationError(f"bad magic {got!r}, expected {magic!r}")
    return w, h, n


def write_event_stream(path, events: EventStream, sensor: tuple[int, int]) -> None:
    rec = np.empty(len(events), dtype=EVENT_DTYPE)
    rec["x"], rec["y"], rec["t"], rec["p"] = events.x, events.y, events.t, events.p
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(b"EVST", sensor[0], sensor[1], min(len(events), 0xFFFFFFFF)))
        fh.write(rec.tobytes())


def read_event_stream(path) -> tuple[EventStream, tuple[int, int]]:
    buf = Path(path).read_bytes()
    w, h, _ = _read_header(buf, b"EVST")
    body = buf[_HEADER.size:]
    if len(body) % EVENT_DTYPE.itemsize:
        raise ValidationError("truncated event record")
    rec = np.frombuffer(body, dtype=EVENT_DTYPE)
    return EventStream(rec["x"], rec["y"], rec["t"].astype(np.int64), rec["p"]), (w, h)


def write_labels(path, labels) -> None:
    np.asarray(labels, dtype=np.uint8).tofile(path)


def read_labels(path) -> np.ndarray:
    return np.fromfile(path, dtype=np.uint8)


def write_cloud(path, cloud: EventCloud, sensor: tuple[int, int]) -> None:
    """EVCL file: header, window block, then one row of 7 little-endian f32 per point."""
    rows = np.zeros((len(cloud), CLOUD_ROW), dtype="<f4")
    rows[:, 0], rows[:, 1], rows[:, 2] = cloud.x, cloud.y, cloud.t_mean
    rows[:, 3], rows[:, 4] = cloud.P, cloud.N
    rows[:, 5] = -1 if cloud.labels is None else cloud.labels
    rows[:, 6] = cloud.padded * FLAG_PADDED + cloud.duplicate * FLAG_DUPLICATE
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(b"EVCL", sensor[0], sensor[1], len(cloud)))
        fh.write(_WINDOW.pack(cloud.window_start_us, cloud.spec.length_us, cloud.spec.stride_us))
        fh.write(rows.tobytes())


def read_cloud(path) -> tuple[EventCloud, tuple[int, int]]:
    buf = Path(path).read_bytes()
    w, h, n = _read_header(buf, b"EVCL")
    start, length, stride = _WINDOW.unpack_from(buf, _HEADER.size)
    off = _HEADER.size + _WINDOW.size
    rows = np.frombuffer(buf, dtype="<f4", count=n * CLOUD_ROW, offset=off).reshape(n, CLOUD_ROW)
    flags = rows[:, 6].astype(np.int32)
    labels = None if n and rows[0, 5] < 0 else rows[:, 5].astype(np.uint8)
    cloud = EventCloud(rows[:, 0].astype(np.int32), rows[:, 1].astype(np.int32),
                       rows[:, 2].astype(np.float64), rows[:, 3].astype(np.float64),
                       rows[:, 4].astype(np.float64), start, WindowSpec(length, stride), labels,
                       padded=(flags & FLAG_PADDED) > 0, duplicate=(flags & FLAG_DUPLICATE) > 0)
    return cloud, (w, h)
