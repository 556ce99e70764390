"""Frame-based event simulation and event-stream augmentation.

Brightness frames are Bayer-mosaiced, converted to log intensity and fed to
:func:`simulate_events`, which linearly interpolates every pixel's log
intensity between frames and fires an event each time it moves one contrast
threshold away from the pixel's reference level.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ValidationError
from .events import EventStream, SegLabel

DEFAULT_SENSOR = (346, 240)


@dataclass(frozen=True)
class CameraIntrinsics:
    width: int = 346
    height: int = 240
    vertical_fov_deg: float = 30.0

    @property
    def fy(self) -> float:
        return (self.height / 2.0) / math.tan(math.radians(self.vertical_fov_deg) / 2.0)

    @property
    def fx(self) -> float:
        return self.fy

    @property
    def cx(self) -> float:
        return self.width / 2.0

    @property
    def cy(self) -> float:
        return self.height / 2.0

    @property
    def sensor(self) -> tuple[int, int]:
        return (self.width, self.height)


@dataclass
class BrightnessFrame:
    t_us: int
    values: np.ndarray
    ownership: np.ndarray | None = None


@dataclass(frozen=True)
class SimConfig:
    contrast_threshold: float = 0.4
    epsilon: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.contrast_threshold <= 0 or self.epsilon <= 0:
            raise ValidationError("contrast threshold and epsilon must be positive")


@dataclass(frozen=True)
class AugmentParams:
    max_xy_jitter: int = 0
    max_t_jitter_us: int = 0
    polarity_swap_prob: float = 0.0


def bayer_mosaic(rgb: np.ndarray) -> np.ndarray:
    """RGGB mosaic: R at (even, even), G at (even, odd) and (odd, even), B at (odd, odd)."""
    rgb = np.asarray(rgb)
    h, w = rgb.shape[:2]
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValidationError(f"expected an HxWx3 image, got {rgb.shape}")
    if h % 2 or w % 2:
        raise ValidationError(f"Bayer mosaic needs even dimensions, got {h}x{w}")
    out = np.empty((h, w), dtype=rgb.dtype)
    out[0::2, 0::2] = rgb[0::2, 0::2, 0]
    out[0::2, 1::2] = rgb[0::2, 1::2, 1]
    out[1::2, 0::2] = rgb[1::2, 0::2, 1]
    out[1::2, 1::2] = rgb[1::2, 1::2, 2]
    return out


def log_intensity(mosaic: np.ndarray, epsilon: float = 1e-4) -> np.ndarray:
    mosaic = np.asarray(mosaic, dtype=np.float64)
    if np.any(mosaic < 0):
        raise ValidationError("brightness must be non-negative")
    return np.log(mosaic + epsilon)


class EventSimulator:
    """Incremental threshold-crossing simulator fed one log-intensity frame at a time.

    Each pixel keeps a reference level, initialised from the first frame.  When
    the linearly interpolated log intensity reaches ``reference +- C`` an event
    of that polarity fires at the crossing time (rounded up to the next
    microsecond) and the reference moves by ``+-C``.  Event labels are taken
    from the ownership mask of the later frame of each gap (background if
    absent).
    """

    def __init__(self, config: SimConfig = SimConfig()):
        self.config = config
        self._prev = None
        self._ref = None
        self._t = None
        self._shape = None
        self.frames_seen = 0

    def feed(self, frame: BrightnessFrame) -> EventStream:
        cur = np.asarray(frame.values, dtype=np.float64)
        t = int(frame.t_us)
        if self._prev is None:
            self._shape = cur.shape
            self._prev = cur.reshape(-1).copy()
            self._ref = self._prev.copy()
            self._t = t
            self.frames_seen = 1
            return EventStream.empty(with_labels=True)
        if t <= self._t:
            raise ValidationError(f"frame timestamps must increase strictly (frame {self.frames_seen})")
        if cur.shape != self._shape:
            raise ValidationError("frame dimensions changed")
        cur = cur.reshape(-1)
        ev = _gap_events(self._prev, cur, self._ref, self._t, t, self.config.contrast_threshold)
        self._prev, self._t = cur, t
        self.frames_seen += 1
        if ev is None:
            return EventStream.empty(with_labels=True)
        pix, tt, p = ev
        own = frame.ownership
        lab = (np.full(len(pix), SegLabel.BACKGROUND, np.uint8) if own is None
               else np.asarray(own, dtype=np.uint8).reshape(-1)[pix])
        order = np.lexsort((pix, tt))
        pix, tt, p, lab = pix[order], tt[order], p[order], lab[order]
        w = self._shape[1]
        return EventStream(pix % w, pix // w, tt, p, lab)


def concat_streams(parts) -> EventStream:
    parts = [s for s in parts if len(s)]
    if not parts:
        return EventStream.empty(with_labels=True)
    labels = None
    if all(s.labels is not None for s in parts):
        labels = np.concatenate([s.labels for s in parts])
    return EventStream(np.concatenate([s.x for s in parts]), np.concatenate([s.y for s in parts]),
                       np.concatenate([s.t for s in parts]), np.concatenate([s.p for s in parts]), labels)


def simulate_events(log_frames: Iterable[BrightnessFrame], config: SimConfig = SimConfig()) -> EventStream:
    """Events of a whole sequence of log-intensity frames (see :class:`EventSimulator`).

    The result is sorted by time, ties broken by pixel index.
    """
    sim = EventSimulator(config)
    parts = [sim.feed(f) for f in log_frames]
    if sim.frames_seen < 2:
        raise ValidationError("need at least two frames")
    return concat_streams(parts)


def _gap_events(La, Lb, ref, ta, tb, C, tol=1e-9):
    """Events of one frame gap; updates ``ref`` in place."""
    d = Lb - ref
    n = np.floor(np.abs(d) / C + tol).astype(np.int64)
    active = np.flatnonzero(n > 0)
    if len(active) == 0:
        return None
    counts = n[active]
    sign = np.sign(d[active])
    start = ref[active].copy()
    ref[active] = start + sign * counts * C
    pix = np.repeat(active, counts)
    step = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts) + 1
    s = np.repeat(sign, counts)
    level = np.repeat(start, counts) + s * step * C
    slope = Lb[pix] - La[pix]
    frac = np.clip((level - La[pix]) / slope, 0.0, 1.0)
    t = np.ceil(ta + frac * (tb - ta) - 1e-9).astype(np.int64)
    t = np.clip(t, ta + 1, tb)
    t = _strictly_increasing_per_pixel(pix, t)
    return pix, t, s.astype(np.int8)


def _strictly_increasing_per_pixel(pix, t):
    same = (pix[1:] == pix[:-1]) & (t[1:] <= t[:-1])
    if not same.any():
        return t
    t = t.copy()
    for i in range(1, len(t)):
        if pix[i] == pix[i - 1] and t[i] <= t[i - 1]:
            t[i] = t[i - 1] + 1
    return t


def augment_events(stream: EventStream, params: AugmentParams, seed, sensor: tuple[int, int]) -> EventStream:
    """Jitter positions and times, swap polarities, clamp to the sensor and re-sort."""
    rng = np.random.default_rng(seed)
    n = len(stream)
    w, h = sensor
    j, tj = params.max_xy_jitter, params.max_t_jitter_us
    x = np.clip(stream.x + rng.integers(-j, j + 1, n), 0, w - 1)
    y = np.clip(stream.y + rng.integers(-j, j + 1, n), 0, h - 1)
    t = np.maximum(stream.t + rng.integers(-tj, tj + 1, n), 0)
    swap = rng.random(n) < params.polarity_swap_prob
    p = np.where(swap, -stream.p, stream.p)
    out = EventStream(x, y, t, p, stream.labels)
    return out.sorted_by_time()


# --- frame directories -----------------------------------------------------------


def write_frames(directory, frames: Sequence[BrightnessFrame]) -> None:
    """Raw little-endian f32 frames (+ u8 ownership masks) and a text manifest."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    h, w = np.shape(frames[0].values)
    lines = [f"# {w} {h}"]
    for i, f in enumerate(frames):
        name = f"frame_{i:06d}.f32"
        np.asarray(f.values, dtype="<f4").tofile(d / name)
        line = f"{name} {int(f.t_us)}"
        if f.ownership is not None:
            mask = f"mask_{i:06d}.u8"
            np.asarray(f.ownership, dtype=np.uint8).tofile(d / mask)
            line += f" {mask}"
        lines.append(line)
    (d / "manifest.txt").write_text("\n".join(lines) + "\n")


def read_frames(directory, sensor: tuple[int, int] | None = None) -> list[BrightnessFrame]:
    d = Path(directory)
    manifest = d / "manifest.txt"
    if not manifest.exists():
        raise ValidationError(f"no manifest.txt in {d}")
    frames = []
    for raw in manifest.read_text().splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            parts = line[1:].split()
            if len(parts) == 2 and sensor is None:
                sensor = (int(parts[0]), int(parts[1]))
            continue
        if sensor is None:
            raise ValidationError("sensor size unknown: add '# W H' to the manifest")
        parts = line.split()
        if len(parts) not in (2, 3):
            raise ValidationError(f"bad manifest line: {line!r}")
        w, h = sensor
        values = np.fromfile(d / parts[0], dtype="<f4")
        if values.size != w * h:
            raise ValidationError(f"{parts[0]} has {values.size} values, expected {w * h}")
        own = None
        if len(parts) == 3:
            own = np.fromfile(d / parts[2], dtype=np.uint8).reshape(h, w)
        frames.append(BrightnessFrame(int(parts[1]), values.reshape(h, w).astype(np.float64), own))
    return frames
