"""Keypoint accuracy curves, their areas, and gated collision statistics."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from typing import Iterable

import numpy as np

from .collision import collision_percentage
from .hand import WRIST

DEFAULT_THRESHOLDS = np.arange(0.0, 101.0, 1.0)
GATE_MM = 50.0


@dataclass(frozen=True)
class PckCurve:
    """PCK sampled at ``thresholds``.

    ``area`` is the exact normalised integral of the underlying step function
    when the curve was built from errors; curves given only as samples leave
    it unset.
    """

    thresholds: np.ndarray
    values: np.ndarray
    area: float | None = None

    def rows(self):
        return list(zip(self.thresholds.tolist(), self.values.tolist()))


@dataclass
class CollStat:
    value: float | None
    frames: int

    @property
    def empty(self) -> bool:
        return self.frames == 0


@dataclass
class EvalReport:
    r_auc: float
    rr_auc: float
    coll_percent: float | None
    coll_frames: int
    windows: int
    per_sequence: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def pck_curve(errors_mm, thresholds=DEFAULT_THRESHOLDS) -> PckCurve:
    """Fraction of errors at or below each threshold."""
    e = np.sort(np.asarray(errors_mm, dtype=np.float64).reshape(-1))
    th = np.asarray(thresholds, dtype=np.float64)
    if len(e) == 0:
        return PckCurve(th, np.zeros_like(th), 0.0)
    lo, hi = th[0], th[-1]
    # an error e is counted for every threshold in [max(e, lo), hi]
    area = float(np.mean(np.clip(hi - np.maximum(e, lo), 0.0, hi - lo)) / (hi - lo))
    return PckCurve(th, np.searchsorted(e, th, side="right") / len(e), area)


def auc(curve: PckCurve) -> float:
    """Area under the curve normalised by the threshold range.

    Curves built from errors use their exact step-function area, so an error
    lying exactly on a grid threshold is not smeared over a whole grid cell;
    sampled curves are integrated with the trapezoid rule.
    """
    if curve.area is not None:
        return curve.area
    th, v = curve.thresholds, curve.values
    return float(np.sum((v[1:] + v[:-1]) * np.diff(th)) / 2.0 / (th[-1] - th[0]))


def relative_errors(pred_joints, gt_joints) -> np.ndarray:
    """Per-joint errors (mm) after subtracting each hand's own wrist.

    Inputs are metres, shaped (..., NJ, 3); each hand is aligned separately.
    """
    p = np.asarray(pred_joints, dtype=np.float64)
    g = np.asarray(gt_joints, dtype=np.float64)
    p = p - p[..., WRIST:WRIST + 1, :]
    g = g - g[..., WRIST:WRIST + 1, :]
    return 1000.0 * np.linalg.norm(p - g, axis=-1)


def relative_root_errors(pred_l, pred_r, gt_l, gt_r) -> np.ndarray:
    """Per-joint errors (mm) of both hands after moving the predicted right wrist onto the true one.

    Returns an array (..., 2 * NJ) with the left hand's joints first.
    """
    pl, pr = np.asarray(pred_l, np.float64), np.asarray(pred_r, np.float64)
    gl, gr = np.asarray(gt_l, np.float64), np.asarray(gt_r, np.float64)
    shift = gr[..., WRIST:WRIST + 1, :] - pr[..., WRIST:WRIST + 1, :]
    pred = np.concatenate([pl + shift, pr + shift], axis=-2)
    gt = np.concatenate([gl, gr], axis=-2)
    return 1000.0 * np.linalg.norm(pred - gt, axis=-1)


def gated_coll_percent(frames: Iterable, gate_mm: float = GATE_MM) -> CollStat:
    """Mean Coll% over frames whose wrists are closer than ``gate_mm``.

    ``frames`` yields ``(mesh_l, mesh_r, root_l, root_r)`` with roots in metres.
    """
    vals = []
    for mesh_l, mesh_r, root_l, root_r in frames:
        d = 1000.0 * np.linalg.norm(np.asarray(root_l, np.float64) - np.asarray(root_r, np.float64))
        if d < gate_mm:
            vals.append(collision_percentage(mesh_l, mesh_r))
    if not vals:
        return CollStat(None, 0)
    return CollStat(float(np.mean(vals)), len(vals))


def write_curve_csv(path, curve: PckCurve) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["threshold_mm", "value"])
        for t, v in curve.rows():
            w.writerow([repr(t), repr(v)])
