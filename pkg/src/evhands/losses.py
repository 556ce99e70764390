"""Training objectives for two-hand parameter regression.

Every loss takes tensors (or arrays) with optional leading batch axes and
averages over them, so the same functions serve single examples and batches.
Parameter vectors are laid out as ``[theta(6), beta(10), rot(3), trans(3)]``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, fields
from typing import Callable

import numpy as np

from . import ad
from .errors import ValidationError
from .events import SegLabel
from .hand import HandParams, project

THETA = slice(0, 6)
BETA = slice(6, 16)
ROT = slice(16, 19)
TRANS = slice(19, 22)

TERMS = ("joints", "mano", "seg", "interhand", "isec", "reg")
REAL_TERMS = ("joints2d", "interhand", "isec", "reg")


@dataclass(frozen=True)
class LossWeights:
    joints: float = 0.01
    mano: float = 10.0
    seg: float = 1.0
    interhand: float = 100.0
    isec: float = 100.0
    theta: float = 0.025
    beta: float = 25.0
    joints2d: float = 0.01

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) >= 0:
                raise ValidationError(f"loss weight {f.name} must be non-negative")

    def term_weight(self, term: str) -> float:
        return 1.0 if term == "reg" else getattr(self, term)


@dataclass
class TwoHandPrediction:
    """Network output for a batch; params are B x 22, joints B x 21 x 3."""

    params_l: ad.Tensor
    params_r: ad.Tensor
    joints_l: ad.Tensor
    joints_r: ad.Tensor
    seg_logits: ad.Tensor | None = None
    verts_l: ad.Tensor | None = None
    verts_r: ad.Tensor | None = None


@dataclass
class TwoHandTarget:
    params_l: np.ndarray
    params_r: np.ndarray
    joints_l: np.ndarray
    joints_r: np.ndarray
    labels: np.ndarray | None = None
    label_mask: np.ndarray | None = None


@dataclass
class LossReport:
    total: ad.Tensor
    raw: dict = field(default_factory=dict)
    weighted: dict = field(default_factory=dict)
    supervised_rows: int = 0

    @property
    def value(self) -> float:
        return self.total.item()


def _vec(p):
    if isinstance(p, HandParams):
        return ad.Tensor(p.vector())
    return ad.as_tensor(p)


def _check_same(a, b, what):
    if tuple(a.shape) != tuple(np.shape(b)):
        raise ValidationError(f"{what}: shape mismatch {tuple(a.shape)} vs {tuple(np.shape(b))}")


def joint_loss(pred_joints, gt_joints):
    """Mean Euclidean joint distance (metres)."""
    pred = ad.as_tensor(pred_joints)
    gt = ad.as_tensor(gt_joints, pred)
    _check_same(pred, gt, "joint_loss")
    return ad.norm(pred - gt, axis=-1).mean()


def mano_loss(pred, gt):
    """Squared error on pose, shape and rotation plus L1 on translation, per hand."""
    p = _vec(pred)
    g = ad.as_tensor(gt.vector() if isinstance(gt, HandParams) else gt, p)
    _check_same(p, g, "mano_loss")
    d = p - g
    per = (d[..., 0:19] ** 2).sum(axis=-1) + ad.abs_(d[..., 19:22]).sum(axis=-1)
    return per.mean() if per.ndim else per


def seg_loss(logits, labels, mask=None):
    """Cross-entropy over supervised rows; returns ``(loss, n_supervised)``.

    Rows labelled NoClass and rows with ``mask`` false (padding, duplicates)
    are excluded.  With no supervised rows the loss is zero.
    """
    lg = ad.as_tensor(logits)
    labels = np.asarray(labels)
    if labels.shape != lg.shape[:-1]:
        raise ValidationError("seg_loss: labels do not align with logits")
    use = labels != SegLabel.NO_CLASS
    if mask is not None:
        use &= np.asarray(mask, dtype=bool)
    n = int(use.sum())
    if n == 0:
        return (lg * 0.0).sum(), 0
    onehot = np.zeros(lg.shape, dtype=lg.dtype)
    idx = np.nonzero(use)
    onehot[idx + (labels[idx].astype(np.int64),)] = 1.0
    return -(ad.log_softmax(lg, axis=-1) * onehot).sum() / float(n), n


def interhand_loss(pred_l, pred_r, gt_l, gt_r, pj_l, pj_r, gj_l, gj_r):
    """Relative two-hand consistency: shape agreement, relative joints and translation."""
    pl, pr = _vec(pred_l), _vec(pred_r)
    gl = np.asarray(gt_l.vector() if isinstance(gt_l, HandParams) else gt_l)
    gr = np.asarray(gt_r.vector() if isinstance(gt_r, HandParams) else gt_r)
    shape = ((pl[..., BETA] - pr[..., BETA]) ** 2).sum(axis=-1)
    rel_j = (ad.as_tensor(pj_l) - pj_r) - ad.as_tensor(np.asarray(gj_l) - np.asarray(gj_r), pl)
    ij = (rel_j ** 2).sum(axis=-1).mean(axis=-1)
    rel_t = (pl[..., TRANS] - pr[..., TRANS]) - ad.as_tensor(gl[..., TRANS] - gr[..., TRANS], pl)
    it = (rel_t ** 2).sum(axis=-1)
    per = shape + ij + it
    return per.mean() if per.ndim else per


def tikhonov_reg(pred, lambda_theta: float = 0.025, lambda_beta: float = 25.0):
    p = _vec(pred)
    per = lambda_theta * (p[..., THETA] ** 2).sum(axis=-1) + lambda_beta * (p[..., BETA] ** 2).sum(axis=-1)
    return per.mean() if per.ndim else per


def joints2d_loss(pred_joints3d, gt_joints3d, intr_sim, intr_real):
    """Mean pixel distance between projected predicted and reference joints."""
    pred = ad.as_tensor(pred_joints3d)
    uv_pred = project(pred, intr_sim)
    uv_gt = project(np.asarray(gt_joints3d, dtype=np.float64), intr_real)
    return ad.norm(uv_pred - ad.as_tensor(uv_gt, pred), axis=-1).mean()


def combine_terms(terms: dict, weights: LossWeights) -> LossReport:
    """Weighted sum of the given raw term tensors, in a fixed term order."""
    total = None
    report = LossReport(total=None)
    for name in TERMS + ("joints2d",):
        if name not in terms:
            continue
        t = ad.as_tensor(terms[name])
        w = weights.term_weight(name)
        wt = t * w
        report.raw[name] = t.item()
        report.weighted[name] = wt.item()
        total = wt if total is None else total + wt
    report.total = total if total is not None else ad.Tensor(0.0)
    return report


def total_loss(pred: TwoHandPrediction, target: TwoHandTarget, weights: LossWeights = LossWeights(),
               isec_fn: Callable | None = None) -> LossReport:
    """Synthetic-data objective; per-hand terms are summed over the two hands."""
    terms = {
        "joints": joint_loss(pred.joints_l, target.joints_l) + joint_loss(pred.joints_r, target.joints_r),
        "mano": mano_loss(pred.params_l, target.params_l) + mano_loss(pred.params_r, target.params_r),
    }
    n_sup = 0
    if pred.seg_logits is not None and target.labels is not None:
        terms["seg"], n_sup = seg_loss(pred.seg_logits, target.labels, target.label_mask)
    terms["interhand"] = interhand_loss(pred.params_l, pred.params_r, target.params_l, target.params_r,
                                        pred.joints_l, pred.joints_r, target.joints_l, target.joints_r)
    if isec_fn is not None and weights.isec > 0:
        terms["isec"] = isec_fn(pred)
    terms["reg"] = (tikhonov_reg(pred.params_l, weights.theta, weights.beta)
                    + tikhonov_reg(pred.params_r, weights.theta, weights.beta))
    report = combine_terms(terms, weights)
    report.supervised_rows = n_sup
    return report


def real_total_loss(pred: TwoHandPrediction, target: TwoHandTarget, intr_sim, intr_real,
                    weights: LossWeights = LossWeights(), isec_fn: Callable | None = None) -> LossReport:
    """Objective for real recordings: 2D joint reprojection instead of 3D, seg and MANO terms."""
    terms = {
        "joints2d": (joints2d_loss(pred.joints_l, target.joints_l, intr_sim, intr_real)
                     + joints2d_loss(pred.joints_r, target.joints_r, intr_sim, intr_real)),
        "interhand": interhand_loss(pred.params_l, pred.params_r, target.params_l, target.params_r,
                                    pred.joints_l, pred.joints_r, target.joints_l, target.joints_r),
    }
    if isec_fn is not None and weights.isec > 0:
        terms["isec"] = isec_fn(pred)
    terms["reg"] = (tikhonov_reg(pred.params_l, weights.theta, weights.beta)
                    + tikhonov_reg(pred.params_r, weights.theta, weights.beta))
    return combine_terms(terms, weights)


class LossLog:
    """Long-format CSV writer: one ``step,term,value`` row per term."""

    def __init__(self, path):
        self._fh = open(path, "w", newline="")
        self._w = csv.writer(self._fh)
        self._w.writerow(["step", "term", "value"])

    def write(self, step: int, report: LossReport) -> None:
        for name, v in report.weighted.items():
            self._w.writerow([step, name, repr(float(v))])
        self._w.writerow([step, "total", repr(report.value)])

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
