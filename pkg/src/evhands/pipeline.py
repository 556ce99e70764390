"""Training, evaluation and benchmarking over a generated dataset."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import ad
from . import events as ev
from .config import RunConfig
from .dataset import TEST, TRAIN, Dataset
from .hand import HandAssets, HandMesh, hand_forward
from .losses import LossLog, TwoHandTarget
from .metrics import (EvalReport, auc, gated_coll_percent, pck_curve, relative_errors,
                      relative_root_errors, write_curve_csv)
from .net import Adam, Batch, Model, save_checkpoint, train_step

log = logging.getLogger(__name__)


def make_batch(ds: Dataset, idx: np.ndarray) -> Batch:
    flags = ds.flags[idx]
    target = TwoHandTarget(
        params_l=ds.params[idx, 0].astype(np.float64), params_r=ds.params[idx, 1].astype(np.float64),
        joints_l=ds.joints[idx, 0].astype(np.float64), joints_r=ds.joints[idx, 1].astype(np.float64),
        labels=ds.labels[idx], label_mask=flags == 0)
    return Batch(ds.features[idx], (flags & ev.FLAG_PADDED) == 0, target)


class BatchSampler:
    """Seeded epoch-wise shuffling over a fixed index set."""

    def __init__(self, indices: np.ndarray, batch_size: int, seed: int):
        if len(indices) == 0:
            raise ValueError("no training windows")
        self.indices = np.asarray(indices)
        self.batch_size = batch_size
        self.rng = np.random.default_rng(seed)
        self._order = np.zeros(0, np.int64)

    def next(self) -> np.ndarray:
        while len(self._order) < self.batch_size:
            self._order = np.concatenate([self._order, self.rng.permutation(self.indices)])
        out, self._order = self._order[:self.batch_size], self._order[self.batch_size:]
        return out


@dataclass
class TrainResult:
    model: Model
    trace: list  # total loss per step
    checkpoint: Path | None
    report: EvalReport | None


def train(cfg: RunConfig, ds: Dataset, assets_l: HandAssets, assets_r: HandAssets, out_dir=None,
          model: Model | None = None, evaluate_after: bool = True) -> TrainResult:
    """Run ``cfg.train.iterations`` Adam steps; optionally resume from ``model``.

    Writes ``loss.csv`` (step, term, value), periodic ``ckpt_<step>.bin`` and
    ``model.ckpt`` into ``out_dir`` when given.
    """
    tc = cfg.train
    if model is None:
        model = Model(cfg.net.net_config(), seed=cfg.seed)
    opt = Adam(tc.lr, tc.beta1, tc.beta2, tc.eps)
    sampler = BatchSampler(ds.indices(TRAIN), tc.batch_size, cfg.seed + 1 + model.step)
    out = Path(out_dir) if out_dir is not None else None
    logger = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        logger = LossLog(out / "loss.csv")
    trace = []
    try:
        for _ in range(tc.iterations):
            step = model.step
            batch = make_batch(ds, sampler.next())
            report = train_step(model, batch, opt, assets_l, assets_r, tc.loss_config(cfg.loss, step))
            trace.append(report.value)
            if logger is not None:
                logger.write(step, report)
            if step % 100 == 0:
                log.info("step %d loss %.5g", step, report.value)
            if out is not None and tc.checkpoint_every and model.step % tc.checkpoint_every == 0:
                save_checkpoint(out / f"ckpt_{model.step:06d}.bin", model)
    finally:
        if logger is not None:
            logger.close()
    ckpt = None
    if out is not None:
        ckpt = out / "model.ckpt"
        save_checkpoint(ckpt, model)
    report = None
    if evaluate_after and len(ds.indices(TEST)):
        report = evaluate(cfg, ds, assets_l, assets_r, model, out_dir=out)
    return TrainResult(model, trace, ckpt, report)


def predict_params(model: Model, ds: Dataset, idx: np.ndarray, batch_size: int = 32) -> np.ndarray:
    """Predicted parameter vectors (len(idx), 2, 22) without recording gradients."""
    out = []
    for s in range(0, len(idx), batch_size):
        b = make_batch(ds, idx[s:s + batch_size])
        pl, pr, _ = model.forward(b.features, b.mask)
        out.append(np.stack([pl.data, pr.data], axis=1))
    return np.concatenate(out).astype(np.float64) if out else np.zeros((0, 2, 22))


def pose_params(params: np.ndarray, assets: HandAssets):
    p = ad.Tensor(np.asarray(params, np.float64))
    v, j = hand_forward(p[:, 0:6], p[:, 6:16], p[:, 16:19], p[:, 19:22], assets)
    return v.data, j.data


def evaluate(cfg: RunConfig, ds: Dataset, assets_l: HandAssets, assets_r: HandAssets,
             model: Model | None = None, out_dir=None, split: int = TEST,
             perfect: bool = False) -> EvalReport:
    """R-AUC, RR-AUC and gated Coll% on one split.

    With ``perfect=True`` the ground-truth parameters are replayed as
    predictions (a harness self-check).
    """
    idx = ds.indices(split)
    if perfect or model is None:
        pred = ds.params[idx].astype(np.float64)
    else:
        pred = predict_params(model, ds, idx, cfg.eval.batch_size)
    vl, jl = pose_params(pred[:, 0], assets_l)
    vr, jr = pose_params(pred[:, 1], assets_r)
    gl = ds.joints[idx, 0].astype(np.float64)
    gr = ds.joints[idx, 1].astype(np.float64)
    rel = np.concatenate([relative_errors(jl, gl), relative_errors(jr, gr)], axis=-1)
    rr = relative_root_errors(jl, jr, gl, gr)

    def coll(sel):
        frames = ((HandMesh(vl[i], assets_l.faces), HandMesh(vr[i], assets_r.faces), gl[i, 0], gr[i, 0])
                  for i in sel)
        return gated_coll_percent(frames, cfg.eval.gate_mm)

    r_curve, rr_curve = pck_curve(rel), pck_curve(rr)
    all_coll = coll(range(len(idx)))
    per = {}
    for si, name in enumerate(ds.script_names):
        sel = np.flatnonzero(ds.script[idx] == si)
        if len(sel) == 0:
            continue
        c = coll(sel)
        per[name] = {"r_auc": auc(pck_curve(rel[sel])), "rr_auc": auc(pck_curve(rr[sel])),
                     "coll_percent": c.value, "coll_frames": c.frames, "windows": int(len(sel))}
    report = EvalReport(auc(r_curve), auc(rr_curve), all_coll.value, all_coll.frames, int(len(idx)), per)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "eval.json").write_text(report.to_json() + "\n")
        write_curve_csv(out / "r_pck.csv", r_curve)
        write_curve_csv(out / "rr_pck.csv", rr_curve)
    return report


# --- benchmark -------------------------------------------------------------------


def synthetic_stream(duration_s: float, events_per_ms: int, sensor, seed: int) -> ev.EventStream:
    rng = np.random.default_rng(seed)
    n = int(duration_s * 1000 * events_per_ms)
    w, h = sensor
    t = np.sort(rng.integers(0, int(duration_s * 1e6), n))
    return ev.EventStream(rng.integers(0, w, n), rng.integers(0, h, n), t,
                          rng.choice(np.array([-1, 1]), n), None)


def bench(cfg: RunConfig, stream: ev.EventStream, sensor, model: Model | None = None) -> dict:
    """Windows per second and per-window latency of cloud preparation and of the network."""
    spec = cfg.window.spec()
    m = cfg.data.resample_m
    t_end = int(stream.t[-1]) + 1 if len(stream) else int(cfg.bench.duration_s * 1e6)
    lat = []
    feats, masks = [], []
    t_all = time.perf_counter()
    for k, (start, win) in enumerate(ev.slice_stream(stream, spec, 0, t_end, skip_empty=False)):
        t0 = time.perf_counter()
        cloud = ev.aggregate_window(win, sensor, start, spec)
        cloud = ev.resample_cloud(cloud, m, seed=[cfg.seed, k])
        f = ev.normalize_cloud(cloud, sensor)
        lat.append(time.perf_counter() - t0)
        if len(feats) < cfg.bench.forward_windows and not cloud.padded.all():
            feats.append(f.astype(np.float32))
            masks.append(~cloud.padded)
    total = time.perf_counter() - t_all
    n = len(lat)
    result = {
        "windows": n,
        "events": int(len(stream)),
        "prep_windows_per_s": n / total if total > 0 else float("inf"),
        "prep_latency_ms": {"p50": 1e3 * float(np.percentile(lat, 50)) if n else None,
                            "p95": 1e3 * float(np.percentile(lat, 95)) if n else None},
    }
    if model is None:
        model = Model(cfg.net.net_config(), seed=cfg.seed)
    if not feats:
        result["forward"] = None
        result["note"] = "all windows were empty; forward pass skipped"
        return result
    flat = []
    for f, mk in zip(feats, masks):
        t0 = time.perf_counter()
        model.forward(f[None], mk[None])
        flat.append(time.perf_counter() - t0)
    result["forward"] = {"windows": len(flat), "windows_per_s": len(flat) / sum(flat),
                         "latency_ms": {"p50": 1e3 * float(np.percentile(flat, 50)),
                                        "p95": 1e3 * float(np.percentile(flat, 95))}}
    return result
