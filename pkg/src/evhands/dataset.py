"""Synthetic dataset generation: render, simulate, window, label and store.

Layout of a dataset directory::

    manifest.json                 config, sensor, window spec, per-script counts
    <script>/stream.evst          simulated event stream (+ stream.labels, u8 per event)
    <script>/features.npy         N x M x 5 float32 normalised cloud features
    <script>/flags.npy            N x M uint8 (1 = padding, 2 = duplicate)
    <script>/labels.npy           N x M uint8 segmentation labels
    <script>/params.npy           N x 2 x 22 float32 ground-truth parameters (left, right)
    <script>/joints.npy           N x 2 x 21 x 3 float32 ground-truth joints (metres)
    <script>/window_start.npy     N int64 window start times (us)
    <script>/split.npy            N uint8 (0 = train, 1 = test)
"""

from __future__ import annotations

import json
import logging
import shutil
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import events as ev
from .config import RunConfig
from .errors import ValidationError
from .hand import HandAssets, pose_batch, project
from .scene import SceneScript, params_at, render_toy_frames, shipped_script
from .sim import EventSimulator, augment_events, concat_streams, log_intensity, BrightnessFrame

log = logging.getLogger(__name__)

ARRAYS = ("features", "flags", "labels", "params", "joints", "window_start", "split")
TRAIN, TEST = 0, 1


def script_for(cfg: RunConfig, name: str) -> SceneScript:
    return shipped_script(name, duration_s=cfg.data.duration_s, fps_render=cfg.data.fps_render,
                          camera=cfg.camera.intrinsics(), vertex_noise_m=cfg.data.vertex_noise_mm / 1000.0)


def simulate_script(script: SceneScript, assets_l: HandAssets, assets_r: HandAssets, cfg: RunConfig,
                    seed: int) -> ev.EventStream:
    """Render a script frame by frame and run the event simulator over it."""
    times = script.frame_times_us()
    params = params_at(script, times / 1e6)
    sim = EventSimulator(cfg.sim.sim_config(seed))
    parts = []
    for frame in render_toy_frames(times, params, assets_l, assets_r, script.camera, script.background,
                                   script.vertex_noise_m, seed):
        logf = BrightnessFrame(frame.t_us, log_intensity(frame.values, cfg.sim.epsilon), frame.ownership)
        parts.append(sim.feed(logf))
    stream = concat_streams(parts)
    if cfg.data.augment.enabled:
        stream = augment_events(stream, cfg.data.augment.params(), seed, script.camera.sensor)
    return stream


def window_arrays(stream: ev.EventStream, script: SceneScript, cfg: RunConfig, seed: int,
                  assets_l: HandAssets, assets_r: HandAssets, test_script: bool = False) -> dict:
    """Per-window resampled clouds and ground truth at each window's end time.

    Every ``keep_every``-th window is kept; windows without any event are
    dropped because the network cannot take an all-padding cloud.
    """
    spec = cfg.window.spec()
    sensor = script.camera.sensor
    times = script.frame_times_us()
    t0, t1 = int(times[0]), int(times[-1])
    m = cfg.data.resample_m
    feats, flags, labels, starts = [], [], [], []
    for k, (start, win) in enumerate(ev.slice_stream(stream, spec, t0, t1, skip_empty=False)):
        if k % cfg.data.keep_every or len(win) == 0:
            continue
        cloud = ev.aggregate_window(win, sensor, start, spec)
        cloud = ev.resample_cloud(cloud, m, seed=[seed, k])
        feats.append(ev.normalize_cloud(cloud, sensor).astype(np.float32))
        fl = cloud.padded.astype(np.uint8) * ev.FLAG_PADDED + cloud.duplicate.astype(np.uint8) * ev.FLAG_DUPLICATE
        flags.append(fl)
        labels.append(cloud.labels if cloud.labels is not None
                      else np.full(m, ev.SegLabel.NO_CLASS, np.uint8))
        starts.append(start)
    n = len(starts)
    starts = np.asarray(starts, dtype=np.int64)
    gt = params_at(script, (starts + spec.length_us) / 1e6) if n else np.zeros((0, 2, 22))
    jl = pose_batch(gt[:, 0], assets_l)[1] if n else np.zeros((0, 21, 3))
    jr = pose_batch(gt[:, 1], assets_r)[1] if n else np.zeros((0, 21, 3))
    if cfg.data.split == "script":
        split = np.full(n, TEST if test_script else TRAIN, np.uint8)
    else:
        split = (np.arange(n) % cfg.data.test_every == cfg.data.test_every - 1).astype(np.uint8)
    return {
        "features": np.stack(feats) if n else np.zeros((0, m, 5), np.float32),
        "flags": np.stack(flags) if n else np.zeros((0, m), np.uint8),
        "labels": np.stack(labels).astype(np.uint8) if n else np.zeros((0, m), np.uint8),
        "params": gt.astype(np.float32),
        "joints": np.stack([jl, jr], axis=1).astype(np.float32),
        "window_start": starts,
        "split": split,
    }


def build_dataset(cfg: RunConfig, out_dir, assets_l: HandAssets, assets_r: HandAssets,
                  force: bool = False) -> dict:
    """Generate every configured script into ``out_dir`` and return the manifest."""
    out = Path(out_dir)
    if out.exists() and any(out.iterdir()):
        if not force:
            raise ValidationError(f"output directory {out} is not empty (use --force to overwrite)")
        shutil.rmtree(out)
    out.mkdir(parents=True, exist_ok=True)
    unknown = set(cfg.data.test_scripts) - set(cfg.data.scripts)
    if unknown:
        raise ValidationError(f"test_scripts not in scripts: {sorted(unknown)}")
    manifest = {"format": 1, "config": json.loads(cfg.dump()), "sensor": list(cfg.camera.intrinsics().sensor),
                "window": {"length_us": cfg.window.length_us, "stride_us": cfg.window.stride_us},
                "scripts": []}
    for i, name in enumerate(cfg.data.scripts):
        seed = cfg.seed * 1000 + i
        script = script_for(cfg, name)
        log.info("simulating %s (%.1f s)", name, script.duration_s)
        stream = simulate_script(script, assets_l, assets_r, cfg, seed)
        d = out / name
        d.mkdir()
        ev.write_event_stream(d / "stream.evst", stream, script.camera.sensor)
        ev.write_labels(d / "stream.labels", stream.labels)
        arrays = window_arrays(stream, script, cfg, seed, assets_l, assets_r, name in cfg.data.test_scripts)
        for key in ARRAYS:
            np.save(d / f"{key}.npy", arrays[key], allow_pickle=False)
        inside = gt_inside_fraction(arrays["joints"], script.camera)
        manifest["scripts"].append({
            "name": name, "events": len(stream), "windows": int(len(arrays["split"])),
            "train": int((arrays["split"] == TRAIN).sum()), "test": int((arrays["split"] == TEST).sum()),
            "gt_inside_fraction": inside,
        })
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def gt_inside_fraction(joints: np.ndarray, intrinsics) -> float:
    """Fraction of windows whose projected ground-truth joints all land inside the frame."""
    if len(joints) == 0:
        return 1.0
    uv = project(joints.reshape(-1, 3).astype(np.float64), intrinsics).reshape(len(joints), -1, 2)
    ok = ((uv[..., 0] >= 0) & (uv[..., 0] < intrinsics.width)
          & (uv[..., 1] >= 0) & (uv[..., 1] < intrinsics.height)).all(axis=1)
    return float(ok.mean())


@dataclass
class Dataset:
    root: Path
    manifest: dict
    features: np.ndarray
    flags: np.ndarray
    labels: np.ndarray
    params: np.ndarray
    joints: np.ndarray
    window_start: np.ndarray
    split: np.ndarray
    script: np.ndarray  # per-window index into manifest["scripts"]

    def __len__(self):
        return len(self.split)

    @property
    def script_names(self) -> list[str]:
        return [s["name"] for s in self.manifest["scripts"]]

    def indices(self, split: int) -> np.ndarray:
        return np.flatnonzero(self.split == split)

    @property
    def sensor(self) -> tuple[int, int]:
        return tuple(self.manifest["sensor"])


def load_dataset(root) -> Dataset:
    root = Path(root)
    mpath = root / "manifest.json"
    if not mpath.exists():
        raise ValidationError(f"{root} is not a dataset directory (manifest.json missing)")
    manifest = json.loads(mpath.read_text())
    parts = {k: [] for k in ARRAYS}
    sid = []
    for i, s in enumerate(manifest["scripts"]):
        for k in ARRAYS:
            parts[k].append(np.load(root / s["name"] / f"{k}.npy", allow_pickle=False))
        sid.append(np.full(len(parts["split"][-1]), i, np.int64))
    cat = {k: np.concatenate(v) for k, v in parts.items()}
    return Dataset(root, manifest, script=np.concatenate(sid), **cat)
