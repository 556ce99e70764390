"""Keyframed two-hand scenes and a flat-shaded z-buffer renderer.

A :class:`SceneScript` lists keyframes of both hands' parameters.  Dense
trajectories interpolate pose, shape and translation linearly and rotations by
spherical interpolation of quaternions.  :func:`render_toy_frames` rasterises
both hand meshes over a slowly drifting background texture and yields
Bayer-mosaiced brightness frames with per-pixel hand ownership.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np
from scipy.spatial.transform import Rotation, Slerp

from .errors import ValidationError
from .events import SegLabel
from .hand import N_PARAMS, HandAssets, HandParams, mirror_params, pose_batch
from .sim import BrightnessFrame, CameraIntrinsics, bayer_mosaic

ROT = slice(16, 19)
HAND_ALBEDO = {SegLabel.LEFT: (0.85, 0.62, 0.52), SegLabel.RIGHT: (0.80, 0.58, 0.48)}
LIGHT_DIR = np.array([-0.3, -0.5, -1.0]) / np.linalg.norm([-0.3, -0.5, -1.0])
AMBIENT = 0.35


@dataclass(frozen=True)
class Keyframe:
    t_s: float
    left: HandParams
    right: HandParams


@dataclass(frozen=True)
class BackgroundConfig:
    """Smooth random texture drifting at ``speed_px_s`` (x, y); ``speed`` 0 gives a static texture."""

    level: float = 0.3
    contrast: float = 0.12
    smoothness_px: float = 6.0
    speed_px_s: tuple = (12.0, 5.0)
    seed: int = 0


@dataclass
class SceneScript:
    name: str
    keyframes: list
    fps_render: float = 100.0
    camera: CameraIntrinsics = field(default_factory=CameraIntrinsics)
    background: BackgroundConfig = field(default_factory=BackgroundConfig)
    vertex_noise_m: float = 0.0

    def __post_init__(self):
        ts = np.array([k.t_s for k in self.keyframes])
        if len(ts) < 1:
            raise ValidationError(f"script {self.name}: no keyframes")
        if np.any(np.diff(ts) <= 0):
            raise ValidationError(f"script {self.name}: keyframe times must increase strictly")
        if len(ts) > 1 and self.fps_render < 1.0 / np.min(np.diff(ts)):
            raise ValidationError(f"script {self.name}: render rate below keyframe rate")

    @property
    def duration_s(self) -> float:
        return self.keyframes[-1].t_s - self.keyframes[0].t_s

    def frame_times_us(self) -> np.ndarray:
        t0 = self.keyframes[0].t_s
        n = int(np.floor(self.duration_s * self.fps_render + 1e-9)) + 1
        return np.round((t0 + np.arange(n) / self.fps_render) * 1e6).astype(np.int64)


def params_at(script: SceneScript, times_s) -> np.ndarray:
    """Interpolated parameter vectors at ``times_s``: shape (T, 2, 22), left hand first."""
    times_s = np.atleast_1d(np.asarray(times_s, dtype=np.float64))
    ts = np.array([k.t_s for k in script.keyframes])
    if np.any(times_s < ts[0] - 1e-9) or np.any(times_s > ts[-1] + 1e-9):
        raise ValidationError("interpolation time outside the keyframe range")
    times_s = np.clip(times_s, ts[0], ts[-1])
    out = np.empty((len(times_s), 2, N_PARAMS))
    for h, side in enumerate(("left", "right")):
        vecs = np.stack([getattr(k, side).vector() for k in script.keyframes])
        if len(ts) == 1:
            out[:, h] = vecs[0]
            continue
        for j in range(N_PARAMS):
            out[:, h, j] = np.interp(times_s, ts, vecs[:, j])
        slerp = Slerp(ts, Rotation.from_rotvec(vecs[:, ROT]))
        out[:, h, ROT] = slerp(times_s).as_rotvec()
    return out


def interpolate_keyframes(script: SceneScript, fps_render: float | None = None):
    """Dense trajectory at ``fps_render``: ``(times_us, params (T, 2, 22))``."""
    if fps_render is not None:
        script = SceneScript(script.name, script.keyframes, fps_render, script.camera,
                             script.background, script.vertex_noise_m)
    times = script.frame_times_us()
    return times, params_at(script, times / 1e6)


# --- background -------------------------------------------------------------------------


class DriftingTexture:
    """Periodic band-limited noise sampled with bilinear interpolation at a moving offset."""

    def __init__(self, cfg: BackgroundConfig, width: int, height: int):
        self.cfg = cfg
        size_y, size_x = 2 * height, 2 * width
        rng = np.random.default_rng(cfg.seed)
        noise = rng.standard_normal((size_y, size_x))
        fy = np.fft.fftfreq(size_y)[:, None]
        fx = np.fft.fftfreq(size_x)[None, :]
        sigma = cfg.smoothness_px
        kernel = np.exp(-2.0 * (np.pi * sigma) ** 2 * (fx ** 2 + fy ** 2))
        field_ = np.real(np.fft.ifft2(np.fft.fft2(noise) * kernel))
        field_ /= field_.std() + 1e-12
        self.tex = np.clip(cfg.level + cfg.contrast * field_, 0.02, 1.0)
        self.width, self.height = width, height

    def at(self, t_s: float) -> np.ndarray:
        ox = self.cfg.speed_px_s[0] * t_s
        oy = self.cfg.speed_px_s[1] * t_s
        th, tw = self.tex.shape
        xs = np.arange(self.width) + ox
        ys = np.arange(self.height) + oy
        x0, y0 = np.floor(xs).astype(np.int64), np.floor(ys).astype(np.int64)
        ax, ay = xs - x0, ys - y0
        x0m, x1m = x0 % tw, (x0 + 1) % tw
        y0m, y1m = y0 % th, (y0 + 1) % th
        top = self.tex[y0m][:, x0m] * (1 - ax) + self.tex[y0m][:, x1m] * ax
        bot = self.tex[y1m][:, x0m] * (1 - ax) + self.tex[y1m][:, x1m] * ax
        return top * (1 - ay)[:, None] + bot * ay[:, None]


# --- rasteriser -----------------------------------------------------------------------------


def rasterize(meshes, intrinsics: CameraIntrinsics, background_rgb: np.ndarray):
    """Z-buffered flat-shaded rendering of camera-frame meshes.

    ``meshes`` is a sequence of ``(vertices V x 3, faces F x 3, albedo rgb, label)``.
    Returns ``(rgb H x W x 3, ownership H x W uint8)``.
    """
    w, h = intrinsics.width, intrinsics.height
    rgb = np.array(background_rgb, dtype=np.float64, copy=True)
    own = np.full((h, w), SegLabel.BACKGROUND, np.uint8)
    if not meshes:
        return rgb, own
    tri_v, tri_col, tri_lab = [], [], []
    for verts, faces, albedo, label in meshes:
        tv = np.asarray(verts, np.float64)[faces]
        keep = np.all(tv[:, :, 2] > 1e-3, axis=1)
        n = np.cross(tv[:, 1] - tv[:, 0], tv[:, 2] - tv[:, 0])
        front = np.einsum("ij,ij->i", n, tv[:, 0]) < 0
        sel = keep & front
        tv, n = tv[sel], n[sel]
        n = n / np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-20)
        shade = AMBIENT + (1 - AMBIENT) * np.maximum(0.0, n @ LIGHT_DIR)
        tri_v.append(tv)
        tri_col.append(shade[:, None] * np.asarray(albedo)[None, :])
        tri_lab.append(np.full(len(tv), label, np.uint8))
    tv = np.concatenate(tri_v)
    if len(tv) == 0:
        return rgb, own
    col = np.concatenate(tri_col)
    lab = np.concatenate(tri_lab)
    z = tv[:, :, 2]
    u = intrinsics.fx * tv[:, :, 0] / z + intrinsics.cx
    v = intrinsics.fy * tv[:, :, 1] / z + intrinsics.cy
    # pixel (i, j) has its centre at (j + 0.5, i + 0.5)
    x0 = np.clip(np.ceil(u.min(1) - 0.5), 0, w).astype(np.int64)
    x1 = np.clip(np.floor(u.max(1) - 0.5), -1, w - 1).astype(np.int64)
    y0 = np.clip(np.ceil(v.min(1) - 0.5), 0, h).astype(np.int64)
    y1 = np.clip(np.floor(v.max(1) - 0.5), -1, h - 1).astype(np.int64)
    nx = np.maximum(x1 - x0 + 1, 0)
    ny = np.maximum(y1 - y0 + 1, 0)
    cnt = nx * ny
    total = int(cnt.sum())
    if total == 0:
        return rgb, own
    tri = np.repeat(np.arange(len(tv)), cnt)
    local = np.arange(total) - np.repeat(np.cumsum(cnt) - cnt, cnt)
    px = x0[tri] + local % nx[tri]
    py = y0[tri] + local // nx[tri]
    cx, cy = px + 0.5, py + 0.5
    ua, ub, uc = u[tri, 0], u[tri, 1], u[tri, 2]
    va, vb, vc = v[tri, 0], v[tri, 1], v[tri, 2]
    area = (ub - ua) * (vc - va) - (uc - ua) * (vb - va)
    w0 = ((ub - cx) * (vc - cy) - (uc - cx) * (vb - cy)) / area
    w1 = ((uc - cx) * (va - cy) - (ua - cx) * (vc - cy)) / area
    w2 = 1.0 - w0 - w1
    inside = (w0 >= 0) & (w1 >= 0) & (w2 >= 0) & (np.abs(area) > 1e-12)
    tri, px, py = tri[inside], px[inside], py[inside]
    w0, w1, w2 = w0[inside], w1[inside], w2[inside]
    inv_z = w0 / z[tri, 0] + w1 / z[tri, 1] + w2 / z[tri, 2]
    pix = py * w + px
    order = np.lexsort((tri, -inv_z, pix))
    pix_s = pix[order]
    first = np.ones(len(pix_s), bool)
    first[1:] = pix_s[1:] != pix_s[:-1]
    win = order[first]
    rgb.reshape(-1, 3)[pix[win]] = col[tri[win]]
    own.reshape(-1)[pix[win]] = lab[tri[win]]
    return rgb, own


def render_toy_frames(times_us: np.ndarray, params: np.ndarray, assets_l: HandAssets | None,
                      assets_r: HandAssets | None, intrinsics: CameraIntrinsics,
                      background: BackgroundConfig, vertex_noise_m: float = 0.0,
                      seed: int = 0) -> Iterator[BrightnessFrame]:
    """Yield mosaiced brightness frames with ownership masks.

    ``params`` is (T, 2, 22) with the left hand first; pass ``None`` for an
    asset to leave that hand out of the scene.  Optional Gaussian vertex noise
    (fixed per call, standard deviation ``vertex_noise_m``) perturbs the
    rendered geometry only.
    """
    bg = DriftingTexture(background, intrinsics.width, intrinsics.height)
    rng = np.random.default_rng(seed)
    hands = [(assets_l, SegLabel.LEFT, 0), (assets_r, SegLabel.RIGHT, 1)]
    noise = {}
    for assets, label, _ in hands:
        if assets is not None:
            noise[label] = vertex_noise_m * rng.standard_normal(assets.template_vertices.shape)
    posed = {}
    for assets, label, col in hands:
        if assets is not None:
            posed[label], _ = pose_batch(params[:, col], assets)
    for k, t in enumerate(np.asarray(times_us)):
        gray = bg.at(t / 1e6)
        back = np.repeat(gray[:, :, None], 3, axis=2)
        meshes = [(posed[label][k] + noise[label], assets.faces, HAND_ALBEDO[label], label)
                  for assets, label, _ in hands if assets is not None]
        rgb, own = rasterize(meshes, intrinsics, back)
        yield BrightnessFrame(int(t), bayer_mosaic(rgb), own)


# --- shipped scripts -------------------------------------------------------------------------

_KEY_FPS = 5.0


def _theta_track(t, seed, amplitude=1.0):
    rng = np.random.default_rng(seed)
    freq = rng.uniform(0.25, 0.7, 6)
    phase = rng.uniform(0, 2 * np.pi, 6)
    return amplitude * np.sin(2 * np.pi * freq * t + phase)


def _beta(seed):
    return 0.5 * np.random.default_rng(seed + 1000).standard_normal(10)


def _script(name, duration_s, right_fn, left_fn, seed, theta_amplitude=0.8, **kw) -> SceneScript:
    # evenly spaced keys at no less than the source rate, always including the end time
    times = np.linspace(0.0, duration_s, int(np.ceil(duration_s * _KEY_FPS - 1e-9)) + 1)
    beta = _beta(seed)
    keys = []
    for t in times:
        rot_r, trans_r = right_fn(t)
        rot_l, trans_l = left_fn(t)
        right = HandParams(_theta_track(t, seed, theta_amplitude), beta, rot_r, trans_r)
        left = HandParams(_theta_track(t, seed + 1, theta_amplitude), beta, rot_l, trans_l)
        keys.append(Keyframe(float(t), left, right))
    return SceneScript(name, keys, background=BackgroundConfig(seed=seed), **kw)


def mirrored(fn):
    def left(t):
        rot, trans = fn(t)
        m = mirror_params(HandParams(rot=rot, trans=trans))
        return m.rot, m.trans
    return left


def clap_script(duration_s: float = 15.0, seed: int = 1, **kw) -> SceneScript:
    """Hands held back to back swing apart and together every two seconds.

    The fingers curl away from the other hand, so the closest approach (wrists
    about 35 mm apart) stays free of interpenetration.
    """
    period = 2.0

    def right(t):
        gap = 0.02 + 0.08 * 0.5 * (1 + np.cos(2 * np.pi * t / period))
        tilt = 0.15 * np.sin(2 * np.pi * t / 7.0)
        return np.array([tilt, -np.pi / 2, 0.0]), np.array([gap, 0.07, 0.6])

    return _script("clap", duration_s, right, mirrored(right), seed, theta_amplitude=0.3, **kw)


def crossover_script(duration_s: float = 15.0, seed: int = 2, **kw) -> SceneScript:
    """The left hand sweeps across in front of the right one and back."""
    period = 5.0

    def right(t):
        wob = 0.2 * np.sin(2 * np.pi * t / 3.0)
        return np.array([0.0, 0.0, wob]), np.array([0.06, 0.07, 0.65])

    def left(t):
        x = 0.015 - 0.085 * np.cos(2 * np.pi * t / period)
        return np.array([0.0, 0.1 * np.sin(2 * np.pi * t / 4.0), 0.0]), np.array([x, 0.06, 0.5])

    return _script("crossover", duration_s, right, left, seed, **kw)


def waves_script(duration_s: float = 15.0, seed: int = 3, **kw) -> SceneScript:
    """Both hands wave side to side as mirror images."""

    def right(t):
        ang = 0.3 * np.sin(2 * np.pi * t / 1.6)
        return np.array([0.0, 0.0, ang]), np.array([0.08, 0.07, 0.6])

    return _script("waves", duration_s, right, mirrored(right), seed, **kw)


SCRIPTS = {"clap": clap_script, "crossover": crossover_script, "waves": waves_script}


def shipped_script(name: str, **kw) -> SceneScript:
    if name not in SCRIPTS:
        raise ValidationError(f"unknown scene script {name!r}; known: {sorted(SCRIPTS)}")
    return SCRIPTS[name](**kw)
