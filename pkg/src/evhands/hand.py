"""Parametric two-hand model: PCA pose/shape, linear blend skinning, projection.

The model mirrors the MANO parameterisation (6 pose PCA coefficients, 10 shape
coefficients, axis-angle global rotation, translation, 21 joints) on top of a
procedurally generated low-poly hand.  The posing path is written with
:mod:`evhands.ad` tensors so predictions can be trained through it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ad
from .container import load_arrays, manifest_text, save_arrays
from .errors import BehindCameraError, ValidationError

NUM_JOINTS = 21
NUM_ARTICULATED = 15
N_POSE = 6
N_SHAPE = 10
N_PARAMS = N_POSE + N_SHAPE + 3 + 3
WRIST = 0
# joint order: 0 wrist, 1 + 3f .. 3 + 3f finger f (base to tip), 16 + f tip of finger f;
# fingers are thumb, index, middle, ring, pinky
PARENTS = np.array([-1] + [p for f in range(5) for p in (0, 1 + 3 * f, 2 + 3 * f)]
                   + [3 + 3 * f for f in range(5)], dtype=np.int64)
_LEVELS = [[0], [1, 4, 7, 10, 13], [2, 5, 8, 11, 14], [3, 6, 9, 12, 15], [16, 17, 18, 19, 20]]
_LEVEL_ORDER = np.concatenate(_LEVELS)
_LEVEL_INV = np.argsort(_LEVEL_ORDER)
# skew-symmetric matrix of r as r @ _SKEW
_SKEW = np.zeros((3, 9))
_SKEW[2, 1], _SKEW[1, 2] = -1, 1
_SKEW[2, 3], _SKEW[0, 5] = 1, -1
_SKEW[1, 6], _SKEW[0, 7] = -1, 1


@dataclass
class HandParams:
    theta: np.ndarray = field(default_factory=lambda: np.zeros(N_POSE))
    beta: np.ndarray = field(default_factory=lambda: np.zeros(N_SHAPE))
    rot: np.ndarray = field(default_factory=lambda: np.zeros(3))
    trans: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        for name, n in (("theta", N_POSE), ("beta", N_SHAPE), ("rot", 3), ("trans", 3)):
            v = np.asarray(getattr(self, name), dtype=np.float64).reshape(-1)
            if v.shape != (n,):
                raise ValidationError(f"{name} needs {n} values, got {v.shape[0]}")
            if not np.all(np.isfinite(v)):
                raise ValidationError(f"{name} is not finite")
            setattr(self, name, v)

    def vector(self) -> np.ndarray:
        return np.concatenate([self.theta, self.beta, self.rot, self.trans])

    @classmethod
    def from_vector(cls, v) -> "HandParams":
        v = np.asarray(v, dtype=np.float64).reshape(-1)
        if v.shape != (N_PARAMS,):
            raise ValidationError(f"hand parameter vector needs {N_PARAMS} values")
        return cls(v[:6], v[6:16], v[16:19], v[19:22])


@dataclass
class HandAssets:
    template_vertices: np.ndarray
    faces: np.ndarray
    shape_basis: np.ndarray
    joint_regressor: np.ndarray
    pose_basis: np.ndarray
    pose_mean: np.ndarray
    skinning_weights: np.ndarray
    parents: np.ndarray = field(default_factory=lambda: PARENTS.copy())
    handedness: str = "right"

    @property
    def num_vertices(self) -> int:
        return len(self.template_vertices)

    def check(self) -> None:
        v = self.num_vertices
        if self.shape_basis.shape != (v, 3, N_SHAPE):
            raise ValidationError("shape basis must be V x 3 x 10")
        if self.joint_regressor.shape != (NUM_JOINTS, v):
            raise ValidationError("joint regressor must be 21 x V")
        if self.pose_basis.shape != (3 * NUM_ARTICULATED, N_POSE) or self.pose_mean.shape != (45,):
            raise ValidationError("pose basis must be 45 x 6 with a 45-vector mean")
        w = self.skinning_weights
        if w.shape != (v, NUM_JOINTS) or np.any(w < 0) or not np.allclose(w.sum(1), 1, atol=1e-6):
            raise ValidationError("skinning weights must be non-negative rows summing to 1")
        if not np.allclose(self.joint_regressor.sum(1), 1, atol=1e-6):
            raise ValidationError("joint regressor rows must sum to 1")
        if not np.array_equal(self.parents, PARENTS):
            raise ValidationError("unexpected kinematic tree")
        if self.faces.min() < 0 or self.faces.max() >= v:
            raise ValidationError("face index out of range")

    def arrays(self) -> dict[str, np.ndarray]:
        return {
            "template_vertices": self.template_vertices, "faces": self.faces,
            "shape_basis": self.shape_basis, "joint_regressor": self.joint_regressor,
            "pose_basis": self.pose_basis, "pose_mean": self.pose_mean,
            "skinning_weights": self.skinning_weights, "parents": self.parents,
            "handedness": np.array([0.0 if self.handedness == "right" else 1.0]),
        }


@dataclass
class HandMesh:
    vertices: np.ndarray
    faces: np.ndarray


def save_assets(path, assets: HandAssets) -> None:
    arrays = assets.arrays()
    save_arrays(path, arrays)
    Path(str(path) + ".txt").write_text(manifest_text(arrays))


def load_assets(path) -> HandAssets:
    a = load_arrays(path)
    assets = HandAssets(
        template_vertices=a["template_vertices"].astype(np.float64),
        faces=a["faces"].astype(np.int64),
        shape_basis=a["shape_basis"].astype(np.float64),
        joint_regressor=a["joint_regressor"].astype(np.float64),
        pose_basis=a["pose_basis"].astype(np.float64),
        pose_mean=a["pose_mean"].astype(np.float64),
        skinning_weights=a["skinning_weights"].astype(np.float64),
        parents=a["parents"].astype(np.int64),
        handedness="right" if a["handedness"][0] == 0 else "left")
    assets.check()
    return assets


def mano_to_assets(mano_pickle_path):
    """Placeholder for importing a licensed MANO model file.

    The mapping would be: ``v_template`` -> template_vertices, ``f`` -> faces,
    ``shapedirs`` -> shape_basis, ``J_regressor`` (16 x V) extended with five
    one-hot fingertip vertex rows -> joint_regressor, ``hands_components[:6].T``
    -> pose_basis, ``hands_mean`` -> pose_mean, ``weights`` padded with zero
    columns for the tips -> skinning_weights, ``kintree_table`` re-ordered to
    :data:`PARENTS`.  Pose-corrective blend shapes are dropped.
    """
    raise NotImplementedError("MANO import is not provided; use generate_toy_assets")


# --- rotations -------------------------------------------------------------------


def rodrigues(r):
    """Axis-angle (..., 3) to rotation matrices (..., 3, 3) on tensors."""
    r = ad.as_tensor(r)
    sq = (r * r).sum(axis=-1, keepdims=True)
    angle = ad.sqrt(sq + 1e-24)
    s = ad.sin(angle) / angle
    half = ad.sin(angle * 0.5)
    c = 2.0 * half * half / (angle * angle)
    shape = r.shape[:-1] + (3, 3)
    K = ad.matmul(r.reshape(-1, 1, 3), ad.as_tensor(_SKEW, r)).reshape(shape)
    K2 = ad.matmul(K, K)
    eye = np.eye(3, dtype=r.dtype)
    return eye + s.reshape(r.shape[:-1] + (1, 1)) * K + c.reshape(r.shape[:-1] + (1, 1)) * K2


def rotation_matrix(r) -> np.ndarray:
    """Axis-angle to rotation matrix on plain arrays."""
    return rodrigues(ad.Tensor(np.asarray(r, dtype=np.float64))).data


# --- forward model ---------------------------------------------------------------


def decode_pose(theta, assets: HandAssets) -> np.ndarray:
    """Per-joint axis-angle rotations (15 x 3) from PCA pose coefficients."""
    theta = np.asarray(theta, dtype=np.float64)
    return (assets.pose_basis @ theta + assets.pose_mean).reshape(NUM_ARTICULATED, 3)


def hand_forward(theta, beta, rot, trans, assets: HandAssets):
    """Batched posing on tensors.

    Inputs have a leading batch axis (B x 6, B x 10, B x 3, B x 3).  Returns
    ``(vertices B x V x 3, joints B x 21 x 3)`` with joints regressed from the
    posed vertices.
    """
    theta, beta, rot, trans = (ad.as_tensor(t) for t in (theta, beta, rot, trans))
    dt = theta.dtype
    b = theta.shape[0]
    nv = assets.num_vertices

    def const(a):
        return ad.Tensor(np.asarray(a, dtype=dt))

    pose = theta @ const(assets.pose_basis.T) + const(assets.pose_mean)
    local = rodrigues(pose.reshape(b, NUM_ARTICULATED, 3))
    eye = const(np.broadcast_to(np.eye(3), (b, 1, 3, 3)))
    tips = const(np.broadcast_to(np.eye(3), (b, 5, 3, 3)))
    local = ad.concat([eye, local, tips], axis=1)

    shape_dirs = const(assets.shape_basis.transpose(2, 0, 1).reshape(N_SHAPE, nv * 3))
    v_shaped = const(assets.template_vertices) + (beta @ shape_dirs).reshape(b, nv, 3)
    rest_joints = const(assets.joint_regressor) @ v_shaped

    world_rot, world_pos = [], []
    prev_rot = prev_pos = prev_j = None
    for level in _LEVELS:
        r_loc = ad.take(local, level, axis=1)
        j = ad.take(rest_joints, level, axis=1)
        if prev_rot is None:
            rot_w, pos_w = r_loc, j
        else:
            rot_w = ad.matmul(prev_rot, r_loc)
            offset = (j - prev_j).reshape(b, len(level), 1, 3)
            pos_w = prev_pos + (prev_rot * offset).sum(axis=-1)
        world_rot.append(rot_w)
        world_pos.append(pos_w)
        prev_rot, prev_pos, prev_j = rot_w, pos_w, j
    world_rot = ad.take(ad.concat(world_rot, axis=1), _LEVEL_INV, axis=1)
    world_pos = ad.take(ad.concat(world_pos, axis=1), _LEVEL_INV, axis=1)

    weights = const(assets.skinning_weights)
    blend = (weights @ world_rot.reshape(b, NUM_JOINTS, 9)).reshape(b, nv, 3, 3)
    shift = world_pos - (world_rot * rest_joints.reshape(b, NUM_JOINTS, 1, 3)).sum(axis=-1)
    posed = (blend * v_shaped.reshape(b, nv, 1, 3)).sum(axis=-1) + weights @ shift

    global_rot = rodrigues(rot)
    verts = ad.matmul(posed, ad.transpose(global_rot, (0, 2, 1))) + trans.reshape(b, 1, 3)
    joints = const(assets.joint_regressor) @ verts
    return verts, joints


def _forward_params(params: HandParams, assets: HandAssets):
    batch = [np.asarray(v, dtype=np.float64)[None] for v in (params.theta, params.beta, params.rot, params.trans)]
    return hand_forward(*batch, assets)


def pose_mesh(params: HandParams, assets: HandAssets) -> HandMesh:
    verts, _ = _forward_params(params, assets)
    return HandMesh(verts.data[0], assets.faces)


def regress_joints(params: HandParams, assets: HandAssets) -> np.ndarray:
    _, joints = _forward_params(params, assets)
    return joints.data[0]


def pose_batch(param_vectors: np.ndarray, assets: HandAssets):
    """Vertices and joints for a stack of 22-vectors (numpy in, numpy out)."""
    p = np.asarray(param_vectors, dtype=np.float64).reshape(-1, N_PARAMS)
    verts, joints = hand_forward(p[:, :6], p[:, 6:16], p[:, 16:19], p[:, 19:22], assets)
    return verts.data, joints.data


def project(points, intrinsics):
    """Pinhole projection of camera-frame points (..., 3) to pixels (..., 2).

    Works on arrays and on tensors; raises if any point has z <= 0.
    """
    data = points.data if isinstance(points, ad.Tensor) else np.asarray(points, dtype=np.float64)
    z = data[..., 2]
    bad = np.flatnonzero(z.reshape(-1) <= 0)
    if len(bad):
        raise BehindCameraError(bad)
    if isinstance(points, ad.Tensor):
        zt = points[..., 2:3]
        scale = np.array([intrinsics.fx, intrinsics.fy], dtype=points.dtype)
        centre = np.array([intrinsics.cx, intrinsics.cy], dtype=points.dtype)
        return points[..., 0:2] / zt * scale + centre
    u = intrinsics.fx * data[..., 0] / z + intrinsics.cx
    v = intrinsics.fy * data[..., 1] / z + intrinsics.cy
    return np.stack([u, v], axis=-1)


# --- procedural toy hand -------------------------------------------------------------

_PALM_HALF_WIDTH = 0.04
_PALM_LENGTH = 0.085
_PALM_HALF_THICK = 0.012
_FINGER_RADIUS = (0.009, 0.0075, 0.0075, 0.0072, 0.0068)
_FINGER_LENGTH = (0.065, 0.075, 0.080, 0.075, 0.062)
_SEGMENT_SPLIT = (0.45, 0.30)


def _lathe(profile, segments):
    """Closed surface of revolution about +y: ``profile`` rows are (radius, y).

    The first and last rows must have radius 0 (poles).  Returns vertices,
    outward-facing triangles and the vertex-index range of each ring.
    """
    ang = 2 * np.pi * np.arange(segments) / segments
    verts = [np.array([[0.0, profile[0][1], 0.0]])]
    for r, y in profile[1:-1]:
        verts.append(np.stack([r * np.cos(ang), np.full(segments, y), r * np.sin(ang)], axis=1))
    verts.append(np.array([[0.0, profile[-1][1], 0.0]]))
    v = np.concatenate(verts)
    nr = len(profile) - 2
    top = len(v) - 1
    faces = []
    for s in range(segments):
        s2 = (s + 1) % segments
        faces.append((0, 1 + s2, 1 + s))
        for k in range(nr - 1):
            a, b = 1 + k * segments, 1 + (k + 1) * segments
            faces.append((a + s, a + s2, b + s))
            faces.append((a + s2, b + s2, b + s))
        last = 1 + (nr - 1) * segments
        faces.append((last + s, last + s2, top))
    f = np.array(faces, dtype=np.int64)
    if _signed_volume(v, f) < 0:
        f = f[:, [0, 2, 1]]
    ring_index = [1 + k * segments for k in range(nr)]
    return v, f, ring_index


def _signed_volume(v, f):
    a, b, c = v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]
    return np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0


def _capsule_profile(radius, stations, length, cap_rings=3):
    """Profile from the base pole to the tip pole, with a ring at every station."""
    prof = [(0.0, -radius)]
    for k in range(1, cap_rings):
        a = np.pi / 2 * k / cap_rings
        prof.append((radius * np.sin(a), -radius * np.cos(a)))
    for s in stations:
        prof.append((radius, s))
    for k in range(cap_rings - 1, 0, -1):
        a = np.pi / 2 * k / cap_rings
        prof.append((radius * np.sin(a), length + radius * np.cos(a)))
    prof.append((0.0, length + radius))
    return prof


def _frame_from_direction(d):
    """Rotation taking +y onto unit vector d (the finger axis)."""
    y = np.array([0.0, 1.0, 0.0])
    d = d / np.linalg.norm(d)
    axis = np.cross(y, d)
    s, c = np.linalg.norm(axis), float(y @ d)
    if s < 1e-12:
        return np.eye(3) if c > 0 else np.diag([1.0, -1.0, -1.0])
    return rotation_matrix(axis / s * np.arctan2(s, c))


def _finger_layout():
    """Base centre and unit direction of each finger (thumb first) for a right hand."""
    gap = 0.003
    bases, dirs = [], []
    thumb_dir = np.array([0.55, -0.83, 0.0])
    r0 = _FINGER_RADIUS[0]
    bases.append(np.array([_PALM_HALF_WIDTH + r0 + gap, -0.022, -0.004]))
    dirs.append(thumb_dir / np.linalg.norm(thumb_dir))
    xs = (0.027, 0.009, -0.009, -0.027)
    for f, x in enumerate(xs, start=1):
        bases.append(np.array([x, -(_PALM_LENGTH + _FINGER_RADIUS[f] + gap), 0.0]))
        dirs.append(np.array([0.0, -1.0, 0.0]))
    return bases, dirs


def generate_toy_assets(seed: int = 0, handedness: str = "right") -> HandAssets:
    """Low-poly articulated hand: a flattened palm and five capsule fingers.

    Wrist at the origin, fingers along -y, palm facing -z.  The left hand is
    the exact mirror image (x negated, faces rewound) of the right one.
    """
    if handedness not in ("right", "left"):
        raise ValidationError("handedness must be 'right' or 'left'")
    if handedness == "left":
        return mirror_assets(generate_toy_assets(seed, "right"))
    rng = np.random.default_rng(seed)

    palm_prof = [(0.0, 0.0)] + [(r, -y) for r, y in (
        (0.55, 0.004), (0.85, 0.012), (1.0, 0.025), (1.0, 0.045), (1.0, 0.065),
        (0.85, 0.078), (0.55, 0.083))] + [(0.0, -_PALM_LENGTH)]
    palm_v, palm_f, _ = _lathe(palm_prof, 12)
    palm_v[:, 0] *= _PALM_HALF_WIDTH
    palm_v[:, 2] *= _PALM_HALF_THICK
    parts_v, parts_f = [palm_v], [palm_f]
    offset = len(palm_v)
    vert_joint_w = [np.tile(np.eye(NUM_JOINTS)[WRIST], (len(palm_v), 1))]
    reg_rows = {WRIST: [0]}

    bases, dirs = _finger_layout()
    for f in range(5):
        r, length = _FINGER_RADIUS[f], _FINGER_LENGTH[f]
        l1, l2 = length * _SEGMENT_SPLIT[0], length * _SEGMENT_SPLIT[1]
        stations = [0.0, l1 / 2, l1, l1 + l2 / 2, l1 + l2, (l1 + l2 + length) / 2, length]
        prof = _capsule_profile(r, stations, length)
        v, fc, rings = _lathe(prof, 6)
        axial = v[:, 1].copy()
        frame = _frame_from_direction(dirs[f])
        v = v @ frame.T + bases[f]
        parts_v.append(v)
        parts_f.append(fc + offset)
        mcp, pip, dip, tip = 1 + 3 * f, 2 + 3 * f, 3 + 3 * f, 16 + f
        # station rings: cap_rings - 1 = 2 hemisphere rings precede the stations
        ring_at = {0.0: rings[2], l1: rings[4], l1 + l2: rings[6]}
        reg_rows[mcp] = list(range(offset + ring_at[0.0], offset + ring_at[0.0] + 6))
        reg_rows[pip] = list(range(offset + ring_at[l1], offset + ring_at[l1] + 6))
        reg_rows[dip] = list(range(offset + ring_at[l1 + l2], offset + ring_at[l1 + l2] + 6))
        reg_rows[tip] = [offset + len(v) - 1]
        w = np.zeros((len(v), NUM_JOINTS))
        segs = ((mcp, 0.0, l1), (pip, l1, l1 + l2), (dip, l1 + l2, length))
        sigma = 0.35 * r + 0.004
        for j, a, b in segs:
            d = np.maximum(0.0, np.maximum(a - axial, axial - b))
            w[:, j] = np.exp(-(d / sigma) ** 2)
        vert_joint_w.append(w / w.sum(1, keepdims=True))
        offset += len(v)

    template = np.concatenate(parts_v)
    faces = np.concatenate(parts_f)
    skin = np.concatenate(vert_joint_w)
    skin[skin < 1e-4] = 0.0
    skin /= skin.sum(1, keepdims=True)
    nv = len(template)
    regressor = np.zeros((NUM_JOINTS, nv))
    for j, idx in reg_rows.items():
        regressor[j, idx] = 1.0 / len(idx)

    # shape: smooth random linear deformations, orthonormalised, ~2 mm per unit
    fields = []
    centred = template - template.mean(0)
    for _ in range(N_SHAPE):
        A = rng.normal(size=(3, 3))
        fields.append((centred @ A.T + 0.02 * rng.normal(size=3)).reshape(-1))
    q, _ = np.linalg.qr(np.stack(fields, axis=1))
    shape_basis = (q * 0.002 * np.sqrt(nv)).reshape(nv, 3, N_SHAPE)

    # pose: mostly flexion (local x), little twist and spread
    dof_scale = np.tile([1.0, 0.08, 0.12], NUM_ARTICULATED)
    dof_scale[0:9] = np.tile([0.7, 0.3, 0.5], 3)  # thumb moves more freely
    g = rng.normal(size=(3 * NUM_ARTICULATED, N_POSE)) * dof_scale[:, None]
    q, _ = np.linalg.qr(g)
    pose_basis = 0.9 * q
    pose_mean = np.zeros(3 * NUM_ARTICULATED)
    pose_mean[0::3] = 0.12

    def f32(a):
        return np.asarray(a, dtype=np.float32).astype(np.float64)

    assets = HandAssets(f32(template), faces, f32(shape_basis), f32(regressor), f32(pose_basis),
                        f32(pose_mean), f32(skin), PARENTS.copy(), "right")
    assets.skinning_weights /= assets.skinning_weights.sum(1, keepdims=True)
    assets.joint_regressor /= assets.joint_regressor.sum(1, keepdims=True)
    assets.check()
    return assets


def mirror_assets(assets: HandAssets) -> HandAssets:
    """Reflect across the x = 0 plane; rotations transform as (x, -y, -z)."""
    flip = np.array([-1.0, 1.0, 1.0])
    rot_flip = np.tile([1.0, -1.0, -1.0], NUM_ARTICULATED)
    out = HandAssets(
        template_vertices=assets.template_vertices * flip,
        faces=assets.faces[:, [0, 2, 1]].copy(),
        shape_basis=assets.shape_basis * flip[None, :, None],
        joint_regressor=assets.joint_regressor.copy(),
        pose_basis=assets.pose_basis * rot_flip[:, None],
        pose_mean=assets.pose_mean * rot_flip,
        skinning_weights=assets.skinning_weights.copy(),
        parents=assets.parents.copy(),
        handedness="left" if assets.handedness == "right" else "right")
    return out


def mirror_params(params: HandParams) -> HandParams:
    """Parameters producing the mirror image on mirrored assets."""
    return HandParams(params.theta, params.beta, params.rot * [1.0, -1.0, -1.0],
                      params.trans * [-1.0, 1.0, 1.0])


def edge_manifold(faces: np.ndarray) -> bool:
    """True when every undirected edge is shared by exactly two faces."""
    e = np.sort(np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]]), axis=1)
    _, counts = np.unique(e, axis=0, return_counts=True)
    return bool(np.all(counts == 2))
