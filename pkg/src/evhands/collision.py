"""Triangle collision detection and the conic penetration penalty.

Colliding triangle pairs are found with an axis-aligned bounding volume
hierarchy (median split along the longest box axis, one triangle per leaf)
traversed pairwise, followed by an exact separating-axis test.  Each colliding
triangle owns a cone whose base is the triangle's circumcircle and whose axis
points into the mesh; the penalty sums the cone fields of one triangle
evaluated at the vertices of the other.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import ad
from .errors import ValidationError

log = logging.getLogger(__name__)

DEGENERATE_AREA = 1e-12


@dataclass(frozen=True)
class Aabb:
    min: np.ndarray
    max: np.ndarray

    def overlaps(self, other: "Aabb") -> bool:
        return bool(np.all(self.min <= other.max) and np.all(other.min <= self.max))


@dataclass
class Bvh:
    """Flat binary tree; node 0 is the root, ``tri[n] >= 0`` marks a leaf."""

    lo: np.ndarray
    hi: np.ndarray
    left: np.ndarray
    right: np.ndarray
    tri: np.ndarray
    skipped: int = 0

    def __len__(self):
        return len(self.tri)

    def box(self, node: int = 0) -> Aabb:
        return Aabb(self.lo[node], self.hi[node])


@dataclass(frozen=True)
class ConeField:
    center: np.ndarray
    radius: float
    axis: np.ndarray
    height: float


def triangle_areas(tris: np.ndarray) -> np.ndarray:
    tris = np.asarray(tris, dtype=np.float64)
    return 0.5 * np.linalg.norm(np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0]), axis=1)


def build_bvh(tris: np.ndarray) -> Bvh:
    """Build a BVH over ``tris`` (F x 3 x 3); degenerate triangles are left out."""
    tris = np.asarray(tris, dtype=np.float64)
    valid = np.flatnonzero(triangle_areas(tris) > DEGENERATE_AREA)
    skipped = len(tris) - len(valid)
    if skipped:
        log.warning("skipping %d degenerate triangles", skipped)
    if len(valid) == 0:
        raise ValidationError("no non-degenerate triangles")
    tlo, thi = tris.min(axis=1), tris.max(axis=1)
    n = len(valid)
    size = 2 * n - 1
    left = np.full(size, -1, np.int64)
    right = np.full(size, -1, np.int64)
    tri = np.full(size, -1, np.int64)
    perm = valid.copy()
    seg_start, seg_end, seg_node = np.array([0]), np.array([n]), np.array([0])
    next_id = 1
    internal_levels = []
    while len(seg_node):
        leaf = seg_end - seg_start == 1
        tri[seg_node[leaf]] = perm[seg_start[leaf]]
        s, e, nodes = seg_start[~leaf], seg_end[~leaf], seg_node[~leaf]
        if len(nodes) == 0:
            break
        internal_levels.append(nodes)
        counts = e - s
        elem = np.repeat(s - np.cumsum(counts) + counts, counts) + np.arange(counts.sum())
        seg_id = np.repeat(np.arange(len(nodes)), counts)
        offsets = np.cumsum(counts) - counts
        members = perm[elem]
        blo = np.minimum.reduceat(tlo[members], offsets)
        bhi = np.maximum.reduceat(thi[members], offsets)
        axis = np.argmax(bhi - blo, axis=1)
        key = 0.5 * (tlo[members, axis[seg_id]] + thi[members, axis[seg_id]])
        order = np.lexsort((members, key, seg_id))
        perm[elem] = members[order]
        mid = s + counts // 2
        k = len(nodes)
        lids = next_id + np.arange(k)
        rids = next_id + k + np.arange(k)
        next_id += 2 * k
        left[nodes], right[nodes] = lids, rids
        seg_start = np.concatenate([s, mid])
        seg_end = np.concatenate([mid, e])
        seg_node = np.concatenate([lids, rids])
    lo = np.empty((size, 3))
    hi = np.empty((size, 3))
    leaves = tri >= 0
    lo[leaves], hi[leaves] = tlo[tri[leaves]], thi[tri[leaves]]
    for nodes in reversed(internal_levels):
        lo[nodes] = np.minimum(lo[left[nodes]], lo[right[nodes]])
        hi[nodes] = np.maximum(hi[left[nodes]], hi[right[nodes]])
    return Bvh(lo, hi, left, right, tri, skipped)


def candidate_pairs(bvh_a: Bvh, bvh_b: Bvh | None = None) -> np.ndarray:
    """Leaf pairs (triangle indices) whose boxes overlap (touching counts).

    With ``bvh_b`` omitted the tree is queried against itself and every
    unordered pair of distinct triangles is reported once as ``(i, j)``.
    """
    sym = bvh_b is None
    if sym:
        bvh_b = bvh_a
    a = np.zeros(1, np.int64)
    b = np.zeros(1, np.int64)
    out = []
    while len(a):
        keep = np.all(bvh_a.lo[a] <= bvh_b.hi[b], axis=1) & np.all(bvh_b.lo[b] <= bvh_a.hi[a], axis=1)
        if sym:
            keep &= ~((a == b) & (bvh_a.tri[a] >= 0))
        a, b = a[keep], b[keep]
        la, lb = bvh_a.tri[a] >= 0, bvh_b.tri[b] >= 0
        both = la & lb
        if both.any():
            out.append(np.stack([bvh_a.tri[a[both]], bvh_b.tri[b[both]]], axis=1))
        split_a = ~la & lb
        split_b = la & ~lb
        split_ab = ~la & ~lb
        diag = np.zeros(0, np.int64)
        if sym:
            diag = a[split_ab & (a == b)]
            split_ab &= a != b
        aa, bb = a[split_ab], b[split_ab]
        la_, ra_ = bvh_a.left, bvh_a.right
        lb_, rb_ = bvh_b.left, bvh_b.right
        a = np.concatenate([la_[a[split_a]], ra_[a[split_a]], a[split_b], a[split_b],
                            la_[aa], la_[aa], ra_[aa], ra_[aa],
                            la_[diag], la_[diag], ra_[diag]])
        b = np.concatenate([b[split_a], b[split_a], lb_[b[split_b]], rb_[b[split_b]],
                            lb_[bb], rb_[bb], lb_[bb], rb_[bb],
                            la_[diag], ra_[diag], ra_[diag]])
    if not out:
        return np.zeros((0, 2), np.int64)
    pairs = np.concatenate(out)
    if sym:
        pairs = np.sort(pairs, axis=1)
    return pairs


def triangles_intersect(t1: np.ndarray, t2: np.ndarray, chunk: int = 16384) -> np.ndarray:
    """Exact separating-axis test for triangle pairs (K x 3 x 3 each).

    Candidate axes: both normals, the nine edge-edge cross products and the six
    in-plane edge normals (needed when the triangles are coplanar).  Touching
    triangles count as intersecting.
    """
    t1 = np.asarray(t1, dtype=np.float64)
    t2 = np.asarray(t2, dtype=np.float64)
    res = np.empty(len(t1), dtype=bool)
    for s in range(0, len(t1), chunk):
        res[s:s + chunk] = _sat(t1[s:s + chunk], t2[s:s + chunk])
    return res


def _sat(t1, t2):
    e1 = np.roll(t1, -1, axis=1) - t1
    e2 = np.roll(t2, -1, axis=1) - t2
    n1 = np.cross(e1[:, 0], e1[:, 1])
    n2 = np.cross(e2[:, 0], e2[:, 1])
    axes = [n1[:, None], n2[:, None],
            np.cross(e1[:, :, None], e2[:, None, :]).reshape(-1, 9, 3),
            np.cross(n1[:, None], e1), np.cross(n2[:, None], e2)]
    axes = np.concatenate(axes, axis=1)
    p1 = axes @ np.swapaxes(t1, 1, 2)
    p2 = axes @ np.swapaxes(t2, 1, 2)
    sep = (p1.max(2) < p2.min(2)) | (p2.max(2) < p1.min(2))
    return ~sep.any(axis=1)


def colliding_pairs(bvh_a: Bvh, tris_a: np.ndarray, bvh_b: Bvh, tris_b: np.ndarray) -> np.ndarray:
    """Sorted unique (i, j) pairs with triangle i of A intersecting triangle j of B."""
    cand = candidate_pairs(bvh_a, bvh_b)
    if len(cand) == 0:
        return cand
    hit = triangles_intersect(np.asarray(tris_a)[cand[:, 0]], np.asarray(tris_b)[cand[:, 1]])
    pairs = cand[hit]
    return pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))]


def self_collisions(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Pairs i < j of intersecting faces of one mesh, ignoring faces that share a vertex."""
    tris = np.asarray(vertices, dtype=np.float64)[faces]
    bvh = build_bvh(tris)
    cand = candidate_pairs(bvh)
    fa, fb = faces[cand[:, 0]], faces[cand[:, 1]]
    cand = cand[~(fa[:, :, None] == fb[:, None, :]).any(axis=(1, 2))]
    pairs = cand[triangles_intersect(tris[cand[:, 0]], tris[cand[:, 1]])]
    return pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))]


def union_mesh(mesh_l, mesh_r):
    """Concatenate two meshes; returns vertices, faces and the per-face owner (0 = first)."""
    verts = np.concatenate([mesh_l.vertices, mesh_r.vertices])
    faces = np.concatenate([mesh_l.faces, mesh_r.faces + len(mesh_l.vertices)])
    owner = np.repeat([0, 1], [len(mesh_l.faces), len(mesh_r.faces)])
    return verts, faces, owner


# --- cone field -----------------------------------------------------------------------


def cone_from_triangle(tri: np.ndarray, height_scale: float = 1.0) -> ConeField:
    a, b, c = np.asarray(tri, dtype=np.float64)
    ab, ac = b - a, c - a
    n = np.cross(ab, ac)
    n2 = n @ n
    off = (np.cross(n, ab) * (ac @ ac) + np.cross(ac, n) * (ab @ ab)) / (2.0 * n2)
    r = float(np.linalg.norm(off))
    return ConeField(a + off, r, n / np.sqrt(n2), height_scale * r)


def cone_penalty(query, cone: ConeField) -> float:
    """Penetration field of one cone at a point.

    ``(1 - depth / h) * (1 - radial / r)`` for points behind the face and inside
    the cone support, zero elsewhere.
    """
    d = np.asarray(query, dtype=np.float64) - cone.center
    s = float(d @ cone.axis)
    if s >= 0:
        return 0.0
    radial = float(np.linalg.norm(np.cross(d, cone.axis)))
    return max(0.0, 1.0 + s / cone.height) * max(0.0, 1.0 - radial / cone.radius)


def cone_field_tensor(tri, pts, height_scale: float = 1.0):
    """Cone fields of triangles ``tri`` (K x 3 x 3) at points ``pts`` (K x P x 3).

    Differentiable in both arguments away from the support boundary.
    """
    tri, pts = ad.as_tensor(tri), ad.as_tensor(pts)
    k = tri.shape[0]
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    ab, ac = b - a, c - a
    n = ad.cross(ab, ac)
    n2 = (n * n).sum(axis=-1, keepdims=True)
    num = ad.cross(n, ab) * (ac * ac).sum(axis=-1, keepdims=True) \
        + ad.cross(ac, n) * (ab * ab).sum(axis=-1, keepdims=True)
    off = num / (2.0 * n2)
    centre = a + off
    radius = ad.sqrt((off * off).sum(axis=-1, keepdims=True))
    axis = n / ad.sqrt(n2)
    height = radius * height_scale
    d = pts - centre.reshape(k, 1, 3)
    ax = axis.reshape(k, 1, 3)
    s = (d * ax).sum(axis=-1)
    cr = ad.cross(d, ax)
    radial = ad.sqrt((cr * cr).sum(axis=-1) + 1e-30)
    behind = s.data < 0
    axial = ad.relu(1.0 + s / height.reshape(k, 1))
    lateral = ad.relu(1.0 - radial / radius.reshape(k, 1))
    return axial * lateral * behind.astype(s.dtype)


def pair_penalty(vertices, faces: np.ndarray, pairs: np.ndarray, height_scale: float = 1.0):
    """Sum over pairs of each triangle's cone evaluated at the other's vertices."""
    v = ad.as_tensor(vertices)
    if len(pairs) == 0:
        return ad.sum_(v * 0.0)
    fi, fj = faces[pairs[:, 0]], faces[pairs[:, 1]]
    cone_f = np.concatenate([fi, fj])
    query_f = np.concatenate([fj, fi])
    tri = ad.take(v, cone_f, axis=0)
    pts = ad.take(v, query_f, axis=0)
    return cone_field_tensor(tri, pts, height_scale).sum()


def intersection_loss_tensor(verts_l, verts_r, faces_l: np.ndarray, faces_r: np.ndarray,
                             height_scale: float = 1.0):
    """Penalty over the union of two (optionally batched) hand meshes, averaged over the batch."""
    vl, vr = ad.as_tensor(verts_l), ad.as_tensor(verts_r)
    if vl.ndim == 2:
        vl, vr = vl.reshape(1, *vl.shape), vr.reshape(1, *vr.shape)
    nb, nl = vl.shape[0], vl.shape[1]
    faces = np.concatenate([faces_l, faces_r + nl])
    allv = ad.concat([vl, vr], axis=1)
    nv = allv.shape[1]
    flat = allv.reshape(nb * nv, 3)
    per_faces, per_pairs = [], []
    for i in range(nb):
        pairs = self_collisions(allv.data[i], faces)
        per_faces.append(faces + i * nv)
        per_pairs.append(pairs + i * len(faces))
    total = pair_penalty(flat, np.concatenate(per_faces), np.concatenate(per_pairs), height_scale)
    return total / float(nb)


def intersection_loss(mesh_l, mesh_r, height_scale: float = 1.0) -> float:
    verts, faces, _ = union_mesh(mesh_l, mesh_r)
    pairs = self_collisions(verts, faces)
    return pair_penalty(np.asarray(verts, np.float64), faces, pairs, height_scale).item()


def inter_hand_pairs(mesh_l, mesh_r) -> np.ndarray:
    tl = np.asarray(mesh_l.vertices, np.float64)[mesh_l.faces]
    tr = np.asarray(mesh_r.vertices, np.float64)[mesh_r.faces]
    return colliding_pairs(build_bvh(tl), tl, build_bvh(tr), tr)


def collision_percentage(mesh_l, mesh_r) -> float:
    """Percent of all triangles of both hands involved in a left-right intersection."""
    pairs = inter_hand_pairs(mesh_l, mesh_r)
    total = len(mesh_l.faces) + len(mesh_r.faces)
    hit = len(np.unique(pairs[:, 0])) + len(np.unique(pairs[:, 1]))
    return 100.0 * hit / total
