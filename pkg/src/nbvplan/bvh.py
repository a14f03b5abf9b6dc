"""Bounding volume hierarchy over mesh faces, with batched ray queries.

The tree is stored as flat arrays and traversed by numba-compiled kernels.
Both the BVH traversal and the exhaustive scan call the same triangle
routine, so their results agree bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .mesh import TriangleMesh

RAY_EPS = 1e-9
SEGMENT_EPS = 1e-6
_BOX_PAD = 1e-9
_STACK = 128


@dataclass(frozen=True)
class RayHit:
    face_index: int
    t: float
    point: np.ndarray


@dataclass(frozen=True, eq=False)
class Bvh:
    """Flattened AABB tree. Leaves have ``left == -1`` and own
    ``order[start:start + count]``."""

    mesh: TriangleMesh
    lo: np.ndarray
    hi: np.ndarray
    left: np.ndarray
    right: np.ndarray
    start: np.ndarray
    count: np.ndarray
    order: np.ndarray
    leaf_size: int

    @property
    def n_nodes(self) -> int:
        return len(self.left)

    def depth(self, node: int = 0) -> int:
        if self.left[node] < 0:
            return 0
        return 1 + max(self.depth(self.left[node]), self.depth(self.right[node]))

    def leaves(self):
        return [i for i in range(self.n_nodes) if self.left[i] < 0]

    def leaf_faces(self, node: int) -> np.ndarray:
        return self.order[self.start[node]:self.start[node] + self.count[node]]

    def _tree(self):
        m = self.mesh
        return (m.vertices, m.faces, self.lo, self.hi, self.left, self.right, self.start, self.count, self.order)

    def first_hits(self, origins, directions, t_max=np.inf, t_min=RAY_EPS):
        """Nearest hit per ray as ``(face, t)`` arrays; misses have face -1 and t inf.
        Equal t resolves to the lower face index."""
        o, d, tmin, tmax = _rays(origins, directions, t_min, t_max)
        return _first_hits(o, d, tmin, tmax, *self._tree())

    def occluded(self, origins, targets, exclude_vertex=None, eps=SEGMENT_EPS):
        """For each segment origin->target, whether a face crosses its open interior
        (parameter in (eps, 1 - eps)). ``exclude_vertex`` gives, per segment, a
        vertex whose incident faces are ignored (-1 for none)."""
        o = np.atleast_2d(np.asarray(origins, dtype=np.float64))
        d = np.atleast_2d(np.asarray(targets, dtype=np.float64)) - o
        o, d, tmin, tmax = _rays(o, d, eps, 1.0 - eps)
        n = len(d)
        ev = np.full(n, -1, dtype=np.int64) if exclude_vertex is None else \
            np.ascontiguousarray(np.broadcast_to(np.asarray(exclude_vertex, dtype=np.int64), (n,)))
        mask = np.zeros(self.mesh.n_faces, dtype=np.bool_)
        return _any_hits(o, d, tmin, tmax, ev, mask, *self._tree())


def build_bvh(mesh: TriangleMesh, leaf_size: int = 4) -> Bvh:
    """Median split on the longest axis of the centroid box; deterministic."""
    if mesh.n_faces == 0:
        raise ValueError("cannot build a BVH over an empty mesh")
    if leaf_size < 1:
        raise ValueError("leaf_size must be >= 1")
    tri = mesh.vertices[mesh.faces]
    f_lo, f_hi = tri.min(axis=1), tri.max(axis=1)
    cent = tri.mean(axis=1)

    lo, hi, left, right, start, count = [], [], [], [], [], []
    order = []

    def new_node(ids):
        lo.append(f_lo[ids].min(axis=0))
        hi.append(f_hi[ids].max(axis=0))
        left.append(-1)
        right.append(-1)
        start.append(0)
        count.append(0)
        return len(lo) - 1

    stack = [(new_node(np.arange(mesh.n_faces)), np.arange(mesh.n_faces))]
    while stack:
        node, ids = stack.pop()
        if len(ids) <= leaf_size:
            start[node] = len(order)
            count[node] = len(ids)
            order.extend(ids.tolist())
            continue
        c = cent[ids]
        axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
        ids = ids[np.argsort(c[:, axis], kind="stable")]
        half = len(ids) // 2
        a, b = ids[:half], ids[half:]
        ln, rn = new_node(a), new_node(b)
        left[node], right[node] = ln, rn
        # right pushed first so the left subtree is laid out first in `order`
        stack.append((rn, b))
        stack.append((ln, a))

    lo, hi = np.array(lo), np.array(hi)
    pad = _BOX_PAD * (1.0 + np.abs(lo) + np.abs(hi))
    arrays = [lo - pad, hi + pad] + [np.array(x, dtype=np.int64) for x in (left, right, start, count, order)]
    for arr in arrays:
        arr.setflags(write=False)
    return Bvh(mesh, *arrays, leaf_size=leaf_size)


def ray_first_hit(bvh: Bvh, origin, direction, t_max: float = np.inf) -> RayHit | None:
    if t_max <= 0:
        raise ValueError("t_max must be positive")
    direction = np.asarray(direction, dtype=np.float64)
    if not np.any(direction):
        raise ValueError("ray direction must be non-zero")
    face, t = bvh.first_hits(origin, direction, t_max)
    if face[0] < 0:
        return None
    origin = np.asarray(origin, dtype=np.float64)
    return RayHit(int(face[0]), float(t[0]), origin + t[0] * direction)


def segment_occluded(bvh: Bvh, start, end, exclude_faces=(), eps: float = SEGMENT_EPS) -> bool:
    """Whether any face outside ``exclude_faces`` crosses the open segment."""
    o = np.asarray(start, dtype=np.float64)[None]
    d = np.asarray(end, dtype=np.float64)[None] - o
    if not np.any(d):
        raise ValueError("segment endpoints coincide")
    mask = np.zeros(bvh.mesh.n_faces, dtype=np.bool_)
    mask[np.asarray(list(exclude_faces), dtype=np.int64)] = True
    o, d, tmin, tmax = _rays(o, d, eps, 1.0 - eps)
    ev = np.full(1, -1, dtype=np.int64)
    return bool(_any_hits(o, d, tmin, tmax, ev, mask, *bvh._tree())[0])


def brute_force_first_hits(mesh: TriangleMesh, origins, directions, t_max=np.inf, t_min=RAY_EPS):
    """Exhaustive all-triangle scan; reference for :meth:`Bvh.first_hits`."""
    o, d, tmin, tmax = _rays(origins, directions, t_min, t_max)
    return _brute_first_hits(o, d, tmin, tmax, mesh.vertices, mesh.faces)


def _rays(origins, directions, t_min, t_max):
    d = np.atleast_2d(np.asarray(directions, dtype=np.float64))
    o = np.atleast_2d(np.asarray(origins, dtype=np.float64))
    n = max(len(d), len(o))
    o = np.ascontiguousarray(np.broadcast_to(o, (n, 3)))
    d = np.ascontiguousarray(np.broadcast_to(d, (n, 3)))
    tmin = np.ascontiguousarray(np.broadcast_to(np.asarray(t_min, dtype=np.float64), (n,)))
    tmax = np.ascontiguousarray(np.broadcast_to(np.asarray(t_max, dtype=np.float64), (n,)))
    return o, d, tmin, tmax


# --------------------------------------------------------------------------
# compiled kernels


@numba.njit(cache=True, inline="always")
def _triangle(ox, oy, oz, dx, dy, dz, verts, faces, f, tmin, tmax):
    """Moller-Trumbore, edge-inclusive. Returns t, or inf on a miss."""
    a = faces[f, 0]
    b = faces[f, 1]
    c = faces[f, 2]
    v0x, v0y, v0z = verts[a, 0], verts[a, 1], verts[a, 2]
    e1x, e1y, e1z = verts[b, 0] - v0x, verts[b, 1] - v0y, verts[b, 2] - v0z
    e2x, e2y, e2z = verts[c, 0] - v0x, verts[c, 1] - v0y, verts[c, 2] - v0z
    px = dy * e2z - dz * e2y
    py = dz * e2x - dx * e2z
    pz = dx * e2y - dy * e2x
    det = e1x * px + e1y * py + e1z * pz
    scale = np.sqrt((e1x * e1x + e1y * e1y + e1z * e1z) * (e2x * e2x + e2y * e2y + e2z * e2z)
                    * (dx * dx + dy * dy + dz * dz))
    if not abs(det) > 1e-12 * scale:
        return np.inf
    inv = 1.0 / det
    sx, sy, sz = ox - v0x, oy - v0y, oz - v0z
    u = (sx * px + sy * py + sz * pz) * inv
    if u < 0.0 or u > 1.0:
        return np.inf
    qx = sy * e1z - sz * e1y
    qy = sz * e1x - sx * e1z
    qz = sx * e1y - sy * e1x
    v = (dx * qx + dy * qy + dz * qz) * inv
    if v < 0.0 or u + v > 1.0:
        return np.inf
    t = (e2x * qx + e2y * qy + e2z * qz) * inv
    if t > tmin and t < tmax:
        return t
    return np.inf


@numba.njit(cache=True, inline="always")
def _box_entry(ox, oy, oz, ix, iy, iz, lo, hi, node, tmin, tmax):
    """Entry distance into the node's box, or inf when the ray misses it."""
    near = -np.inf
    far = np.inf
    for k in range(3):
        o = ox if k == 0 else (oy if k == 1 else oz)
        inv = ix if k == 0 else (iy if k == 1 else iz)
        if inv == 0.0:
            # axis-parallel ray: inside the slab or not at all
            if o < lo[node, k] or o > hi[node, k]:
                return np.inf
            continue
        t1 = (lo[node, k] - o) * inv
        t2 = (hi[node, k] - o) * inv
        if t1 > t2:
            t1, t2 = t2, t1
        if t1 > near:
            near = t1
        if t2 < far:
            far = t2
    if near > far or far < tmin or near > tmax:
        return np.inf
    return near


@numba.njit(cache=True, inline="always")
def _inverse(x):
    return 0.0 if x == 0.0 else 1.0 / x


@numba.njit(cache=True)
def _first_hits(o, d, tmin, tmax, verts, faces, lo, hi, left, right, start, count, order):
    n = o.shape[0]
    out_f = np.full(n, -1, dtype=np.int64)
    out_t = np.full(n, np.inf)
    stack = np.empty(_STACK, dtype=np.int64)
    for r in range(n):
        ox, oy, oz = o[r, 0], o[r, 1], o[r, 2]
        dx, dy, dz = d[r, 0], d[r, 1], d[r, 2]
        ix, iy, iz = _inverse(dx), _inverse(dy), _inverse(dz)
        best_t = np.inf
        best_f = -1
        top = 0
        stack[top] = 0
        top += 1
        while top > 0:
            top -= 1
            node = stack[top]
            near = _box_entry(ox, oy, oz, ix, iy, iz, lo, hi, node, tmin[r], tmax[r])
            # `>` keeps boxes that could hold an equal-t hit with a lower face index
            if near == np.inf or near > best_t:
                continue
            if left[node] < 0:
                for k in range(start[node], start[node] + count[node]):
                    f = order[k]
                    t = _triangle(ox, oy, oz, dx, dy, dz, verts, faces, f, tmin[r], tmax[r])
                    if t < best_t or (t == best_t and t < np.inf and f < best_f):
                        best_t = t
                        best_f = f
            else:
                stack[top] = right[node]
                stack[top + 1] = left[node]
                top += 2
        out_f[r] = best_f
        out_t[r] = best_t
    return out_f, out_t


@numba.njit(cache=True)
def _any_hits(o, d, tmin, tmax, exclude_vertex, exclude_mask, verts, faces, lo, hi, left, right,
              start, count, order):
    n = o.shape[0]
    out = np.zeros(n, dtype=np.bool_)
    stack = np.empty(_STACK, dtype=np.int64)
    for r in range(n):
        ox, oy, oz = o[r, 0], o[r, 1], o[r, 2]
        dx, dy, dz = d[r, 0], d[r, 1], d[r, 2]
        ix, iy, iz = _inverse(dx), _inverse(dy), _inverse(dz)
        ev = exclude_vertex[r]
        top = 0
        stack[top] = 0
        top += 1
        hit = False
        while top > 0 and not hit:
            top -= 1
            node = stack[top]
            if _box_entry(ox, oy, oz, ix, iy, iz, lo, hi, node, tmin[r], tmax[r]) == np.inf:
                continue
            if left[node] < 0:
                for k in range(start[node], start[node] + count[node]):
                    f = order[k]
                    if exclude_mask[f]:
                        continue
                    if ev >= 0 and (faces[f, 0] == ev or faces[f, 1] == ev or faces[f, 2] == ev):
                        continue
                    if _triangle(ox, oy, oz, dx, dy, dz, verts, faces, f, tmin[r], tmax[r]) < np.inf:
                        hit = True
                        break
            else:
                stack[top] = right[node]
                stack[top + 1] = left[node]
                top += 2
        out[r] = hit
    return out


@numba.njit(cache=True)
def _brute_first_hits(o, d, tmin, tmax, verts, faces):
    n = o.shape[0]
    out_f = np.full(n, -1, dtype=np.int64)
    out_t = np.full(n, np.inf)
    for r in range(n):
        best_t = np.inf
        best_f = -1
        for f in range(faces.shape[0]):
            t = _triangle(o[r, 0], o[r, 1], o[r, 2], d[r, 0], d[r, 1], d[r, 2], verts, faces, f,
                          tmin[r], tmax[r])
            if t < best_t:
                best_t = t
                best_f = f
        out_f[r] = best_f
        out_t[r] = best_t
    return out_f, out_t
