"""Photo-consistency of mesh facets across posed images.

Each visible facet is resampled onto a barycentric grid of the canonical
equilateral triangle, so patches from different views line up point by point.
The per-facet index is the mean similarity over all unordered pairs of views
that see the facet; higher always means more consistent (SSD enters negated).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bvh import Bvh
from .camera import Camera, facet_visible, visible_faces
from .image import GrayImage

METRICS = ("ssd", "ncc")
UNDEFINED_POLICIES = ("first", "last")
DEFAULT_SUBDIVISION = 8
DEFAULT_MAX_INCIDENCE_DEG = 65.0
NCC_MIN_VARIANCE = 1e-12


class PreconditionError(ValueError):
    pass


def barycentric_grid(n: int) -> np.ndarray:
    """Barycentric weights of the level-``n`` grid, shape ((n+1)(n+2)/2, 3).

    Row ``a`` (0..n) runs from the v1-v2 edge towards v3; within a row the
    weight moves from v1 to v2. For n=1 the rows are exactly v1, v2, v3.
    """
    if n < 1:
        raise ValueError("subdivision must be >= 1")
    rows = []
    for a in range(n + 1):
        for b in range(n - a + 1):
            rows.append((n - a - b, b, a))
    return np.array(rows, dtype=np.float64) / n


@dataclass(frozen=True, eq=False)
class CanonicalPatch:
    samples: np.ndarray
    n: int

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64).ravel()
        if s.size != (self.n + 1) * (self.n + 2) // 2:
            raise ValueError(f"level {self.n} needs {(self.n + 1) * (self.n + 2) // 2} samples, got {s.size}")
        if not np.all(np.isfinite(s)):
            raise ValueError("patch samples must be finite")
        object.__setattr__(self, "samples", s)


@dataclass
class ViewSet:
    """Posed grayscale images of the scene, in a fixed order."""

    cameras: list
    images: list

    def __post_init__(self):
        if len(self.cameras) != len(self.images):
            raise ValueError("one image per camera required")

    def __len__(self):
        return len(self.cameras)

    def __iter__(self):
        return iter(zip(self.cameras, self.images))

    def subset(self, idx) -> "ViewSet":
        return ViewSet([self.cameras[i] for i in idx], [self.images[i] for i in idx])


def incidence_angles(camera: Camera, mesh) -> np.ndarray:
    """Angle in degrees between each face normal and the ray from its barycenter to the camera."""
    ray = camera.center - mesh.face_barycenters()
    cos = np.einsum("ij,ij->i", mesh.face_normals, ray) / np.linalg.norm(ray, axis=1)
    return np.degrees(np.arccos(np.clip(cos, -1.0, 1.0)))


def usable_faces(camera: Camera, bvh: Bvh, max_incidence_deg: float | None = DEFAULT_MAX_INCIDENCE_DEG) -> np.ndarray:
    """Faces that are visible and, optionally, not seen at too grazing an angle."""
    vis = visible_faces(camera, bvh)
    if max_incidence_deg is not None:
        vis &= incidence_angles(camera, bvh.mesh) <= max_incidence_deg
    return vis


def _usable(camera, bvh, face, max_incidence_deg) -> bool:
    if not facet_visible(camera, bvh, face):
        return False
    if max_incidence_deg is None:
        return True
    mesh = bvh.mesh
    ray = camera.center - mesh.face_barycenter(face)
    cos = float(np.dot(mesh.face_normals[face], ray) / np.linalg.norm(ray))
    return np.degrees(np.arccos(min(1.0, max(-1.0, cos)))) <= max_incidence_deg


def sample_patches(image: GrayImage, camera: Camera, mesh, faces, n: int = DEFAULT_SUBDIVISION) -> np.ndarray:
    """Canonical samples for many faces at once, shape (len(faces), S). No visibility check."""
    faces = np.asarray(faces, dtype=np.int64)
    grid = barycentric_grid(n)
    tri = mesh.vertices[mesh.faces[faces]]               # (F, 3, 3)
    pts = np.einsum("sk,fkd->fsd", grid, tri).reshape(-1, 3)
    uv, ok = camera.project_many(pts)
    uv = np.where(ok[:, None], uv, 0.0)
    return image.sample(uv[:, 0], uv[:, 1]).reshape(len(faces), len(grid))


def sample_patch(image: GrayImage, camera: Camera, bvh: Bvh, face: int,
                 n: int = DEFAULT_SUBDIVISION) -> CanonicalPatch:
    if not facet_visible(camera, bvh, face):
        raise PreconditionError(f"face {face} is not visible from camera {camera.id!r}")
    return CanonicalPatch(sample_patches(image, camera, bvh.mesh, [face], n)[0], n)


def _check_pair(a: CanonicalPatch, b: CanonicalPatch):
    if a.n != b.n:
        raise ValueError(f"patch grids differ (levels {a.n} and {b.n})")


def ssd(a: CanonicalPatch, b: CanonicalPatch) -> float:
    _check_pair(a, b)
    return float(ssd_rows(a.samples, b.samples))


def ncc(a: CanonicalPatch, b: CanonicalPatch) -> float:
    _check_pair(a, b)
    return float(ncc_rows(a.samples, b.samples))


def ssd_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = a - b
    return np.sum(d * d, axis=-1)


def ncc_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Zero-mean normalized cross correlation along the last axis.
    Rows where either input is (near) constant score 0."""
    ac = a - a.mean(axis=-1, keepdims=True)
    bc = b - b.mean(axis=-1, keepdims=True)
    saa = np.sum(ac * ac, axis=-1)
    sbb = np.sum(bc * bc, axis=-1)
    sab = np.sum(ac * bc, axis=-1)
    flat = (np.mean(ac * ac, axis=-1) < NCC_MIN_VARIANCE) | (np.mean(bc * bc, axis=-1) < NCC_MIN_VARIANCE)
    denom = np.sqrt(saa * sbb)
    out = np.divide(sab, denom, out=np.zeros_like(sab), where=~flat)
    return np.clip(out, -1.0, 1.0)


def similarity_rows(metric: str, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if metric == "ssd":
        return -ssd_rows(a, b)
    if metric == "ncc":
        return ncc_rows(a, b)
    raise ValueError(f"unknown metric {metric!r}")


def pri(bvh: Bvh, views: ViewSet, face: int, metric: str = "ssd", n: int = DEFAULT_SUBDIVISION,
        max_incidence_deg: float | None = DEFAULT_MAX_INCIDENCE_DEG) -> tuple[float, int, bool]:
    """Photo-consistency index of one facet: ``(value, view_count, defined)``.

    Reference implementation, one patch pair at a time. :class:`PriAccumulator`
    computes the same numbers for every facet at once. Views seeing the facet
    at more than ``max_incidence_deg`` are skipped (None keeps every visible view).
    """
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}")
    patches = [sample_patch(img, cam, bvh, face, n) for cam, img in views
               if _usable(cam, bvh, face, max_incidence_deg)]
    if len(patches) < 2:
        return float("nan"), len(patches), False
    total, pairs = 0.0, 0
    for j in range(len(patches)):
        for i in range(j):
            total += -ssd(patches[i], patches[j]) if metric == "ssd" else ncc(patches[i], patches[j])
            pairs += 1
    return total / pairs, len(patches), True


class PriAccumulator:
    """Running per-facet similarity sums over view pairs.

    Adding a view only samples that view and scores its pairs with the views
    already present, so growing a view set costs O(|S|) per facet rather than
    a full O(|S|^2) recomputation. Results match :func:`pri`.
    """

    def __init__(self, bvh: Bvh, metric: str = "ssd", n: int = DEFAULT_SUBDIVISION,
                 max_incidence_deg: float | None = DEFAULT_MAX_INCIDENCE_DEG, undefined: str = "first"):
        if metric not in METRICS:
            raise ValueError(f"unknown metric {metric!r}")
        if undefined not in UNDEFINED_POLICIES:
            raise ValueError(f"unknown undefined-facet policy {undefined!r}")
        self.bvh, self.metric, self.n = bvh, metric, n
        self.max_incidence_deg = max_incidence_deg
        self.undefined = undefined
        m = bvh.mesh.n_faces
        self.sums = np.zeros(m)
        self.pairs = np.zeros(m, dtype=np.int64)
        self.view_counts = np.zeros(m, dtype=np.int64)
        self._patches: list[tuple[np.ndarray, np.ndarray]] = []  # (visible mask, samples)
        self.camera_ids: list[str] = []

    def add_view(self, camera: Camera, image: GrayImage) -> None:
        mesh = self.bvh.mesh
        vis = usable_faces(camera, self.bvh, self.max_incidence_deg)
        samples = np.zeros((mesh.n_faces, (self.n + 1) * (self.n + 2) // 2))
        idx = np.flatnonzero(vis)
        if idx.size:
            samples[idx] = sample_patches(image, camera, mesh, idx, self.n)
        for old_vis, old_samples in self._patches:
            both = np.flatnonzero(old_vis & vis)
            if both.size:
                self.sums[both] += similarity_rows(self.metric, old_samples[both], samples[both])
                self.pairs[both] += 1
        self.view_counts += vis
        self._patches.append((vis, samples))
        self.camera_ids.append(camera.id)

    def add_views(self, views: ViewSet) -> "PriAccumulator":
        for cam, img in views:
            self.add_view(cam, img)
        return self

    def visibility(self) -> np.ndarray:
        """(views, faces) boolean visibility table."""
        return np.array([v for v, _ in self._patches]).reshape(len(self._patches), -1)

    def values(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        defined = self.view_counts >= 2
        vals = np.full(len(self.sums), np.nan)
        vals[defined] = self.sums[defined] / self.pairs[defined]
        return vals, self.view_counts.copy(), defined

    def report(self, K: int = 10) -> "PriReport":
        vals, counts, defined = self.values()
        return PriReport.from_values(self.bvh.mesh, vals, counts, defined, self.metric, K, self.undefined)


@dataclass
class PriReport:
    metric: str
    K: int
    values: np.ndarray
    view_counts: np.ndarray
    defined: np.ndarray
    worst_facets: np.ndarray
    worst_vertices: np.ndarray
    ranking: np.ndarray = field(repr=False, default=None)

    @classmethod
    def from_values(cls, mesh, values, view_counts, defined, metric, K, undefined="first") -> "PriReport":
        if K < 1:
            raise ValueError("K must be >= 1")
        if mesh.n_faces == 0:
            raise ValueError("mesh has no facets")
        order = rank_facets(values, defined, undefined)
        worst = order[:K]
        verts = np.unique(mesh.faces[worst].ravel())
        return cls(metric, K, np.asarray(values, float), np.asarray(view_counts),
                   np.asarray(defined, bool), worst, verts, order)

    def to_dict(self) -> dict:
        facets = [
            {"face": i, "pri": (float(v) if d else None), "views": int(c), "defined": bool(d)}
            for i, (v, c, d) in enumerate(zip(self.values, self.view_counts, self.defined))
        ]
        return {
            "metric": self.metric,
            "K": int(self.K),
            "facets": facets,
            "worst_facets": [int(f) for f in self.worst_facets],
            "worst_vertices": [int(v) for v in self.worst_vertices],
        }


def rank_facets(values, defined, undefined: str = "first") -> np.ndarray:
    """Facet indices from worst to best: defined facets by ascending value, ties
    by index. Facets seen by fewer than two views go first (they need
    observation most) or, with ``undefined="last"``, after all defined ones."""
    values = np.asarray(values, dtype=np.float64)
    defined = np.asarray(defined, dtype=bool)
    key = np.where(defined, values, -np.inf)
    group = defined if undefined == "first" else ~defined
    return np.lexsort((np.arange(len(values)), key, group))


def worst_facets(bvh: Bvh, views: ViewSet, metric: str = "ssd", K: int = 10,
                 n: int = DEFAULT_SUBDIVISION, max_incidence_deg: float | None = DEFAULT_MAX_INCIDENCE_DEG,
                 undefined: str = "first") -> PriReport:
    if K < 1:
        raise ValueError("K must be >= 1")
    return PriAccumulator(bvh, metric, n, max_incidence_deg, undefined).add_views(views).report(K)
