"""Deterministic synthetic scenes for closed-loop testing of the planner.

A ground-truth mesh with a solid procedural texture is ray cast into 8-bit
grayscale views. A perturbed copy of the mesh plays the part of an imperfect
reconstruction: its photo-consistency against the true renders drops where
the geometry is wrong, which is what the planner should react to.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .bvh import Bvh, build_bvh
from .camera import Camera, Intrinsics, look_at
from .energy import CandidatePose, EnergyParams, EnergyWeights, Scene, select_best
from .image import GrayImage
from .mesh import TriangleMesh, load_mesh
from .photo import DEFAULT_MAX_INCIDENCE_DEG, DEFAULT_SUBDIVISION, PriAccumulator

log = logging.getLogger(__name__)


# --------------------------------------------------------------------------
# primitives


def icosphere(subdivisions: int = 3, radius: float = 1.0) -> TriangleMesh:
    """Subdivided icosahedron; 20 * 4**subdivisions outward-facing triangles."""
    t = (1 + 5 ** 0.5) / 2
    verts = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0), (0, -1, t), (0, 1, t),
             (0, -1, -t), (0, 1, -t), (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
             (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
             (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(v, dtype=np.float64) / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def mid(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    return TriangleMesh.from_arrays(np.array(verts) * radius, faces)


def plane_grid(nx: int = 10, ny: int = 10, size: float = 2.0) -> TriangleMesh:
    """Square grid in the z=0 plane centred at the origin, normals +z."""
    xs = np.linspace(-size / 2, size / 2, nx + 1)
    ys = np.linspace(-size / 2, size / 2, ny + 1)
    gx, gy = np.meshgrid(xs, ys, indexing="xy")
    verts = np.stack([gx.ravel(), gy.ravel(), np.zeros(gx.size)], axis=1)
    faces = []
    for j in range(ny):
        for i in range(nx):
            a = j * (nx + 1) + i
            b, c, d = a + 1, a + nx + 1, a + nx + 2
            faces += [(a, b, d), (a, d, c)]
    return TriangleMesh.from_arrays(verts, faces)


def box(size=(1.0, 1.0, 1.0), divisions: int = 1) -> TriangleMesh:
    """Axis-aligned box centred at the origin, each side split into a grid."""
    half = np.asarray(size, dtype=np.float64) / 2
    verts, faces = [], []
    n = divisions
    for axis in range(3):
        for sign in (-1.0, 1.0):
            u_ax, v_ax = (axis + 1) % 3, (axis + 2) % 3
            base = len(verts)
            for j in range(n + 1):
                for i in range(n + 1):
                    p = np.zeros(3)
                    p[axis] = sign * half[axis]
                    p[u_ax] = (-1 + 2 * i / n) * half[u_ax]
                    p[v_ax] = (-1 + 2 * j / n) * half[v_ax]
                    verts.append(p)
            for j in range(n):
                for i in range(n):
                    a = base + j * (n + 1) + i
                    b, c, d = a + 1, a + n + 1, a + n + 2
                    quad = [(a, b, d), (a, d, c)] if sign > 0 else [(a, d, b), (a, c, d)]
                    faces += quad
    mesh = TriangleMesh.from_arrays(np.array(verts), faces)
    return mesh


# --------------------------------------------------------------------------
# textures


def checker(points: np.ndarray, scale: float, lo: float = 0.2, hi: float = 0.85) -> np.ndarray:
    cells = np.floor(np.asarray(points) / scale).astype(np.int64).sum(axis=1)
    return np.where(cells % 2 == 0, hi, lo)


class ValueNoise:
    """Solid value noise: smoothly interpolated random values on an integer lattice,
    summed over octaves (each at double frequency, half weight), mapped into [lo, hi]."""

    def __init__(self, scale: float, seed: int = 0, octaves: int = 1, lo: float = 0.1, hi: float = 0.9):
        if scale <= 0:
            raise ValueError("texture scale must be positive")
        if octaves < 1:
            raise ValueError("octaves must be >= 1")
        self.octaves = octaves
        rng = np.random.default_rng(seed)
        self.table = rng.random(4096)
        self.perm = rng.permutation(4096)
        self.scale, self.lo, self.hi = scale, lo, hi

    def _lattice(self, i, j, k):
        h = self.perm[i & 4095]
        h = self.perm[(h + j) & 4095]
        h = self.perm[(h + k) & 4095]
        return self.table[h]

    def _octave(self, p):
        base = np.floor(p)
        f = p - base
        i = base.astype(np.int64)
        w = f * f * (3 - 2 * f)
        out = 0.0
        for dx in (0, 1):
            wx = w[:, 0] if dx else 1 - w[:, 0]
            for dy in (0, 1):
                wy = w[:, 1] if dy else 1 - w[:, 1]
                for dz in (0, 1):
                    wz = w[:, 2] if dz else 1 - w[:, 2]
                    out = out + wx * wy * wz * self._lattice(i[:, 0] + dx, i[:, 1] + dy, i[:, 2] + dz)
        return out

    def __call__(self, points: np.ndarray) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64) / self.scale
        total, norm = 0.0, 0.0
        for k in range(self.octaves):
            w = 0.5 ** k
            total = total + w * self._octave(p * 2 ** k + 17.0 * k)
            norm += w
        return self.lo + (self.hi - self.lo) * total / norm


# --------------------------------------------------------------------------
# scene description


@dataclass(frozen=True)
class Perturbation:
    center: tuple
    radius: float
    amplitude: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("perturbation radius must be positive")


@dataclass(frozen=True)
class RingSpec:
    count: int = 48
    radius: float = 3.0
    elevations_deg: tuple = (0.0,)
    azimuth_offset_deg: float = 0.0
    prefix: str = "cand"


@dataclass(frozen=True)
class SceneSpec:
    mesh: dict = field(default_factory=lambda: {"primitive": "icosphere", "subdivisions": 3, "radius": 1.0})
    texture: dict = field(default_factory=lambda: {"kind": "value_noise", "scale": 0.12, "seed": 0})
    light_direction: tuple = (0.3, -0.4, 0.866)
    ambient: float = 0.3
    perturbations: tuple = ()
    width: int = 256
    height: int = 256
    fov_deg: float = 45.0
    supersample: int = 2
    views: RingSpec = RingSpec(count=6, radius=3.0, elevations_deg=(10.0,), prefix="view")
    candidates: RingSpec = RingSpec(elevations_deg=(10.0,))

    def __post_init__(self):
        if not 0 <= self.ambient <= 1:
            raise ValueError("ambient must lie in [0, 1]")
        scale = self.texture.get("scale", 1.0)
        if not scale > 0:
            raise ValueError("texture scale must be positive")
        if self.supersample < 1:
            raise ValueError("supersample must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        d = dict(d)
        kw = {}
        for key in ("mesh", "texture"):
            if key in d:
                kw[key] = dict(d.pop(key))
        light = d.pop("light", None)
        if light is not None:
            kw["light_direction"] = tuple(light.get("direction", cls.light_direction))
            kw["ambient"] = float(light.get("ambient", cls.ambient))
        if "perturbations" in d:
            kw["perturbations"] = tuple(
                Perturbation(tuple(p["center"]), float(p["radius"]), float(p["amplitude"]))
                for p in d.pop("perturbations"))
        cap = d.pop("cap", None)
        cam = d.pop("camera", {})
        for key in ("width", "height", "fov_deg", "supersample"):
            if key in cam:
                kw[key] = cam[key]
        for key, default in (("views", cls.views), ("candidates", cls.candidates)):
            if key in d:
                r = dict(d.pop(key))
                if "elevations_deg" in r:
                    r["elevations_deg"] = tuple(r["elevations_deg"])
                if "elevation_deg" in r:
                    r["elevations_deg"] = (float(r.pop("elevation_deg")),)
                kw[key] = replace(default, **r)
        if d:
            raise ValueError(f"unknown scene keys: {sorted(d)}")
        spec = cls(**kw)
        return spec if cap is None else with_cap(spec, **cap)

    @classmethod
    def load(cls, path) -> "SceneSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def intrinsics(self) -> Intrinsics:
        return Intrinsics.from_fov(self.width, self.height, self.fov_deg)

    def light(self) -> np.ndarray:
        light = np.asarray(self.light_direction, dtype=np.float64)
        return light / np.linalg.norm(light)

    def build_mesh(self) -> TriangleMesh:
        m = dict(self.mesh)
        if "path" in m:
            return load_mesh(m["path"])
        kind = m.pop("primitive", "icosphere")
        if kind == "icosphere":
            return icosphere(int(m.get("subdivisions", 3)), float(m.get("radius", 1.0)))
        if kind == "plane":
            return plane_grid(int(m.get("nx", 10)), int(m.get("ny", 10)), float(m.get("size", 2.0)))
        if kind == "box":
            return box(tuple(m.get("size", (1.0, 1.0, 1.0))), int(m.get("divisions", 1)))
        raise ValueError(f"unknown mesh primitive {kind!r}")

    def texture_fn(self):
        t = dict(self.texture)
        kind = t.get("kind", "value_noise")
        if kind == "checker":
            scale = float(t["scale"])
            return lambda p: checker(p, scale)
        if kind == "value_noise":
            return ValueNoise(float(t.get("scale", 0.12)), int(t.get("seed", 0)), int(t.get("octaves", 1)))
        raise ValueError(f"unknown texture {kind!r}")

    def reconstruction(self, mesh: TriangleMesh) -> TriangleMesh:
        for p in self.perturbations:
            mesh = perturb(mesh, p)
        return mesh

    def ring(self, ring: RingSpec, center) -> list[CandidatePose]:
        return candidate_ring(center, ring.radius, ring.count, ring.elevations_deg, self.intrinsics(),
                              azimuth_offset_deg=ring.azimuth_offset_deg, prefix=ring.prefix)


def cap_direction(mesh: TriangleMesh, azimuth_deg: float, elevation_deg: float) -> np.ndarray:
    """Unit direction of the face barycenter closest to the given azimuth/elevation."""
    az, el = math.radians(azimuth_deg), math.radians(elevation_deg)
    d = np.array([math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)])
    centroid, _ = mesh.bounding_sphere()
    bc = mesh.face_barycenters() - centroid
    b = bc[int(np.argmax(bc @ d))]
    return b / np.linalg.norm(b)


def with_cap(spec: SceneSpec, azimuth_deg: float = 90.0, elevation_deg: float = 10.0,
             radius_frac: float = 0.15, amplitude_frac: float = 0.03) -> SceneSpec:
    """Add one perturbed cap whose size and height are fractions of the bounding radius."""
    mesh = spec.build_mesh()
    centroid, r = mesh.bounding_sphere()
    d = cap_direction(mesh, azimuth_deg, elevation_deg)
    # push the centre out to the surface along the chosen direction
    t = float(np.max((mesh.vertices - centroid) @ d))
    cap = Perturbation(tuple(float(x) for x in centroid + t * d), radius_frac * r, amplitude_frac * r)
    return replace(spec, perturbations=spec.perturbations + (cap,))


def demo_scene(**overrides) -> SceneSpec:
    """Default icosphere with one cap centred between the second and third
    view of the ring, so the first three views see it from two sides."""
    return with_cap(SceneSpec(**overrides))


# --------------------------------------------------------------------------
# operations


class Renderer:
    """Ray-cast renderer bound to one mesh; reuse it to avoid rebuilding the BVH."""

    def __init__(self, spec: SceneSpec, mesh: TriangleMesh | None = None, bvh: Bvh | None = None):
        self.spec = spec
        self.mesh = mesh if mesh is not None else spec.build_mesh()
        self.bvh = bvh if bvh is not None else build_bvh(self.mesh)
        self.texture = spec.texture_fn()
        light = spec.light()
        shade = np.maximum(0.0, self.mesh.face_normals @ light)
        self.face_shade = spec.ambient + (1 - spec.ambient) * shade

    def render(self, camera: Camera, rows_per_batch: int = 64) -> GrayImage:
        k = camera.intrinsics
        ss = self.spec.supersample
        offs = (np.arange(ss) + 0.5) / ss - 0.5
        out = np.zeros((k.height, k.width))
        cols = np.arange(k.width, dtype=np.float64)
        for r0 in range(0, k.height, rows_per_batch):
            rows = np.arange(r0, min(r0 + rows_per_batch, k.height), dtype=np.float64)
            acc = np.zeros((len(rows), k.width))
            for oy in offs:
                for ox in offs:
                    vv, uu = np.meshgrid(rows + oy, cols + ox, indexing="ij")
                    dirs = camera.pixel_rays(uu.ravel(), vv.ravel())
                    face, t = self.bvh.first_hits(camera.center, dirs)
                    val = np.zeros(len(dirs))
                    hit = face >= 0
                    if hit.any():
                        pts = camera.center + t[hit, None] * dirs[hit]
                        val[hit] = self.texture(pts) * self.face_shade[face[hit]]
                    acc += val.reshape(acc.shape)
            out[r0:r0 + len(rows)] = acc / (ss * ss)
        # 8-bit quantization, so saved images read back bit-exactly
        return GrayImage(np.round(np.clip(out, 0, 1) * 255.0) / 255.0)


def render(scene: SceneSpec, camera: Camera) -> GrayImage:
    return Renderer(scene).render(camera)


def perturb(mesh: TriangleMesh, p: Perturbation) -> TriangleMesh:
    """Push vertices within ``p.radius`` of ``p.center`` along their area-weighted
    normals by ``amplitude * (1 + cos(pi * d / radius)) / 2``."""
    verts = mesh.vertices.copy()
    d = np.linalg.norm(verts - np.asarray(p.center, dtype=np.float64), axis=1)
    inside = np.flatnonzero(d < p.radius)
    if inside.size and p.amplitude != 0:
        normals = mesh.vertex_normals()
        fall = 0.5 * (1 + np.cos(np.pi * d[inside] / p.radius))
        verts[inside] = verts[inside] + (p.amplitude * fall)[:, None] * normals[inside]
    return TriangleMesh.from_arrays(verts, mesh.faces)


def candidate_ring(center, radius: float, count: int, elevation_deg=0.0,
                   intrinsics: Intrinsics | None = None, azimuth_offset_deg: float = 0.0,
                   prefix: str = "cand") -> list[CandidatePose]:
    """``count`` look-at poses evenly spaced in azimuth around ``center``.

    ``elevation_deg`` may be a sequence, cycled over the ring (zig-zag rings).
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if not radius > 0:
        raise ValueError("radius must be positive")
    elevations = np.atleast_1d(np.asarray(elevation_deg, dtype=np.float64))
    intrinsics = intrinsics or Intrinsics.from_fov(256, 256, 50.0)
    center = np.asarray(center, dtype=np.float64)
    out = []
    for i in range(count):
        az = math.radians(azimuth_offset_deg + 360.0 * i / count)
        el = math.radians(elevations[i % len(elevations)])
        pos = center + radius * np.array([math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)])
        cid = f"{prefix}_{i:03d}"
        out.append(CandidatePose(Camera(intrinsics, look_at(pos, center), cid), cid))
    return out


@dataclass
class LoopConfig:
    metric: str = "ssd"
    K: int = 10
    n: int = DEFAULT_SUBDIVISION
    max_incidence_deg: float | None = DEFAULT_MAX_INCIDENCE_DEG
    undefined: str = "first"
    weights: EnergyWeights = EnergyWeights()
    params: EnergyParams = EnergyParams()
    incidence_sign: str = "reward"
    threads: int | None = None


@dataclass
class LoopResult:
    log: list
    views: list
    images: dict
    truth: TriangleMesh
    reconstruction: TriangleMesh
    candidates: list


def closed_loop(spec: SceneSpec, initial_views: int = 3, iterations: int = 5,
                config: LoopConfig | None = None, on_record=None) -> LoopResult:
    """Select ``iterations`` views one at a time, re-scoring photo-consistency after each.

    Each record holds the selection made from the current view set and the
    mean PRI of the facets that were worst at the start, measured after the
    winner has been added.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    if initial_views < 1:
        raise ValueError("initial_views must be >= 1")
    config = config or LoopConfig()
    truth = spec.build_mesh()
    renderer = Renderer(spec, truth)
    recon = spec.reconstruction(truth)
    recon_bvh = build_bvh(recon)
    centroid, _ = truth.bounding_sphere()

    # consecutive frames of the view ring, like bootstrapping from a short image sequence
    ring = spec.ring(spec.views, centroid)
    if initial_views > len(ring):
        raise ValueError(f"initial_views={initial_views} exceeds the {len(ring)}-view ring")
    views = [c.camera for c in ring[:initial_views]]
    pool = spec.ring(spec.candidates, centroid)
    images = {}
    acc = PriAccumulator(recon_bvh, config.metric, config.n, config.max_incidence_deg, config.undefined)
    for cam in views:
        images[cam.id] = renderer.render(cam)
        acc.add_view(cam, images[cam.id])

    report = acc.report(config.K)
    tracked = report.worst_facets.copy()
    tracked_mean = _mean_defined(report.values[tracked])
    log_records = []
    barycenters = recon.face_barycenters()
    for it in range(1, iterations + 1):
        if not pool:
            rec = {"iteration": it, "stopped": "candidate pool exhausted"}
            log_records.append(rec)
            if on_record:
                on_record(rec)
            break
        scene = Scene(recon_bvh, list(views))
        winner, ranking = select_best(pool, scene, report, config.weights, config.params,
                                      config.incidence_sign, config.threads)
        chosen = next(c for c in pool if c.id == winner)
        pool = [c for c in pool if c.id != winner]
        views.append(chosen.camera)
        images[winner] = renderer.render(chosen.camera)

        vals, _, defined = acc.values()
        rec = {
            "iteration": it,
            "winner": winner,
            "E": ranking[0].total,
            "views": len(views),
            "mean_pri": _mean_defined(vals),
            "min_pri": float(np.nanmin(vals)) if defined.any() else None,
            "undefined_facets": int(np.count_nonzero(~defined)),
            "worst_facets": [int(f) for f in report.worst_facets],
            "worst_centroids": [[float(x) for x in barycenters[f]] for f in report.worst_facets],
            "winner_center": [float(x) for x in chosen.camera.center],
            "tracked_mean_pri_before": tracked_mean,
        }
        acc.add_view(chosen.camera, images[winner])
        report = acc.report(config.K)
        tracked_mean = _mean_defined(report.values[tracked])
        rec["tracked_mean_pri_after"] = tracked_mean
        log_records.append(rec)
        if on_record:
            on_record(rec)
    return LoopResult(log_records, views, images, truth, recon, spec.ring(spec.candidates, centroid))


def _mean_defined(values) -> float | None:
    values = np.asarray(values, dtype=np.float64)
    ok = np.isfinite(values)
    return float(values[ok].mean()) if ok.any() else None
