"""View-selection energy over the worst-reconstructed vertices.

Per vertex, a candidate pose is scored by four terms: a line-of-sight check,
a Gaussian preference for projecting near the image center, a base-to-height
parallax test against every existing camera, and a von Mises log-density on
the incidence angle. The candidate with the highest summed score wins.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .bvh import Bvh
from .camera import Camera, in_image
from .photo import PriReport

INCIDENCE_SIGNS = ("reward", "paper_literal")


@dataclass(frozen=True)
class EnergyParams:
    penalty: float = -10.0
    delta: float = 0.33
    mu_angle_deg: float = 55.0
    kappa: float = 8.0

    def __post_init__(self):
        if not self.penalty < 0:
            raise ValueError("penalty must be negative")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if not 0 < self.mu_angle_deg < 90:
            raise ValueError("mu_angle_deg must lie in (0, 90)")
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")

    @property
    def mu_angle(self) -> float:
        return math.radians(self.mu_angle_deg)


@dataclass(frozen=True)
class EnergyWeights:
    mu1: float = 0.6
    mu2: float = 1.6
    mu3: float = 2.1
    mu4: float = 0.6

    def __post_init__(self):
        if min(self.as_tuple()) < 0:
            raise ValueError("weights must be non-negative")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.mu1, self.mu2, self.mu3, self.mu4)

    def scaled(self, factor: float) -> "EnergyWeights":
        return EnergyWeights(*(w * factor for w in self.as_tuple()))


@dataclass(frozen=True)
class CandidatePose:
    camera: Camera
    id: str = ""

    def __post_init__(self):
        if not self.id:
            object.__setattr__(self, "id", self.camera.id)


@dataclass
class Scene:
    """What a candidate is scored against: the mesh (with its BVH) and the
    cameras that already observe it."""

    bvh: Bvh
    cameras: list

    @property
    def mesh(self):
        return self.bvh.mesh


@dataclass
class VertexEnergy:
    vertex: int
    occlusion: float
    focus: float
    parallax_sum: float
    incidence: float
    nbv: float


@dataclass
class CandidateEnergy:
    id: str
    total: float
    per_vertex: list = field(default_factory=list)
    rank: int = 0

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "E": self.total,
            "rank": self.rank,
            "per_vertex": [
                {"vertex": r.vertex, "O": r.occlusion, "F": r.focus, "Psum": r.parallax_sum,
                 "I": r.incidence, "nbv": r.nbv}
                for r in self.per_vertex
            ],
        }


def _camera(candidate) -> Camera:
    return candidate.camera if isinstance(candidate, CandidatePose) else candidate


# --------------------------------------------------------------------------
# terms


def occlusion_term(candidate, bvh: Bvh, v: int, params: EnergyParams = EnergyParams()) -> float:
    """1 when the vertex is in front of the camera with a clear line of sight, else the penalty."""
    cam = _camera(candidate)
    point = bvh.mesh.vertices[v]
    _, front = cam.project_many(point[None])
    if not front[0]:
        return params.penalty
    if bvh.occluded(cam.center, point[None], exclude_vertex=[v])[0]:
        return params.penalty
    return 1.0


def focus_term(candidate, point, params: EnergyParams = EnergyParams()) -> float:
    """Gaussian log-weight of the projection's offset from the principal point,
    with sigma = W/3 and H/3; the penalty when the point lands outside the image."""
    cam = _camera(candidate)
    k = cam.intrinsics
    uv, ok = cam.project_many(np.asarray(point, dtype=np.float64)[None])
    if not ok[0] or not in_image(k, uv[0]):
        return params.penalty
    sx, sy = k.width / 3.0, k.height / 3.0
    du, dv = uv[0, 0] - k.cx, uv[0, 1] - k.cy
    return -(du * du) / (2 * sx * sx) - (dv * dv) / (2 * sy * sy)


def parallax_term(candidate, other: Camera, point, params: EnergyParams = EnergyParams()) -> float:
    cam = _camera(candidate)
    height = float(np.linalg.norm(cam.center - np.asarray(point, dtype=np.float64)))
    if height == 0.0:
        raise ValueError("candidate center coincides with the surface point")
    base = float(np.linalg.norm(cam.center - other.center))
    return 1.0 if base / height > params.delta else params.penalty


def bessel_i0(kappa: float) -> float:
    """Modified Bessel function of the first kind, order zero, by power series."""
    if kappa < 0:
        raise ValueError("kappa must be >= 0")
    x2 = (kappa / 2.0) ** 2
    term, total, m = 1.0, 1.0, 0
    while True:
        m += 1
        term *= x2 / (m * m)
        total += term
        if term < 1e-15 * total:
            return total


def von_mises_logpdf(x, mu: float, kappa: float):
    return kappa * np.cos(np.asarray(x) - mu) - math.log(2 * math.pi * bessel_i0(kappa))


def incidence_angle(mesh, face: int, center) -> float:
    ray = np.asarray(center, dtype=np.float64) - mesh.face_barycenter(face)
    norm = np.linalg.norm(ray)
    if norm == 0.0:
        raise ValueError("camera center lies on the facet barycenter")
    c = float(np.dot(mesh.face_normals[face], ray / norm))
    return math.acos(max(-1.0, min(1.0, c)))


def incidence_term(candidate, mesh, v: int, incident_worst_faces,
                   params: EnergyParams = EnergyParams()) -> float:
    """Mean von Mises log-density of the incidence angle over the given facets."""
    faces = list(incident_worst_faces)
    if not faces:
        raise ValueError("vertex has no incident worst facets")
    cam = _camera(candidate)
    vals = [von_mises_logpdf(incidence_angle(mesh, f, cam.center), params.mu_angle, params.kappa)
            for f in faces]
    return float(sum(vals) / len(vals))


def combine(weights: EnergyWeights, occlusion, focus, parallax_sum, incidence,
            incidence_sign: str = "reward") -> float:
    if incidence_sign not in INCIDENCE_SIGNS:
        raise ValueError(f"unknown incidence_sign {incidence_sign!r}")
    sign = 1.0 if incidence_sign == "reward" else -1.0
    return (weights.mu1 * occlusion + weights.mu2 * focus + weights.mu3 * parallax_sum
            + sign * weights.mu4 * incidence)


def incident_worst(report: PriReport, mesh, v: int) -> list[int]:
    worst = report.worst_facets
    return [int(f) for f in worst if v in mesh.faces[f]]


def vertex_energy(candidate, scene: Scene, v: int, report: PriReport,
                  weights: EnergyWeights = EnergyWeights(), params: EnergyParams = EnergyParams(),
                  incidence_sign: str = "reward") -> VertexEnergy:
    mesh = scene.mesh
    point = mesh.vertices[v]
    o = occlusion_term(candidate, scene.bvh, v, params)
    f = focus_term(candidate, point, params)
    p = sum(parallax_term(candidate, c, point, params) for c in scene.cameras)
    i = incidence_term(candidate, mesh, v, incident_worst(report, mesh, v), params)
    return VertexEnergy(int(v), o, f, float(p), i, combine(weights, o, f, p, i, incidence_sign))


def nbv_score(candidate, scene: Scene, v: int, report: PriReport,
              weights: EnergyWeights = EnergyWeights(), params: EnergyParams = EnergyParams(),
              incidence_sign: str = "reward") -> float:
    return vertex_energy(candidate, scene, v, report, weights, params, incidence_sign).nbv


def total_energy(candidate, scene: Scene, report: PriReport,
                 weights: EnergyWeights = EnergyWeights(), params: EnergyParams = EnergyParams(),
                 incidence_sign: str = "reward") -> CandidateEnergy:
    verts = np.unique(np.asarray(report.worst_vertices, dtype=np.int64))
    if verts.size == 0:
        raise ValueError("worst-vertex set is empty")
    rows = [vertex_energy(candidate, scene, int(v), report, weights, params, incidence_sign) for v in verts]
    total = math.fsum(r.nbv for r in rows)
    cid = candidate.id if isinstance(candidate, CandidatePose) else candidate.id
    return CandidateEnergy(cid, total, rows)


def select_best(candidates, scene: Scene, report: PriReport,
                weights: EnergyWeights = EnergyWeights(), params: EnergyParams = EnergyParams(),
                incidence_sign: str = "reward", threads: int | None = None):
    """Score every candidate; returns ``(winner_id, ranking)`` with the ranking
    sorted by energy (descending), ties kept in input order."""
    candidates = list(candidates)
    if not candidates:
        raise ValueError("no candidate poses")

    def score(c):
        return total_energy(c, scene, report, weights, params, incidence_sign)

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            scored = list(pool.map(score, candidates))
    else:
        scored = [score(c) for c in candidates]
    order = sorted(range(len(scored)), key=lambda i: (-scored[i].total, i))
    ranking = [scored[i] for i in order]
    for rank, entry in enumerate(ranking, 1):
        entry.rank = rank
    return ranking[0].id, ranking


def energy_report(winner: str, ranking, weights: EnergyWeights, params: EnergyParams,
                  incidence_sign: str, n_cameras: int) -> dict:
    return {
        "winner": winner,
        "ranking": [e.to_dict() for e in ranking],
        "weights": asdict(weights),
        "params": {**asdict(params), "incidence_sign": incidence_sign, "existing_cameras": n_cameras},
    }
