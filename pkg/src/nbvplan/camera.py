"""Pinhole cameras, projection, and the facet visibility predicate."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bvh import Bvh
from .mesh import TriangleMesh

Z_NEAR = 1e-6
_ORTHO_TOL = 1e-9


class CameraFileError(ValueError):
    """Raised for malformed camera JSON; the message names the field."""


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @classmethod
    def from_fov(cls, width: int, height: int, fov_deg: float) -> "Intrinsics":
        """Square pixels, principal point at the image center, horizontal FOV."""
        f = 0.5 * width / np.tan(np.radians(fov_deg) / 2)
        return cls(f, f, width / 2, height / 2, width, height)


@dataclass(frozen=True, eq=False)
class Pose:
    """World-to-camera rotation and camera center. Camera frame: x right, y down, z forward."""

    rotation: np.ndarray
    center: np.ndarray

    def __post_init__(self):
        r = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        c = np.array(self.center, dtype=np.float64).reshape(3)
        if not np.allclose(r.T @ r, np.eye(3), atol=_ORTHO_TOL, rtol=0):
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > _ORTHO_TOL:
            raise ValueError("rotation must have determinant +1")
        if not np.all(np.isfinite(c)):
            raise ValueError("camera center must be finite")
        r.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "center", c)

    @property
    def forward(self) -> np.ndarray:
        return self.rotation[2].copy()

    def to_camera(self, points) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.center) @ self.rotation.T

    def __eq__(self, other):
        return (isinstance(other, Pose) and np.array_equal(self.rotation, other.rotation)
                and np.array_equal(self.center, other.center))

    __hash__ = None


@dataclass(frozen=True)
class Camera:
    intrinsics: Intrinsics
    pose: Pose
    id: str = ""

    @property
    def center(self) -> np.ndarray:
        return self.pose.center

    def project_many(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Project (N, 3) world points. Returns (N, 2) pixels and a validity mask
        (false for points at or behind the near plane; their pixels are NaN)."""
        pc = self.pose.to_camera(np.atleast_2d(points))
        z = pc[:, 2]
        ok = z > Z_NEAR
        safe = np.where(ok, z, 1.0)
        k = self.intrinsics
        uv = np.stack([k.fx * pc[:, 0] / safe + k.cx, k.fy * pc[:, 1] / safe + k.cy], axis=1)
        uv[~ok] = np.nan
        return uv, ok

    def back_project(self, u: float, v: float, depth: float) -> np.ndarray:
        k = self.intrinsics
        pc = np.array([(u - k.cx) / k.fx * depth, (v - k.cy) / k.fy * depth, depth])
        return self.pose.rotation.T @ pc + self.pose.center

    def pixel_rays(self, us, vs) -> np.ndarray:
        """World-space (unnormalized) ray directions through pixel coordinates."""
        k = self.intrinsics
        us, vs = np.broadcast_arrays(np.asarray(us, float), np.asarray(vs, float))
        pc = np.stack([(us - k.cx) / k.fx, (vs - k.cy) / k.fy, np.ones_like(us)], axis=-1)
        return pc @ self.pose.rotation


def look_at(center, target, up=(0.0, 0.0, 1.0)) -> Pose:
    """Pose at ``center`` whose optical axis points at ``target``."""
    center = np.asarray(center, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - center
    fwd /= np.linalg.norm(fwd)
    up = np.asarray(up, dtype=np.float64)
    right = np.cross(fwd, up)
    if np.linalg.norm(right) < 1e-9:
        right = np.cross(fwd, [1.0, 0.0, 0.0] if abs(fwd[0]) < 0.9 else [0.0, 1.0, 0.0])
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    return Pose(np.stack([right, down, fwd]), center)


def project(camera: Camera, point) -> tuple[float, float] | None:
    uv, ok = camera.project_many(np.asarray(point, dtype=np.float64)[None])
    if not ok[0]:
        return None
    return float(uv[0, 0]), float(uv[0, 1])


def in_image(intrinsics: Intrinsics, p) -> bool:
    return bool(in_image_many(intrinsics, np.asarray(p, dtype=np.float64)[None])[0])


def in_image_many(intrinsics: Intrinsics, uv: np.ndarray) -> np.ndarray:
    u, v = uv[:, 0], uv[:, 1]
    with np.errstate(invalid="ignore"):
        return (u >= 0) & (u < intrinsics.width) & (v >= 0) & (v < intrinsics.height)


def vertex_visibility(camera: Camera, bvh: Bvh) -> tuple[np.ndarray, np.ndarray]:
    """Per-vertex (in image, unoccluded) masks. Occlusion ignores faces incident
    to the vertex itself and is only evaluated for vertices that project in-image."""
    mesh = bvh.mesh
    uv, ok = camera.project_many(mesh.vertices)
    inside = ok & in_image_many(camera.intrinsics, uv)
    clear = np.zeros(mesh.n_vertices, dtype=bool)
    idx = np.flatnonzero(inside)
    if idx.size:
        clear[idx] = ~bvh.occluded(camera.center, mesh.vertices[idx], exclude_vertex=idx)
    return inside, clear


def visible_faces(camera: Camera, bvh: Bvh) -> np.ndarray:
    """Boolean mask over faces: every vertex in image and unoccluded, and the face
    front-facing toward the camera."""
    mesh = bvh.mesh
    inside, clear = vertex_visibility(camera, bvh)
    good = inside & clear
    to_cam = camera.center - mesh.face_barycenters()
    front = np.einsum("ij,ij->i", mesh.face_normals, to_cam) > 0
    return front & good[mesh.faces].all(axis=1)


def facet_visible(camera: Camera, bvh: Bvh, face: int) -> bool:
    mesh: TriangleMesh = bvh.mesh
    face = mesh._check_face(face)
    if np.dot(mesh.face_normals[face], camera.center - mesh.face_barycenter(face)) <= 0:
        return False
    verts = mesh.faces[face]
    uv, ok = camera.project_many(mesh.vertices[verts])
    if not (ok.all() and in_image_many(camera.intrinsics, uv).all()):
        return False
    occ = bvh.occluded(camera.center, mesh.vertices[verts], exclude_vertex=verts)
    return not occ.any()


# --------------------------------------------------------------------------
# JSON camera files

_FIELDS = ("id", "width", "height", "fx", "fy", "cx", "cy", "rotation", "center")
_DISTORTION = ("k1", "k2", "k3", "p1", "p2", "distortion", "dist_coeffs")


def camera_to_dict(cam: Camera) -> dict:
    k = cam.intrinsics
    return {
        "id": cam.id,
        "width": int(k.width),
        "height": int(k.height),
        "fx": float(k.fx),
        "fy": float(k.fy),
        "cx": float(k.cx),
        "cy": float(k.cy),
        "rotation": [float(x) for x in cam.pose.rotation.ravel()],
        "center": [float(x) for x in cam.pose.center],
    }


def camera_from_dict(d: dict, where: str = "camera") -> Camera:
    if not isinstance(d, dict):
        raise CameraFileError(f"{where}: expected an object")
    for key in _DISTORTION:
        if key in d and d[key] not in (None, 0, [], 0.0) and any(np.ravel(d[key])):
            raise CameraFileError(f"{where}: field '{key}': lens distortion is not supported")
    for key in _FIELDS:
        if key not in d:
            raise CameraFileError(f"{where}: missing field '{key}'")
    try:
        rot = np.array(d["rotation"], dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise CameraFileError(f"{where}: field 'rotation': {exc}") from exc
    if rot.size != 9:
        raise CameraFileError(f"{where}: field 'rotation' must hold 9 numbers")
    try:
        center = np.array(d["center"], dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise CameraFileError(f"{where}: field 'center': {exc}") from exc
    if center.size != 3:
        raise CameraFileError(f"{where}: field 'center' must hold 3 numbers")
    for key in ("width", "height", "fx", "fy", "cx", "cy"):
        if isinstance(d[key], bool) or not isinstance(d[key], (int, float)):
            raise CameraFileError(f"{where}: field '{key}' must be a number")
    try:
        intr = Intrinsics(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                          int(d["width"]), int(d["height"]))
    except ValueError as exc:
        raise CameraFileError(f"{where}: field 'fx/fy/cx/cy/width/height': {exc}") from exc
    try:
        pose = Pose(rot.reshape(3, 3), center)
    except ValueError as exc:
        raise CameraFileError(f"{where}: field 'rotation': {exc}") from exc
    return Camera(intr, pose, str(d["id"]))


def load_cameras(path) -> list[Camera]:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise CameraFileError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("cameras"), list):
        raise CameraFileError(f"{path}: field 'cameras' must be a list")
    cams = [camera_from_dict(c, f"{path}: cameras[{i}]") for i, c in enumerate(doc["cameras"])]
    ids = [c.id for c in cams]
    if len(set(ids)) != len(ids):
        raise CameraFileError(f"{path}: field 'id' values must be unique")
    return cams


def save_cameras(cameras, path) -> None:
    doc = {"cameras": [camera_to_dict(c) for c in cameras]}
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")
