"""Triangle mesh storage, normals and OBJ/PLY input/output."""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

MIN_FACE_AREA = 1e-12


class MeshFormatError(ValueError):
    """Raised when a mesh file cannot be parsed."""


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """Indexed triangle surface.

    ``vertices`` is an (N, 3) float64 array, ``faces`` an (M, 3) int64 array of
    vertex indices. Face normals follow the right-hand rule on vertex order.
    Use :meth:`from_arrays` to build one; it validates and drops degenerate faces.
    """

    vertices: np.ndarray
    faces: np.ndarray
    face_normals: np.ndarray
    dropped_faces: int = 0
    _incident: tuple = field(default=None, repr=False)

    @classmethod
    def from_arrays(cls, vertices, faces, *, allow_empty: bool = False) -> "TriangleMesh":
        verts = np.array(vertices, dtype=np.float64).reshape(-1, 3)
        tris = np.array(faces, dtype=np.int64).reshape(-1, 3)
        if not np.all(np.isfinite(verts)):
            raise ValueError("mesh vertices must be finite")
        if tris.size and (tris.min() < 0 or tris.max() >= len(verts)):
            raise ValueError("face index out of range")

        cross = _face_cross(verts, tris)
        area = 0.5 * np.linalg.norm(cross, axis=1)
        keep = area > MIN_FACE_AREA
        dropped = int(np.count_nonzero(~keep))
        if dropped:
            log.warning("dropped %d degenerate face(s)", dropped)
        tris = tris[keep]
        cross = cross[keep]
        if len(tris) == 0 and not allow_empty:
            raise ValueError("mesh has no faces")
        normals = cross / np.linalg.norm(cross, axis=1, keepdims=True) if len(tris) else cross

        verts.setflags(write=False)
        tris.setflags(write=False)
        normals.setflags(write=False)
        return cls(verts, tris, normals, dropped)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def face_normal(self, face: int) -> np.ndarray:
        return self.face_normals[self._check_face(face)].copy()

    def face_barycenter(self, face: int) -> np.ndarray:
        return self.vertices[self.faces[self._check_face(face)]].mean(axis=0)

    def face_barycenters(self) -> np.ndarray:
        return self.vertices[self.faces].mean(axis=1)

    def face_areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(_face_cross(self.vertices, self.faces), axis=1)

    def vertex_normals(self) -> np.ndarray:
        """Area-weighted vertex normals (unit length; zero for isolated vertices)."""
        acc = np.zeros_like(self.vertices)
        cross = _face_cross(self.vertices, self.faces)
        for k in range(3):
            np.add.at(acc, self.faces[:, k], cross)
        norm = np.linalg.norm(acc, axis=1, keepdims=True)
        return np.divide(acc, norm, out=np.zeros_like(acc), where=norm > 0)

    def incident_faces(self, vertex: int) -> np.ndarray:
        """Indices of faces that use ``vertex``, ascending."""
        offsets, flat = self._incidence()
        return flat[offsets[vertex]:offsets[vertex + 1]].copy()

    def _incidence(self):
        if self._incident is None:
            owner = self.faces.ravel()
            face_ids = np.repeat(np.arange(self.n_faces), 3)
            order = np.lexsort((face_ids, owner))
            counts = np.bincount(owner, minlength=self.n_vertices)
            offsets = np.concatenate([[0], np.cumsum(counts)])
            object.__setattr__(self, "_incident", (offsets, face_ids[order]))
        return self._incident

    def bounding_sphere(self) -> tuple[np.ndarray, float]:
        """Centroid of the vertices and the largest distance from it."""
        c = self.vertices.mean(axis=0)
        return c, float(np.linalg.norm(self.vertices - c, axis=1).max())

    def with_vertices(self, vertices) -> "TriangleMesh":
        return TriangleMesh.from_arrays(vertices, self.faces)

    def _check_face(self, face: int) -> int:
        if not 0 <= face < self.n_faces:
            raise IndexError(f"face {face} out of range (mesh has {self.n_faces})")
        return int(face)


def _face_cross(verts: np.ndarray, tris: np.ndarray) -> np.ndarray:
    a, b, c = verts[tris[:, 0]], verts[tris[:, 1]], verts[tris[:, 2]]
    return np.cross(b - a, c - a)


def face_normal(mesh: TriangleMesh, face: int) -> np.ndarray:
    return mesh.face_normal(face)


def face_barycenter(mesh: TriangleMesh, face: int) -> np.ndarray:
    return mesh.face_barycenter(face)


# --------------------------------------------------------------------------
# file formats


def load_mesh(path, format: str | None = None) -> TriangleMesh:
    path = Path(path)
    fmt = (format or path.suffix.lstrip(".")).lower()
    data = path.read_bytes()
    if fmt == "obj":
        verts, faces = _parse_obj(data.decode("utf-8", errors="replace"))
    elif fmt == "ply":
        verts, faces = _parse_ply(data)
    else:
        raise MeshFormatError(f"unsupported mesh format {fmt!r}")
    if not faces:
        raise MeshFormatError(f"{path}: mesh has no faces")
    try:
        return TriangleMesh.from_arrays(verts, faces)
    except ValueError as exc:
        raise MeshFormatError(f"{path}: {exc}") from exc


def save_mesh(mesh: TriangleMesh, path, format: str | None = None, face_colors=None) -> None:
    """Write OBJ, or ASCII PLY (optionally with per-face uchar RGB colors)."""
    path = Path(path)
    fmt = (format or path.suffix.lstrip(".")).lower()
    if fmt == "obj":
        lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
        lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces.tolist()]
        path.write_text("\n".join(lines) + "\n")
    elif fmt == "ply":
        path.write_text(_ply_ascii(mesh, face_colors))
    else:
        raise MeshFormatError(f"unsupported mesh format {fmt!r}")


def _ply_ascii(mesh: TriangleMesh, face_colors=None) -> str:
    out = [
        "ply",
        "format ascii 1.0",
        f"element vertex {mesh.n_vertices}",
        "property double x",
        "property double y",
        "property double z",
        f"element face {mesh.n_faces}",
        "property list uchar int vertex_indices",
    ]
    if face_colors is not None:
        out += ["property uchar red", "property uchar green", "property uchar blue"]
    out.append("end_header")
    out += [f"{x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    if face_colors is None:
        out += [f"3 {a} {b} {c}" for a, b, c in mesh.faces.tolist()]
    else:
        colors = np.asarray(face_colors, dtype=np.uint8).tolist()
        out += [f"3 {a} {b} {c} {r} {g} {bl}" for (a, b, c), (r, g, bl) in zip(mesh.faces.tolist(), colors)]
    return "\n".join(out) + "\n"


def _fan(poly):
    return [(poly[0], poly[i], poly[i + 1]) for i in range(1, len(poly) - 1)]


def _parse_obj(text: str):
    verts, faces = [], []
    for lineno, line in enumerate(text.splitlines(), 1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        try:
            if parts[0] == "v":
                verts.append([float(p) for p in parts[1:4]])
                if len(verts[-1]) != 3:
                    raise ValueError("vertex needs 3 coordinates")
            elif parts[0] == "f":
                idx = []
                for tok in parts[1:]:
                    i = int(tok.split("/")[0])
                    idx.append(i - 1 if i > 0 else len(verts) + i)
                if len(idx) < 3:
                    raise ValueError("face needs at least 3 vertices")
                faces.extend(_fan(idx))
        except ValueError as exc:
            raise MeshFormatError(f"line {lineno}: {exc}") from exc
    for f in faces:
        if max(f) >= len(verts) or min(f) < 0:
            raise MeshFormatError(f"face {f} references a missing vertex")
    return verts, faces


_PLY_TYPES = {
    "char": "b", "int8": "b", "uchar": "B", "uint8": "B",
    "short": "h", "int16": "h", "ushort": "H", "uint16": "H",
    "int": "i", "int32": "i", "uint": "I", "uint32": "I",
    "float": "f", "float32": "f", "double": "d", "float64": "d",
}


def _parse_ply(data: bytes):
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise MeshFormatError("byte 0: not a PLY file")
    body_start = data.index(b"\n", end) + 1
    header = data[:end].decode("ascii", errors="replace").splitlines()
    fmt = None
    elements = []  # (name, count, [(prop, type, list_count_type or None)])
    for line in header[1:]:
        parts = line.split()
        if not parts or parts[0] in ("comment", "obj_info"):
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            if not elements:
                raise MeshFormatError("property before element")
            if parts[1] == "list":
                elements[-1][2].append((parts[4], parts[3], parts[2]))
            else:
                elements[-1][2].append((parts[2], parts[1], None))
    if fmt not in ("ascii", "binary_little_endian"):
        raise MeshFormatError(f"unsupported PLY format {fmt!r}")

    verts, faces = [], []
    if fmt == "ascii":
        rows = data[body_start:].decode("ascii", errors="replace").split("\n")
        row = 0
        for name, count, props in elements:
            for _ in range(count):
                while row < len(rows) and not rows[row].strip():
                    row += 1
                if row >= len(rows):
                    raise MeshFormatError(f"line {len(header) + 2 + row}: unexpected end of file")
                tokens = rows[row].split()
                try:
                    rec = _ascii_record(tokens, props)
                except (ValueError, IndexError) as exc:
                    raise MeshFormatError(f"line {len(header) + 2 + row}: {exc}") from exc
                _collect(name, rec, verts, faces)
                row += 1
    else:
        off = body_start
        for name, count, props in elements:
            for _ in range(count):
                rec = {}
                try:
                    for prop, typ, cnt_typ in props:
                        if cnt_typ is None:
                            code = "<" + _PLY_TYPES[typ]
                            (rec[prop],) = struct.unpack_from(code, data, off)
                            off += struct.calcsize(code)
                        else:
                            ccode = "<" + _PLY_TYPES[cnt_typ]
                            (n,) = struct.unpack_from(ccode, data, off)
                            off += struct.calcsize(ccode)
                            code = "<%d%s" % (n, _PLY_TYPES[typ])
                            rec[prop] = list(struct.unpack_from(code, data, off))
                            off += struct.calcsize(code)
                except (struct.error, KeyError) as exc:
                    raise MeshFormatError(f"byte {off}: {exc}") from exc
                _collect(name, rec, verts, faces)
    for f in faces:
        if max(f) >= len(verts) or min(f) < 0:
            raise MeshFormatError(f"face {f} references a missing vertex")
    return verts, faces


def _ascii_record(tokens, props):
    rec, i = {}, 0
    for prop, typ, cnt_typ in props:
        if cnt_typ is None:
            rec[prop] = float(tokens[i])
            i += 1
        else:
            n = int(tokens[i])
            rec[prop] = [int(t) for t in tokens[i + 1:i + 1 + n]]
            if len(rec[prop]) != n:
                raise ValueError("truncated list property")
            i += 1 + n
    return rec


def _collect(name, rec, verts, faces):
    if name == "vertex":
        verts.append([float(rec["x"]), float(rec["y"]), float(rec["z"])])
    elif name == "face":
        idx = rec.get("vertex_indices", rec.get("vertex_index"))
        if idx is None or len(idx) < 3:
            raise MeshFormatError("face without vertex_indices")
        faces.extend(_fan([int(i) for i in idx]))
