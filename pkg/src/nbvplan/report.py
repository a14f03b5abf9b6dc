"""Writers for the machine-readable reports and the PRI heat-map mesh."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .mesh import TriangleMesh, save_mesh
from .photo import PriReport

UNDEFINED_COLOR = (128, 128, 128)


def write_json(doc, path) -> None:
    """Indented JSON with a trailing newline; NaN and inf are rejected."""
    Path(path).write_text(json.dumps(doc, indent=2, allow_nan=False) + "\n")


def pri_colors(report: PriReport) -> np.ndarray:
    """Per-face RGB: green at the best PRI of this mesh, red at the worst,
    grey for facets without a defined value."""
    colors = np.tile(np.array(UNDEFINED_COLOR, dtype=np.uint8), (len(report.values), 1))
    d = report.defined
    if not d.any():
        return colors
    v = report.values[d]
    lo, hi = float(v.min()), float(v.max())
    s = np.ones_like(v) if hi == lo else (v - lo) / (hi - lo)  # 1 = best
    rgb = np.stack([255 * (1 - s), 255 * s, np.zeros_like(s)], axis=1)
    colors[d] = np.rint(rgb).astype(np.uint8)
    return colors


def write_pri(report: PriReport, mesh: TriangleMesh, out_dir) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jpath, ppath = out_dir / "pri.json", out_dir / "pri_colored.ply"
    write_json(report.to_dict(), jpath)
    save_mesh(mesh, ppath, "ply", face_colors=pri_colors(report))
    return jpath, ppath


def write_jsonl(records, path) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, allow_nan=False) + "\n")
