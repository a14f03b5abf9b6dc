"""Command-line entry point: ``nbvplan {pri,nbv,simulate,render}``.

Exit codes: 0 success, 2 bad input or usage, 1 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from .bvh import build_bvh
from .camera import CameraFileError, load_cameras, save_cameras
from .config import ConfigError, RunConfig, apply_overrides, load_config, parse_weights
from .energy import CandidatePose, Scene, energy_report, select_best
from .image import ImageFormatError, read_image, write_image
from .mesh import MeshFormatError, load_mesh, save_mesh
from .photo import PriAccumulator, PreconditionError
from .report import write_json, write_jsonl, write_pri
from .simulator import LoopConfig, Renderer, SceneSpec, closed_loop, demo_scene

log = logging.getLogger("nbvplan")

IMAGE_SUFFIXES = (".pgm", ".ppm", ".png")
_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "warning": logging.WARNING,
           "info": logging.INFO, "debug": logging.DEBUG}


class InputError(Exception):
    """Bad user input; reported without a traceback and mapped to exit code 2."""


_INPUT_ERRORS = (InputError, ConfigError, CameraFileError, MeshFormatError, ImageFormatError,
                 PreconditionError, FileNotFoundError, IsADirectoryError, json.JSONDecodeError)


# --------------------------------------------------------------------------
# shared helpers


def _run_config(args) -> RunConfig:
    cfg = load_config(args.config)
    return apply_overrides(
        cfg, metric=args.metric, K=args.k,
        weights=parse_weights(args.weights) if args.weights else None,
        kappa=args.kappa, delta=args.delta, penalty=args.penalty,
        incidence_sign=args.incidence_sign, seed=args.seed, threads=args.threads,
        max_incidence_deg=args.max_incidence, undefined=args.undefined)


def _find_image(images_dir: Path, cam_id: str) -> Path:
    for suffix in IMAGE_SUFFIXES:
        p = images_dir / f"{cam_id}{suffix}"
        if p.is_file():
            return p
    raise InputError(f"no image for camera id '{cam_id}' in {images_dir}")


def _pri_accumulator(args, cfg: RunConfig):
    mesh = load_mesh(args.mesh)
    cameras = load_cameras(args.cameras)
    images_dir = Path(args.images)
    if not images_dir.is_dir():
        raise InputError(f"images directory not found: {images_dir}")
    bvh = build_bvh(mesh)
    acc = PriAccumulator(bvh, cfg.metric, cfg.patch_subdivision, cfg.max_incidence_deg, cfg.undefined)
    for cam in cameras:
        acc.add_view(cam, read_image(_find_image(images_dir, cam.id)))
    return mesh, bvh, cameras, acc


def _load_scene(path, seed: int) -> SceneSpec:
    """Scene file, or the built-in cap demo; a texture without its own seed takes the run seed."""
    if path is None:
        spec = demo_scene()
        return replace(spec, texture={**spec.texture, "seed": seed})
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise InputError(f"{path}: expected a JSON object")
    tex = dict(doc.get("texture", SceneSpec().texture))
    tex.setdefault("seed", seed)
    doc["texture"] = tex
    try:
        return SceneSpec.from_dict(doc)
    except (TypeError, ValueError, KeyError) as exc:
        raise InputError(f"{path}: {exc}") from exc


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --------------------------------------------------------------------------
# commands


def cmd_pri(args) -> int:
    cfg = _run_config(args)
    mesh, _, _, acc = _pri_accumulator(args, cfg)
    report = acc.report(cfg.K)
    if not report.defined.any():
        log.warning("no facet is seen by two or more views; every PRI is undefined")
    jpath, ppath = write_pri(report, mesh, _out_dir(args))
    log.info("wrote %s and %s", jpath, ppath)
    return 0


def cmd_nbv(args) -> int:
    cfg = _run_config(args)
    mesh, bvh, cameras, acc = _pri_accumulator(args, cfg)
    candidates = load_cameras(args.candidates)
    if not candidates:
        raise InputError(f"{args.candidates}: no candidate poses")
    report = acc.report(cfg.K)
    winner, ranking = select_best([CandidatePose(c) for c in candidates], Scene(bvh, cameras), report,
                                  cfg.weights, cfg.params, cfg.incidence_sign, cfg.threads)
    doc = energy_report(winner, ranking, cfg.weights, cfg.params, cfg.incidence_sign, len(cameras))
    doc["worst_facets"] = [int(f) for f in report.worst_facets]
    write_json(doc, _out_dir(args) / "nbv.json")
    print(winner)
    return 0


def cmd_simulate(args) -> int:
    cfg = _run_config(args)
    if args.iterations < 1:
        raise InputError("--iterations must be >= 1")
    if args.initial_views < 1:
        raise InputError("--initial-views must be >= 1")
    spec = _load_scene(args.scene, cfg.seed)
    out = _out_dir(args)
    loop_cfg = LoopConfig(cfg.metric, cfg.K, cfg.patch_subdivision, cfg.max_incidence_deg, cfg.undefined,
                          cfg.weights, cfg.params, cfg.incidence_sign, cfg.threads)
    try:
        result = closed_loop(spec, args.initial_views, args.iterations, loop_cfg,
                             on_record=lambda r: log.info("iteration %s: %s", r["iteration"],
                                                          r.get("winner", r.get("stopped"))))
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    images = out / "images"
    images.mkdir(exist_ok=True)
    for cam in result.views:
        write_image(result.images[cam.id], images / f"{cam.id}.pgm")
    save_cameras(result.views, out / "cameras.json")
    save_cameras([c.camera for c in result.candidates], out / "candidates.json")
    save_mesh(result.reconstruction, out / "mesh.ply", "ply")
    save_mesh(result.truth, out / "truth.ply", "ply")
    write_jsonl(result.log, out / "log.jsonl")
    return 0


def cmd_render(args) -> int:
    spec = _load_scene(args.scene, args.seed if args.seed is not None else 0)
    if args.cameras:
        pool = load_cameras(args.cameras)
    else:
        mesh = spec.build_mesh()
        centroid, _ = mesh.bounding_sphere()
        pool = [c.camera for c in spec.ring(spec.views, centroid) + spec.ring(spec.candidates, centroid)]
    cam = next((c for c in pool if c.id == args.camera_id), None)
    if cam is None:
        raise InputError(f"unknown camera id '{args.camera_id}'")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_image(Renderer(spec).render(cam), out)
    return 0


# --------------------------------------------------------------------------
# argument parsing


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML (or .json) run configuration")
    p.add_argument("--metric", choices=("ssd", "ncc"))
    p.add_argument("--k", type=int, help="number of worst facets to target")
    p.add_argument("--weights", help="m1,m2,m3,m4 term weights")
    p.add_argument("--kappa", type=float, help="von Mises concentration")
    p.add_argument("--delta", type=float, help="base-to-height threshold")
    p.add_argument("--penalty", type=float, help="hard-constraint penalty (negative)")
    p.add_argument("--incidence-sign", choices=("reward", "paper_literal"))
    p.add_argument("--max-incidence", type=float, help="grazing cutoff in degrees for PRI views")
    p.add_argument("--undefined", choices=("first", "last"),
                   help="rank facets seen by fewer than two views first or last")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--out-dir", default=".")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nbvplan", description="Photo-consistency driven next-best-view planning.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pri", help="per-facet photo-consistency report and heat-map mesh")
    p.add_argument("--mesh", required=True)
    p.add_argument("--cameras", required=True)
    p.add_argument("--images", required=True)
    _add_run_flags(p)
    p.set_defaults(func=cmd_pri)

    p = sub.add_parser("nbv", help="score candidate poses and pick the next view")
    p.add_argument("--mesh", required=True)
    p.add_argument("--cameras", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--candidates", required=True)
    _add_run_flags(p)
    p.set_defaults(func=cmd_nbv)

    p = sub.add_parser("simulate", help="closed-loop run on a synthetic scene")
    p.add_argument("--scene", help="scene JSON (default: built-in perturbed-cap sphere)")
    p.add_argument("--iterations", type=int, default=5)
    p.add_argument("--initial-views", type=int, default=3)
    _add_run_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("render", help="render one view of a synthetic scene")
    p.add_argument("--scene")
    p.add_argument("--camera-id", required=True)
    p.add_argument("--cameras", help="camera JSON to pick the id from (default: the scene's rings)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)
    return parser


def _setup_logging() -> None:
    level = os.environ.get("NBV_LOG", "warn").lower()
    logging.basicConfig(level=_LEVELS.get(level, logging.WARNING), format="%(levelname)s: %(message)s",
                        stream=sys.stderr)


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception:
        log.exception("internal error")
        return 1


if __name__ == "__main__":
    sys.exit(main())
