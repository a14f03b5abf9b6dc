import math

import numpy as np
import pytest

from nbvplan.camera import Camera, Intrinsics, look_at
from nbvplan.photo import PriAccumulator, ViewSet, sample_patches, usable_faces
from nbvplan.simulator import (LoopConfig, Perturbation, Renderer, RingSpec, SceneSpec, ValueNoise,
                               box, candidate_ring, checker, closed_loop, demo_scene, icosphere,
                               perturb, plane_grid, render)


def test_primitives():
    assert icosphere(3).n_faces == 1280
    assert plane_grid(3, 2).n_faces == 12
    b = box(divisions=2)
    assert b.n_faces == 6 * 2 * 4
    # closed box: outward normals
    assert np.all(np.einsum("ij,ij->i", b.face_normals, b.face_barycenters()) > 0)


def test_camera_facing_nothing_is_black():
    spec = SceneSpec(width=64, height=48)
    cam = Camera(spec.intrinsics(), look_at([0, 0, 5], [0, 0, 10]))
    assert not render(spec, cam).pixels.any()


def test_checker_plane_head_on():
    scale, d = 0.25, 2.0
    spec = SceneSpec(mesh={"primitive": "plane", "nx": 4, "ny": 4, "size": 4.0},
                     texture={"kind": "checker", "scale": scale}, light_direction=(0, 0, 1),
                     width=120, height=120, fov_deg=60, supersample=2)
    cam = Camera(spec.intrinsics(), look_at([0.01, 0.02, d], [0.01, 0.02, 0], up=(0, 1, 0)))
    img = render(spec, cam).pixels
    k = cam.intrinsics
    px_per_cell = scale * k.fx / d
    checked = 0
    for v in range(k.height):
        for u in range(k.width):
            p = cam.back_project(u, v, d)
            cell = p[:2] / scale
            # skip pixels whose footprint straddles a cell boundary
            if np.min(np.abs(cell - np.round(cell))) * px_per_cell < 1.0:
                continue
            expect = round(float(checker(p[None], scale)[0]) * 255) / 255
            assert img[v, u] == expect
            checked += 1
    assert checked > 0.5 * img.size


def test_render_deterministic(demo):
    again = demo.renderer.render(demo.cams[0])
    np.testing.assert_array_equal(again.pixels, demo.images[0].pixels)
    fresh = Renderer(demo.spec).render(demo.cams[0])
    np.testing.assert_array_equal(fresh.pixels, demo.images[0].pixels)


def test_value_noise_range_and_seed():
    pts = np.random.default_rng(0).uniform(-3, 3, (2000, 3))
    a = ValueNoise(0.2, seed=1)(pts)
    assert a.min() >= 0.1 and a.max() <= 0.9
    np.testing.assert_array_equal(a, ValueNoise(0.2, seed=1)(pts))
    assert not np.array_equal(a, ValueNoise(0.2, seed=2)(pts))


def test_perturb_examples():
    m = icosphere(2)
    center = m.vertices[10]
    same = perturb(m, Perturbation(tuple(center), 0.3, 0.0))
    np.testing.assert_array_equal(same.vertices, m.vertices)
    p = perturb(m, Perturbation(tuple(center), 0.3, 0.05))
    normal = m.vertex_normals()[10]
    np.testing.assert_allclose(p.vertices[10], center + 0.05 * normal, atol=1e-15)
    far = np.linalg.norm(m.vertices - center, axis=1) >= 0.3
    assert far.sum() > 0
    assert np.array_equal(p.vertices[far], m.vertices[far])
    np.testing.assert_array_equal(p.faces, m.faces)
    moved = np.linalg.norm(p.vertices - m.vertices, axis=1)
    assert np.all(moved <= 0.05 + 1e-15)


def test_perturbation_needs_radius():
    with pytest.raises(ValueError):
        Perturbation((0, 0, 0), 0.0, 0.1)


def test_candidate_ring_examples():
    ring = candidate_ring([0, 0, 0], 2.0, 4, 0.0)
    az = [round(math.degrees(math.atan2(c.camera.center[1], c.camera.center[0]))) % 360 for c in ring]
    assert az == [0, 90, 180, 270]
    ring = candidate_ring([1, -2, 0.5], 3.0, 48, 20.0)
    assert len(ring) == 48 and ring[0].id == "cand_000" and ring[47].id == "cand_047"
    for c in ring:
        r = c.camera.pose.rotation
        assert np.abs(r @ r.T - np.eye(3)).max() < 1e-9
        to_center = np.array([1, -2, 0.5]) - c.camera.center
        np.testing.assert_allclose(c.camera.pose.forward, to_center / np.linalg.norm(to_center), atol=1e-9)
        assert c.camera.intrinsics == ring[0].camera.intrinsics
    with pytest.raises(ValueError):
        candidate_ring([0, 0, 0], 1.0, 0)


def test_scene_from_dict():
    spec = SceneSpec.from_dict({
        "mesh": {"primitive": "box", "divisions": 2},
        "texture": {"kind": "checker", "scale": 0.3},
        "light": {"direction": [0, 0, 1], "ambient": 0.5},
        "camera": {"width": 32, "height": 24, "fov_deg": 40},
        "views": {"count": 4, "elevation_deg": 15},
        "perturbations": [{"center": [0.5, 0, 0], "radius": 0.2, "amplitude": 0.02}],
    })
    assert spec.build_mesh().n_faces == 48
    assert spec.ambient == 0.5 and spec.width == 32
    assert spec.views.count == 4 and spec.views.elevations_deg == (15.0,)
    assert len(spec.perturbations) == 1
    with pytest.raises(ValueError, match="unknown scene keys"):
        SceneSpec.from_dict({"lights": {}})
    with pytest.raises(ValueError):
        SceneSpec(ambient=1.5)
    with pytest.raises(ValueError):
        SceneSpec(texture={"kind": "checker", "scale": 0})


def test_demo_scene_cap_geometry(demo):
    cap = demo.cap
    _, r = demo.truth.bounding_sphere()
    assert cap.radius == pytest.approx(0.15 * r) and cap.amplitude == pytest.approx(0.03 * r)
    assert math.degrees(math.atan2(cap.center[1], cap.center[0])) == pytest.approx(90, abs=6)
    assert 10 <= demo.in_cap.sum() <= 20


def test_same_surface_same_patches_low_frequency():
    spec = SceneSpec(texture={"kind": "value_noise", "scale": 0.5, "seed": 4})
    truth = spec.build_mesh()
    r = Renderer(spec, truth)
    c, _ = truth.bounding_sphere()
    cams = [p.camera for p in spec.ring(spec.views, c)][:2]
    vis = usable_faces(cams[0], r.bvh, 60) & usable_faces(cams[1], r.bvh, 60)
    faces = np.flatnonzero(vis)
    assert len(faces) > 20
    a = sample_patches(r.render(cams[0]), cams[0], truth, faces)
    b = sample_patches(r.render(cams[1]), cams[1], truth, faces)
    assert np.abs(a - b).max() < 0.05


@pytest.mark.parametrize("metric", ["ssd", "ncc"])
def test_perturbation_locality(demo, metric):
    views = ViewSet(demo.cams, demo.images)
    base, _, d0 = PriAccumulator(demo.truth_bvh, metric).add_views(views).values()
    pert, _, d1 = PriAccumulator(demo.recon_bvh, metric).add_views(views).values()
    bc = demo.truth.face_barycenters()
    far = np.linalg.norm(bc - np.array(demo.cap.center), axis=1) > 2 * demo.cap.radius
    both = far & d0 & d1
    assert both.sum() > 100
    assert np.abs(pert[both] - base[both]).max() < 0.05


def test_closed_loop_unperturbed_ncc():
    res = closed_loop(SceneSpec(), 3, 1, LoopConfig(metric="ncc"))
    assert res.log[0]["min_pri"] > 0.9


def test_closed_loop_first_pick_faces_cap():
    spec = demo_scene()
    res = closed_loop(spec, 3, 1, LoopConfig(undefined="last"))
    c = np.array(res.log[0]["winner_center"])
    az = math.degrees(math.atan2(c[1], c[0]))
    cap_az = math.degrees(math.atan2(spec.perturbations[0].center[1], spec.perturbations[0].center[0]))
    assert abs((az - cap_az + 180) % 360 - 180) <= 30


def test_closed_loop_deterministic_and_stops():
    spec = demo_scene(candidates=RingSpec(count=2, elevations_deg=(10.0,)))
    a = closed_loop(spec, 3, 4)
    b = closed_loop(spec, 3, 4)
    assert a.log == b.log
    assert [r.get("stopped") for r in a.log] == [None, None, "candidate pool exhausted"]
    assert len(a.views) == 5


def test_closed_loop_preconditions():
    with pytest.raises(ValueError):
        closed_loop(SceneSpec(), 3, 0)
    with pytest.raises(ValueError):
        closed_loop(SceneSpec(), 7, 1)
