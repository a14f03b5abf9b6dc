import math

import numpy as np
import pytest

from nbvplan.bvh import build_bvh
from nbvplan.camera import Camera, Intrinsics, look_at
from nbvplan.energy import (CandidatePose, EnergyParams, EnergyWeights, Scene, bessel_i0, combine,
                            energy_report, focus_term, incidence_term, nbv_score, occlusion_term,
                            parallax_term, select_best, total_energy, vertex_energy, von_mises_logpdf)
from nbvplan.mesh import TriangleMesh
from nbvplan.photo import PriReport
from nbvplan.simulator import plane_grid

INTR = Intrinsics(300, 300, 150, 150, 300, 300)
P = EnergyParams()
W = EnergyWeights()

I0_1 = 1.2660658777520083  # I0(1), 17 significant digits


def trapezoid(y, x):
    return float(np.sum((y[1:] + y[:-1]) * np.diff(x)) / 2)


def quad_i0(k, n=200001):
    th = np.linspace(0, np.pi, n)
    return trapezoid(np.exp(k * np.cos(th)), th) / np.pi


def cam_at(center, target, cid="c"):
    return Camera(INTR, look_at(center, target), cid)


# --------------------------------------------------------------------------
# terms


def test_occlusion_values():
    plane = plane_grid(2, 2, 2.0)
    v = 4  # the centre vertex
    assert np.allclose(plane.vertices[v], 0)
    bvh = build_bvh(plane)
    assert occlusion_term(cam_at([0.3, 0.2, 3], [0, 0, 0]), bvh, v) == 1.0
    # from below the plane's own faces are excluded, so only a real blocker counts
    blocker = TriangleMesh.from_arrays(
        np.vstack([plane.vertices, [[-1, -1, 1.5], [1, -1, 1.5], [0, 1, 1.5]]]),
        np.vstack([plane.faces, [[9, 10, 11]]]))
    assert occlusion_term(cam_at([0, 0, 3], [0, 0, 0]), build_bvh(blocker), v) == -10.0
    behind = Camera(INTR, look_at([0, 0, 3], [0, 0, 6]))
    assert occlusion_term(behind, bvh, v) == -10.0


def test_focus_values():
    cam = Camera(INTR, look_at([0, 0, -5], [0, 0, 0], up=(0, 1, 0)))
    assert focus_term(cam, cam.back_project(150, 150, 5.0)) == pytest.approx(0.0, abs=1e-24)
    assert focus_term(cam, cam.back_project(250, 150, 5.0)) == pytest.approx(-0.5, abs=1e-12)
    assert focus_term(cam, cam.back_project(150, 250, 5.0)) == pytest.approx(-0.5, abs=1e-12)
    assert focus_term(cam, cam.back_project(310, 150, 5.0)) == -10.0
    assert focus_term(cam, [0, 0, -10]) == -10.0


def test_focus_exact_at_center():
    cam = Camera(INTR, look_at([0, 0, 5], [0, 0, 0], up=(0, 1, 0)))
    assert focus_term(cam, [0, 0, 0]) == 0.0


@pytest.mark.parametrize("base, expected", [(0.5, 1.0), (0.2, -10.0), (0.33, -10.0), (0.3300001, 1.0)])
def test_parallax_values(base, expected):
    cand = Camera(INTR, look_at([0, 0, 0], [0, 0, 1]))
    other = Camera(INTR, look_at([base, 0, 0], [0, 0, 1]))
    assert parallax_term(cand, other, [0, 0, 1.0]) == expected


def test_parallax_zero_height():
    cand = Camera(INTR, look_at([0, 0, 0], [0, 0, 1]))
    with pytest.raises(ValueError):
        parallax_term(cand, cand, [0, 0, 0])


def test_bessel_values_and_oracle():
    assert bessel_i0(0) == 1.0
    assert bessel_i0(1) == pytest.approx(I0_1, rel=1e-12)
    for k in (0.5, 1, 4, 8, 16, 30):
        assert abs(bessel_i0(k) - quad_i0(k)) < 1e-9 * max(1.0, bessel_i0(k))
    ks = np.linspace(0, 20, 200)
    vals = [bessel_i0(k) for k in ks]
    assert all(b > a for a, b in zip(vals, vals[1:]))
    with pytest.raises(ValueError):
        bessel_i0(-1)


@pytest.mark.parametrize("kappa", [1, 4, 8, 16])
def test_von_mises_normalized(kappa):
    x = np.linspace(-np.pi, np.pi, 10_000)
    dens = np.exp(von_mises_logpdf(x, math.radians(55), kappa))
    assert abs(trapezoid(dens, x) - 1) < 1e-6


def _facet_and_candidate(x_deg):
    """Unit facet in z=0 (normal +z) and a candidate seen at incidence ``x_deg``
    from the facet barycenter, rotated about the y axis."""
    tri = TriangleMesh.from_arrays([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])
    bc = tri.face_barycenter(0)
    x = math.radians(x_deg)
    center = bc + 4 * np.array([math.sin(x), 0, math.cos(x)])
    return tri, Camera(INTR, look_at(center, bc))


def test_incidence_at_mu():
    tri, cam = _facet_and_candidate(55)
    expect = 8 - math.log(2 * math.pi * bessel_i0(8))
    assert incidence_term(cam, tri, 0, [0]) == pytest.approx(expect, abs=1e-12)


def test_incidence_symmetry_and_minimum():
    for a in (5, 20, 35):
        t1, c1 = _facet_and_candidate(55 + a)
        t2, c2 = _facet_and_candidate(55 - a)
        assert incidence_term(c1, t1, 0, [0]) == pytest.approx(incidence_term(c2, t2, 0, [0]), abs=1e-12)
    mu = math.radians(55)
    xs = np.linspace(-np.pi, np.pi, 1001)
    vals = von_mises_logpdf(xs, mu, 8)
    low = von_mises_logpdf(mu + np.pi, mu, 8)
    assert low == pytest.approx(von_mises_logpdf(mu - np.pi, mu, 8), abs=1e-12)
    assert np.all(vals >= low - 1e-12)
    assert von_mises_logpdf(mu + 0.3 + 2 * np.pi, mu, 8) == pytest.approx(von_mises_logpdf(mu + 0.3, mu, 8))


def test_incidence_averages_faces_and_needs_faces():
    m = plane_grid(2, 2)
    cam = cam_at([0.5, 0.5, 2], [0, 0, 0])
    faces = m.incident_faces(4)
    each = [incidence_term(cam, m, 4, [f]) for f in faces]
    assert incidence_term(cam, m, 4, faces) == pytest.approx(np.mean(each), abs=1e-12)
    with pytest.raises(ValueError):
        incidence_term(cam, m, 4, [])


# --------------------------------------------------------------------------
# scoring


def test_combine_examples():
    i_max = 8 - math.log(2 * math.pi * bessel_i0(8))
    assert combine(W, 1, 0, 1, i_max) == pytest.approx(0.6 + 2.1 + 0.6 * i_max, abs=1e-15)
    assert combine(W, -10, 0, 0, 0) - combine(W, 0, 0, 0, 0) == pytest.approx(-6.0)
    assert combine(EnergyWeights(0, 0, 0, 0), -10, -3, -20, 5) == 0
    assert combine(W, 1, 0, 1, 2.0, "paper_literal") == pytest.approx(0.6 + 2.1 - 1.2)
    with pytest.raises(ValueError):
        combine(W, 1, 0, 1, 2.0, "sideways")


def test_best_case_lone_camera():
    # facet seen at exactly 55 degrees, worst vertex at the image centre, one far-away existing camera
    tri, cand = _facet_and_candidate(55)
    bvh = build_bvh(tri)
    rep = PriReport.from_values(tri, [-1.0], [2], [True], "ssd", 1)
    v = 0
    cand = Camera(INTR, look_at(cand.center, tri.vertices[v]))
    other = cam_at([-5, 0, 2], [0, 0, 0])
    row = vertex_energy(cand, Scene(bvh, [other]), v, rep)
    assert (row.occlusion, row.parallax_sum) == (1.0, 1.0)
    assert row.focus == pytest.approx(0, abs=1e-20)
    x = math.acos(np.dot([0, 0, 1], (cand.center - tri.face_barycenter(0)) / np.linalg.norm(cand.center - tri.face_barycenter(0))))
    assert row.incidence == pytest.approx(von_mises_logpdf(x, math.radians(55), 8), abs=1e-12)


def _plane_scene(n_worst=3):
    mesh = plane_grid(6, 6, 2.0)
    bvh = build_bvh(mesh)
    vals = np.zeros(mesh.n_faces)
    vals[[20, 21, 35][:n_worst]] = -1
    rep = PriReport.from_values(mesh, vals, np.full(mesh.n_faces, 2), np.ones(mesh.n_faces, bool), "ssd", n_worst)
    cams = [cam_at([2, 0, 2], [0, 0, 0], "e0"), cam_at([-2, 0.5, 2], [0, 0, 0], "e1")]
    return mesh, bvh, rep, cams


def _candidates():
    pts = [[0, 0, 2.5], [0.5, 1.5, 2], [-1, -1, 2.2], [1.5, 1.5, 1], [0, -2, 1.5], [0.2, 0.1, 3]]
    return [CandidatePose(cam_at(p, [0, 0, 0], f"k{i}")) for i, p in enumerate(pts)]


def test_total_energy_matches_hand_recomputation():
    mesh, bvh, rep, cams = _plane_scene()
    scene = Scene(bvh, cams)
    verts = sorted(set(mesh.faces[rep.worst_facets].ravel().tolist()))
    assert rep.worst_vertices.tolist() == verts
    for cand in _candidates():
        c = cand.camera
        total = 0.0
        for v in verts:
            p = mesh.vertices[v]
            o = occlusion_term(c, bvh, v)
            f = focus_term(c, p)
            par = sum(parallax_term(c, e, p) for e in cams)
            faces = [g for g in rep.worst_facets if v in mesh.faces[g]]
            i = np.mean([von_mises_logpdf(
                math.acos(np.clip(np.dot(mesh.face_normals[g], (c.center - mesh.face_barycenter(g))
                                         / np.linalg.norm(c.center - mesh.face_barycenter(g))), -1, 1)),
                math.radians(55), 8) for g in faces])
            total += 0.6 * o + 1.6 * f + 2.1 * par + 0.6 * i
        assert total_energy(cand, scene, rep).total == pytest.approx(total, abs=1e-9)


def test_total_is_count_times_score_for_equal_vertices():
    mesh, bvh, rep, cams = _plane_scene(1)
    cand = _candidates()[0]
    e = total_energy(cand, Scene(bvh, cams), rep, EnergyWeights(0, 0, 1, 0))
    assert len(e.per_vertex) == 3
    assert e.total == pytest.approx(3 * e.per_vertex[0].nbv)


def test_shared_vertices_counted_once():
    mesh, bvh, rep, cams = _plane_scene(2)  # faces 20 and 21 share an edge
    e = total_energy(_candidates()[0], Scene(bvh, cams), rep)
    assert len(e.per_vertex) == 4
    assert len({r.vertex for r in e.per_vertex}) == 4


def test_recomposition_and_weight_scaling():
    mesh, bvh, rep, cams = _plane_scene()
    scene = Scene(bvh, cams)
    _, base = select_best(_candidates(), scene, rep)
    for entry in base:
        rows = entry.per_vertex
        for r in rows:
            assert combine(W, r.occlusion, r.focus, r.parallax_sum, r.incidence) == pytest.approx(r.nbv, abs=1e-9)
        assert math.fsum(r.nbv for r in rows) == pytest.approx(entry.total, abs=1e-9)
    for lam in (0.5, 2, 10):
        _, ranking = select_best(_candidates(), scene, rep, W.scaled(lam))
        assert [e.id for e in ranking] == [e.id for e in base]


def test_select_best_examples():
    mesh, bvh, rep, cams = _plane_scene()
    scene = Scene(bvh, cams)
    one = _candidates()[:1]
    assert select_best(one, scene, rep)[0] == "k0"
    # same pose twice: identical scores, the first listed wins
    twins = [CandidatePose(one[0].camera, "a"), CandidatePose(one[0].camera, "b")]
    winner, ranking = select_best(twins, scene, rep)
    assert winner == "a" and [e.rank for e in ranking] == [1, 2]
    with pytest.raises(ValueError):
        select_best([], scene, rep)


def test_occluded_candidate_loses():
    mesh, _, rep, cams = _plane_scene()
    # a plate hanging over the region hides it from straight above only
    plate = np.array([[-3, -3, 1.5], [3, -3, 1.5], [0, 3, 1.5]])
    scene_mesh = TriangleMesh.from_arrays(np.vstack([mesh.vertices, plate]),
                                          np.vstack([mesh.faces, [[mesh.n_vertices + i for i in range(3)]]]))
    top = CandidatePose(cam_at([0, 0, 2.5], [0, 0, 0], "top"))
    side = CandidatePose(cam_at([2.5, 0.3, 0.8], [0, 0, 0], "side"))
    winner, ranking = select_best([top, side], Scene(build_bvh(scene_mesh), cams), rep)
    assert winner == "side"
    assert all(r.occlusion == -10 for r in ranking[1].per_vertex)
    assert all(r.occlusion == 1 for r in ranking[0].per_vertex)


def test_adding_occluder_never_raises_energy():
    mesh, bvh, rep, cams = _plane_scene()
    extra = np.array([[-0.1, -0.1, 1.0], [0.1, -0.1, 1.0], [0.0, 0.1, 1.0]])
    blocked = TriangleMesh.from_arrays(np.vstack([mesh.vertices, extra]),
                                       np.vstack([mesh.faces, [[mesh.n_vertices + i for i in range(3)]]]))
    for cand in _candidates():
        before = total_energy(cand, Scene(bvh, cams), rep).total
        after = total_energy(cand, Scene(build_bvh(blocked), cams), rep).total
        assert after <= before


def test_threads_do_not_change_ranking():
    mesh, bvh, rep, cams = _plane_scene()
    scene = Scene(bvh, cams)
    a = select_best(_candidates(), scene, rep, threads=1)[1]
    b = select_best(_candidates(), scene, rep, threads=4)[1]
    assert [e.to_dict() for e in a] == [e.to_dict() for e in b]


def test_energy_report_layout():
    mesh, bvh, rep, cams = _plane_scene()
    winner, ranking = select_best(_candidates(), Scene(bvh, cams), rep)
    doc = energy_report(winner, ranking, W, P, "reward", len(cams))
    assert doc["winner"] == winner == doc["ranking"][0]["id"]
    assert set(doc["ranking"][0]["per_vertex"][0]) == {"vertex", "O", "F", "Psum", "I", "nbv"}
    assert doc["params"]["existing_cameras"] == 2
    assert doc["weights"] == {"mu1": 0.6, "mu2": 1.6, "mu3": 2.1, "mu4": 0.6}


def test_param_validation():
    for bad in (dict(penalty=1), dict(delta=1.5), dict(mu_angle_deg=95), dict(kappa=0)):
        with pytest.raises(ValueError):
            EnergyParams(**bad)
    with pytest.raises(ValueError):
        EnergyWeights(-1, 0, 0, 0)


def test_nbv_score_is_vertex_nbv():
    mesh, bvh, rep, cams = _plane_scene()
    cand = _candidates()[1]
    v = int(rep.worst_vertices[0])
    assert nbv_score(cand, Scene(bvh, cams), v, rep) == vertex_energy(cand, Scene(bvh, cams), v, rep).nbv
