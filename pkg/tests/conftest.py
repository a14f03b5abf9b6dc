import numpy as np
import pytest

from nbvplan.mesh import TriangleMesh


def random_mesh(rng, n_faces=200, spread=2.0):
    """Triangle soup of small random triangles in a cube."""
    centers = rng.uniform(-spread, spread, (n_faces, 1, 3))
    verts = (centers + rng.normal(scale=0.3, size=(n_faces, 3, 3))).reshape(-1, 3)
    return TriangleMesh.from_arrays(verts, np.arange(3 * n_faces).reshape(-1, 3))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def unit_triangle():
    return TriangleMesh.from_arrays([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])


@pytest.fixture(scope="session")
def demo():
    """Perturbed-cap sphere with the six ring views rendered from the true surface."""
    from types import SimpleNamespace

    from nbvplan.bvh import build_bvh
    from nbvplan.simulator import Renderer, demo_scene

    spec = demo_scene()
    truth = spec.build_mesh()
    renderer = Renderer(spec, truth)
    recon = spec.reconstruction(truth)
    centroid, _ = truth.bounding_sphere()
    cams = [c.camera for c in spec.ring(spec.views, centroid)]
    images = [renderer.render(c) for c in cams]
    cap = spec.perturbations[0]
    dist = np.linalg.norm(truth.vertices - np.array(cap.center), axis=1)
    in_cap = np.any(dist[truth.faces] < cap.radius, axis=1)
    return SimpleNamespace(spec=spec, truth=truth, recon=recon, truth_bvh=renderer.bvh,
                           recon_bvh=build_bvh(recon), cams=cams, images=images, renderer=renderer,
                           centroid=centroid, cap=cap, in_cap=in_cap)
