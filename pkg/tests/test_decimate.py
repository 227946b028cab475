import numpy as np
import pytest

from dualmesh import shapes
from dualmesh.decimate import _EditableMesh, decimate, decimate_traced, edge_length
from dualmesh.errors import TargetUnreachableError, ValidationError
from dualmesh.features import face_areas
from dualmesh.mesh import Mesh, is_watertight


def jittered(level, seed=0, amount=0.02):
    m = shapes.icosphere(level)
    rng = np.random.default_rng(seed)
    return Mesh(m.vertices * (1 + amount * rng.normal(size=(m.n_vertices, 1))), m.faces)


def brute_force_sequence(mesh, fraction):
    """Rescan every edge each step; collapse the shortest legal one."""
    import math

    em = _EditableMesh(mesh)
    target = math.ceil(fraction * mesh.n_faces)
    seq = []
    while em.n_alive - 2 >= target:
        edges = sorted((edge_length(em.pos, a, b), a, b) for a, b in em.edges())
        for length, a, b in edges:
            x, survivor = em.target(a, b)
            if em.is_legal(a, b, x):
                em.collapse(a, b, x, survivor)
                seq.append(((a, b), survivor))
                break
        else:
            raise AssertionError("oracle ran out of legal edges")
    return seq


def test_fraction_one_is_identity():
    m = shapes.icosphere(2)
    out = decimate(m, 1.0)
    assert np.array_equal(out.vertices, m.vertices) and np.array_equal(out.faces, m.faces)


def test_icosphere3_half():
    m = shapes.icosphere(3)
    res = decimate_traced(m, 0.5)
    out = res.mesh
    assert abs(out.n_faces - 640) <= 2
    assert is_watertight(out)
    assert out.euler_characteristic() == 2
    ratio = face_areas(out).sum() / face_areas(m).sum()
    assert abs(ratio - 1) < 0.05
    assert len(res.trace) == (m.n_faces - out.n_faces) // 2


@pytest.mark.parametrize("seed", [0, 1])
def test_trace_matches_brute_force(seed):
    m = jittered(2, seed)
    res = decimate_traced(m, 0.4)
    got = [(c.edge, c.survivor) for c in res.trace]
    assert got == brute_force_sequence(m, 0.4)
    lengths = [c.length for c in res.trace]
    assert all(np.isfinite(lengths))


def test_torus_stays_manifold():
    m = shapes.torus(16, 10)
    out = decimate(m, 0.5)
    assert is_watertight(out)
    assert out.euler_characteristic() == 0


def test_labels_follow_survivors():
    m = jittered(2, 3).with_labels(np.arange(162) * 2)
    res = decimate_traced(m, 0.5)
    kept = np.flatnonzero(res.vertex_map >= 0)
    assert np.array_equal(res.mesh.labels, m.labels[kept])
    removed = {c.edge[0] if c.survivor == c.edge[1] else c.edge[1] for c in res.trace}
    assert removed == set(np.flatnonzero(res.vertex_map < 0).tolist())


def test_survivor_position_recorded():
    res = decimate_traced(jittered(2), 0.8)
    for c in res.trace:
        assert c.survivor in c.edge
    last = res.trace[-1]
    new_index = res.vertex_map[last.survivor]
    assert np.allclose(res.mesh.vertices[new_index], last.position)


def test_errors():
    with pytest.raises(ValueError):
        decimate(shapes.icosphere(1), 0.0)
    with pytest.raises(ValueError):
        decimate(shapes.icosphere(1), 1.5)
    t = shapes.tetrahedron()
    with pytest.raises(ValidationError):
        decimate(Mesh(t.vertices, t.faces[:3]), 0.5)
    with pytest.raises(TargetUnreachableError):
        decimate(shapes.octahedron(), 0.1)
