import numpy as np
import pytest

from conftest import heap_dijkstra, random_rotation
from dualmesh import shapes
from dualmesh.errors import DisconnectedError, LabelOutOfRangeError
from dualmesh.geodesic import (default_radii, error_colors, evaluate, geodesic_diameter,
                               geodesic_from)
from dualmesh.mesh import Mesh


def test_path_through_middle_vertex():
    # A-B and B-C are unit edges; the apexes P, Q sit far away
    v = [[0, 0, 0], [1, 0, 0], [2, 0, 0], [0.5, 50, 0], [1.5, -50, 0]]
    m = Mesh(v, [[0, 1, 3], [1, 2, 4]])
    d = geodesic_from(m, 0).distances
    assert d[0] == 0.0
    assert d[2] == pytest.approx(2.0)


def test_icosahedron_against_oracle_and_antipode():
    m = shapes.icosahedron()
    edge = np.linalg.norm(m.vertices[m.faces[0, 0]] - m.vertices[m.faces[0, 1]])
    for s in range(12):
        ours = geodesic_from(m, s).distances
        ref = heap_dijkstra(m.vertices, m.edge_index.edges, s)
        assert np.allclose(ours, ref, rtol=0, atol=1e-12)
        antipode = int(np.argmin(m.vertices @ m.vertices[s]))
        assert ours[antipode] == pytest.approx(3 * edge)
    assert geodesic_diameter(m) == pytest.approx(3 * edge)


def test_oracle_on_torus(rng):
    m = shapes.torus(9, 6)
    for s in rng.integers(0, m.n_vertices, 5):
        assert np.allclose(geodesic_from(m, int(s)).distances,
                           heap_dijkstra(m.vertices, m.edge_index.edges, int(s)), atol=1e-12)


def test_sampled_diameter_close_to_exact():
    m = shapes.fibonacci_sphere(2000)
    exact = geodesic_diameter(m, exact=True)
    sampled = geodesic_diameter(m, exact=False)
    assert sampled <= exact + 1e-12
    assert (exact - sampled) / exact <= 0.02


def test_disconnected_raises():
    v = [[0, 0, 0], [1, 0, 0], [0, 1, 0], [5, 0, 0], [6, 0, 0], [5, 1, 0]]
    m = Mesh(v, [[0, 1, 2], [3, 4, 5]])
    with pytest.raises(DisconnectedError) as info:
        geodesic_from(m, 0)
    assert info.value.unreachable == [3, 4, 5]


def test_metric_fixtures():
    m = shapes.icosahedron()
    edge = geodesic_diameter(m) / 3
    gt = np.arange(12)
    perfect = evaluate(gt, gt, m)
    assert perfect.accuracy == 1.0 and perfect.mean_geodesic_error == 0.0
    assert np.all(perfect.curve == 1.0)
    # every prediction is a one-ring neighbor: error exactly one edge
    nbrs = m.vertex_neighbors
    pred = np.array([min(nbrs[i]) for i in range(12)])
    r = evaluate(pred, gt, m, radii=[0.0, 0.5 * edge, edge, 2 * edge])
    assert r.accuracy == 0.0
    assert r.mean_geodesic_error == pytest.approx(100 / 3)
    assert r.curve.tolist() == [0.0, 0.0, 1.0, 1.0]


def test_unlabeled_entries_skipped():
    m = shapes.icosahedron()
    gt = np.arange(12)
    gt[5:] = -1
    pred = np.arange(12)
    pred[5:] = 0
    r = evaluate(pred, gt, m)
    assert r.n_evaluated == 5 and r.accuracy == 1.0
    assert np.all(np.isnan(r.errors[5:]))
    with pytest.raises(LabelOutOfRangeError):
        evaluate(np.full(12, 12), np.arange(12), m)


def test_metrics_rigid_invariant_and_curve_properties(rng):
    m = shapes.icosphere(2)
    gt = np.arange(m.n_vertices)
    pred = rng.integers(0, m.n_vertices, m.n_vertices)
    a = evaluate(pred, gt, m)
    moved = m.transformed(rotation=random_rotation(rng), translation=[3, -1, 2])
    # thresholds placed between distinct error values, so rounding cannot flip a count
    e = np.unique(np.round(a.errors, 9))
    radii = (e[:-1] + e[1:]) / 2
    a2, b = evaluate(pred, gt, m, radii=radii), evaluate(pred, gt, moved, radii=radii)
    assert a.accuracy == b.accuracy
    assert a.mean_geodesic_error == pytest.approx(b.mean_geodesic_error, rel=1e-10)
    assert np.array_equal(a2.curve, b.curve)
    assert np.all(np.diff(a.curve) >= 0)
    assert a.fraction_within(a.diameter) == 1.0
    assert np.allclose(a.radii, default_radii(a.diameter))
    assert a.radii_norm200[-1] == pytest.approx(60.0)


def test_error_is_symmetric():
    m = shapes.torus(8, 6)
    i, j = 3, 40
    assert evaluate([j], [i], m, diameter=1.0).errors[0] == pytest.approx(
        evaluate([i], [j], m, diameter=1.0).errors[0])


def test_error_colors():
    rgb = error_colors(np.array([0.0, 0.5, 1.0, np.nan]), 1.0)
    assert rgb[0].tolist() == [1, 1, 1]
    assert rgb[2].tolist() == [1, 0, 0]
    assert rgb[3].tolist() == [0.5, 0.5, 0.5]
