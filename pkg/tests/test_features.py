import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_rotation
from dualmesh import shapes
from dualmesh.dual import build_dual
from dualmesh.errors import DegenerateFaceError, EmptySelectionError
from dualmesh.features import (assemble_features, dihedral_angles, dihedral_table,
                               dist_to_center_of_mass, distances_to_center_of_mass, face_area,
                               face_areas, face_centroid, face_centroids, face_normal,
                               face_normals, parse_selection, surface_center_of_mass)
from dualmesh.mesh import Mesh


def tri(*pts):
    return Mesh(np.array(pts, dtype=float), [[0, 1, 2]])


def test_centroid_examples():
    assert np.allclose(face_centroid(tri([0, 0, 0], [1, 0, 0], [0, 1, 0]), 0), [1 / 3, 1 / 3, 0])
    a = np.array([[1, 0, 0], [np.cos(2 * np.pi / 3), np.sin(2 * np.pi / 3), 0],
                  [np.cos(4 * np.pi / 3), np.sin(4 * np.pi / 3), 0]])
    assert np.allclose(face_centroid(tri(*a), 0), 0, atol=1e-15)


def test_normal_and_area_examples():
    m = tri([0, 0, 0], [1, 0, 0], [0, 1, 0])
    assert np.allclose(face_normal(m, 0), [0, 0, 1])
    assert face_area(m, 0) == 0.5
    with pytest.raises(DegenerateFaceError):
        face_normal(tri([0, 0, 0], [1, 0, 0], [2, 0, 0]), 0)


def test_vectorized_matches_scalar():
    m = shapes.torus(6, 5)
    d = build_dual(m)
    for f in range(0, m.n_faces, 7):
        assert np.allclose(face_centroids(m)[f], face_centroid(m, f))
        assert np.allclose(face_normals(m)[f], face_normal(m, f))
        assert np.isclose(face_areas(m)[f], face_area(m, f))
        assert np.isclose(distances_to_center_of_mass(m)[f], dist_to_center_of_mass(m, f))
        assert np.allclose(dihedral_table(m, d)[f], dihedral_angles(m, d, f))


def test_area_matches_half_cross_norm():
    m = shapes.icosphere(1)
    v = m.vertices[m.faces]
    expect = 0.5 * np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1)
    assert np.allclose(face_areas(m), expect, rtol=0, atol=1e-15)
    assert np.allclose(np.linalg.norm(face_normals(m), axis=1), 1.0, atol=1e-9)


def test_tetrahedron_distcm_equal_and_dihedral():
    m = shapes.tetrahedron()
    dist = distances_to_center_of_mass(m)
    assert np.allclose(dist, dist[0])
    # brute force: dot products of analytic outward normals
    n = -m.vertices[[3, 2, 1, 0]] / np.linalg.norm(m.vertices[0])
    assert np.allclose(face_normals(m), n)
    expected = np.arccos(n[0] @ n[1])
    assert np.isclose(expected, np.arccos(-1 / 3))
    assert np.allclose(dihedral_table(m, build_dual(m)), 1.9106332362490186, atol=1e-12)


def test_coplanar_neighbors_have_zero_dihedral():
    m = Mesh([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]], [[0, 1, 2], [2, 1, 3]])
    d = build_dual(m)
    assert np.allclose(dihedral_table(m, d), 0.0)


def test_pad_slot_dihedral_zero():
    t = shapes.tetrahedron()
    m = Mesh(t.vertices, t.faces[:3])
    d = build_dual(m)
    table = dihedral_table(m, d)
    assert np.all(table[d.pad_mask] == 0.0)
    assert np.all(table[~d.pad_mask] > 0.0)


def test_dihedral_symmetric():
    m = shapes.torus(7, 5)
    d = build_dual(m)
    t = dihedral_table(m, d)
    for i in range(m.n_faces):
        for k, j in enumerate(d.neighbors[i]):
            back = list(d.neighbors[j]).index(i)
            assert t[i, k] == pytest.approx(t[j, back], abs=1e-14)
    assert np.all((t >= 0) & (t <= np.pi))


def test_center_of_mass_is_area_weighted():
    m = shapes.icosphere(1).transformed(translation=[1, 2, 3])
    assert np.allclose(surface_center_of_mass(m), [1, 2, 3], atol=1e-12)


@pytest.mark.parametrize("sel, width", [(("xyz",), 3), ("xyz,normal", 6), ("normal+area+distcm", 5)])
def test_assemble_widths(sel, width):
    m = shapes.icosphere(1)
    fi = assemble_features(m, build_dual(m), sel)
    assert fi.node.shape == (m.n_faces, width)
    assert fi.slot is None


def test_assemble_order_and_dihedral_slot():
    m = shapes.icosphere(1)
    d = build_dual(m)
    fi = assemble_features(m, d, ["normal", "dihedral", "xyz"])
    assert fi.channels == ("nx", "ny", "nz", "x", "y", "z")
    assert np.array_equal(fi.node[:, :3], face_normals(m))
    assert np.array_equal(fi.node[:, 3:], face_centroids(m))
    assert fi.slot.shape == (m.n_faces, 3, 1)
    assert np.array_equal(fi.slot[:, :, 0], dihedral_table(m, d))


def test_selection_errors():
    with pytest.raises(EmptySelectionError):
        parse_selection([])
    with pytest.raises(ValueError):
        parse_selection("xyz,colour")


# invariance table: feature -> (translation, rotation, scale)
TABLE = {
    "xyz": (False, False, False),
    "normal": (True, False, True),
    "area": (True, True, False),
    "distcm": (True, True, False),
    "dihedral": (True, True, True),
}


def features_of(m):
    d = build_dual(m)
    return {"xyz": face_centroids(m), "normal": face_normals(m), "area": face_areas(m),
            "distcm": distances_to_center_of_mass(m), "dihedral": dihedral_table(m, d)}


def rel_change(a, b):
    return np.max(np.abs(a - b)) / np.max(np.abs(a))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from([0, 1, 2]))
def test_invariance_table(seed, axis):
    rng = np.random.default_rng(seed)
    base = shapes.icosphere(1)
    m = Mesh(base.vertices + 0.05 * rng.normal(size=base.vertices.shape), base.faces)
    if axis == 0:
        moved = m.transformed(translation=rng.uniform(0.5, 3.0, 3))
    elif axis == 1:
        r = random_rotation(rng)
        while np.arccos(np.clip((np.trace(r) - 1) / 2, -1, 1)) < 0.2:
            r = random_rotation(rng)
        moved = m.transformed(rotation=r)
    else:
        moved = m.transformed(scale=rng.uniform(1.5, 3.0))
    a, b = features_of(m), features_of(moved)
    for name, inv in TABLE.items():
        change = rel_change(a[name], b[name])
        if inv[axis]:
            assert change <= 1e-9, name
        else:
            assert change >= 1e-3, name


def test_scale_laws():
    m = shapes.icosphere(1)
    s = 2.5
    big = m.transformed(scale=s)
    assert np.allclose(face_areas(big), s ** 2 * face_areas(m))
    assert np.allclose(distances_to_center_of_mass(big), s * distances_to_center_of_mass(m))
    r = random_rotation(np.random.default_rng(3))
    assert np.allclose(face_normals(m.transformed(rotation=r)), face_normals(m) @ r.T)
