"""Small procedural meshes used for toy tasks, the self test and the tests."""

import numpy as np

from .mesh import Mesh


def tetrahedron() -> Mesh:
    """Regular tetrahedron inscribed in the unit sphere, outward winding."""
    v = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=np.float64)
    v /= np.sqrt(3.0)
    f = [[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]]
    return Mesh(v, f)


def octahedron() -> Mesh:
    v = [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]]
    f = [[0, 2, 4], [2, 1, 4], [1, 3, 4], [3, 0, 4],
         [2, 0, 5], [1, 2, 5], [3, 1, 5], [0, 3, 5]]
    return Mesh(v, f)


def icosahedron() -> Mesh:
    """Regular icosahedron with circumradius 1."""
    t = (1.0 + 5.0 ** 0.5) / 2.0
    v = np.array([
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ], dtype=np.float64)
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    f = [
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ]
    return Mesh(v, f)


def icosphere(level: int, radius: float = 1.0) -> Mesh:
    """Loop-style 1-to-4 subdivision of the icosahedron, projected to a sphere.

    Level ``k`` has ``20 * 4**k`` faces and ``10 * 4**k + 2`` vertices.
    """
    base = icosahedron()
    verts = [tuple(p) for p in base.vertices.tolist()]
    faces = base.faces.tolist()
    for _ in range(level):
        midpoint = {}

        def mid(a, b):
            key = (a, b) if a < b else (b, a)
            if key not in midpoint:
                p = (np.asarray(verts[a]) + np.asarray(verts[b])) / 2.0
                verts.append(tuple(p / np.linalg.norm(p)))
                midpoint[key] = len(verts) - 1
            return midpoint[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_faces += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        faces = new_faces
    return Mesh(radius * np.array(verts), faces)


def torus(n_major: int = 12, n_minor: int = 8, major: float = 1.0, minor: float = 0.35) -> Mesh:
    """Quad-grid torus split into triangles (genus 1, Euler characteristic 0)."""
    u = 2 * np.pi * np.arange(n_major) / n_major
    w = 2 * np.pi * np.arange(n_minor) / n_minor
    uu, ww = np.meshgrid(u, w, indexing="ij")
    x = (major + minor * np.cos(ww)) * np.cos(uu)
    y = (major + minor * np.cos(ww)) * np.sin(uu)
    z = minor * np.sin(ww)
    verts = np.stack([x, y, z], axis=-1).reshape(-1, 3)

    def idx(i, j):
        return (i % n_major) * n_minor + (j % n_minor)

    faces = []
    for i in range(n_major):
        for j in range(n_minor):
            a, b, c, d = idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1)
            faces += [[a, b, c], [a, c, d]]
    return Mesh(verts, faces)


def single_triangle() -> Mesh:
    return Mesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])


def fibonacci_sphere(n: int, radius: float = 1.0) -> Mesh:
    """Convex hull of ``n`` near-uniform points on a sphere, oriented outward."""
    from scipy.spatial import ConvexHull

    i = np.arange(n) + 0.5
    phi = np.arccos(1 - 2 * i / n)
    theta = np.pi * (1 + 5 ** 0.5) * i
    pts = np.stack([np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)], axis=1)
    faces = ConvexHull(pts).simplices.copy()
    v0, v1, v2 = pts[faces[:, 0]], pts[faces[:, 1]], pts[faces[:, 2]]
    inward = np.einsum("ij,ij->i", np.cross(v1 - v0, v2 - v0), v0 + v1 + v2) < 0
    faces[inward] = faces[inward][:, ::-1]
    return Mesh(radius * pts, faces)


def corpus() -> dict:
    """The watertight test corpus: platonic solids, icospheres and a torus."""
    return {
        "tetrahedron": tetrahedron(),
        "octahedron": octahedron(),
        "icosahedron": icosahedron(),
        "icosphere1": icosphere(1),
        "icosphere2": icosphere(2),
        "icosphere3": icosphere(3),
        "torus": torus(),
    }
