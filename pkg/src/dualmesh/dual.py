"""Face-dual graph of a triangle mesh.

Every face becomes a node with exactly three neighbor slots. Slot order is
clockwise seen from outside the surface (looking down the outward normal):
starting with the face across edge (f[0], f[1]), then across (f[2], f[0]),
then across (f[1], f[2]). Boundary edges give PAD slots (``PAD == -1``),
which are moved behind the real neighbors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateFaceError
from .mesh import Mesh

PAD = -1

# winding edges visited in clockwise order about the outward normal
_CLOCKWISE_EDGES = (0, 2, 1)

# relative area threshold (area / longest_edge**2) below which a face is degenerate
DEGENERATE_REL_AREA = 1e-14


@dataclass(frozen=True, eq=False)
class DualGraph:
    neighbors: np.ndarray
    centers: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.neighbors)

    @property
    def pad_mask(self) -> np.ndarray:
        return self.neighbors == PAD

    @property
    def has_padding(self) -> bool:
        return bool(np.any(self.pad_mask))

    def is_three_regular(self) -> bool:
        n = self.neighbors
        if self.has_padding:
            return False
        distinct = (n[:, 0] != n[:, 1]) & (n[:, 1] != n[:, 2]) & (n[:, 0] != n[:, 2])
        no_self = np.all(n != np.arange(len(n))[:, None], axis=1)
        return bool(np.all(distinct & no_self))

    def edge_count(self) -> int:
        """Number of undirected dual edges (PAD slots excluded)."""
        real = self.neighbors[~self.pad_mask]
        return int(len(real)) // 2

    def edge_set(self) -> set:
        out = set()
        for i, row in enumerate(self.neighbors.tolist()):
            for j in row:
                if j != PAD:
                    out.add((min(i, j), max(i, j)))
        return out

    def rotated(self, shift: int) -> DualGraph:
        """Same graph with every node's slot triple cyclically rotated."""
        return DualGraph(np.roll(self.neighbors, -shift, axis=1), self.centers)

    def dump(self) -> str:
        return "".join(f"{i}: {a} {b} {c}\n" for i, (a, b, c) in enumerate(self.neighbors.tolist()))


def face_areas2(mesh: Mesh) -> np.ndarray:
    """Twice the face areas (norm of the un-normalized normal)."""
    v = mesh.vertices[mesh.faces]
    return np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1)


def degenerate_faces(mesh: Mesh) -> np.ndarray:
    v = mesh.vertices[mesh.faces]
    longest2 = np.max(np.sum((v - np.roll(v, 1, axis=1)) ** 2, axis=2), axis=1)
    return np.flatnonzero(0.5 * face_areas2(mesh) <= DEGENERATE_REL_AREA * longest2)


def _slot_table(mesh: Mesh) -> np.ndarray:
    index = mesh.edge_index
    nf = mesh.n_faces
    ef = index.edge_faces[index.face_edges]            # (F, 3, 2)
    own = np.arange(nf)[:, None]
    across = np.where(ef[:, :, 0] == own, ef[:, :, 1], ef[:, :, 0])
    table = across[:, list(_CLOCKWISE_EDGES)]
    # move PAD slots behind the real neighbors, keeping relative order
    order = np.argsort(table == PAD, axis=1, kind="stable")
    return np.take_along_axis(table, order, axis=1)


def build_dual(mesh: Mesh) -> DualGraph:
    """Build the face-dual graph with ordered, zero-padded neighbor slots.

    Raises ``DegenerateFaceError`` when a face has zero area, since its
    normal (and hence the slot orientation) is undefined.
    """
    bad = degenerate_faces(mesh)
    if len(bad):
        raise DegenerateFaceError(
            f"{len(bad)} zero-area faces, e.g. {bad[:10].tolist()}", faces=bad.tolist())
    neighbors = _slot_table(mesh)
    centers = mesh.vertices[mesh.faces].mean(axis=1)
    neighbors.flags.writeable = False
    centers.flags.writeable = False
    return DualGraph(neighbors, centers)


def order_neighbors(mesh: Mesh, face: int) -> tuple[int, int, int]:
    """Ordered neighbor triple of one face (PAD entries trail)."""
    p = mesh.vertices[mesh.faces[face]]
    area = 0.5 * np.linalg.norm(np.cross(p[1] - p[0], p[2] - p[0]))
    if area <= DEGENERATE_REL_AREA * np.max(np.sum((p - np.roll(p, 1, axis=0)) ** 2, axis=1)):
        raise DegenerateFaceError(f"face {face} has zero area", faces=[face])
    index = mesh.edge_index
    out = []
    for k in _CLOCKWISE_EDGES:
        a, b = index.edge_faces[index.face_edges[face, k]]
        out.append(int(b if a == face else a))
    real = [x for x in out if x != PAD]
    return tuple(real + [PAD] * (3 - len(real)))
