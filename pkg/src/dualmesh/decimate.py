"""Edge-collapse decimation ordered by edge length.

Edges are collapsed shortest first. The merged vertex is placed at the
minimizer of the summed endpoint quadrics (Garland-Heckbert plane
quadrics), falling back to the edge midpoint when that 3x3 system is badly
conditioned. A collapse is skipped when it would break the link condition
(non-manifold result) or rotate a surviving face normal by more than 90
degrees; a skipped edge becomes a candidate again once its neighborhood
changes.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import TargetUnreachableError, ValidationError
from .mesh import Mesh, is_watertight

COND_LIMIT = 1e8


@dataclass(frozen=True)
class Collapse:
    step: int
    edge: tuple[int, int]
    length: float
    survivor: int
    position: tuple[float, float, float]


@dataclass
class Decimation:
    mesh: Mesh
    trace: list = field(default_factory=list)
    vertex_map: np.ndarray | None = None  # original vertex -> output vertex (-1 if removed)
    skipped: int = 0


def edge_length(pos, a: int, b: int) -> float:
    dx, dy, dz = (pos[a][0] - pos[b][0], pos[a][1] - pos[b][1], pos[a][2] - pos[b][2])
    return math.sqrt(dx * dx + dy * dy + dz * dz)


def plane_quadrics(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Per-vertex sum of the squared-distance quadrics of incident face planes."""
    p = vertices[faces]
    n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    planes = np.hstack([n, -np.einsum("ij,ij->i", n, p[:, 0])[:, None]])
    k = np.einsum("fi,fj->fij", planes, planes)
    q = np.zeros((len(vertices), 4, 4))
    for c in range(3):
        np.add.at(q, faces[:, c], k)
    return q


def quadric_error(q: np.ndarray, x) -> float:
    h = np.append(np.asarray(x, dtype=np.float64), 1.0)
    return float(h @ q @ h)


def optimal_position(q: np.ndarray, pa, pb) -> np.ndarray:
    a = q[:3, :3]
    if np.linalg.cond(a) < COND_LIMIT:
        return np.linalg.solve(a, -q[:3, 3])
    return (np.asarray(pa) + np.asarray(pb)) / 2.0


class _EditableMesh:
    """Face soup with vertex-to-face incidence, mutated by collapses."""

    def __init__(self, mesh: Mesh):
        self.pos = mesh.vertices.copy()
        self.faces = mesh.faces.copy()
        self.face_alive = np.ones(len(self.faces), dtype=bool)
        self.vertex_alive = np.ones(len(self.pos), dtype=bool)
        self.vfaces = [set() for _ in range(len(self.pos))]
        for f, tri in enumerate(self.faces.tolist()):
            for v in tri:
                self.vfaces[v].add(f)
        self.n_alive = len(self.faces)
        self.quadrics = plane_quadrics(self.pos, self.faces)

    def neighbors(self, v: int) -> set:
        out = set()
        for f in self.vfaces[v]:
            out.update(self.faces[f].tolist())
        out.discard(v)
        return out

    def edges(self):
        for v in np.flatnonzero(self.vertex_alive).tolist():
            for u in self.neighbors(v):
                if v < u:
                    yield v, u

    def _normal(self, tri, moved=None, to=None):
        p = [to if (moved is not None and v in moved) else self.pos[v] for v in tri]
        return np.cross(p[1] - p[0], p[2] - p[0])

    def target(self, a: int, b: int):
        """(position, survivor) for collapsing edge (a, b)."""
        q = self.quadrics[a] + self.quadrics[b]
        x = optimal_position(q, self.pos[a], self.pos[b])
        ea, eb = quadric_error(q, self.pos[a]), quadric_error(q, self.pos[b])
        survivor = a if ea <= eb else b
        return x, survivor

    def is_legal(self, a: int, b: int, x) -> bool:
        shared = self.vfaces[a] & self.vfaces[b]
        if len(shared) != 2:
            return False
        opposite = set()
        for f in shared:
            opposite.update(self.faces[f].tolist())
        opposite -= {a, b}
        if self.neighbors(a) & self.neighbors(b) != opposite:
            return False
        if self.vertex_alive.sum() <= 4:
            return False
        moved = {a, b}
        for f in (self.vfaces[a] | self.vfaces[b]) - shared:
            tri = self.faces[f].tolist()
            old = self._normal(tri)
            new = self._normal(tri, moved, x)
            old_n, new_n = np.linalg.norm(old), np.linalg.norm(new)
            if new_n <= 1e-12 * old_n:
                return False
            if old @ new < 0.0:
                return False
        return True

    def collapse(self, a: int, b: int, x, survivor: int) -> int:
        removed = b if survivor == a else a
        shared = self.vfaces[a] & self.vfaces[b]
        for f in shared:
            self.face_alive[f] = False
            for v in self.faces[f].tolist():
                self.vfaces[v].discard(f)
            self.n_alive -= 1
        for f in self.vfaces[removed]:
            tri = self.faces[f]
            tri[tri == removed] = survivor
            self.vfaces[survivor].add(f)
        self.vfaces[removed] = set()
        self.vertex_alive[removed] = False
        self.pos[survivor] = x
        self.quadrics[survivor] = self.quadrics[a] + self.quadrics[b]
        return removed

    def to_mesh(self, labels) -> tuple[Mesh, np.ndarray]:
        keep = np.flatnonzero(self.vertex_alive)
        remap = np.full(len(self.pos), -1, dtype=np.int64)
        remap[keep] = np.arange(len(keep))
        faces = remap[self.faces[self.face_alive]]
        new_labels = None if labels is None else np.asarray(labels)[keep]
        return Mesh(self.pos[keep], faces, new_labels), remap


def _check_input(mesh: Mesh, fraction: float):
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"target_face_fraction must be in (0, 1], got {fraction}")
    if not is_watertight(mesh):
        raise ValidationError("decimation needs a watertight mesh")


def decimate_traced(mesh: Mesh, target_face_fraction: float) -> Decimation:
    """Decimate and return the collapse trace alongside the mesh.

    Stops once at most one face above ``ceil(fraction * N_F)`` remains (each
    collapse removes two faces). The surviving vertex of a collapse is the
    endpoint with the smaller combined-quadric error, so its label carries
    over.
    """
    _check_input(mesh, target_face_fraction)
    target = math.ceil(target_face_fraction * mesh.n_faces)
    if target >= mesh.n_faces:
        return Decimation(Mesh(mesh.vertices, mesh.faces, mesh.labels),
                          [], np.arange(mesh.n_vertices))

    em = _EditableMesh(mesh)
    pos = em.pos
    version = np.zeros(len(pos), dtype=np.int64)
    heap = []

    def push(a, b):
        if a > b:
            a, b = b, a
        heapq.heappush(heap, (edge_length(pos, a, b), a, b, version[a], version[b]))

    for a, b in em.edges():
        push(a, b)

    trace, skipped = [], 0
    while em.n_alive - 2 >= target:
        if not heap:
            raise TargetUnreachableError(
                f"no legal collapse left at {em.n_alive} faces (target {target})")
        length, a, b, va, vb = heapq.heappop(heap)
        if not (em.vertex_alive[a] and em.vertex_alive[b]) or va != version[a] or vb != version[b]:
            continue
        if b not in em.neighbors(a):
            continue
        x, survivor = em.target(a, b)
        if not em.is_legal(a, b, x):
            skipped += 1
            continue
        em.collapse(a, b, x, survivor)
        trace.append(Collapse(len(trace), (a, b), length, survivor, tuple(float(c) for c in x)))
        ring = em.neighbors(survivor)
        touched = ring | {survivor}
        for v in touched:
            version[v] += 1
        seen = set()
        for v in touched:
            for u in em.neighbors(v):
                key = (min(u, v), max(u, v))
                if key not in seen:
                    seen.add(key)
                    push(*key)

    out, remap = em.to_mesh(mesh.labels)
    return Decimation(out, trace, remap, skipped)


def decimate(mesh: Mesh, target_face_fraction: float) -> Mesh:
    return decimate_traced(mesh, target_face_fraction).mesh
