"""Triangular meshes: validation, edge/face incidence and ASCII OFF/OBJ I/O."""

from __future__ import annotations

import functools
import os
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import NonManifoldError, ParseError, ValidationError

UNLABELED = -1


class WindingWarning(UserWarning):
    """Adjacent faces traverse a shared edge in the same direction."""


@dataclass(frozen=True)
class EdgeFaceIndex:
    """Undirected edges and their incident faces.

    ``edges[e]`` is a sorted vertex pair, ``edge_faces[e]`` holds the one or
    two incident faces (``-1`` in the second column for boundary edges) and
    ``face_edges[f, k]`` is the edge between ``faces[f, k]`` and
    ``faces[f, (k + 1) % 3]``.
    """

    edges: np.ndarray
    edge_faces: np.ndarray
    face_edges: np.ndarray

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def face_counts(self) -> np.ndarray:
        return 1 + (self.edge_faces[:, 1] >= 0)

    def lookup(self) -> dict[tuple[int, int], int]:
        return {(int(a), int(b)): e for e, (a, b) in enumerate(self.edges)}


def _readonly(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Mesh:
    """An immutable, validated triangle mesh.

    Faces are vertex-index triples; counter-clockwise winding (seen from
    outside) gives the outward normal. ``labels`` optionally assigns each
    vertex an integer target, ``UNLABELED`` (-1) meaning no ground truth.
    """

    vertices: np.ndarray
    faces: np.ndarray
    labels: np.ndarray | None = None
    check_winding: bool = field(default=True, repr=False)

    def __post_init__(self):
        v = np.array(self.vertices, dtype=np.float64, copy=True)
        f = np.array(self.faces, dtype=np.int64, copy=True)
        if v.ndim != 2 or v.shape[1] != 3:
            raise ValidationError(f"vertices must have shape (N, 3), got {v.shape}")
        if f.size == 0:
            f = f.reshape(0, 3)
        if f.ndim != 2 or f.shape[1] != 3:
            raise ValidationError(f"faces must have shape (F, 3), got {f.shape}")
        if not np.all(np.isfinite(v)):
            raise ValidationError("vertex coordinates must be finite")
        object.__setattr__(self, "vertices", _readonly(v))
        object.__setattr__(self, "faces", _readonly(f))
        if self.labels is not None:
            lab = np.array(self.labels, dtype=np.int64, copy=True)
            if lab.shape != (len(v),):
                raise ValidationError(
                    f"expected {len(v)} labels, got {lab.shape[0] if lab.ndim else 'scalar'}")
            if np.any(lab < UNLABELED):
                raise ValidationError("labels must be >= 0, or -1 for unlabeled")
            object.__setattr__(self, "labels", _readonly(lab))
        self._validate()

    def _validate(self):
        f = self.faces
        nv = len(self.vertices)
        if f.size:
            bad = np.flatnonzero(np.any((f < 0) | (f >= nv), axis=1))
            if len(bad):
                raise ValidationError(
                    f"face index out of range [0, {nv}) in faces {bad[:10].tolist()}")
            rep = np.flatnonzero(
                (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2]))
            if len(rep):
                raise ValidationError(f"faces with repeated vertices: {rep[:10].tolist()}")
            keys = np.sort(f, axis=1)
            _, first, counts = np.unique(keys, axis=0, return_index=True, return_counts=True)
            if np.any(counts > 1):
                dup = np.sort(first[counts > 1])
                raise ValidationError(f"duplicate faces: {dup[:10].tolist()}")
        # builds the incidence map and rejects non-manifold edges
        index = self.edge_index
        if self.check_winding and index.n_edges:
            self._warn_on_winding(index)

    def _warn_on_winding(self, index: EdgeFaceIndex):
        interior = index.edge_faces[:, 1] >= 0
        if not np.any(interior):
            return
        # +1 when the face walks the sorted edge (a, b) as a -> b
        direction = np.zeros((len(self.faces), 3), dtype=np.int8)
        nxt = np.roll(self.faces, -1, axis=1)
        direction[:] = np.where(self.faces < nxt, 1, -1)
        e_ids = np.flatnonzero(interior)
        f0, f1 = index.edge_faces[e_ids, 0], index.edge_faces[e_ids, 1]
        k0 = np.argmax(index.face_edges[f0] == e_ids[:, None], axis=1)
        k1 = np.argmax(index.face_edges[f1] == e_ids[:, None], axis=1)
        same = direction[f0, k0] == direction[f1, k1]
        if np.any(same):
            bad = index.edges[e_ids[same]][:5].tolist()
            warnings.warn(
                f"{int(same.sum())} interior edges are traversed in the same direction "
                f"by both faces (inconsistent winding corrupts normals), e.g. {bad}",
                WindingWarning, stacklevel=4)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @property
    def n_edges(self) -> int:
        return self.edge_index.n_edges

    @functools.cached_property
    def edge_index(self) -> EdgeFaceIndex:
        return build_edge_index(self.faces)

    @functools.cached_property
    def vertex_neighbors(self) -> list[np.ndarray]:
        """Sorted one-ring vertex neighbors of every vertex."""
        edges = self.edge_index.edges
        both = np.concatenate([edges, edges[:, ::-1]])
        order = np.lexsort((both[:, 1], both[:, 0]))
        both = both[order]
        splits = np.searchsorted(both[:, 0], np.arange(1, self.n_vertices))
        return np.split(both[:, 1], splits)

    def euler_characteristic(self) -> int:
        return self.n_vertices - self.n_edges + self.n_faces

    def with_labels(self, labels) -> Mesh:
        return Mesh(self.vertices, self.faces, labels, check_winding=False)

    def transformed(self, rotation=None, scale=1.0, translation=None) -> Mesh:
        """Return ``scale * R v + t`` applied to every vertex."""
        v = self.vertices
        if rotation is not None:
            v = v @ np.asarray(rotation, dtype=np.float64).T
        v = scale * v
        if translation is not None:
            v = v + np.asarray(translation, dtype=np.float64)
        return Mesh(v, self.faces, self.labels, check_winding=False)

    def same_as(self, other: Mesh, atol: float = 1e-9) -> bool:
        return (self.faces.shape == other.faces.shape
                and np.array_equal(self.faces, other.faces)
                and self.vertices.shape == other.vertices.shape
                and np.allclose(self.vertices, other.vertices, rtol=0.0, atol=atol))


def build_edge_index(faces: np.ndarray) -> EdgeFaceIndex:
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    nf = len(faces)
    half = np.stack([faces, np.roll(faces, -1, axis=1)], axis=2).reshape(-1, 2)
    keys = np.sort(half, axis=1)
    if nf == 0:
        empty = np.zeros((0, 2), dtype=np.int64)
        return EdgeFaceIndex(empty, empty.copy(), np.zeros((0, 3), dtype=np.int64))
    edges, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    if np.any(counts > 2):
        bad = edges[counts > 2]
        raise NonManifoldError(
            f"{len(bad)} non-manifold edges (shared by more than 2 faces): "
            f"{bad[:10].tolist()}", edges=[tuple(e) for e in bad.tolist()])
    face_of_half = np.repeat(np.arange(nf), 3)
    order = np.argsort(inverse, kind="stable")
    edge_faces = np.full((len(edges), 2), -1, dtype=np.int64)
    sorted_edges = inverse[order]
    sorted_faces = face_of_half[order]
    starts = np.searchsorted(sorted_edges, np.arange(len(edges)))
    edge_faces[:, 0] = sorted_faces[starts]
    has_two = counts == 2
    edge_faces[has_two, 1] = sorted_faces[starts[has_two] + 1]
    return EdgeFaceIndex(_readonly(edges.astype(np.int64)), _readonly(edge_faces),
                         _readonly(inverse.reshape(nf, 3).astype(np.int64)))


def is_watertight(mesh: Mesh) -> bool:
    """True iff every undirected edge is shared by exactly two faces."""
    index = mesh.edge_index
    return index.n_edges > 0 and bool(np.all(index.edge_faces[:, 1] >= 0))


def interior_edge_count(mesh: Mesh) -> int:
    return int(np.sum(mesh.edge_index.edge_faces[:, 1] >= 0))


def vertex_face_counts(mesh: Mesh) -> np.ndarray:
    return np.bincount(mesh.faces.reshape(-1), minlength=mesh.n_vertices)


# --------------------------------------------------------------------- I/O

def _format_of(path, fmt):
    if fmt is not None:
        fmt = fmt.upper()
        if fmt == "COFF":
            fmt = "OFF"
        if fmt not in ("OFF", "OBJ"):
            raise ValueError(f"unsupported mesh format {fmt!r}; use OFF or OBJ")
        return fmt
    suffix = Path(path).suffix.lower()
    if suffix in (".off", ".coff"):
        return "OFF"
    if suffix == ".obj":
        return "OBJ"
    raise ValueError(f"cannot infer mesh format from {path!s}; pass format='OFF' or 'OBJ'")


def _content_lines(text):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line


def _parse_off(text, path):
    lines = _content_lines(text)
    try:
        lineno, header = next(lines)
    except StopIteration:
        raise ParseError("empty file", path) from None
    tokens = header.split()
    kind = tokens[0]
    if kind not in ("OFF", "COFF"):
        raise ParseError(f"expected OFF or COFF header, got {kind!r}", path, lineno)
    colored = kind == "COFF"
    rest = tokens[1:]
    if not rest:
        try:
            lineno, counts_line = next(lines)
        except StopIteration:
            raise ParseError("missing counts line", path) from None
        rest = counts_line.split()
    try:
        nv, nf = int(rest[0]), int(rest[1])
    except (IndexError, ValueError):
        raise ParseError(f"bad counts line {' '.join(rest)!r}", path, lineno) from None
    if nv < 0 or nf < 0:
        raise ParseError("negative element counts", path, lineno)

    vertices = np.empty((nv, 3))
    colors = np.empty((nv, 4), dtype=np.int64) if colored else None
    for i in range(nv):
        try:
            lineno, line = next(lines)
        except StopIteration:
            raise ParseError(f"expected {nv} vertices, found {i}", path) from None
        parts = line.split()
        want = 7 if colored else 3
        if len(parts) < want:
            raise ParseError(f"vertex line needs {want} values, got {len(parts)}", path, lineno)
        try:
            vertices[i] = [float(x) for x in parts[:3]]
            if colored:
                colors[i] = [int(float(x)) for x in parts[3:7]]
        except ValueError:
            raise ParseError(f"non-numeric vertex line {line!r}", path, lineno) from None

    faces = np.empty((nf, 3), dtype=np.int64)
    for i in range(nf):
        try:
            lineno, line = next(lines)
        except StopIteration:
            raise ParseError(f"expected {nf} faces, found {i}", path) from None
        parts = line.split()
        try:
            n = int(parts[0])
            idx = [int(x) for x in parts[1:1 + n]]
        except (ValueError, IndexError):
            raise ParseError(f"bad face line {line!r}", path, lineno) from None
        if n != 3:
            raise ParseError(f"only triangles are supported, got a {n}-gon", path, lineno)
        if len(idx) != 3:
            raise ParseError(f"face line lists {len(idx)} indices, expected 3", path, lineno)
        faces[i] = idx
    return vertices, faces, colors


def _parse_obj(text, path):
    vertices, faces = [], []
    for lineno, line in _content_lines(text):
        parts = line.split()
        tag = parts[0]
        if tag == "v":
            try:
                vertices.append([float(x) for x in parts[1:4]])
            except ValueError:
                raise ParseError(f"non-numeric vertex line {line!r}", path, lineno) from None
            if len(vertices[-1]) != 3:
                raise ParseError("vertex line needs 3 coordinates", path, lineno)
        elif tag == "f":
            refs = parts[1:]
            if len(refs) != 3:
                raise ParseError(f"only triangles are supported, got {len(refs)} indices",
                                 path, lineno)
            idx = []
            for ref in refs:
                try:
                    k = int(ref.split("/")[0])
                except ValueError:
                    raise ParseError(f"bad face index {ref!r}", path, lineno) from None
                # negative indices are relative to the current vertex count
                idx.append(k - 1 if k > 0 else len(vertices) + k)
            faces.append(idx)
        # normals, texture coordinates, groups and materials are ignored
    return (np.array(vertices, dtype=np.float64).reshape(-1, 3),
            np.array(faces, dtype=np.int64).reshape(-1, 3), None)


def load_mesh(path, format=None, labels=None, check_winding=True) -> Mesh:
    """Load an ASCII OFF/COFF or OBJ triangle mesh.

    ``labels`` may be a path to a label file (one integer per line) or an
    array. Raises ``ParseError`` for malformed content and
    ``ValidationError`` for invalid connectivity.
    """
    fmt = _format_of(path, format)
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError:
        raise ParseError("not an ASCII mesh file", path) from None
    parse = _parse_off if fmt == "OFF" else _parse_obj
    vertices, faces, _ = parse(text, os.fspath(path))
    if isinstance(labels, (str, os.PathLike)):
        labels = load_labels(labels)
    try:
        return Mesh(vertices, faces, labels, check_winding=check_winding)
    except ValidationError as exc:
        raise type(exc)(f"{os.fspath(path)}: {exc}") from None


def load_mesh_colors(path) -> np.ndarray | None:
    """Per-vertex RGBA colors of a COFF file, or None for plain OFF."""
    text = Path(path).read_text(encoding="utf-8")
    return _parse_off(text, os.fspath(path))[2]


def save_mesh(mesh: Mesh, path, format=None, vertex_colors=None) -> None:
    """Write ``mesh`` as ASCII OFF (COFF when colors are given) or OBJ.

    Coordinates are written with 17 significant digits so a reload is exact.
    ``vertex_colors`` is an (N_V, 3) or (N_V, 4) array of 0-255 integers or
    of floats in [0, 1].
    """
    fmt = _format_of(path, format)
    lines = []
    if vertex_colors is not None:
        if fmt != "OFF":
            raise ValueError("vertex colors are only supported for OFF output")
        colors = np.asarray(vertex_colors)
        if colors.ndim != 2 or len(colors) != mesh.n_vertices or colors.shape[1] not in (3, 4):
            raise ValueError(f"vertex_colors must have shape ({mesh.n_vertices}, 3 or 4)")
        if np.issubdtype(colors.dtype, np.floating):
            colors = np.rint(np.clip(colors, 0.0, 1.0) * 255)
        colors = colors.astype(np.int64)
        if colors.shape[1] == 3:
            colors = np.hstack([colors, np.full((len(colors), 1), 255, dtype=np.int64)])
        lines.append("COFF")
        lines.append(f"{mesh.n_vertices} {mesh.n_faces} 0")
        for (x, y, z), (r, g, b, a) in zip(mesh.vertices.tolist(), colors.tolist()):
            lines.append(f"{x!r} {y!r} {z!r} {r} {g} {b} {a}")
    elif fmt == "OFF":
        lines.append("OFF")
        lines.append(f"{mesh.n_vertices} {mesh.n_faces} 0")
        lines.extend(f"{x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist())
    if fmt == "OFF":
        lines.extend(f"3 {a} {b} {c}" for a, b, c in mesh.faces.tolist())
    else:
        lines.extend(f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist())
        lines.extend(f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces.tolist())
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_labels(path) -> np.ndarray:
    """Read a label file: one integer per line, -1 for unlabeled."""
    out = []
    for lineno, line in _content_lines(Path(path).read_text(encoding="utf-8")):
        try:
            out.append(int(line))
        except ValueError:
            raise ParseError(f"label must be an integer, got {line!r}",
                             os.fspath(path), lineno) from None
    return np.array(out, dtype=np.int64)


def save_labels(labels, path) -> None:
    labels = np.asarray(labels, dtype=np.int64)
    Path(path).write_text("".join(f"{int(x)}\n" for x in labels), encoding="utf-8")
