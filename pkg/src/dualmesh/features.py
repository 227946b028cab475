"""Per-face input features on the dual mesh.

Five channels are available: XYZ (face centroid), Normal (unit normal),
Area, DistCM (distance from the centroid to the surface center of mass) and
Dihedral (unsigned angle to each ordered neighbor). Dihedral is defined per
neighbor slot rather than per face, so ``assemble_features`` returns it as a
separate (N_F, 3, 1) slot tensor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dual import PAD, DualGraph, build_dual, degenerate_faces
from .errors import DegenerateFaceError, EmptySelectionError
from .mesh import Mesh

FEATURE_WIDTHS = {"xyz": 3, "normal": 3, "area": 1, "distcm": 1, "dihedral": 1}
CHANNEL_NAMES = {
    "xyz": ["x", "y", "z"],
    "normal": ["nx", "ny", "nz"],
    "area": ["area"],
    "distcm": ["dist_cm"],
    "dihedral": ["dihedral"],
}


def parse_selection(selection) -> tuple[str, ...]:
    """Normalize ``"xyz,normal"`` or an iterable of names to a tuple."""
    if isinstance(selection, str):
        selection = [s for s in selection.replace("+", ",").split(",") if s.strip()]
    names = tuple(s.strip().lower() for s in selection)
    if not names:
        raise EmptySelectionError("feature selection is empty")
    unknown = [n for n in names if n not in FEATURE_WIDTHS]
    if unknown:
        raise ValueError(f"unknown features {unknown}; choose from {sorted(FEATURE_WIDTHS)}")
    if len(set(names)) != len(names):
        raise ValueError(f"feature selection lists a channel twice: {names}")
    return names


def face_centroids(mesh: Mesh) -> np.ndarray:
    return mesh.vertices[mesh.faces].mean(axis=1)


def face_centroid(mesh: Mesh, face: int) -> np.ndarray:
    return mesh.vertices[mesh.faces[face]].mean(axis=0)


def _cross(mesh):
    v = mesh.vertices[mesh.faces]
    return np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])


def face_normals(mesh: Mesh) -> np.ndarray:
    bad = degenerate_faces(mesh)
    if len(bad):
        raise DegenerateFaceError(f"normal undefined for zero-area faces {bad[:10].tolist()}",
                                  faces=bad.tolist())
    c = _cross(mesh)
    return c / np.linalg.norm(c, axis=1, keepdims=True)


def face_normal(mesh: Mesh, face: int) -> np.ndarray:
    p = mesh.vertices[mesh.faces[face]]
    c = np.cross(p[1] - p[0], p[2] - p[0])
    norm = np.linalg.norm(c)
    if norm == 0.0:
        raise DegenerateFaceError(f"face {face} has zero area", faces=[face])
    return c / norm


def face_areas(mesh: Mesh) -> np.ndarray:
    return 0.5 * np.linalg.norm(_cross(mesh), axis=1)


def face_area(mesh: Mesh, face: int) -> float:
    p = mesh.vertices[mesh.faces[face]]
    return 0.5 * float(np.linalg.norm(np.cross(p[1] - p[0], p[2] - p[0])))


def surface_center_of_mass(mesh: Mesh) -> np.ndarray:
    """Area-weighted mean of the face centroids."""
    areas = face_areas(mesh)
    total = areas.sum()
    if total == 0.0:
        return face_centroids(mesh).mean(axis=0)
    return areas @ face_centroids(mesh) / total


def distances_to_center_of_mass(mesh: Mesh) -> np.ndarray:
    return np.linalg.norm(face_centroids(mesh) - surface_center_of_mass(mesh), axis=1)


def dist_to_center_of_mass(mesh: Mesh, face: int) -> float:
    return float(np.linalg.norm(face_centroid(mesh, face) - surface_center_of_mass(mesh)))


def dihedral_table(mesh: Mesh, dual: DualGraph) -> np.ndarray:
    """(N_F, 3) angles between each face normal and its slot neighbors' normals."""
    n = face_normals(mesh)
    nb = dual.neighbors
    safe = np.where(nb == PAD, 0, nb)
    other = n[safe]
    # atan2 keeps precision near 0 and pi, where arccos of the dot product does not
    cos = np.einsum("fc,fkc->fk", n, other)
    sin = np.linalg.norm(np.cross(n[:, None, :], other), axis=2)
    angles = np.arctan2(sin, cos)
    angles[nb == PAD] = 0.0
    return angles


def dihedral_angles(mesh: Mesh, dual: DualGraph, face: int) -> np.ndarray:
    n0 = face_normal(mesh, face)
    out = np.zeros(3)
    for k, j in enumerate(dual.neighbors[face].tolist()):
        if j != PAD:
            nj = face_normal(mesh, j)
            out[k] = np.arctan2(np.linalg.norm(np.cross(n0, nj)), n0 @ nj)
    return out


@dataclass(frozen=True, eq=False)
class FaceInputs:
    """Assembled inputs: per-face channels plus optional per-slot channels."""

    node: np.ndarray                 # (N_F, C)
    slot: np.ndarray | None          # (N_F, 3, C_slot) or None
    selection: tuple[str, ...]
    channels: tuple[str, ...]

    @property
    def node_width(self) -> int:
        return self.node.shape[1]

    @property
    def slot_width(self) -> int:
        return 0 if self.slot is None else self.slot.shape[2]


def selection_widths(selection) -> tuple[int, int]:
    """(node channels, slot channels) for a feature selection."""
    names = parse_selection(selection)
    slot = sum(FEATURE_WIDTHS[n] for n in names if n == "dihedral")
    return sum(FEATURE_WIDTHS[n] for n in names) - slot, slot


def assemble_features(mesh: Mesh, dual: DualGraph | None = None, selection=("xyz",)) -> FaceInputs:
    """Concatenate the selected face features in selection order."""
    names = parse_selection(selection)
    if dual is None:
        dual = build_dual(mesh)
    blocks, channels, slot = [], [], None
    for name in names:
        if name == "xyz":
            blocks.append(face_centroids(mesh))
        elif name == "normal":
            blocks.append(face_normals(mesh))
        elif name == "area":
            blocks.append(face_areas(mesh)[:, None])
        elif name == "distcm":
            blocks.append(distances_to_center_of_mass(mesh)[:, None])
        elif name == "dihedral":
            slot = dihedral_table(mesh, dual)[:, :, None]
            continue
        channels += CHANNEL_NAMES[name]
    node = np.hstack(blocks) if blocks else np.zeros((mesh.n_faces, 0))
    return FaceInputs(np.ascontiguousarray(node, dtype=np.float64), slot, names, tuple(channels))


def standardize(node: np.ndarray) -> np.ndarray:
    """Zero-mean, unit-variance columns (constant columns are only centered)."""
    mean = node.mean(axis=0)
    std = node.std(axis=0)
    return (node - mean) / np.where(std > 0, std, 1.0)
