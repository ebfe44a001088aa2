"""Triangle-mesh data model: normalization, 8-bit quantization, face normals.

Coordinate conventions: vertices are (x, y, z) triples in model units. The
quantized lattice is the integer cube [0, 255]^3; lattice vertices are kept
sorted by (z, y, x) so downstream token sequences are canonical.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyMesh

LATTICE_MAX = 255


def _as_readonly(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


def _check_faces(faces: np.ndarray, n_vertices: int) -> None:
    if faces.size == 0:
        return
    if faces.min() < 0 or faces.max() >= n_vertices:
        raise ValueError(
            f"face index out of range: valid range is [0, {n_vertices - 1}]"
        )
    a, b, c = faces[:, 0], faces[:, 1], faces[:, 2]
    if np.any((a == b) | (b == c) | (a == c)):
        raise ValueError("every face needs 3 distinct vertex indices")


@dataclass(frozen=True)
class Mesh:
    """Triangle mesh: float vertices (x, y, z) and 0-based index triples."""

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        verts = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if not np.all(np.isfinite(verts)):
            raise ValueError("mesh vertices must be finite")
        _check_faces(faces, len(verts))
        object.__setattr__(self, "vertices", _as_readonly(verts))
        object.__setattr__(self, "faces", _as_readonly(faces))

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_faces(self) -> int:
        return len(self.faces)

    def is_empty(self) -> bool:
        return len(self.vertices) == 0


@dataclass(frozen=True)
class QuantizedMesh:
    """Mesh on the 8-bit lattice with canonical vertex and face ordering.

    Vertices are integer (x, y, z) triples, strictly sorted ascending by
    (z, y, x) with no duplicates. Each face is rotated so its lowest index
    comes first (winding preserved) and faces are sorted lexicographically.
    """

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        verts = np.asarray(self.vertices, dtype=np.int64).reshape(-1, 3)
        faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if verts.size and (verts.min() < 0 or verts.max() > LATTICE_MAX):
            raise ValueError(f"lattice coordinates must lie in [0, {LATTICE_MAX}]")
        keys = verts[:, [2, 1, 0]]  # (z, y, x)
        if len(verts) > 1:
            diffs = keys[1:] - keys[:-1]
            # strictly ascending lexicographic order, no duplicates
            first_nonzero = np.argmax(diffs != 0, axis=1)
            lead = diffs[np.arange(len(diffs)), first_nonzero]
            if np.any(lead <= 0) or np.any(np.all(diffs == 0, axis=1)):
                raise ValueError("vertices must be strictly (z, y, x)-sorted")
        _check_faces(faces, len(verts))
        faces = canonicalize_faces(faces)
        object.__setattr__(self, "vertices", _as_readonly(verts))
        object.__setattr__(self, "faces", _as_readonly(faces))

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_faces(self) -> int:
        return len(self.faces)


@dataclass(frozen=True)
class ImageGrid:
    """Row-major grayscale image with intensities in [0, 1]."""

    pixels: np.ndarray  # shape (height, width)

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 2:
            raise ValueError("pixels must be a 2-d array (height, width)")
        if px.size and (px.min() < 0.0 or px.max() > 1.0):
            raise ValueError("intensities must lie in [0, 1]")
        object.__setattr__(self, "pixels", _as_readonly(px))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class FaceNormalSet:
    """Unit normals of the non-degenerate faces, oriented to z >= 0."""

    normals: np.ndarray  # shape (n, 3)
    skipped: int = 0  # zero-area faces that produced no normal
    face_indices: np.ndarray = field(default=None)  # source face per normal

    def __post_init__(self):
        normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
        object.__setattr__(self, "normals", _as_readonly(normals))
        idx = self.face_indices
        if idx is None:
            idx = np.arange(len(normals))
        object.__setattr__(self, "face_indices", _as_readonly(np.asarray(idx)))

    def __len__(self) -> int:
        return len(self.normals)


def canonicalize_faces(faces: np.ndarray) -> np.ndarray:
    """Rotate each triple so the lowest index leads, then sort the list."""
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    if faces.size == 0:
        return faces
    shift = np.argmin(faces, axis=1)
    cols = (np.arange(3)[None, :] + shift[:, None]) % 3
    rotated = faces[np.arange(len(faces))[:, None], cols]
    order = np.lexsort((rotated[:, 2], rotated[:, 1], rotated[:, 0]))
    return rotated[order]


def normalize_to_unit_cube(mesh: Mesh) -> Mesh:
    """Translate and uniformly scale so the bounding box fits [0, 1]^3.

    One scale factor for all axes (aspect preserved); each axis is centered.
    Axes with zero extent collapse to 0.5.
    """
    if mesh.is_empty():
        raise EmptyMesh("cannot normalize a mesh with no vertices")
    lo = mesh.vertices.min(axis=0)
    hi = mesh.vertices.max(axis=0)
    extent = float((hi - lo).max())
    center = (lo + hi) / 2.0
    if extent == 0.0:
        verts = np.full_like(mesh.vertices, 0.5)
    else:
        verts = (mesh.vertices - center) / extent + 0.5
        verts = np.clip(verts, 0.0, 1.0)  # guard float fuzz at the box edge
    return Mesh(verts, mesh.faces)


def _round_half_away(x: np.ndarray) -> np.ndarray:
    # np.round uses banker's rounding; this is deterministic half-away-from-zero
    return np.where(x >= 0, np.floor(x + 0.5), np.ceil(x - 0.5))


def quantize(mesh: Mesh) -> QuantizedMesh:
    """Snap a [0,1]^3 mesh to the 8-bit lattice and canonicalize.

    Duplicate lattice vertices are merged (first occurrence kept) and faces
    that collapse to fewer than 3 distinct indices are dropped.
    """
    if mesh.is_empty():
        return QuantizedMesh(np.zeros((0, 3), dtype=np.int64), np.zeros((0, 3), dtype=np.int64))
    q = _round_half_away(mesh.vertices * LATTICE_MAX)
    q = np.clip(q, 0, LATTICE_MAX).astype(np.int64)

    # merge duplicates, keeping first occurrence
    seen: dict[tuple, int] = {}
    remap = np.empty(len(q), dtype=np.int64)
    unique: list[tuple] = []
    for i, v in enumerate(map(tuple, q)):
        if v not in seen:
            seen[v] = len(unique)
            unique.append(v)
        remap[i] = seen[v]
    verts = np.array(unique, dtype=np.int64).reshape(-1, 3)

    order = np.lexsort((verts[:, 0], verts[:, 1], verts[:, 2]))
    verts = verts[order]
    rank = np.empty(len(verts), dtype=np.int64)
    rank[order] = np.arange(len(verts))

    faces = mesh.faces
    if faces.size:
        faces = rank[remap[faces]]
        distinct = (
            (faces[:, 0] != faces[:, 1])
            & (faces[:, 1] != faces[:, 2])
            & (faces[:, 0] != faces[:, 2])
        )
        faces = faces[distinct]
    return QuantizedMesh(verts, faces.reshape(-1, 3))


def dequantize(qm: QuantizedMesh) -> Mesh:
    """Map lattice coordinates back into [0, 1]^3 (value q -> q / 255)."""
    return Mesh(qm.vertices.astype(np.float64) / LATTICE_MAX, qm.faces)


def face_normals(mesh: Mesh | QuantizedMesh) -> FaceNormalSet:
    """Unit normal per non-degenerate face, oriented upward.

    Normals with negative z are negated (roofs face up); exact z = 0 ties
    fall back to non-negative y, then non-negative x. Zero-area faces are
    skipped and counted.
    """
    verts = mesh.vertices.astype(np.float64)
    faces = mesh.faces
    if faces.size == 0:
        return FaceNormalSet(np.zeros((0, 3)), skipped=0)
    v0 = verts[faces[:, 0]]
    cross = np.cross(verts[faces[:, 1]] - v0, verts[faces[:, 2]] - v0)
    norm = np.linalg.norm(cross, axis=1)
    keep = norm > 0.0
    n = cross[keep] / norm[keep][:, None]

    flip = (n[:, 2] < 0) | (
        (n[:, 2] == 0) & ((n[:, 1] < 0) | ((n[:, 1] == 0) & (n[:, 0] < 0)))
    )
    n[flip] *= -1.0
    return FaceNormalSet(
        n, skipped=int((~keep).sum()), face_indices=np.flatnonzero(keep)
    )
