"""Codec between quantized meshes and flat token sequences.

Sequences are plain int64 arrays. Vertex sequences flatten the (z, y, x)
coordinates of the sorted vertex list and end with STOP (256); all other
tokens are lattice values 0..255. Face sequences use 0 = STOP, 1 = NEWFACE
and k >= 2 as a pointer to vertex k - 2; NEWFACE separates consecutive
faces and STOP terminates the final face directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GrammarError, LimitExceeded
from .geometry import QuantizedMesh

VERTEX_STOP = 256
VERTEX_VOCAB = 257
FACE_STOP = 0
FACE_NEWFACE = 1
FACE_OFFSET = 2  # pointer token = vertex index + FACE_OFFSET


@dataclass(frozen=True)
class SequenceLimits:
    max_vertex_tokens: int = 100
    max_faces: int = 400

    def __post_init__(self):
        if self.max_vertex_tokens <= 0 or self.max_faces <= 0:
            raise ValueError("sequence limits must be positive")

    @property
    def max_vertices(self) -> int:
        return (self.max_vertex_tokens - 1) // 3


DEFAULT_LIMITS = SequenceLimits()


def encode_vertices(qm: QuantizedMesh, limits: SequenceLimits = DEFAULT_LIMITS) -> np.ndarray:
    """Flatten sorted vertices as (z, y, x) triples plus STOP."""
    n = qm.num_vertices
    length = 3 * n + 1
    if length > limits.max_vertex_tokens:
        raise LimitExceeded(
            f"{n} vertices need {length} tokens, limit is {limits.max_vertex_tokens}",
            observed=length,
            limit=limits.max_vertex_tokens,
        )
    tokens = np.empty(length, dtype=np.int64)
    if n:
        tokens[:-1] = qm.vertices[:, [2, 1, 0]].reshape(-1)
    tokens[-1] = VERTEX_STOP
    return tokens


def decode_vertices(seq) -> np.ndarray:
    """Inverse of encode_vertices; returns (x, y, z) triples, shape (n, 3)."""
    tokens = np.asarray(seq, dtype=np.int64)
    if tokens.ndim != 1 or tokens.size == 0:
        raise GrammarError("vertex sequence must be a non-empty flat token list")
    for pos, tok in enumerate(tokens):
        if tok < 0 or tok > VERTEX_STOP:
            raise GrammarError(f"token {tok} outside vertex vocabulary", pos)
        if tok == VERTEX_STOP and pos != len(tokens) - 1:
            raise GrammarError("STOP before end of sequence", pos)
    if tokens[-1] != VERTEX_STOP:
        raise GrammarError("missing STOP token", len(tokens) - 1)
    if len(tokens) % 3 != 1:
        raise GrammarError("truncated coordinate triple", len(tokens) - 1)
    zyx = tokens[:-1].reshape(-1, 3)
    return zyx[:, [2, 1, 0]].copy()


def encode_faces(qm: QuantizedMesh, limits: SequenceLimits = DEFAULT_LIMITS) -> np.ndarray:
    """Canonical face list as pointer tokens, NEWFACE-separated, STOP-ended."""
    if qm.num_faces > limits.max_faces:
        raise LimitExceeded(
            f"{qm.num_faces} faces exceed the limit of {limits.max_faces}",
            observed=qm.num_faces,
            limit=limits.max_faces,
        )
    out: list[int] = []
    for i, face in enumerate(qm.faces):
        if i:
            out.append(FACE_NEWFACE)
        out.extend(int(v) + FACE_OFFSET for v in face)
    out.append(FACE_STOP)
    return np.array(out, dtype=np.int64)


def decode_faces(seq, vertex_count: int) -> np.ndarray:
    """Inverse of encode_faces; returns index triples, shape (n, 3).

    Faces with more than 3 pointers are fan-triangulated, mirroring OBJ
    reading, so the output is always a triangle list.
    """
    tokens = np.asarray(seq, dtype=np.int64)
    if tokens.ndim != 1 or tokens.size == 0:
        raise GrammarError("face sequence must be a non-empty flat token list")

    faces: list[list[int]] = []
    current: list[int] = []
    closed = False
    for pos, tok in enumerate(tokens):
        if closed:
            raise GrammarError("token after STOP", pos)
        if tok == FACE_STOP:
            if 0 < len(current) < 3:
                raise GrammarError(f"face has only {len(current)} pointers", pos)
            if not current and faces:
                raise GrammarError("STOP directly after NEWFACE", pos)
            if current:
                faces.append(current)
            closed = True
        elif tok == FACE_NEWFACE:
            if len(current) < 3:
                raise GrammarError(f"face has only {len(current)} pointers", pos)
            faces.append(current)
            current = []
        elif tok >= FACE_OFFSET:
            idx = int(tok) - FACE_OFFSET
            if idx >= vertex_count:
                raise GrammarError(
                    f"pointer {idx} out of range for {vertex_count} vertices", pos
                )
            current.append(idx)
        else:
            raise GrammarError(f"negative token {tok}", pos)
    if not closed:
        raise GrammarError("missing STOP token", len(tokens) - 1)

    triangles: list[tuple[int, int, int]] = []
    for loop in faces:
        for k in range(1, len(loop) - 1):
            triangles.append((loop[0], loop[k], loop[k + 1]))
    return np.array(triangles, dtype=np.int64).reshape(-1, 3)


def validate_vertex_sequence(seq, limits: SequenceLimits | None = DEFAULT_LIMITS) -> None:
    """Full grammar check: structure plus strict (z, y, x) ordering."""
    verts = decode_vertices(seq)
    if limits is not None and len(seq) > limits.max_vertex_tokens:
        raise LimitExceeded(
            f"sequence length {len(seq)} exceeds {limits.max_vertex_tokens}",
            observed=len(seq),
            limit=limits.max_vertex_tokens,
        )
    if len(verts) > 1:
        keys = verts[:, [2, 1, 0]]
        for i in range(1, len(keys)):
            if tuple(keys[i - 1]) >= tuple(keys[i]):
                raise GrammarError(
                    f"vertex triples not strictly (z, y, x)-ascending at vertex {i}",
                    position=3 * i,
                )


def validate_face_sequence(seq, vertex_count: int,
                           limits: SequenceLimits | None = DEFAULT_LIMITS) -> None:
    """Full grammar check for a face sequence."""
    tokens = np.asarray(seq, dtype=np.int64)
    decode_faces(tokens, vertex_count)
    if limits is not None:
        n_faces = int(np.sum(tokens == FACE_NEWFACE)) + int(
            np.any((tokens != FACE_STOP) & (tokens != FACE_NEWFACE))
        )
        if n_faces > limits.max_faces:
            raise LimitExceeded(
                f"{n_faces} faces exceed the limit of {limits.max_faces}",
                observed=n_faces,
                limit=limits.max_faces,
            )


def mesh_to_sequences(qm: QuantizedMesh, limits: SequenceLimits = DEFAULT_LIMITS):
    return encode_vertices(qm, limits), encode_faces(qm, limits)


def sequences_to_mesh(vertex_seq, face_seq) -> QuantizedMesh:
    verts = decode_vertices(vertex_seq)
    faces = decode_faces(face_seq, len(verts))
    return QuantizedMesh(verts, faces)


def _prev_triple(prefix: np.ndarray, upto: int):
    """Last complete (z, y, x) triple among prefix[:upto], or None."""
    if upto < 3:
        return None
    return prefix[upto - 3], prefix[upto - 2], prefix[upto - 1]


def valid_next_vertex_tokens(prefix, limits: SequenceLimits | None = DEFAULT_LIMITS) -> np.ndarray:
    """Boolean mask over the 257-token vertex vocabulary.

    Enforces: no STOP mid-triple, strictly ascending (z, y, x) triples, and
    (with limits) STOP once another full triple would not fit. Equality at
    one coordinate is only allowed when a later coordinate can still break
    the tie upward, so sampling can never paint itself into a corner.
    """
    prefix = np.asarray(prefix, dtype=np.int64).reshape(-1)
    if np.any(prefix == VERTEX_STOP):
        raise GrammarError("prefix already contains STOP")
    if prefix.size and (prefix.min() < 0 or prefix.max() > 255):
        raise GrammarError("prefix has tokens outside the coordinate range")

    p = len(prefix)
    phase = p % 3
    mask = np.zeros(VERTEX_VOCAB, dtype=bool)
    values = np.arange(256)

    if phase == 0:
        mask[VERTEX_STOP] = True
        room = limits is None or p + 4 <= limits.max_vertex_tokens
        if room:
            prev = _prev_triple(prefix, p)
            if prev is None:
                mask[:256] = True
            else:
                pz, py, px = prev
                mask[:256] = values > pz
                if (py, px) != (255, 255):
                    mask[pz] = True
    elif phase == 1:
        z = prefix[-1]
        prev = _prev_triple(prefix, p - 1)
        if prev is None or z > prev[0]:
            mask[:256] = True
        else:
            py, px = prev[1], prev[2]
            mask[:256] = values > py
            if px != 255:
                mask[py] = True
    else:
        z, y = prefix[-2], prefix[-1]
        prev = _prev_triple(prefix, p - 2)
        if prev is None or z > prev[0] or y > prev[1]:
            mask[:256] = True
        else:
            mask[:256] = values > prev[2]
    return mask


def valid_next_face_tokens(prefix, vertex_count: int,
                           limits: SequenceLimits | None = DEFAULT_LIMITS) -> np.ndarray:
    """Boolean mask over the (vertex_count + 2)-token face vocabulary.

    STOP/NEWFACE only after >= 3 pointers in the current face; pointers must
    be in range and not repeat within the face; NEWFACE is masked once the
    face budget cannot accommodate the face it would open.
    """
    prefix = np.asarray(prefix, dtype=np.int64).reshape(-1)
    if np.any(prefix == FACE_STOP):
        raise GrammarError("prefix already contains STOP")
    if prefix.size and prefix.max() >= vertex_count + FACE_OFFSET:
        raise GrammarError("prefix has an out-of-range pointer")

    closed_faces = 0
    current: set[int] = set()
    for tok in prefix:
        if tok == FACE_NEWFACE:
            if len(current) < 3:
                raise GrammarError("NEWFACE after fewer than 3 pointers")
            closed_faces += 1
            current = set()
        else:
            idx = int(tok) - FACE_OFFSET
            if idx in current:
                raise GrammarError("repeated pointer within a face")
            current.add(idx)

    mask = np.zeros(vertex_count + FACE_OFFSET, dtype=bool)
    can_close = len(current) >= 3
    at_start = not current and closed_faces == 0
    mask[FACE_STOP] = can_close or at_start
    if can_close and (limits is None or closed_faces + 2 <= limits.max_faces):
        mask[FACE_NEWFACE] = True
    if vertex_count >= 3:
        for idx in range(vertex_count):
            if idx not in current:
                mask[idx + FACE_OFFSET] = True
    return mask


def valid_next_tokens(prefix, kind: str, vertex_count: int | None = None,
                      limits: SequenceLimits | None = DEFAULT_LIMITS) -> np.ndarray:
    """Dispatch to the vertex or face mask ("vertex" / "face")."""
    if kind == "vertex":
        return valid_next_vertex_tokens(prefix, limits)
    if kind == "face":
        if vertex_count is None:
            raise ValueError("face masks need vertex_count")
        return valid_next_face_tokens(prefix, vertex_count, limits)
    raise ValueError(f"unknown sequence kind {kind!r}")
