"""OBJ and PGM readers/writers.

OBJ support is the triangle subset: `v x y z` and `f i j k` (1-based).
Faces with more than 3 indices are fan-triangulated on read. PGM support
covers ASCII "P2" and binary "P5" with maxval 255; writes always emit P5.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import IoError, ParseError
from .geometry import ImageGrid, Mesh


def read_obj(path) -> Mesh:
    try:
        with open(path, "r", encoding="ascii", errors="strict") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc

    verts: list[list[float]] = []
    faces: list[tuple[int, int, int]] = []
    for lineno, raw in enumerate(lines, start=1):
        tokens = raw.split()
        if not tokens or tokens[0].startswith("#"):
            continue
        kind = tokens[0]
        if kind == "v":
            if len(tokens) != 4:
                raise ParseError("vertex line needs exactly 3 coordinates", lineno)
            try:
                verts.append([float(t) for t in tokens[1:]])
            except ValueError:
                raise ParseError(f"non-numeric coordinate in {raw.strip()!r}", lineno)
        elif kind == "f":
            if len(tokens) < 4:
                raise ParseError("face line needs at least 3 indices", lineno)
            try:
                idx = [int(t) for t in tokens[1:]]
            except ValueError:
                raise ParseError(f"non-integer face index in {raw.strip()!r}", lineno)
            if any(i < 1 for i in idx):
                raise ParseError("face indices are 1-based and positive", lineno)
            idx = [i - 1 for i in idx]
            for k in range(1, len(idx) - 1):  # fan triangulation
                faces.append((idx[0], idx[k], idx[k + 1]))
        # other directives (vn, vt, o, s, ...) are outside the subset: ignored

    n = len(verts)
    for a, b, c in faces:
        if max(a, b, c) >= n:
            raise ParseError(f"face references vertex {max(a, b, c) + 1} of {n}")
    try:
        return Mesh(np.array(verts, dtype=np.float64).reshape(-1, 3),
                    np.array(faces, dtype=np.int64).reshape(-1, 3))
    except ValueError as exc:
        raise ParseError(str(exc))


def write_obj(mesh: Mesh, path) -> None:
    lines = [f"v {x:.6f} {y:.6f} {z:.6f}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces]
    try:
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            fh.write("\n".join(lines))
            if lines:
                fh.write("\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def _read_pgm_header(data: bytes):
    """Parse magic, width, height, maxval; returns them plus payload offset."""
    pos = 0
    fields: list[int] = []

    def skip_space(p: int) -> int:
        while p < len(data):
            if data[p : p + 1].isspace():
                p += 1
            elif data[p : p + 1] == b"#":
                while p < len(data) and data[p : p + 1] != b"\n":
                    p += 1
            else:
                break
        return p

    if data[:2] not in (b"P2", b"P5"):
        raise ParseError(f"bad PGM magic {data[:2]!r}")
    magic = data[:2].decode()
    pos = 2
    while len(fields) < 3:
        pos = skip_space(pos)
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        token = data[start:pos]
        if not token:
            raise ParseError("truncated PGM header")
        try:
            fields.append(int(token))
        except ValueError:
            raise ParseError(f"non-numeric PGM header field {token!r}")
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise ParseError("missing whitespace after PGM maxval")
    pos += 1  # single whitespace byte before the payload
    width, height, maxval = fields
    if width <= 0 or height <= 0:
        raise ParseError("PGM dimensions must be positive")
    if maxval != 255:
        raise ParseError(f"only maxval 255 is supported, got {maxval}")
    return magic, width, height, pos


def read_pgm(path) -> ImageGrid:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc

    magic, width, height, offset = _read_pgm_header(data)
    count = width * height
    if magic == "P5":
        payload = data[offset : offset + count]
        if len(payload) < count:
            raise ParseError(
                f"truncated P5 payload: expected {count} bytes, got {len(payload)}"
            )
        values = np.frombuffer(payload, dtype=np.uint8).astype(np.float64)
    else:
        tokens = data[offset:].split()
        if len(tokens) < count:
            raise ParseError(
                f"truncated P2 payload: expected {count} values, got {len(tokens)}"
            )
        try:
            values = np.array([int(t) for t in tokens[:count]], dtype=np.float64)
        except ValueError:
            raise ParseError("non-numeric P2 pixel value")
        if values.min() < 0 or values.max() > 255:
            raise ParseError("P2 pixel value outside [0, 255]")
    return ImageGrid(values.reshape(height, width) / 255.0)


def write_pgm(grid: ImageGrid, path) -> None:
    scaled = np.floor(grid.pixels * 255.0 + 0.5)
    payload = np.clip(scaled, 0, 255).astype(np.uint8).tobytes()
    header = f"P5\n{grid.width} {grid.height}\n255\n".encode("ascii")
    try:
        with open(path, "wb") as fh:
            fh.write(header + payload)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def ensure_dir(path) -> None:
    os.makedirs(path, exist_ok=True)
