"""Procedural roof dataset: parametric roof meshes, top-down renders, manifests.

Each example pairs a roof surface mesh (OBJ) with a shaded orthographic
top-down render (PGM). Generation is deterministic: every example draws from
its own PCG64 stream keyed by (seed, index), and split assignment hashes
(seed, index) so reruns are byte-identical and order-independent.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyMesh, IoError, SpecError
from .geometry import ImageGrid, Mesh, face_normals
from .meshio import write_obj, write_pgm
from .raster import frame_for_bounds, height_shade

ROOF_KINDS = ("flat", "shed", "gable", "hip", "pyramid")

# documented sampling ranges for generate_dataset
PARAMETER_RANGES = {
    "footprint_w": (4.0, 16.0),
    "footprint_l": (4.0, 16.0),
    "eave_h": (0.5, 4.0),
    "ridge_minus_eave": (1.0, 6.0),
    "rotation": (0.0, math.pi),
    "offset": (-2.0, 2.0),
    "hip_inset": (0.1, 0.4),
}

SPLIT_FRACTIONS = {"train": 0.70, "val": 0.15, "test": 0.15}

# sun from the south-east, mostly overhead: distinct Lambert terms per plane
DEFAULT_SUN = (0.4, 0.2, math.sqrt(1.0 - 0.4 ** 2 - 0.2 ** 2))


@dataclass(frozen=True)
class RoofSpec:
    kind: str
    footprint_w: float
    footprint_l: float
    eave_h: float
    ridge_h: float
    rotation: float = 0.0
    offset: tuple[float, float] = (0.0, 0.0)
    hip_inset: float = 0.25

    def __post_init__(self):
        if self.kind not in ROOF_KINDS:
            raise SpecError(f"unknown roof kind {self.kind!r}")
        if self.footprint_w <= 0 or self.footprint_l <= 0:
            raise SpecError("footprint dimensions must be positive")
        if self.eave_h < 0 or self.ridge_h < self.eave_h:
            raise SpecError("need ridge_h >= eave_h >= 0")
        if not 0.0 <= self.hip_inset < 0.5:
            raise SpecError("hip_inset must lie in [0, 0.5)")


@dataclass(frozen=True)
class RenderConfig:
    resolution: int = 32
    sun_direction: tuple[float, float, float] = DEFAULT_SUN
    margin: float = 0.15

    def __post_init__(self):
        if self.resolution < 4:
            raise SpecError("resolution must be at least 4")
        sun = np.asarray(self.sun_direction, dtype=float)
        if sun.shape != (3,) or sun[2] <= 0:
            raise SpecError("sun_direction must be a 3-vector with positive z")
        if not math.isclose(float(np.linalg.norm(sun)), 1.0, abs_tol=1e-6):
            raise SpecError("sun_direction must be unit length")


@dataclass(frozen=True)
class ManifestEntry:
    index: int
    split: str
    kind: str
    image: str  # path relative to the manifest directory
    mesh: str


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple[ManifestEntry, ...]
    seed: int
    image_resolution: int
    root: str = "."  # directory the relative paths resolve against
    meta: dict = field(default_factory=dict)

    def split(self, name: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == name]

    def resolve(self, relpath: str) -> str:
        return os.path.join(self.root, relpath)


class _MeshBuilder:
    """Accumulates points with exact dedup and triangles by point identity."""

    def __init__(self):
        self.points: list[tuple[float, float, float]] = []
        self.index: dict[tuple[float, float, float], int] = {}
        self.faces: list[tuple[int, int, int]] = []

    def add(self, p) -> int:
        key = (float(p[0]), float(p[1]), float(p[2]))
        if key not in self.index:
            self.index[key] = len(self.points)
            self.points.append(key)
        return self.index[key]

    def tri(self, a, b, c) -> None:
        ia, ib, ic = self.add(a), self.add(b), self.add(c)
        if ia != ib and ib != ic and ia != ic:
            self.faces.append((ia, ib, ic))

    def mesh(self) -> Mesh:
        return Mesh(np.array(self.points, dtype=float).reshape(-1, 3),
                    np.array(self.faces, dtype=np.int64).reshape(-1, 3))


def _surface_quads_and_tris(spec: RoofSpec):
    """Roof surface in the unrotated local frame, as corner loops per plane."""
    w2, l2 = spec.footprint_w / 2.0, spec.footprint_l / 2.0
    e, r = spec.eave_h, spec.ridge_h
    c = [(-w2, -l2, e), (w2, -l2, e), (w2, l2, e), (-w2, l2, e)]

    if spec.kind == "flat":
        return [[c[0], c[1], c[2], c[3]]]
    if spec.kind == "shed":
        hi = [(c[2][0], c[2][1], r), (c[3][0], c[3][1], r)]
        return [[c[0], c[1], hi[0], hi[1]]]
    if spec.kind == "pyramid":
        apex = (0.0, 0.0, r)
        return [[c[0], c[1], apex], [c[1], c[2], apex],
                [c[2], c[3], apex], [c[3], c[0], apex]]

    along_x = spec.footprint_w >= spec.footprint_l
    if spec.kind == "gable":
        inset = 0.0
    else:
        inset = spec.hip_inset * (spec.footprint_w if along_x else spec.footprint_l)
    if along_x:
        r0 = (-w2 + inset, 0.0, r)
        r1 = (w2 - inset, 0.0, r)
        planes = [[c[0], c[1], r1, r0], [c[2], c[3], r0, r1]]
        if spec.kind == "hip":
            planes += [[c[1], c[2], r1], [c[3], c[0], r0]]
    else:
        r0 = (0.0, -l2 + inset, r)
        r1 = (0.0, l2 - inset, r)
        planes = [[c[1], c[2], r1, r0], [c[3], c[0], r0, r1]]
        if spec.kind == "hip":
            planes += [[c[2], c[3], r1], [c[0], c[1], r0]]
    return planes


def _transform(p, spec: RoofSpec):
    cos_t, sin_t = math.cos(spec.rotation), math.sin(spec.rotation)
    x, y, z = p
    return (x * cos_t - y * sin_t + spec.offset[0],
            x * sin_t + y * cos_t + spec.offset[1],
            z)


def build_roof(spec: RoofSpec, watertight: bool = False) -> Mesh:
    """Roof surface mesh (top planes only); walls and floor when watertight."""
    planes = _surface_quads_and_tris(spec)
    builder = _MeshBuilder()
    world_planes = [[_transform(p, spec) for p in loop] for loop in planes]
    for loop in world_planes:
        for k in range(1, len(loop) - 1):
            builder.tri(loop[0], loop[k], loop[k + 1])

    if watertight:
        cycle = _boundary_cycle(world_planes)
        for i in range(len(cycle)):
            a, b = cycle[i], cycle[(i + 1) % len(cycle)]
            ag = (a[0], a[1], 0.0)
            bg = (b[0], b[1], 0.0)
            builder.tri(a, b, bg)
            builder.tri(a, bg, ag)
        ground = [(p[0], p[1], 0.0) for p in cycle]
        for tri in _fan_without_slivers(ground):
            builder.tri(*tri)
    return builder.mesh()


def _boundary_cycle(planes):
    """Walk the surface's boundary edges (those used by exactly one plane)."""
    edge_count: dict[tuple, int] = {}
    for loop in planes:
        for i in range(len(loop)):
            a, b = loop[i], loop[(i + 1) % len(loop)]
            key = (min(a, b), max(a, b))
            edge_count[key] = edge_count.get(key, 0) + 1
    neighbors: dict[tuple, list] = {}
    for (a, b), count in edge_count.items():
        if count == 1:
            neighbors.setdefault(a, []).append(b)
            neighbors.setdefault(b, []).append(a)
    start = next(iter(neighbors))
    cycle = [start]
    prev = None
    while True:
        options = neighbors[cycle[-1]]
        nxt = options[0] if options[0] != prev else options[1]
        if nxt == start:
            return cycle
        prev = cycle[-1]
        cycle.append(nxt)


def _fan_without_slivers(loop):
    """Fan-triangulate a convex ground loop avoiding zero-area triangles."""
    n = len(loop)

    def area2(p, q, r):
        return (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])

    for origin in range(n):
        tris = []
        ok = True
        for k in range(1, n - 1):
            p = loop[origin]
            q = loop[(origin + k) % n]
            r = loop[(origin + k + 1) % n]
            if area2(p, q, r) == 0.0:
                ok = False
                break
            tris.append((p, q, r))
        if ok:
            return tris
    # collinear run everywhere should not happen for valid footprints
    return [(loop[0], loop[k], loop[k + 1]) for k in range(1, n - 1)]


def render_topdown(mesh: Mesh, cfg: RenderConfig) -> ImageGrid:
    """Orthographic top-down render: z-buffer plus Lambertian face shading."""
    if mesh.is_empty():
        raise EmptyMesh("cannot render an empty mesh")
    frame = frame_for_bounds(mesh.vertices[:, :2].min(axis=0),
                             mesh.vertices[:, :2].max(axis=0),
                             cfg.resolution, cfg.margin)
    normals = face_normals(mesh)
    sun = np.asarray(cfg.sun_direction, dtype=float)
    lambert = np.zeros(mesh.num_faces)
    lambert[normals.face_indices] = np.maximum(0.0, normals.normals @ sun)
    _, image = height_shade(mesh.vertices, mesh.faces, lambert, frame)
    return ImageGrid(np.clip(image, 0.0, 1.0))


def _example_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, index])))


def sample_roof_spec(rng: np.random.Generator, kinds=ROOF_KINDS) -> RoofSpec:
    """One RoofSpec drawn from the documented uniform parameter ranges."""
    kind = kinds[int(rng.integers(len(kinds)))]
    w = rng.uniform(*PARAMETER_RANGES["footprint_w"])
    length = rng.uniform(*PARAMETER_RANGES["footprint_l"])
    eave = rng.uniform(*PARAMETER_RANGES["eave_h"])
    ridge = eave if kind == "flat" else eave + rng.uniform(*PARAMETER_RANGES["ridge_minus_eave"])
    rotation = rng.uniform(*PARAMETER_RANGES["rotation"])
    offset = tuple(rng.uniform(*PARAMETER_RANGES["offset"], size=2))
    hip_inset = rng.uniform(*PARAMETER_RANGES["hip_inset"])
    return RoofSpec(kind, w, length, eave, ridge, rotation, offset, hip_inset)


def _split_assignment(n: int, seed: int) -> list[str]:
    """Deterministic hash-ranked permutation with exact 70/15/15 counts."""
    digests = [
        hashlib.sha256(f"{seed}:{i}".encode()).hexdigest() for i in range(n)
    ]
    ranked = sorted(range(n), key=lambda i: digests[i])
    n_train = round(n * SPLIT_FRACTIONS["train"])
    n_val = round(n * SPLIT_FRACTIONS["val"])
    splits = [""] * n
    for pos, idx in enumerate(ranked):
        if pos < n_train:
            splits[idx] = "train"
        elif pos < n_train + n_val:
            splits[idx] = "val"
        else:
            splits[idx] = "test"
    return splits


def generate_dataset(n: int, seed: int, cfg: RenderConfig, kinds, out_dir) -> DatasetManifest:
    """Write n (OBJ, PGM) pairs plus manifest.json under out_dir."""
    if n < 10:
        raise ValueError("need at least 10 examples to populate every split")
    kinds = tuple(kinds)
    if not kinds or any(k not in ROOF_KINDS for k in kinds):
        raise SpecError(f"kinds must be a non-empty subset of {ROOF_KINDS}")

    try:
        for split in SPLIT_FRACTIONS:
            os.makedirs(os.path.join(out_dir, split), exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create output directory {out_dir}: {exc}") from exc

    splits = _split_assignment(n, seed)
    entries = []
    for idx in range(n):
        rng = _example_rng(seed, idx)
        spec = sample_roof_spec(rng, kinds)
        mesh = build_roof(spec)
        image = render_topdown(mesh, cfg)
        rel_mesh = os.path.join(splits[idx], f"ex{idx:05d}.obj")
        rel_image = os.path.join(splits[idx], f"ex{idx:05d}.pgm")
        try:
            write_obj(mesh, os.path.join(out_dir, rel_mesh))
            write_pgm(image, os.path.join(out_dir, rel_image))
        except OSError as exc:
            raise IoError(f"cannot write example {idx}: {exc}") from exc
        entries.append(ManifestEntry(idx, splits[idx], spec.kind, rel_image, rel_mesh))

    manifest = DatasetManifest(
        entries=tuple(entries),
        seed=seed,
        image_resolution=cfg.resolution,
        root=str(out_dir),
        meta={
            "n": n,
            "prng": "pcg64 stream per example, SeedSequence([seed, index])",
            "kinds": list(kinds),
            "sun_direction": list(cfg.sun_direction),
            "margin": cfg.margin,
            "parameter_ranges": {k: list(v) for k, v in PARAMETER_RANGES.items()},
            "split_fractions": SPLIT_FRACTIONS,
        },
    )
    save_manifest(manifest, os.path.join(out_dir, "manifest.json"))
    return manifest


def save_manifest(manifest: DatasetManifest, path) -> None:
    doc = {
        "seed": manifest.seed,
        "image_resolution": manifest.image_resolution,
        **manifest.meta,
        "entries": [
            {"index": e.index, "split": e.split, "kind": e.kind,
             "image": e.image, "mesh": e.mesh}
            for e in manifest.entries
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_manifest(path) -> DatasetManifest:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise IoError(f"cannot read manifest {path}: {exc}") from exc
    entries = tuple(
        ManifestEntry(e["index"], e["split"], e["kind"], e["image"], e["mesh"])
        for e in doc["entries"]
    )
    meta = {k: v for k, v in doc.items()
            if k not in ("entries", "seed", "image_resolution")}
    return DatasetManifest(
        entries=entries,
        seed=doc["seed"],
        image_resolution=doc["image_resolution"],
        root=os.path.dirname(os.path.abspath(path)),
        meta=meta,
    )
