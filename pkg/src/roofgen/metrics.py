"""Mesh comparison metrics: angular dissimilarity, PoLiS, footprint IoU.

All three are symmetric. Angular dissimilarity works on canonically
oriented face-normal sets; PoLiS compares footprint outline polygons in
the xy plane; IoU rasterizes both footprints onto a shared grid. Meshes
being compared are assumed to share a coordinate frame already.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np
from shapely.geometry import MultiPolygon, Polygon
from shapely.ops import unary_union

from .errors import EmptyInput, InvalidPolygon
from .geometry import FaceNormalSet, Mesh, face_normals
from .raster import coverage_mask, frame_for_bounds

_AREA_EPS = 1e-12


def angular_dissimilarity(a: FaceNormalSet, b: FaceNormalSet) -> float:
    """Symmetric mean of minimum inter-set normal angles, in degrees.

    Each normal contributes its smallest angle to any normal of the other
    set; the two directed sums are normalized by twice their set size and
    added.
    """
    if len(a) == 0 or len(b) == 0:
        raise EmptyInput("angular dissimilarity needs non-empty normal sets")
    dots = a.normals @ b.normals.T
    # atan2 form of arccos(dot): identical vectors give exactly 0 instead of
    # picking up arccos round-off near 1
    crosses = np.cross(a.normals[:, None, :], b.normals[None, :, :])
    angles = np.degrees(np.arctan2(np.linalg.norm(crosses, axis=-1), dots))
    sum_a = float(angles.min(axis=1).sum())
    sum_b = float(angles.min(axis=0).sum())
    return sum_a / (2.0 * len(a)) + sum_b / (2.0 * len(b))


@dataclass(frozen=True)
class FootprintPolygon:
    """Outer boundary loops of a mesh's xy projection."""

    loops: tuple[np.ndarray, ...]  # each (n, 2), open ring, n >= 3

    def __post_init__(self):
        loops = tuple(np.asarray(l, dtype=float).reshape(-1, 2) for l in self.loops)
        if not loops or any(len(l) < 3 for l in loops):
            raise InvalidPolygon("each footprint loop needs at least 3 vertices")
        object.__setattr__(self, "loops", loops)

    @property
    def vertices(self) -> np.ndarray:
        return np.concatenate(self.loops, axis=0)

    def segments(self) -> np.ndarray:
        """(m, 2, 2) array of closed boundary segments over all loops."""
        segs = []
        for loop in self.loops:
            nxt = np.roll(loop, -1, axis=0)
            segs.append(np.stack([loop, nxt], axis=1))
        return np.concatenate(segs, axis=0)

    def scaled(self, s: float) -> "FootprintPolygon":
        return FootprintPolygon(tuple(loop * s for loop in self.loops))


def footprint_polygon(mesh: Mesh) -> FootprintPolygon:
    """Outer boundary of the union of the mesh's projected triangles."""
    tris = []
    for a, b, c in mesh.faces:
        pts = mesh.vertices[[a, b, c]][:, :2]
        poly = Polygon(pts)
        if poly.area > _AREA_EPS:
            tris.append(poly)
    if not tris:
        raise InvalidPolygon("mesh has no non-degenerate projected faces")
    union = unary_union(tris)
    if isinstance(union, Polygon):
        parts = [union]
    elif isinstance(union, MultiPolygon):
        parts = list(union.geoms)
    else:
        parts = [g for g in getattr(union, "geoms", []) if isinstance(g, Polygon)]
    loops = []
    for part in parts:
        if part.area <= _AREA_EPS:
            continue
        ring = np.asarray(part.exterior.coords)[:-1]  # drop closing point
        loops.append(ring)
    if not loops:
        raise InvalidPolygon("projected footprint has zero area")
    return FootprintPolygon(tuple(loops))


def _point_segment_distances(points: np.ndarray, segments: np.ndarray) -> np.ndarray:
    """Min distance from each point to any segment; points (n,2), segs (m,2,2)."""
    a = segments[:, 0]  # (m, 2)
    d = segments[:, 1] - a
    denom = (d * d).sum(-1)  # (m,)
    diff = points[:, None, :] - a[None, :, :]  # (n, m, 2)
    t = np.einsum("nmk,mk->nm", diff, d) / np.where(denom > 0, denom, 1.0)
    t = np.clip(np.where(denom > 0, t, 0.0), 0.0, 1.0)
    closest = a[None, :, :] + t[..., None] * d[None, :, :]
    dist = np.linalg.norm(points[:, None, :] - closest, axis=-1)
    return dist.min(axis=1)


def polis_distance(a: FootprintPolygon, b: FootprintPolygon) -> float:
    """Symmetric mean distance from each polygon's vertices to the other's boundary."""
    av, bv = a.vertices, b.vertices
    da = _point_segment_distances(av, b.segments())
    db = _point_segment_distances(bv, a.segments())
    return float(da.sum() / (2.0 * len(av)) + db.sum() / (2.0 * len(bv)))


def polis_mesh(a: Mesh, b: Mesh) -> float:
    return polis_distance(footprint_polygon(a), footprint_polygon(b))


def polis_3d_vertices(a: Mesh, b: Mesh) -> float:
    """Variant: symmetric mean nearest-vertex distance in 3D."""
    if a.is_empty() or b.is_empty():
        raise EmptyInput("3d PoLiS needs non-empty vertex sets")
    diff = a.vertices[:, None, :] - b.vertices[None, :, :]
    dist = np.linalg.norm(diff, axis=-1)
    return float(dist.min(axis=1).sum() / (2.0 * len(a.vertices))
                 + dist.min(axis=0).sum() / (2.0 * len(b.vertices)))


def footprint_iou(a: Mesh, b: Mesh, resolution: int = 256) -> float:
    """IoU of rasterized xy footprints on a shared grid over the union bbox."""
    if a.is_empty() or b.is_empty():
        raise EmptyInput("IoU needs non-empty meshes")
    if resolution < 16:
        raise ValueError("IoU resolution must be at least 16")
    lo = np.minimum(a.vertices[:, :2].min(axis=0), b.vertices[:, :2].min(axis=0))
    hi = np.maximum(a.vertices[:, :2].max(axis=0), b.vertices[:, :2].max(axis=0))
    frame = frame_for_bounds(lo, hi, resolution)
    mask_a = coverage_mask(a.vertices, a.faces, frame)
    mask_b = coverage_mask(b.vertices, b.faces, frame)
    union = int(np.sum(mask_a | mask_b))
    if union == 0:
        return 0.0
    return float(np.sum(mask_a & mask_b) / union)


@dataclass(frozen=True)
class PairMetrics:
    index: int
    polis: float | None
    angular: float | None
    iou: float | None


@dataclass(frozen=True)
class AggregateStat:
    mean: float
    sdm: float  # standard deviation of the mean
    count: int
    excluded: int


@dataclass(frozen=True)
class MetricsReport:
    per_example: tuple[PairMetrics, ...]
    aggregate: dict  # metric name -> AggregateStat


METRIC_NAMES = ("polis", "angular", "iou")


def _aggregate(values: list[float | None]) -> AggregateStat:
    present = np.array([v for v in values if v is not None], dtype=float)
    excluded = len(values) - len(present)
    if len(present) == 0:
        return AggregateStat(math.nan, math.nan, 0, excluded)
    mean = float(present.mean())
    sdm = float(present.std(ddof=1) / math.sqrt(len(present))) if len(present) > 1 else 0.0
    return AggregateStat(mean, sdm, int(len(present)), excluded)


def evaluate_pair(predicted: Mesh, truth: Mesh, index: int = 0,
                  iou_resolution: int = 256) -> PairMetrics:
    """Metrics for one pair; a metric is None where it is undefined."""
    try:
        polis = polis_mesh(predicted, truth)
    except (InvalidPolygon, EmptyInput):
        polis = None
    na, nb = face_normals(predicted), face_normals(truth)
    try:
        angular = angular_dissimilarity(na, nb)
    except EmptyInput:
        angular = None
    try:
        iou = footprint_iou(predicted, truth, iou_resolution)
    except EmptyInput:
        iou = None
    return PairMetrics(index, polis, angular, iou)


def evaluate_batch(pairs, iou_resolution: int = 256) -> MetricsReport:
    """Per-pair metrics plus mean and SDM aggregates (index order)."""
    pairs = list(pairs)
    if not pairs:
        raise EmptyInput("evaluate_batch needs at least one pair")
    rows = [
        evaluate_pair(pred, truth, index=i, iou_resolution=iou_resolution)
        for i, (pred, truth) in enumerate(pairs)
    ]
    aggregate = {
        name: _aggregate([getattr(r, name) for r in rows]) for name in METRIC_NAMES
    }
    return MetricsReport(tuple(rows), aggregate)


def report_to_json(report: MetricsReport) -> str:
    doc = {
        "per_example": [
            {"index": r.index, "polis": r.polis, "angular_deg": r.angular,
             "iou": r.iou}
            for r in report.per_example
        ],
        "aggregate": {
            name: {"mean": s.mean, "sdm": s.sdm, "count": s.count,
                   "excluded": s.excluded}
            for name, s in report.aggregate.items()
        },
    }
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=True)


def write_report_csv(report: MetricsReport, path) -> None:
    """One row per example plus mean / sdm / excluded footer rows."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "polis", "angular_deg", "iou"])
        fmt = lambda v: "" if v is None else f"{v:.9g}"
        for r in report.per_example:
            writer.writerow([r.index, fmt(r.polis), fmt(r.angular), fmt(r.iou)])
        agg = report.aggregate
        writer.writerow(["mean"] + [fmt(agg[m].mean) for m in METRIC_NAMES])
        writer.writerow(["sdm"] + [fmt(agg[m].sdm) for m in METRIC_NAMES])
        writer.writerow(["excluded"] + [agg[m].excluded for m in METRIC_NAMES])
