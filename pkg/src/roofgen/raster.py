"""Shared top-down rasterizer for rendering and the footprint IoU metric.

A Frame is a square window in the xy plane sampled at pixel centers. Row 0
is the top of the image (largest y); columns grow with x. Coverage uses an
inclusive point-in-triangle test so shared edges never open pixel gaps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Frame:
    center_x: float
    center_y: float
    side: float
    resolution: int

    def pixel_centers(self):
        """Returns (xs, ys) arrays of shape (resolution, resolution)."""
        r = self.resolution
        px = self.side / r
        cols = self.center_x - self.side / 2 + (np.arange(r) + 0.5) * px
        rows = self.center_y + self.side / 2 - (np.arange(r) + 0.5) * px
        return np.broadcast_to(cols, (r, r)), np.broadcast_to(rows[:, None], (r, r))


def frame_for_bounds(min_xy, max_xy, resolution: int, margin: float = 0.0) -> Frame:
    """Square frame covering the given xy bounds, optionally padded.

    The side is the larger xy extent scaled by (1 + 2 * margin); degenerate
    bounds fall back to a unit side.
    """
    min_xy = np.asarray(min_xy, dtype=float)
    max_xy = np.asarray(max_xy, dtype=float)
    side = float((max_xy - min_xy).max())
    if side <= 0.0:
        side = 1.0
    side *= 1.0 + 2.0 * margin
    cx, cy = (min_xy + max_xy) / 2.0
    return Frame(float(cx), float(cy), side, int(resolution))


def _edge(ax, ay, bx, by, px, py):
    return (bx - ax) * (py - ay) - (by - ay) * (px - ax)


def coverage_mask(vertices, faces, frame: Frame) -> np.ndarray:
    """Boolean (res, res) mask of pixels whose center lies in any triangle."""
    xs, ys = frame.pixel_centers()
    mask = np.zeros(xs.shape, dtype=bool)
    verts = np.asarray(vertices, dtype=float)
    for a, b, c in np.asarray(faces, dtype=int).reshape(-1, 3):
        va, vb, vc = verts[a], verts[b], verts[c]
        area = _edge(va[0], va[1], vb[0], vb[1], vc[0], vc[1])
        if area == 0.0:
            continue
        e0 = _edge(va[0], va[1], vb[0], vb[1], xs, ys)
        e1 = _edge(vb[0], vb[1], vc[0], vc[1], xs, ys)
        e2 = _edge(vc[0], vc[1], va[0], va[1], xs, ys)
        if area > 0:
            mask |= (e0 >= 0) & (e1 >= 0) & (e2 >= 0)
        else:
            mask |= (e0 <= 0) & (e1 <= 0) & (e2 <= 0)
    return mask


def height_shade(vertices, faces, face_values, frame: Frame):
    """Z-buffered top-down projection.

    face_values holds one scalar per face (e.g. a Lambert term); the result
    is (covered, image) where image carries the value of the highest face
    at each covered pixel center.
    """
    xs, ys = frame.pixel_centers()
    covered = np.zeros(xs.shape, dtype=bool)
    zbuf = np.full(xs.shape, -np.inf)
    image = np.zeros(xs.shape)
    verts = np.asarray(vertices, dtype=float)
    faces = np.asarray(faces, dtype=int).reshape(-1, 3)
    for f, (a, b, c) in enumerate(faces):
        va, vb, vc = verts[a], verts[b], verts[c]
        area = _edge(va[0], va[1], vb[0], vb[1], vc[0], vc[1])
        if area == 0.0:
            continue
        e0 = _edge(va[0], va[1], vb[0], vb[1], xs, ys)
        e1 = _edge(vb[0], vb[1], vc[0], vc[1], xs, ys)
        e2 = _edge(vc[0], vc[1], va[0], va[1], xs, ys)
        if area > 0:
            inside = (e0 >= 0) & (e1 >= 0) & (e2 >= 0)
        else:
            inside = (e0 <= 0) & (e1 <= 0) & (e2 <= 0)
        if not inside.any():
            continue
        # barycentric interpolation of z over the triangle plane
        w0 = e1 / area
        w1 = e2 / area
        w2 = e0 / area
        z = w0 * va[2] + w1 * vb[2] + w2 * vc[2]
        better = inside & (z > zbuf)
        zbuf[better] = z[better]
        image[better] = face_values[f]
        covered |= inside
    return covered, image
