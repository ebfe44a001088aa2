"""Deliberately naive reference implementations kept independent of the
production code paths they check."""

import math


def naive_angular_dissimilarity(normals_a, normals_b) -> float:
    """Plain-loop transcription: per-normal minimum angle, symmetric mean."""

    def angle_deg(u, v):
        dot = u[0] * v[0] + u[1] * v[1] + u[2] * v[2]
        cx = u[1] * v[2] - u[2] * v[1]
        cy = u[2] * v[0] - u[0] * v[2]
        cz = u[0] * v[1] - u[1] * v[0]
        return math.degrees(math.atan2(math.sqrt(cx * cx + cy * cy + cz * cz), dot))

    sum_a = 0.0
    for a in normals_a:
        sum_a += min(angle_deg(a, b) for b in normals_b)
    sum_b = 0.0
    for b in normals_b:
        sum_b += min(angle_deg(b, a) for a in normals_a)
    return sum_a / (2 * len(normals_a)) + sum_b / (2 * len(normals_b))


def naive_polis(loops_a, loops_b) -> float:
    """Loop-over-everything PoLiS on explicit vertex loops."""

    def seg_dist(p, a, b):
        ax, ay = a
        bx, by = b
        px, py = p
        dx, dy = bx - ax, by - ay
        denom = dx * dx + dy * dy
        if denom == 0:
            return math.hypot(px - ax, py - ay)
        t = max(0.0, min(1.0, ((px - ax) * dx + (py - ay) * dy) / denom))
        cx, cy = ax + t * dx, ay + t * dy
        return math.hypot(px - cx, py - cy)

    def boundary(loops):
        segs = []
        for loop in loops:
            for i in range(len(loop)):
                segs.append((tuple(loop[i]), tuple(loop[(i + 1) % len(loop)])))
        return segs

    def directed(loops_from, loops_to):
        segs = boundary(loops_to)
        total = 0.0
        count = 0
        for loop in loops_from:
            for p in loop:
                total += min(seg_dist(tuple(p), a, b) for a, b in segs)
                count += 1
        return total, count

    ta, na = directed(loops_a, loops_b)
    tb, nb = directed(loops_b, loops_a)
    return ta / (2 * na) + tb / (2 * nb)
