"""Lattice geometry helpers: convex hulls on cell centers and disc dilation.

Cells are identified with their integer centers (row, col). The hull is
computed with the monotone-chain algorithm in (x, y) = (col, row)
coordinates and rasterized by an inclusive point-in-convex-polygon test,
so every input cell is always part of the rasterized hull.
"""

import numpy as np
from scipy import ndimage


def convex_hull(points: np.ndarray) -> np.ndarray:
    """Monotone-chain convex hull of integer points, counter-clockwise.

    points is an (n, 2) array of (x, y). Returns the hull vertices in CCW
    order without repeating the first vertex. Degenerate inputs (a single
    point, or collinear points) return the surviving extreme points.
    """
    pts = np.unique(np.asarray(points, dtype=np.int64), axis=0)
    if pts.shape[0] <= 2:
        return pts
    # unique+axis sorts lexicographically by (x, y) already
    def half(seq):
        chain = []
        for p in seq:
            while len(chain) >= 2 and _cross(chain[-2], chain[-1], p) <= 0:
                chain.pop()
            chain.append(p)
        return chain

    lower = half(pts)
    upper = half(pts[::-1])
    hull = lower[:-1] + upper[:-1]
    return np.array(hull, dtype=np.int64)


def _cross(o, a, b):
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def points_in_hull(hull: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Inclusive membership test of (xs, ys) against a CCW hull polygon.

    Works for degenerate hulls (point or segment) as well. Exact for
    integer hull vertices and integer query points.
    """
    xs = np.asarray(xs, dtype=np.int64)
    ys = np.asarray(ys, dtype=np.int64)
    hull = np.asarray(hull, dtype=np.int64)
    n = hull.shape[0]
    if n == 0:
        return np.zeros(xs.shape, dtype=bool)
    if n == 1:
        return (xs == hull[0, 0]) & (ys == hull[0, 1])
    if n == 2:
        a, b = hull
        on_line = (b[0] - a[0]) * (ys - a[1]) - (b[1] - a[1]) * (xs - a[0]) == 0
        in_box = (
            (xs >= min(a[0], b[0])) & (xs <= max(a[0], b[0]))
            & (ys >= min(a[1], b[1])) & (ys <= max(a[1], b[1]))
        )
        return on_line & in_box
    inside = np.ones(xs.shape, dtype=bool)
    for i in range(n):
        ax, ay = hull[i]
        bx, by = hull[(i + 1) % n]
        # CCW polygon: interior has non-negative cross product on every edge
        inside &= (bx - ax) * (ys - ay) - (by - ay) * (xs - ax) >= 0
    return inside


def rasterize_hull(mask: np.ndarray) -> np.ndarray:
    """Replace the positive cells of a boolean grid by their convex hull.

    A cell belongs to the output iff its center lies inside (or on) the
    hull of the input cells' centers.
    """
    mask = np.asarray(mask, dtype=bool)
    rows, cols = np.nonzero(mask)
    if rows.size == 0:
        return mask.copy()
    hull = convex_hull(np.column_stack([cols, rows]))
    ys, xs = np.mgrid[0 : mask.shape[0], 0 : mask.shape[1]]
    return points_in_hull(hull, xs, ys)


def dilate_disc(mask: np.ndarray, radius: float) -> np.ndarray:
    """Dilate a boolean grid by a Euclidean disc of the given radius (cells).

    radius 0 returns the mask unchanged. Implemented via the exact
    Euclidean distance transform, so the structuring element is a true
    disc rather than an octagonal approximation.
    """
    mask = np.asarray(mask, dtype=bool)
    if radius < 0:
        raise ValueError(f"dilation radius must be >= 0, got {radius}")
    if radius == 0 or not mask.any():
        return mask.copy()
    dist = ndimage.distance_transform_edt(~mask)
    return dist <= radius
