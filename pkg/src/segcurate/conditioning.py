"""Detail-removing transforms for ground-truth masks.

Two conditionings are supported on top of the identity: a morphological
opening with a solid rectangular structuring element, and that same opening
followed by the convex hull of what survives.

Border policy: pixels outside the image are background for erosion, and
contribute nothing to dilation.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .mask_io import as_mask


class ConditioningKind(str, enum.Enum):
    NONE = "none"
    OPENING = "opening"
    CONVEX_HULL = "convexhull"

    @classmethod
    def parse(cls, value) -> "ConditioningKind":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("_", "").replace("-", "").replace(" ", "")
        try:
            return cls(key)
        except ValueError:
            raise ValueError(
                f"unknown conditioning {value!r}; expected one of {', '.join(k.value for k in cls)}"
            ) from None


@dataclass(frozen=True)
class StructuringElement:
    """Solid ``height`` x ``width`` rectangle anchored at its centre pixel."""

    width: int = 5
    height: int = 5

    def __post_init__(self):
        for name in ("width", "height"):
            v = getattr(self, name)
            if int(v) != v or v < 1 or v % 2 == 0:
                raise ValueError(f"structuring element {name} must be a positive odd integer, got {v}")

    @classmethod
    def square(cls, size: int) -> "StructuringElement":
        return cls(size, size)

    @property
    def footprint(self) -> np.ndarray:
        return np.ones((self.height, self.width), dtype=bool)


DEFAULT_SE = StructuringElement(5, 5)


def _window_count(mask: np.ndarray, radius: int, axis: int) -> np.ndarray:
    """Foreground count in a centred window of ``2*radius+1`` along ``axis``.

    Out-of-bounds pixels count as background.
    """
    if radius == 0:
        return mask.astype(np.int64)
    pad = [(0, 0), (0, 0)]
    pad[axis] = (radius + 1, radius)
    csum = np.cumsum(np.pad(mask.astype(np.int64), pad), axis=axis)
    n = mask.shape[axis]
    hi = np.take(csum, np.arange(2 * radius + 1, 2 * radius + 1 + n), axis=axis)
    lo = np.take(csum, np.arange(0, n), axis=axis)
    return hi - lo


def erode(mask, se: StructuringElement = DEFAULT_SE) -> np.ndarray:
    """Pixels whose whole footprint lies on foreground (inside the image)."""
    mask = as_mask(mask)
    ry, rx = se.height // 2, se.width // 2
    rows = _window_count(mask, rx, axis=1) == se.width
    return _window_count(rows, ry, axis=0) == se.height


def dilate(mask, se: StructuringElement = DEFAULT_SE) -> np.ndarray:
    """Pixels whose (reflected) footprint touches any foreground pixel."""
    mask = as_mask(mask)
    ry, rx = se.height // 2, se.width // 2
    rows = _window_count(mask, rx, axis=1) > 0
    return _window_count(rows, ry, axis=0) > 0


def opening(mask, se: StructuringElement = DEFAULT_SE) -> np.ndarray:
    """Erosion followed by dilation with the same element."""
    return dilate(erode(mask, se), se)


def _cross(o, a, b) -> int:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def hull_vertices(points) -> list[tuple[int, int]]:
    """Counter-clockwise convex hull of integer points (monotone chain).

    Collinear points are dropped. Returns one vertex for a single distinct
    point and two for a collinear set.
    """
    pts = sorted(set(map(tuple, points)))
    if len(pts) <= 2:
        return pts
    lower: list = []
    for p in pts:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list = []
    for p in reversed(pts):
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return lower[:-1] + upper[:-1]


def _row_extremes(mask: np.ndarray) -> list[tuple[int, int]]:
    """Leftmost and rightmost foreground pixel of every row, as (x, y).

    The hull of these equals the hull of every foreground pixel.
    """
    rows = np.flatnonzero(mask.any(axis=1))
    if rows.size == 0:
        return []
    sub = mask[rows]
    width = mask.shape[1]
    left = sub.argmax(axis=1)
    right = width - 1 - sub[:, ::-1].argmax(axis=1)
    return [(int(x), int(y)) for y, x in zip(rows, left)] + [(int(x), int(y)) for y, x in zip(rows, right)]


def rasterize_hull(vertices, shape: tuple[int, int]) -> np.ndarray:
    """Pixels whose centre lies in or on the convex polygon ``vertices``.

    Pixel ``[y, x]`` has its centre at integer point ``(x, y)``. Each hull edge
    gives, for a fixed row, a linear inequality in ``x`` with integer
    coefficients; the per-row intersection of those half-lines is an exact
    integer interval. Degenerate hulls (a point or a segment) fall out of the
    same constraints, because a two-vertex cycle yields both orientations of
    the segment's line.
    """
    out = np.zeros(shape, dtype=bool)
    if not vertices:
        return out
    v = np.asarray(vertices, dtype=np.int64)
    x0, y0 = v.min(axis=0)
    x1, y1 = v.max(axis=0)
    ys = np.arange(y0, y1 + 1, dtype=np.int64)
    lo = np.full(ys.shape, x0, dtype=np.int64)
    hi = np.full(ys.shape, x1, dtype=np.int64)
    ok = np.ones(ys.shape, dtype=bool)
    if len(v) > 1:
        nxt = np.roll(v, -1, axis=0)
        for (vx, vy), (wx, wy) in zip(v, nxt):
            ex, ey = wx - vx, wy - vy
            # cross(e, p - v) >= 0  <=>  a*x + b >= 0
            a = -ey
            b = ex * (ys - vy) + ey * vx
            if a > 0:
                lo = np.maximum(lo, -((b) // a))  # ceil(-b / a)
            elif a < 0:
                hi = np.minimum(hi, b // (-a))  # floor(b / -a)
            else:
                ok &= b >= 0
    cols = np.arange(shape[1], dtype=np.int64)
    out[y0 : y1 + 1] = (cols >= lo[:, None]) & (cols <= hi[:, None]) & ok[:, None]
    return out


def convex_hull_mask(mask) -> np.ndarray:
    """Rasterized convex hull of the foreground pixel centres."""
    mask = as_mask(mask)
    return rasterize_hull(hull_vertices(_row_extremes(mask)), mask.shape)


def apply_conditioning(mask, kind, se: StructuringElement = DEFAULT_SE) -> np.ndarray:
    """Apply one conditioning; the input is never modified.

    ``none`` returns a copy, ``opening`` the opening, and ``convexhull`` the
    hull of the opening (in that order: a speck erased by the opening does not
    contribute to the hull).
    """
    kind = ConditioningKind.parse(kind)
    mask = as_mask(mask)
    if kind is ConditioningKind.NONE:
        return mask.copy()
    opened = opening(mask, se)
    if kind is ConditioningKind.OPENING:
        return opened
    return convex_hull_mask(opened)
