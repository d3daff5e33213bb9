"""Boxes and geometric primitives: IoU, rotated-rectangle overlap, minimum
bounding rectangles of binary masks.

Convention: x = column, y = row, origin at the top-left pixel center.  A
pixel is a unit square; bounding geometry is computed over foreground pixel
centers and then inflated by 0.5 px on each side, so a single pixel yields
a 1x1 box and identical single-pixel masks overlap with ratio 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grids import BinaryMask


class GeometryError(ValueError):
    pass


class EmptyMaskError(GeometryError):
    pass


@dataclass(frozen=True)
class AABox:
    """Axis-aligned box: center (cx, cy) and extent (w, h) in pixels."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise GeometryError(f"box extent must be positive, got w={self.w}, h={self.h}")
        if not all(math.isfinite(v) for v in (self.cx, self.cy, self.w, self.h)):
            raise GeometryError("box has non-finite coordinates")

    @property
    def x0(self) -> float:
        return self.cx - self.w / 2.0

    @property
    def x1(self) -> float:
        return self.cx + self.w / 2.0

    @property
    def y0(self) -> float:
        return self.cy - self.h / 2.0

    @property
    def y1(self) -> float:
        return self.cy + self.h / 2.0

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def center(self) -> tuple[float, float]:
        return (self.cx, self.cy)

    def aspect(self) -> float:
        return self.w / self.h

    def corners(self) -> np.ndarray:
        """Corner points (4, 2) in counterclockwise order for y-down axes."""
        return np.array(
            [
                [self.x0, self.y0],
                [self.x1, self.y0],
                [self.x1, self.y1],
                [self.x0, self.y1],
            ]
        )

    def intersects_image(self, height: int, width: int) -> bool:
        """True if the box overlaps the image rectangle (unit-square pixels)."""
        return (
            self.x1 > -0.5 and self.x0 < width - 0.5 and self.y1 > -0.5 and self.y0 < height - 0.5
        )


# Tolerances for the rectangle invariant, relative to the longest side.
_RECT_TOL = 1e-6


@dataclass(frozen=True)
class RotBox:
    """Rotated rectangle given by its four corners (4, 2), consistent winding."""

    corners: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.corners, dtype=np.float64)
        if pts.shape != (4, 2) or not np.all(np.isfinite(pts)):
            raise GeometryError("rotated box needs four finite (x, y) corners")
        object.__setattr__(self, "corners", pts.copy())
        self._validate()

    def _validate(self) -> None:
        p = self.corners
        sides = np.roll(p, -1, axis=0) - p
        lengths = np.hypot(sides[:, 0], sides[:, 1])
        scale = max(1.0, lengths.max())
        if lengths.min() <= _RECT_TOL * scale:
            raise GeometryError("degenerate geometry")
        if abs(lengths[0] - lengths[2]) > _RECT_TOL * scale or abs(lengths[1] - lengths[3]) > _RECT_TOL * scale:
            raise GeometryError("opposite sides differ: not a rectangle")
        for a, b in ((0, 1), (1, 2), (2, 3), (3, 0)):
            dot = float(sides[a] @ sides[b])
            if abs(dot) > _RECT_TOL * scale * scale:
                raise GeometryError("adjacent sides not perpendicular: not a rectangle")

    @property
    def center(self) -> tuple[float, float]:
        c = self.corners.mean(axis=0)
        return (float(c[0]), float(c[1]))

    @property
    def area(self) -> float:
        return _polygon_area(self.corners)

    @property
    def width(self) -> float:
        s = self.corners[1] - self.corners[0]
        return float(np.hypot(s[0], s[1]))

    @property
    def height(self) -> float:
        s = self.corners[2] - self.corners[1]
        return float(np.hypot(s[0], s[1]))

    def angle(self) -> float:
        """Orientation of the first side, normalized to [0, pi/2)."""
        s = self.corners[1] - self.corners[0]
        return math.atan2(s[1], s[0]) % (math.pi / 2.0)

    def enclosing_aabox(self) -> AABox:
        xs, ys = self.corners[:, 0], self.corners[:, 1]
        return AABox(
            cx=float((xs.min() + xs.max()) / 2.0),
            cy=float((ys.min() + ys.max()) / 2.0),
            w=float(xs.max() - xs.min()),
            h=float(ys.max() - ys.min()),
        )

    def flat(self) -> list[float]:
        """Corners flattened to [x1, y1, x2, y2, x3, y3, x4, y4]."""
        return [float(v) for v in self.corners.reshape(-1)]

    @classmethod
    def from_aabox(cls, box: AABox) -> "RotBox":
        return cls(box.corners())

    @classmethod
    def from_center_size_angle(cls, cx: float, cy: float, w: float, h: float, angle: float) -> "RotBox":
        u = np.array([math.cos(angle), math.sin(angle)])
        v = np.array([-math.sin(angle), math.cos(angle)])
        c = np.array([cx, cy])
        hw, hh = w / 2.0, h / 2.0
        return cls(
            np.array([c - hw * u - hh * v, c + hw * u - hh * v, c + hw * u + hh * v, c - hw * u + hh * v])
        )

    @classmethod
    def from_flat(cls, coords) -> "RotBox":
        arr = np.asarray(coords, dtype=np.float64).reshape(4, 2)
        return cls(arr)


def _polygon_area(pts: np.ndarray) -> float:
    x, y = pts[:, 0], pts[:, 1]
    return float(abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))) / 2.0)


def iou_axis_aligned(a: AABox, b: AABox) -> float:
    """Intersection-over-union of two axis-aligned boxes; 0 when disjoint."""
    iw = min(a.x1, b.x1) - max(a.x0, b.x0)
    ih = min(a.y1, b.y1) - max(a.y0, b.y0)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    return inter / union


def _clip_polygon(subject: np.ndarray, clipper: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clipping of a convex subject by a convex clipper.

    The clipper must wind counterclockwise in the (x right, y down) frame,
    i.e. have positive signed area under the shoelace formula used here.
    """
    output = list(subject)
    n = len(clipper)
    for i in range(n):
        if len(output) < 3:
            return np.empty((0, 2))
        p, q = clipper[i], clipper[(i + 1) % n]
        edge = q - p
        inp = output
        output = []
        prev = inp[-1]
        prev_side = edge[0] * (prev[1] - p[1]) - edge[1] * (prev[0] - p[0])
        for cur in inp:
            cur_side = edge[0] * (cur[1] - p[1]) - edge[1] * (cur[0] - p[0])
            if cur_side >= 0.0:
                if prev_side < 0.0:
                    output.append(_segment_intersection(prev, cur, p, q))
                output.append(cur)
            elif prev_side >= 0.0:
                output.append(_segment_intersection(prev, cur, p, q))
            prev, prev_side = cur, cur_side
    return np.array(output) if len(output) >= 3 else np.empty((0, 2))


def _segment_intersection(a: np.ndarray, b: np.ndarray, p: np.ndarray, q: np.ndarray) -> np.ndarray:
    d1 = b - a
    d2 = q - p
    denom = d1[0] * d2[1] - d1[1] * d2[0]
    t = ((p[0] - a[0]) * d2[1] - (p[1] - a[1]) * d2[0]) / denom
    return a + t * d1


def _ccw_signed(pts: np.ndarray) -> np.ndarray:
    """Reorder polygon corners to positive shoelace orientation if needed."""
    x, y = pts[:, 0], pts[:, 1]
    signed = np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))
    return pts if signed >= 0 else pts[::-1]


def polygon_overlap(a: RotBox, b: RotBox) -> float:
    """Overlap ratio (intersection area / union area) of two rectangles."""
    for box in (a, b):
        if box.area <= 1e-12:
            raise GeometryError("degenerate geometry")
    pa = _ccw_signed(a.corners)
    pb = _ccw_signed(b.corners)
    inter_poly = _clip_polygon(pa, pb)
    inter = _polygon_area(inter_poly) if len(inter_poly) else 0.0
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return min(inter / union, 1.0)


def _convex_hull(points: np.ndarray) -> np.ndarray:
    """Monotone-chain convex hull; collinear points are dropped."""
    pts = np.unique(points, axis=0)
    if len(pts) <= 2:
        return pts
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    pts = pts[order]

    def build(seq):
        out: list[np.ndarray] = []
        for p in seq:
            while len(out) >= 2:
                cross = (out[-1][0] - out[-2][0]) * (p[1] - out[-2][1]) - (out[-1][1] - out[-2][1]) * (
                    p[0] - out[-2][0]
                )
                if cross <= 0:
                    out.pop()
                else:
                    break
            out.append(p)
        return out

    lower = build(pts)
    upper = build(pts[::-1])
    hull = lower[:-1] + upper[:-1]
    if len(hull) < 2:  # all points collinear
        return np.array([pts[0], pts[-1]])
    return np.array(hull)


def _inflated_rect_from_direction(points: np.ndarray, ux: float, uy: float) -> tuple[float, float, RotBox]:
    """Tight rectangle over points with one side along (ux, uy), grown 0.5/side.

    Returns (area of the inflated rectangle, normalized angle, box).
    """
    proj_u = points[:, 0] * ux + points[:, 1] * uy
    proj_v = -points[:, 0] * uy + points[:, 1] * ux
    lo_u, hi_u = float(proj_u.min()), float(proj_u.max())
    lo_v, hi_v = float(proj_v.min()), float(proj_v.max())
    w = hi_u - lo_u + 1.0
    h = hi_v - lo_v + 1.0
    cu = (lo_u + hi_u) / 2.0
    cv = (lo_v + hi_v) / 2.0
    cx = cu * ux - cv * uy
    cy = cu * uy + cv * ux
    angle = math.atan2(uy, ux) % (math.pi / 2.0)
    box = RotBox.from_center_size_angle(cx, cy, w, h, math.atan2(uy, ux))
    return (w * h, angle, box)


def min_bounding_rect(points: np.ndarray) -> RotBox:
    """Minimum-area rotated rectangle over point centers, inflated 0.5/side.

    Rotating calipers over the convex hull: the minimizing direction is
    always parallel to a hull edge (the inflated area is log-concave in the
    rotation angle between edge events, so interior minima cannot occur).
    Ties are broken toward the smallest angle in [0, 90 deg).
    """
    pts = np.asarray(points, dtype=np.float64)
    if len(pts) == 0:
        raise EmptyMaskError("empty mask")
    hull = _convex_hull(pts)
    if len(hull) == 1:
        x, y = hull[0]
        return RotBox.from_center_size_angle(float(x), float(y), 1.0, 1.0, 0.0)
    if len(hull) == 2:
        d = hull[1] - hull[0]
        length = float(np.hypot(d[0], d[1]))
        ux, uy = d[0] / length, d[1] / length
        _, _, box = _inflated_rect_from_direction(pts, ux, uy)
        return box

    best: tuple[float, float, RotBox] | None = None
    edges = np.roll(hull, -1, axis=0) - hull
    for ex, ey in edges:
        length = math.hypot(ex, ey)
        if length == 0.0:
            continue
        # Fold the edge direction into [0, 90 deg) so ties compare cleanly.
        ang = math.atan2(ey, ex) % (math.pi / 2.0)
        area, angle, box = _inflated_rect_from_direction(hull, math.cos(ang), math.sin(ang))
        if (
            best is None
            or area < best[0] - 1e-9 * best[0]
            or (abs(area - best[0]) <= 1e-9 * best[0] and angle < best[1] - 1e-12)
        ):
            best = (area, angle, box)
    assert best is not None
    return best[2]


def mbr_of_mask(mask: BinaryMask) -> RotBox:
    """Minimum bounding rotated rectangle of a mask's foreground pixels."""
    if mask.is_empty():
        raise EmptyMaskError("empty mask")
    return min_bounding_rect(mask.foreground_points())


def alb_of_mask(mask: BinaryMask) -> AABox:
    """Tightest axis-aligned box over foreground pixels (unit-square model)."""
    if mask.is_empty():
        raise EmptyMaskError("empty mask")
    pts = mask.foreground_points()
    x0, y0 = pts.min(axis=0)
    x1, y1 = pts.max(axis=0)
    return AABox(
        cx=float((x0 + x1) / 2.0),
        cy=float((y0 + y1) / 2.0),
        w=float(x1 - x0 + 1.0),
        h=float(y1 - y0 + 1.0),
    )


def fill_aabox_mask(box: AABox, height: int, width: int) -> BinaryMask:
    """Mask of pixels whose centers fall inside an axis-aligned box."""
    ys = np.arange(height)[:, None]
    xs = np.arange(width)[None, :]
    inside = (xs >= box.x0) & (xs <= box.x1) & (ys >= box.y0) & (ys <= box.y1)
    return BinaryMask(inside.astype(np.uint8))


def fill_rotbox_mask(box: RotBox, height: int, width: int) -> BinaryMask:
    """Mask of pixels whose centers fall inside a rotated rectangle."""
    c = np.array(box.center)
    u = box.corners[1] - box.corners[0]
    u = u / np.hypot(u[0], u[1])
    v = np.array([-u[1], u[0]])
    hw = box.width / 2.0
    hh = box.height / 2.0
    ys = np.arange(height)[:, None]
    xs = np.arange(width)[None, :]
    dx = xs - c[0]
    dy = ys - c[1]
    pu = dx * u[0] + dy * u[1]
    pv = dx * v[0] + dy * v[1]
    eps = 1e-9
    inside = (np.abs(pu) <= hw + eps) & (np.abs(pv) <= hh + eps)
    return BinaryMask(inside.astype(np.uint8))
