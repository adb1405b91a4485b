"""Axis-aligned boxes, polygons, rotated rectangles and affine transforms.

Conventions used throughout the package: image coordinates with x to the
right and y down, angles in degrees, positive rotation mapping +x toward +y
(clockwise on screen).
"""

import math
from dataclasses import dataclass

import numpy as np


class DegenerateGeometry(ValueError):
    """Raised when an input has no usable extent (zero area, collinear, ...)."""


def _check_finite(name, *values):
    for v in values:
        if not math.isfinite(v):
            raise DegenerateGeometry(f"{name} has non-finite coordinate {v!r}")


@dataclass(frozen=True)
class Box:
    """Axis-aligned rectangle with x1 < x2 and y1 < y2."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        _check_finite("Box", self.x1, self.y1, self.x2, self.y2)
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise DegenerateGeometry(
                f"Box requires x1<x2 and y1<y2, got ({self.x1}, {self.y1}, {self.x2}, {self.y2})"
            )

    @property
    def width(self):
        return self.x2 - self.x1

    @property
    def height(self):
        return self.y2 - self.y1

    @property
    def area(self):
        return self.width * self.height

    @property
    def center(self):
        return ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)

    def as_tuple(self):
        return (self.x1, self.y1, self.x2, self.y2)

    def translate(self, dx, dy):
        return Box(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)

    def dilate(self, mx, my):
        """Expand by mx / my pixels on each side."""
        return Box(self.x1 - mx, self.y1 - my, self.x2 + mx, self.y2 + my)

    def clip(self, other):
        """Intersection with `other`, or None when it has zero area."""
        x1 = max(self.x1, other.x1)
        y1 = max(self.y1, other.y1)
        x2 = min(self.x2, other.x2)
        y2 = min(self.y2, other.y2)
        if x1 >= x2 or y1 >= y2:
            return None
        return Box(x1, y1, x2, y2)


def iou(a: Box, b: Box) -> float:
    """Intersection over union of two boxes, in [0, 1]."""
    ix = min(a.x2, b.x2) - max(a.x1, b.x1)
    iy = min(a.y2, b.y2) - max(a.y1, b.y1)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


@dataclass(frozen=True)
class Polygon:
    """Ordered list of at least 3 (x, y) vertices."""

    points: tuple

    def __post_init__(self):
        pts = tuple((float(x), float(y)) for x, y in self.points)
        if len(pts) < 3:
            raise DegenerateGeometry(f"Polygon needs >= 3 vertices, got {len(pts)}")
        for x, y in pts:
            _check_finite("Polygon", x, y)
        object.__setattr__(self, "points", pts)

    @property
    def area(self):
        """Unsigned area by the shoelace formula."""
        s = 0.0
        pts = self.points
        for (x1, y1), (x2, y2) in zip(pts, pts[1:] + pts[:1]):
            s += x1 * y2 - x2 * y1
        return abs(s) / 2.0

    def bounding_box(self) -> Box:
        xs = [p[0] for p in self.points]
        ys = [p[1] for p in self.points]
        return Box(min(xs), min(ys), max(xs), max(ys))

    def as_flat(self):
        return [c for p in self.points for c in p]

    @classmethod
    def from_flat(cls, coords):
        if len(coords) % 2 != 0:
            raise DegenerateGeometry("flat coordinate list must have even length")
        return cls(tuple(zip(coords[0::2], coords[1::2])))


def _canonical_angle(w, h, angle):
    # Reduce to [-90, 90), then fold the outer quarters onto [-45, 45) by
    # swapping the side lengths. +45 lands on -45 with w/h exchanged, which
    # keeps the wider side first for inputs arriving at the ambiguous boundary.
    a = (angle + 90.0) % 180.0 - 90.0
    if a >= 45.0:
        w, h, a = h, w, a - 90.0
    elif a < -45.0:
        w, h, a = h, w, a + 90.0
    return w, h, a


@dataclass(frozen=True)
class RotatedRect:
    """Rectangle given by center, side lengths and rotation angle.

    The angle is canonicalized to [-45, 45); representations differing by a
    90 degree rotation with swapped sides collapse to the same instance.
    """

    center: tuple
    size: tuple
    angle: float

    def __post_init__(self):
        cx, cy = (float(self.center[0]), float(self.center[1]))
        w, h = (float(self.size[0]), float(self.size[1]))
        _check_finite("RotatedRect", cx, cy, w, h, float(self.angle))
        if w < 0 or h < 0:
            raise DegenerateGeometry(f"RotatedRect sides must be >= 0, got {(w, h)}")
        w, h, a = _canonical_angle(w, h, float(self.angle))
        object.__setattr__(self, "center", (cx, cy))
        object.__setattr__(self, "size", (w, h))
        object.__setattr__(self, "angle", a)

    @property
    def area(self):
        return self.size[0] * self.size[1]

    def corners(self):
        """The 4 corners, unordered (use order_corners for the canonical order)."""
        cx, cy = self.center
        w, h = self.size
        rad = math.radians(self.angle)
        ux, uy = math.cos(rad), math.sin(rad)
        vx, vy = -uy, ux
        hw, hh = w / 2.0, h / 2.0
        return [
            (cx + sx * hw * ux + sy * hh * vx, cy + sx * hw * uy + sy * hh * vy)
            for sx, sy in ((-1, -1), (1, -1), (1, 1), (-1, 1))
        ]


def min_area_rect(poly: Polygon) -> RotatedRect:
    """Minimum-area rectangle enclosing all polygon vertices.

    Rotating-calipers over the convex hull: the optimal rectangle is aligned
    with one of the hull edges.
    """
    hull = _convex_hull(poly.points)
    if len(hull) < 3:
        raise DegenerateGeometry("all polygon vertices are collinear")
    pts = np.asarray(hull, dtype=float)
    best = None
    for i in range(len(hull)):
        ex = pts[(i + 1) % len(hull)] - pts[i]
        norm = math.hypot(ex[0], ex[1])
        if norm == 0.0:
            continue
        c, s = ex[0] / norm, ex[1] / norm
        u = pts[:, 0] * c + pts[:, 1] * s
        v = -pts[:, 0] * s + pts[:, 1] * c
        u0, u1 = u.min(), u.max()
        v0, v1 = v.min(), v.max()
        area = (u1 - u0) * (v1 - v0)
        if best is None or area < best[0]:
            best = (area, c, s, u0, u1, v0, v1)
    _, c, s, u0, u1, v0, v1 = best
    uc, vc = (u0 + u1) / 2.0, (v0 + v1) / 2.0
    center = (uc * c - vc * s, uc * s + vc * c)
    return RotatedRect(center, (u1 - u0, v1 - v0), math.degrees(math.atan2(s, c)))


def _convex_hull(points):
    """Monotone-chain convex hull, counterclockwise in math coordinates."""
    pts = sorted(set(points))
    if len(pts) <= 2:
        return pts

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper = []
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return lower[:-1] + upper[:-1]


def order_corners(rect: RotatedRect):
    """Corners in canonical order: first the (y, then x) minimum, then clockwise
    on screen (y down). Stable for any equivalent construction of the rect."""
    cx, cy = rect.center
    pts = rect.corners()
    # ascending atan2 in image coordinates is clockwise on screen
    pts.sort(key=lambda p: math.atan2(p[1] - cy, p[0] - cx))
    start = min(range(4), key=lambda i: (pts[i][1], pts[i][0]))
    return [pts[(start + k) % 4] for k in range(4)]


@dataclass(frozen=True)
class AffineParams:
    """Similarity transform: scale then rotate about `center`, then translate.

    p' = R(rotation_deg) * scale * (p - center) + center + translation
    """

    rotation_deg: float
    scale: float
    center: tuple
    translation: tuple = (0.0, 0.0)

    def __post_init__(self):
        _check_finite(
            "AffineParams",
            self.rotation_deg,
            self.scale,
            self.center[0],
            self.center[1],
            self.translation[0],
            self.translation[1],
        )
        if self.scale <= 0:
            raise DegenerateGeometry(f"scale must be > 0, got {self.scale}")

    @classmethod
    def identity(cls, center=(0.0, 0.0)):
        return cls(0.0, 1.0, (float(center[0]), float(center[1])))

    def matrix(self):
        """2x3 matrix M with p' = M[:, :2] @ p + M[:, 2]."""
        rad = math.radians(self.rotation_deg)
        c, s = math.cos(rad), math.sin(rad)
        a = self.scale * c
        b = -self.scale * s
        d = self.scale * s
        e = self.scale * c
        cx, cy = self.center
        tx, ty = self.translation
        return np.array(
            [
                [a, b, cx + tx - a * cx - b * cy],
                [d, e, cy + ty - d * cx - e * cy],
            ]
        )


def affine_point(t: AffineParams, p):
    """Apply the transform to a single (x, y) point."""
    m = t.matrix()
    x, y = p
    return (m[0, 0] * x + m[0, 1] * y + m[0, 2], m[1, 0] * x + m[1, 1] * y + m[1, 2])


def lerp_affine(a: AffineParams, b: AffineParams, s: float) -> AffineParams:
    """Interpolate between two transforms.

    Angle, center and translation are linear in s; scale is log-linear so a
    forward pass and its reverse compose symmetrically. Endpoints are exact.
    """
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"interpolation fraction must be in [0, 1], got {s}")
    if s == 0.0:
        return a
    if s == 1.0:
        return b
    lerp = lambda u, v: u + s * (v - u)
    return AffineParams(
        rotation_deg=lerp(a.rotation_deg, b.rotation_deg),
        scale=math.exp(lerp(math.log(a.scale), math.log(b.scale))),
        center=(lerp(a.center[0], b.center[0]), lerp(a.center[1], b.center[1])),
        translation=(
            lerp(a.translation[0], b.translation[0]),
            lerp(a.translation[1], b.translation[1]),
        ),
    )


def warp_image(img, t: AffineParams, out_size=None, fill=128):
    """Warp an image by the transform with bilinear sampling.

    Destination pixels that map outside the source are set to `fill`
    (mid-gray by default, to avoid fabricating high-contrast edges).
    `out_size` is (width, height); defaults to the input size.
    """
    img = np.asarray(img)
    if img.size == 0:
        raise DegenerateGeometry("cannot warp an empty image")
    src_h, src_w = img.shape[:2]
    out_w, out_h = out_size if out_size is not None else (src_w, src_h)

    m = t.matrix()
    a, b, tx = m[0]
    d, e, ty = m[1]
    det = a * e - b * d
    inv = np.array([[e / det, -b / det], [-d / det, a / det]])

    xs, ys = np.meshgrid(np.arange(out_w, dtype=float), np.arange(out_h, dtype=float))
    px = xs - tx
    py = ys - ty
    sx = inv[0, 0] * px + inv[0, 1] * py
    sy = inv[1, 0] * px + inv[1, 1] * py

    # tolerate float noise from the trig terms at the frame border
    eps = 1e-7
    valid = (sx >= -eps) & (sx <= src_w - 1 + eps) & (sy >= -eps) & (sy <= src_h - 1 + eps)
    sx = np.clip(sx, 0.0, src_w - 1)
    sy = np.clip(sy, 0.0, src_h - 1)
    x0 = np.floor(sx).astype(int)
    y0 = np.floor(sy).astype(int)
    x1 = np.minimum(x0 + 1, src_w - 1)
    y1 = np.minimum(y0 + 1, src_h - 1)
    wx = sx - x0
    wy = sy - y0

    flat = img.reshape(src_h, src_w, -1).astype(float)
    wx3 = wx[..., None]
    wy3 = wy[..., None]
    out = (
        flat[y0, x0] * (1 - wx3) * (1 - wy3)
        + flat[y0, x1] * wx3 * (1 - wy3)
        + flat[y1, x0] * (1 - wx3) * wy3
        + flat[y1, x1] * wx3 * wy3
    )
    out[~valid] = fill
    out = out.reshape((out_h, out_w) + img.shape[2:])
    if np.issubdtype(img.dtype, np.integer):
        info = np.iinfo(img.dtype)
        out = np.clip(np.rint(out), info.min, info.max).astype(img.dtype)
    else:
        out = out.astype(img.dtype)
    return out
