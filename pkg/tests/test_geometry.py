import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trajmine.geometry import (
    AffineParams,
    Box,
    DegenerateGeometry,
    Polygon,
    RotatedRect,
    affine_point,
    iou,
    lerp_affine,
    min_area_rect,
    order_corners,
    warp_image,
)

boxes = st.builds(
    lambda x, y, w, h: Box(x, y, x + w, y + h),
    st.floats(-100, 100),
    st.floats(-100, 100),
    st.floats(0.5, 80),
    st.floats(0.5, 80),
)


class TestBox:
    def test_rejects_degenerate(self):
        with pytest.raises(DegenerateGeometry):
            Box(0, 0, 0, 10)
        with pytest.raises(DegenerateGeometry):
            Box(0, 5, 10, 5)
        with pytest.raises(DegenerateGeometry):
            Box(0, 0, float("nan"), 10)

    def test_clip(self):
        assert Box(0, 0, 10, 10).clip(Box(5, 5, 20, 20)) == Box(5, 5, 10, 10)
        assert Box(0, 0, 10, 10).clip(Box(10, 10, 20, 20)) is None


class TestIoU:
    def test_identity(self):
        assert iou(Box(0, 0, 10, 10), Box(0, 0, 10, 10)) == 1.0

    def test_disjoint(self):
        assert iou(Box(0, 0, 10, 10), Box(20, 20, 30, 30)) == 0.0

    def test_half_shift(self):
        # intersection 50, union 150
        assert iou(Box(0, 0, 10, 10), Box(5, 0, 15, 10)) == pytest.approx(1 / 3)

    @given(boxes, boxes)
    def test_symmetric_and_bounded(self, a, b):
        v = iou(a, b)
        assert v == iou(b, a)
        assert 0.0 <= v <= 1.0

    @given(boxes)
    def test_self_is_one(self, a):
        assert iou(a, a) == pytest.approx(1.0)

    def test_monotone_in_translation(self):
        a = Box(0, 0, 10, 10)
        vals = [iou(a, a.translate(dx, 0)) for dx in np.linspace(0, 15, 30)]
        assert all(u >= v for u, v in zip(vals, vals[1:]))


def rect_width_height_at(points, angle_deg):
    """Extent of the point set projected on a rotated axis pair."""
    rad = math.radians(angle_deg)
    c, s = math.cos(rad), math.sin(rad)
    pts = np.asarray(points, dtype=float)
    u = pts[:, 0] * c + pts[:, 1] * s
    v = -pts[:, 0] * s + pts[:, 1] * c
    return (u.max() - u.min()), (v.max() - v.min())


def sweep_min_area(points, step_deg=0.05):
    """Independent oracle: dense sweep over candidate orientations."""
    best = math.inf
    for ang in np.arange(0.0, 90.0, step_deg):
        w, h = rect_width_height_at(points, ang)
        best = min(best, w * h)
    return best


class TestMinAreaRect:
    def test_axis_aligned_square(self):
        r = min_area_rect(Polygon(((0, 0), (10, 0), (10, 10), (0, 10))))
        assert r.center == pytest.approx((5, 5))
        assert sorted(r.size) == pytest.approx([10, 10])
        assert r.angle == pytest.approx(0.0)

    def test_diamond(self):
        # the minimal rect is the diamond itself: side sqrt(50) at 45 degrees,
        # which canonicalizes to -45
        r = min_area_rect(Polygon(((5, 0), (10, 5), (5, 10), (0, 5))))
        assert r.center == pytest.approx((5, 5))
        assert r.size == pytest.approx((math.sqrt(50), math.sqrt(50)))
        assert r.angle == pytest.approx(-45.0)
        got = sorted(np.round(order_corners(r), 6).tolist())
        assert got == sorted([[5, 0], [10, 5], [5, 10], [0, 5]])

    def test_collinear_raises(self):
        with pytest.raises(DegenerateGeometry):
            min_area_rect(Polygon(((0, 0), (5, 5), (10, 10))))

    def test_area_matches_orientation_sweep(self):
        rng = np.random.default_rng(42)
        for _ in range(25):
            pts = rng.uniform(0, 100, size=(rng.integers(3, 10), 2))
            if np.linalg.matrix_rank(pts - pts[0]) < 2:
                continue
            poly = Polygon(tuple(map(tuple, pts)))
            rect = min_area_rect(poly)
            assert rect.area <= sweep_min_area(pts) + 1e-6

    def test_contains_vertices_and_beats_aabb(self):
        rng = np.random.default_rng(7)
        for _ in range(25):
            pts = rng.uniform(-50, 50, size=(rng.integers(3, 12), 2))
            if np.linalg.matrix_rank(pts - pts[0]) < 2:
                continue
            poly = Polygon(tuple(map(tuple, pts)))
            rect = min_area_rect(poly)
            assert rect.area <= poly.bounding_box().area + 1e-9
            # every vertex inside the rect (project onto the rect's axes)
            rad = math.radians(rect.angle)
            c, s = math.cos(rad), math.sin(rad)
            cx, cy = rect.center
            for x, y in poly.points:
                du = (x - cx) * c + (y - cy) * s
                dv = -(x - cx) * s + (y - cy) * c
                assert abs(du) <= rect.size[0] / 2 + 1e-6
                assert abs(dv) <= rect.size[1] / 2 + 1e-6


class TestRotatedRect:
    def test_angle_canonicalized(self):
        r = RotatedRect((0, 0), (4, 2), 135.0)
        assert -45.0 <= r.angle < 45.0
        # 135 == 45 with swapped sides == -45 after the canonical fold
        assert r.angle == pytest.approx(-45.0)
        assert r.size == pytest.approx((4, 2))

    def test_equivalent_representations_collapse(self):
        a = RotatedRect((3, 4), (6, 2), 30.0)
        b = RotatedRect((3, 4), (2, 6), 120.0)
        assert a.angle == pytest.approx(b.angle)
        assert a.size == pytest.approx(b.size)
        assert np.allclose(sorted(a.corners()), sorted(b.corners()))

    def test_negative_side_rejected(self):
        with pytest.raises(DegenerateGeometry):
            RotatedRect((0, 0), (-1, 2), 0.0)


class TestOrderCorners:
    def test_axis_aligned(self):
        r = RotatedRect((5, 5), (10, 6), 0.0)
        assert order_corners(r) == [(0, 2), (10, 2), (10, 8), (0, 8)]

    def test_permutation_stable(self):
        # rects built from equivalent parameterizations order identically
        a = order_corners(RotatedRect((3, 4), (6, 2), 30.0))
        b = order_corners(RotatedRect((3, 4), (2, 6), 120.0))
        assert np.allclose(a, b)

    def test_diamond_topmost_first_then_clockwise(self):
        r = min_area_rect(Polygon(((5, 0), (10, 5), (5, 10), (0, 5))))
        got = order_corners(r)
        assert np.allclose(got, [(5, 0), (10, 5), (5, 10), (0, 5)], atol=1e-9)


class TestAffine:
    def test_identity(self):
        t = AffineParams.identity()
        assert affine_point(t, (7, 3)) == pytest.approx((7, 3))

    def test_pure_scale(self):
        t = AffineParams(0.0, 2.0, (0, 0))
        assert affine_point(t, (1, 1)) == pytest.approx((2, 2))

    def test_rotation_about_center(self):
        t = AffineParams(90.0, 1.0, (5, 5))
        assert affine_point(t, (10, 5)) == pytest.approx((5, 10))

    def test_scale_must_be_positive(self):
        with pytest.raises(DegenerateGeometry):
            AffineParams(0.0, 0.0, (0, 0))


class TestLerpAffine:
    a = AffineParams(0.0, 1.0, (0, 0), (0, 0))
    b = AffineParams(30.0, 4.0, (10, 20), (4, -2))

    def test_endpoints_exact(self):
        assert lerp_affine(self.a, self.b, 0.0) is self.a
        assert lerp_affine(self.a, self.b, 1.0) is self.b

    def test_midpoint_laws(self):
        m = lerp_affine(self.a, self.b, 0.5)
        assert m.rotation_deg == pytest.approx(15.0)
        assert m.scale == pytest.approx(2.0)  # log-linear: sqrt(1 * 4)
        assert m.center == pytest.approx((5, 10))
        assert m.translation == pytest.approx((2, -1))

    def test_point_path_is_continuous(self):
        # composing with affine_point must not jump between close fractions:
        # no single step may dominate the otherwise smooth path
        p = (3.0, -7.0)
        svals = np.linspace(0, 1, 200)
        path = np.array([affine_point(lerp_affine(self.a, self.b, s), p) for s in svals])
        steps = np.linalg.norm(np.diff(path, axis=0), axis=1)
        assert steps.max() <= 4 * steps.mean()

    def test_out_of_range_fraction(self):
        with pytest.raises(ValueError):
            lerp_affine(self.a, self.b, 1.5)


class TestWarpImage:
    def _image(self, h=31, w=41):
        rng = np.random.default_rng(0)
        return rng.integers(0, 256, (h, w), dtype=np.uint8)

    def test_identity_bit_exact(self):
        img = self._image()
        assert np.array_equal(warp_image(img, AffineParams.identity()), img)

    def test_rotate_180_twice(self):
        img = self._image()
        c = ((img.shape[1] - 1) / 2, (img.shape[0] - 1) / 2)
        t = AffineParams(180.0, 1.0, c)
        back = warp_image(warp_image(img, t), t)
        assert int(np.abs(back.astype(int) - img.astype(int)).max()) <= 2

    def test_scale_up_down_central_region(self):
        # content pushed out of frame by the magnification cannot come back,
        # so the identity only holds where the intermediate stayed in frame
        img = self._image(40, 60)
        c = (30.0, 20.0)
        out = warp_image(warp_image(img, AffineParams(0, 2.0, c)), AffineParams(0, 0.5, c))
        ys, xs = np.mgrid[0:40, 0:60]
        central = (np.abs(xs - c[0]) < 14) & (np.abs(ys - c[1]) < 9)
        diff = np.abs(out.astype(int) - img.astype(int))[central]
        assert int(diff.max()) <= 2

    def test_fill_value_outside_source(self):
        img = self._image(20, 20)
        t = AffineParams(0.0, 1.0, (0, 0), translation=(30.0, 0.0))
        out = warp_image(img, t, fill=77)
        assert (out[:, :10] == 77).all()

    def test_color_channels(self):
        rng = np.random.default_rng(3)
        img = rng.integers(0, 256, (12, 15, 3), dtype=np.uint8)
        out = warp_image(img, AffineParams(10.0, 1.1, (7, 6)))
        assert out.shape == img.shape
        assert out.dtype == img.dtype


@settings(max_examples=50)
@given(st.floats(1, 300), st.floats(1, 300), st.floats(-180, 180))
def test_canonical_rect_reconstructs_same_corners(w, h, angle):
    raw = RotatedRect((0.0, 0.0), (w, h), angle)
    # corners of the canonical form must match a direct reconstruction from
    # the raw parameters
    rad = math.radians(angle)
    ux, uy = math.cos(rad), math.sin(rad)
    direct = sorted(
        (sx * w / 2 * ux + sy * h / 2 * -uy, sx * w / 2 * uy + sy * h / 2 * ux)
        for sx, sy in ((-1, -1), (1, -1), (1, 1), (-1, 1))
    )
    assert np.allclose(sorted(raw.corners()), direct, atol=1e-6)
