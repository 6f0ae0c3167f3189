import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trafficlab.geometry import OrientedBox, box_distance, boxes_collide


def box(cx, cy, heading=0.0, length=1.0, width=1.0):
    return OrientedBox(cx=cx, cy=cy, heading=heading, length=length, width=width)


class TestCollide:
    def test_identical_boxes_collide(self):
        a = box(1.0, 2.0, 0.3, 4.0, 2.0)
        assert boxes_collide(a, a)

    def test_distant_unit_squares(self):
        assert not boxes_collide(box(0, 0), box(10, 0))

    def test_touching_counts_as_collision(self):
        assert boxes_collide(box(0, 0), box(1.0, 0))

    def test_rotated_crossing_pair_against_sampling_oracle(self, rng):
        # 4x2 boxes at 45 degrees crossing with centers 1 m apart: confirm
        # overlap by finding a sampled point inside both rectangles.
        a = OrientedBox(0.0, 0.0, math.pi / 4, 4.0, 2.0)
        b = OrientedBox(1.0, 0.0, -math.pi / 4, 4.0, 2.0)

        def inside(bb, p):
            c, s = math.cos(bb.heading), math.sin(bb.heading)
            dx, dy = p[0] - bb.cx, p[1] - bb.cy
            lx = c * dx + s * dy
            ly = -s * dx + c * dy
            return abs(lx) <= bb.length / 2 and abs(ly) <= bb.width / 2

        pts = rng.uniform(-3, 4, size=(20000, 2))
        overlap_found = any(inside(a, p) and inside(b, p) for p in pts)
        assert overlap_found
        assert boxes_collide(a, b)

    def test_symmetry(self, rng):
        for _ in range(200):
            a = OrientedBox(*rng.uniform(-5, 5, 2), rng.uniform(-3, 3),
                            rng.uniform(0.5, 5), rng.uniform(0.5, 3))
            b = OrientedBox(*rng.uniform(-5, 5, 2), rng.uniform(-3, 3),
                            rng.uniform(0.5, 5), rng.uniform(0.5, 3))
            assert boxes_collide(a, b) == boxes_collide(b, a)

    @settings(max_examples=100, deadline=None)
    @given(
        dx=st.floats(-4, 4), dy=st.floats(-4, 4),
        tx=st.floats(-50, 50), ty=st.floats(-50, 50),
        rot=st.floats(-math.pi, math.pi),
    )
    def test_rigid_transform_invariance(self, dx, dy, tx, ty, rot):
        a = OrientedBox(0.0, 0.0, 0.4, 4.0, 1.8)
        b = OrientedBox(dx, dy, -0.7, 3.0, 1.5)

        def moved(bb):
            c, s = math.cos(rot), math.sin(rot)
            return OrientedBox(
                c * bb.cx - s * bb.cy + tx,
                s * bb.cx + c * bb.cy + ty,
                bb.heading + rot,
                bb.length,
                bb.width,
            )

        assert boxes_collide(a, b) == boxes_collide(moved(a), moved(b))
        assert box_distance(moved(a), moved(b)) == pytest.approx(
            box_distance(a, b), abs=1e-9
        )


class TestDistance:
    def test_colliding_boxes_distance_zero(self):
        assert box_distance(box(0, 0, 0, 4, 2), box(1, 0, 0.5, 4, 2)) == 0.0

    def test_face_gap(self):
        assert box_distance(box(0, 0), box(3, 0)) == pytest.approx(2.0)

    def test_rotated_pair_against_boundary_sampling(self, rng):
        a = OrientedBox(0.0, 0.0, 0.35, 4.2, 1.7)
        b = OrientedBox(7.0, 3.0, -1.1, 3.6, 2.1)

        def boundary_points(bb, n):
            corners = bb.corners()
            pts = []
            for i in range(4):
                p0, p1 = corners[i], corners[(i + 1) % 4]
                ts = np.linspace(0, 1, n, endpoint=False)
                pts.append(p0[None, :] + ts[:, None] * (p1 - p0)[None, :])
            return np.vstack(pts)

        pa = boundary_points(a, 2500)
        pb = boundary_points(b, 2500)
        d2 = ((pa[:, None, :] - pb[None, :, :]) ** 2).sum(-1)
        oracle = math.sqrt(d2.min())
        assert box_distance(a, b) == pytest.approx(oracle, abs=1e-6)

    def test_distance_zero_iff_collide(self, rng):
        for _ in range(300):
            a = OrientedBox(*rng.uniform(-4, 4, 2), rng.uniform(-3, 3),
                            rng.uniform(0.5, 5), rng.uniform(0.5, 3))
            b = OrientedBox(*rng.uniform(-4, 4, 2), rng.uniform(-3, 3),
                            rng.uniform(0.5, 5), rng.uniform(0.5, 3))
            assert (box_distance(a, b) == 0.0) == boxes_collide(a, b)

    def test_triangle_style_bound(self, rng):
        for _ in range(200):
            boxes = [
                OrientedBox(*rng.uniform(-8, 8, 2), rng.uniform(-3, 3),
                            rng.uniform(0.5, 5), rng.uniform(0.5, 3))
                for _ in range(3)
            ]
            a, b, c = boxes
            diam_b = math.hypot(b.length, b.width)
            assert box_distance(a, c) <= (
                box_distance(a, b) + box_distance(b, c) + diam_b + 1e-9
            )


def test_invalid_shapes_rejected():
    with pytest.raises(ValueError):
        OrientedBox(0, 0, 0, 0.0, 1.0)
    with pytest.raises(ValueError):
        OrientedBox(0, 0, 0, 1.0, -2.0)


def test_heading_normalized():
    b = OrientedBox(0, 0, 3 * math.pi, 1, 1)
    assert -math.pi < b.heading <= math.pi
