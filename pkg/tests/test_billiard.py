import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from knudsen.billiard import (CORNER, OK, PURE_FLIP, PURE_IDENTITY, dump_trajectory_csv,
                              first_hit, reflect, single_collision_fraction,
                              single_collision_stats, trace_batch, trace_cell)
from knudsen.errors import (CornerSignal, NonterminatingTrajectoryError, TangencySignal,
                            TrajectoryRejected)
from knudsen.geometry import (make_bumps, make_bumps_with_wall, make_flat, make_mixture,
                              make_two_bumps)

SYMMETRIC = [make_bumps(0.4), make_bumps(2.0), make_mixture(0.5), make_two_bumps(0.15),
             make_two_bumps(-0.2), make_bumps_with_wall(0.3, 0.1), make_bumps_with_wall(0.3, -0.1)]


def householder(v, n):
    n = np.asarray(n, float)
    H = np.eye(2) - 2 * np.outer(n, n)
    return H @ v


class TestReflect:
    def test_normal_incidence(self):
        assert np.allclose(reflect([0, -1], [0, 1]), [0, 1])

    @pytest.mark.parametrize("th", [0.1, 0.7, 1.3])
    def test_flat_wall(self, th):
        out = reflect([math.cos(th), -math.sin(th)], [0, 1])
        assert np.allclose(out, [math.cos(th), math.sin(th)])

    def test_oblique_householder(self):
        n = np.array([1, 1]) / math.sqrt(2)
        v = np.array([math.cos(-2.0), math.sin(-2.0)])
        out = reflect(v, n)
        assert np.allclose(out, householder(v, n))
        assert np.dot(out, n) == pytest.approx(-np.dot(v, n))
        assert np.hypot(*out) == pytest.approx(1.0, abs=1e-15)

    def test_tangent(self):
        with pytest.raises(TangencySignal):
            reflect([1.0, 0.0], [0.0, 1.0])


class TestFirstHit:
    def test_flat_down(self):
        h = first_hit(make_flat(), (0.5, 0.0), (0.0, -1.0))
        assert h.kind == "boundary" and np.allclose(h.point, (0.5, 0.0))

    def test_semicircle_apex(self):
        p = make_bumps(2.0)
        h = first_hit(p, (0.5, p.ref_height), (0.0, -1.0))
        assert h.kind == "boundary"
        assert h.t == pytest.approx(p.ref_height + 0.5)
        assert np.allclose(h.point, (0.5, -0.5))

    def test_earliest_root_dense_oracle(self):
        p = make_bumps(1.3)
        arc = p.pieces[0]
        o = np.array([0.2, 0.0])
        d = np.array([math.cos(-0.4), math.sin(-0.4)])
        h = first_hit(p, o, d)
        # dense sampling along the ray: first point outside the circle
        ts = np.linspace(1e-9, 3, 3_000_001)
        pts = o + ts[:, None] * d
        outside = np.hypot(pts[:, 0] - arc.center[0], pts[:, 1] - arc.center[1]) > arc.radius
        assert h.t == pytest.approx(ts[np.argmax(outside)], abs=2e-6)

    def test_side_and_exit(self):
        p = make_bumps_with_wall(0.4, -0.2)
        h = first_hit(p, (0.9, -0.1), (1.0, 0.0))
        assert h.kind == "side" and h.point[0] == pytest.approx(1.0)
        h = first_hit(p, (0.9, -0.1), (0.0, 1.0))
        assert h.kind == "exit" and h.t == pytest.approx(0.1)


class TestTrace:
    @pytest.mark.parametrize("r,x", [(0.1, 0.3), (0.77, -0.99), (0.5, 0.0)])
    def test_flat_identity(self, r, x):
        t = trace_cell(make_flat(), r, x)
        assert t.exit.x == x and t.n_collisions == 1

    def test_flat_grid_exact(self):
        r, x = np.meshgrid(np.linspace(0.001, 0.999, 50), np.linspace(-0.999, 0.999, 77))
        res = trace_batch(make_flat(), r, x)
        assert np.array_equal(res.x_out, x)
        assert np.all(res.hit_class == PURE_IDENTITY)

    def test_small_curvature_single_collision(self):
        M = 400
        xm = -1 + (np.arange(M) + 0.5) * 2 / M
        inner = xm[np.abs(xm) < 0.95]
        r, x = np.meshgrid((np.arange(400) + 0.5) / 400, inner)
        res = trace_batch(make_bumps(0.2), r, x)
        assert np.all(res.collisions == 1)

    def test_semicircle_vertical_drop(self):
        t = trace_cell(make_bumps(2.0), 0.5, 0.0)
        assert t.n_collisions == 1 and abs(t.exit.x) < 1e-15

    def test_speed_conserved(self):
        t = trace_cell(make_two_bumps(-0.25), 0.37, 0.81)
        for kind, _, v in t.events:
            assert math.hypot(*v) == pytest.approx(1.0, abs=1e-12)

    def test_wrap_recorded(self):
        t = trace_cell(make_bumps_with_wall(0.4, -0.2), 0.95, 0.9)
        assert t.wraps >= 1

    def test_flip_class(self):
        res = trace_batch(make_bumps_with_wall(0.3, -0.1), [0.1], [0.9])
        if res.hit_class[0] == PURE_FLIP:
            assert res.x_out[0] == pytest.approx(-0.9)

    def test_cap(self):
        p = make_bumps(2.0)
        r = np.linspace(0.01, 0.99, 99)
        res = trace_batch(p, r, np.full(99, 0.97))
        k = int(np.argmax(res.collisions))
        assert res.collisions[k] >= 2
        with pytest.raises(NonterminatingTrajectoryError):
            trace_cell(p, r[k], 0.97, max_collisions=1)

    def test_entry_on_rim_corner(self):
        with pytest.raises(CornerSignal):
            trace_cell(make_bumps(0.5), 0.0, 0.0)

    def test_corner_status(self):
        # aim straight at the flat-top corner of a raised wall
        p = make_bumps_with_wall(0.3, 0.1)
        res = trace_batch(p, [0.15], [0.0])
        assert res.status[0] in (CORNER, OK)

    @pytest.mark.parametrize("p", SYMMETRIC, ids=lambda p: p.tag)
    def test_mirror_equivariance(self, p):
        rng = np.random.default_rng(1)
        r = rng.uniform(0, 1, 300)
        x = rng.uniform(-0.98, 0.98, 300)
        a = trace_batch(p, r, x)
        b = trace_batch(p, 1 - r, -x)
        ok = a.ok & b.ok
        assert np.max(np.abs(a.x_out[ok] + b.x_out[ok])) < 1e-9

    @pytest.mark.parametrize("p", SYMMETRIC, ids=lambda p: p.tag)
    def test_time_reversal(self, p):
        rng = np.random.default_rng(2)
        for r, x in zip(rng.uniform(0, 1, 25), rng.uniform(-0.95, 0.95, 25)):
            t = trace_cell(p, r, x)
            back = trace_cell(p, t.exit.r, -t.exit.x)
            assert back.exit.x == pytest.approx(-x, abs=1e-9)
            d = (back.exit.r - r + 0.5) % 1 - 0.5
            assert abs(d) < 1e-9

    def test_dump(self, tmp_path):
        t = trace_cell(make_two_bumps(0.1), 0.3, 0.6)
        path = tmp_path / "traj.csv"
        dump_trajectory_csv(t, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "event,kind,px,py,vx,vy"
        assert len(lines) == 1 + len(t.events)


class TestSingleCollision:
    def test_flat(self):
        assert single_collision_fraction(make_flat(), 0.4, 100) == 1.0

    def test_small_k_vertical(self):
        assert single_collision_fraction(make_bumps(0.1), 0.0, 1000) == 1.0

    def test_semicircle_grazing(self):
        frac, rejected = single_collision_stats(make_bumps(2.0), 0.98, 1000)
        assert frac < 1.0 and rejected == 0


@settings(max_examples=60, deadline=None)
@given(st.floats(0.05, 2.0), st.floats(0.0, 0.999), st.floats(-0.99, 0.99))
def test_bumps_reversal_property(K, r, x):
    p = make_bumps(K)
    try:
        t = trace_cell(p, r, x)
        back = trace_cell(p, t.exit.r, -t.exit.x)
    except TrajectoryRejected:
        assume(False)
    assert -1 < t.exit.x < 1
    assert back.exit.x == pytest.approx(-x, abs=1e-9)
