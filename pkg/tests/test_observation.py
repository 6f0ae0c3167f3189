import copy
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trafficlab import fixtures
from trafficlab.dynamics import VehiclePose
from trafficlab.observation import (
    OBS_DIM,
    OBS_LAYOUT,
    SOCIAL_SLOTS,
    TrackingTarget,
    build_observation,
    compute_reward,
    filter_social,
    obs_layout_hash,
)
from trafficlab.worldsim import init_world


def world_with(agent_poses, shapes=None):
    """A world whose agents sit at the given poses."""
    scenario = fixtures.straight_scenario()
    scenario["map"]["drivable"] = []  # irrelevant here
    tracks = []
    for aid, (x, y, psi, v) in agent_poses.items():
        tracks.append(
            {
                "id": aid,
                "length": (shapes or {}).get(aid, (4.2, 1.9))[0],
                "width": (shapes or {}).get(aid, (4.2, 1.9))[1],
                "states": [[k * 0.1, x, y, psi, v] for k in range(101)],
            }
        )
    scenario["tracks"] = tracks
    return init_world(scenario, 8.0)


def straight_guide(x0=0.0, y0=0.0, psi=0.0, v=5.0, n=80):
    c, s = math.cos(psi), math.sin(psi)
    return np.array([[x0 + v * 0.1 * (i + 1) * c, y0 + v * 0.1 * (i + 1) * s] for i in range(n)])


class TestFilterSocial:
    def test_distance_cutoff(self):
        world = world_with({"ego": (0, 0, 0, 5), "far": (31.0, 0, 0, 5)})
        assert filter_social(world, "ego") == []

    def test_just_inside_distance(self):
        world = world_with({"ego": (0, 0, 0, 5), "near": (29.5, 0, 0, 5)})
        assert filter_social(world, "ego") == ["near"]

    def test_lateral_cutoff(self):
        world = world_with({"ego": (0, 0, 0, 5), "right": (0.0, -13.0, 0, 5)})
        assert filter_social(world, "ego") == []
        world = world_with({"ego": (0, 0, 0, 5), "ok": (0.0, -11.0, 0, 5)})
        assert filter_social(world, "ego") == ["ok"]

    def test_lateral_cutoff_in_ego_frame(self):
        # ego heading +y: world -x is ego +y; a car at world x=+13 sits at
        # ego-frame y=-13 and is dropped.
        world = world_with({"ego": (0, 0, math.pi / 2, 5), "c": (13.0, 0.0, 0, 5)})
        assert filter_social(world, "ego") == []

    def test_top_five_nearest(self):
        poses = {"ego": (0, 0, 0, 5)}
        for i in range(7):
            poses[f"v{i}"] = (5.0 + 3.0 * i, 0.5, 0, 5)
        world = world_with(poses)
        kept = filter_social(world, "ego")
        assert kept == ["v0", "v1", "v2", "v3", "v4"]

    def test_never_includes_ego(self):
        world = world_with({"ego": (0, 0, 0, 5)})
        assert filter_social(world, "ego") == []

    def test_tie_broken_by_id(self):
        world = world_with({"ego": (0, 0, 0, 5), "b": (10, 0, 0, 5), "a": (-6.0, 8.0, 0, 5)})
        # equal center distances (both 10 m): id order decides
        assert filter_social(world, "ego") == ["a", "b"]


class TestBuildObservation:
    def test_always_48_long(self):
        for n_social in range(7):
            poses = {"ego": (0, 0, 0, 5)}
            for i in range(n_social):
                poses[f"v{i}"] = (6.0 + 2.5 * i, 0.5, 0.2, 3.0)
            world = world_with(poses)
            obs = build_observation(
                world, "ego", TrackingTarget(np.array([5.0, 0.0]), 5.0), straight_guide()
            )
            assert obs.vector().shape == (OBS_DIM,)

    def test_empty_social_slots_zero(self):
        world = world_with({"ego": (0, 0, 0, 5)})
        obs = build_observation(
            world, "ego", TrackingTarget(np.array([5.0, 0.0]), 5.0), straight_guide()
        )
        assert np.all(obs.o_social == 0.0)

    def test_target_at_ego_gives_zero_relpos(self):
        world = world_with({"ego": (3.0, 1.0, 0.4, 5)})
        obs = build_observation(
            world, "ego", TrackingTarget(np.array([3.0, 1.0]), 5.0), straight_guide(3.0, 1.0, 0.4)
        )
        assert obs.o_r[0] == pytest.approx(0.0, abs=1e-12)
        assert obs.o_r[1] == pytest.approx(0.0, abs=1e-12)

    def test_two_vehicle_fixture_matches_hand_transform(self):
        ego = (10.0, -2.0, 0.6, 4.5)
        npc = (16.0, 1.0, 1.1, 2.5)
        world = world_with({"ego": ego, "npc": npc}, shapes={"ego": (4.2, 1.9), "npc": (3.8, 1.7)})
        target = TrackingTarget(np.array([14.0, 0.5]), 6.0)
        guide = straight_guide(10.0, -2.0, 0.6, 4.5)
        obs = build_observation(world, "ego", target, guide)

        # independent ego-frame transform
        c, s = math.cos(ego[2]), math.sin(ego[2])

        def to_ego(px, py):
            dx, dy = px - ego[0], py - ego[1]
            return (c * dx + s * dy, -s * dx + c * dy)

        tx, ty = to_ego(14.0, 0.5)
        assert obs.o_r[0] == pytest.approx(tx, abs=1e-12)
        assert obs.o_r[1] == pytest.approx(ty, abs=1e-12)
        assert obs.o_r[2] == pytest.approx(6.0 - 4.5, abs=1e-12)
        # guide is straight along ego heading: trend errors all zero
        assert obs.o_r[3:] == pytest.approx(np.zeros(5), abs=1e-9)

        assert obs.o_e == pytest.approx([4.2, 1.9, 4.5, 4.5, 0.0])

        nx, ny = to_ego(npc[0], npc[1])
        rel_psi = npc[2] - ego[2]
        assert obs.o_social[0] == pytest.approx(
            [3.8, 1.7, nx, ny, 2.5, math.cos(rel_psi), math.sin(rel_psi)], abs=1e-12
        )
        assert np.all(obs.o_social[1:] == 0.0)

    def test_route_trend_reports_heading_changes(self):
        world = world_with({"ego": (0, 0, 0, 5)})
        # guide bends 90 degrees upward ahead of the ego
        ahead = [[1.0 + 0.5 * i, 0.0] for i in range(4)]
        bend = [[3.0, 0.5 + 0.5 * i] for i in range(10)]
        guide = np.array(ahead + bend)
        obs = build_observation(world, "ego", TrackingTarget(np.array([1.0, 0.0]), 5.0), guide)
        assert obs.o_r[3] == pytest.approx(0.0, abs=1e-9)
        assert obs.o_r[7] == pytest.approx(math.pi / 2, abs=1e-9)

    def test_short_guide_repeats_last_waypoint(self):
        world = world_with({"ego": (0, 0, 0, 5)})
        guide = np.array([[1.0, 0.0], [2.0, 0.0]])
        obs = build_observation(world, "ego", TrackingTarget(np.array([1.0, 0.0]), 5.0), guide)
        assert obs.vector().shape == (OBS_DIM,)
        assert obs.o_r[3:] == pytest.approx(np.zeros(5), abs=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(
        tx=st.floats(-200, 200), ty=st.floats(-200, 200),
        rot=st.floats(-math.pi, math.pi),
    )
    def test_rigid_motion_equivariance(self, tx, ty, rot):
        ego = (10.0, -2.0, 0.6, 4.5)
        npc = (16.0, 1.0, 1.1, 2.5)
        target = np.array([14.0, 0.5])
        guide = straight_guide(10.0, -2.0, 0.6, 4.5)

        def moved(p):
            c, s = math.cos(rot), math.sin(rot)
            return (c * p[0] - s * p[1] + tx, s * p[0] + c * p[1] + ty, p[2] + rot, p[3])

        def moved_pt(p):
            c, s = math.cos(rot), math.sin(rot)
            return np.array([c * p[0] - s * p[1] + tx, s * p[0] + c * p[1] + ty])

        w1 = world_with({"ego": ego, "npc": npc})
        o1 = build_observation(w1, "ego", TrackingTarget(target, 6.0), guide).vector()
        w2 = world_with({"ego": moved(ego), "npc": moved(npc)})
        guide2 = np.array([moved_pt(p) for p in guide])
        o2 = build_observation(
            w2, "ego", TrackingTarget(moved_pt(target), 6.0), guide2
        ).vector()
        np.testing.assert_allclose(o1, o2, atol=1e-9)


class TestReward:
    def test_collision_at_full_speed(self):
        r = compute_reward(True, 10.0, 0.0)
        assert r.r_collision == -1000.0

    def test_perfect_tracking(self):
        r = compute_reward(False, 5.0, 0.0)
        assert r.r_collision == 0.0
        assert r.r_tracking == 1.0
        assert r.total == pytest.approx(0.5)

    def test_distance_five(self):
        r = compute_reward(False, 5.0, 5.0)
        assert r.total == pytest.approx(1.0 - 1.0 - 0.5)

    def test_monotone_in_distance(self, rng):
        ds = np.sort(rng.uniform(0, 30, 50))
        totals = [compute_reward(False, 3.0, d).total for d in ds]
        assert all(a >= b for a, b in zip(totals, totals[1:]))

    def test_negative_distance_rejected(self):
        with pytest.raises(ValueError):
            compute_reward(False, 3.0, -0.1)


def test_layout_hash_is_stable():
    assert sum(n for _, n in OBS_LAYOUT) == OBS_DIM
    h1 = obs_layout_hash()
    assert isinstance(h1, str) and len(h1) == 64
    assert h1 == obs_layout_hash()
