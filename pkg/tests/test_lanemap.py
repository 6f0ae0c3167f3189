import json
import math

import numpy as np
import pytest

from trafficlab import fixtures
from trafficlab.fileio import save_scenario
from trafficlab.lanemap import (
    MapError,
    build_route,
    is_off_road,
    lane_graph_from_dict,
    load_map,
    project_to_route,
    search_routes,
)


def chain_map():
    return {
        "segments": [
            {"id": "A", "centerline": [[0, 0], [10, 0]], "width": 3.5, "successors": ["B"]},
            {"id": "B", "centerline": [[10, 0], [20, 0]], "width": 3.5, "successors": ["C"]},
            {"id": "C", "centerline": [[20, 0], [30, 0]], "width": 3.5, "successors": []},
        ],
        "drivable": [],
    }


class TestLoad:
    def test_two_segment_file(self, tmp_path):
        scenario = fixtures.straight_scenario()
        path = tmp_path / "straight.json"
        save_scenario(scenario, path)
        graph = load_map(path)
        assert len(graph.segments) == 2
        assert graph.successor_edge_count() == 1

    def test_dangling_successor(self):
        data = chain_map()
        data["segments"][2]["successors"] = ["99"]
        with pytest.raises(MapError, match="dangling successor '99'"):
            lane_graph_from_dict(data)

    def test_degenerate_centerline(self):
        data = chain_map()
        data["segments"][0]["centerline"] = [[0, 0]]
        with pytest.raises(MapError, match="degenerate centerline"):
            lane_graph_from_dict(data)
        data = chain_map()
        data["segments"][0]["centerline"] = [[0, 0], [0, 0], [10, 0]]
        with pytest.raises(MapError, match="degenerate centerline"):
            lane_graph_from_dict(data)

    def test_nonpositive_width(self):
        data = chain_map()
        data["segments"][1]["width"] = 0.0
        with pytest.raises(MapError, match="width"):
            lane_graph_from_dict(data)

    def test_self_intersecting_polygon(self):
        data = chain_map()
        data["drivable"] = [[[0, 0], [4, 4], [4, 0], [0, 4]]]  # bow tie
        with pytest.raises(MapError, match="self-intersecting"):
            lane_graph_from_dict(data)

    def test_parse_error_carries_line(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{\n  "map": [,]\n}\n')
        with pytest.raises(MapError, match="line 2"):
            load_map(path)

    def test_intersection_fixture_counts(self, intersection_graph):
        assert len(intersection_graph.segments) == 12
        assert intersection_graph.successor_edge_count() == 8


class TestSearchRoutes:
    def test_linear_chain(self):
        graph = lane_graph_from_dict(chain_map())
        routes = search_routes(graph, "A", max_depth=3)
        assert [r.segment_ids for r in routes] == [("A", "B", "C")]

    def test_fork(self):
        graph = lane_graph_from_dict(fixtures.fork_map())
        routes = search_routes(graph, "A", max_depth=2)
        assert [r.segment_ids for r in routes] == [("A", "B"), ("A", "C")]

    def test_depth_truncation(self):
        graph = lane_graph_from_dict(chain_map())
        routes = search_routes(graph, "A", max_depth=2)
        assert [r.segment_ids for r in routes] == [("A", "B")]

    def test_intersection_three_exits(self, intersection_graph):
        routes = search_routes(intersection_graph, "w_in", max_depth=4)
        assert len(routes) == 3

    def test_unknown_start(self, intersection_graph):
        with pytest.raises(MapError, match="unknown start segment"):
            search_routes(intersection_graph, "nope")

    def _enumerate_paths(self, succ, start, max_depth):
        # Independent recursive enumeration of maximal simple paths.
        out = []

        def rec(path):
            if len(path) == max_depth:
                out.append(tuple(path))
                return
            nxt = [s for s in succ[path[-1]] if s not in path]
            if not nxt:
                out.append(tuple(path))
                return
            for s in nxt:
                rec(path + [s])

        rec([start])
        return sorted(out)

    def test_route_count_matches_exhaustive_oracle(self, rng):
        # Random graphs with <= 6 segments, including cycles.
        for trial in range(40):
            n = int(rng.integers(2, 7))
            ids = [f"s{i}" for i in range(n)]
            succ = {}
            segments = []
            for i, sid in enumerate(ids):
                succ[sid] = sorted(
                    ids[j] for j in range(n) if j != i and rng.random() < 0.35
                )
                segments.append(
                    {
                        "id": sid,
                        "centerline": [[10.0 * i, 0.0], [10.0 * i + 5.0, 0.0]],
                        "width": 3.5,
                        "successors": succ[sid],
                    }
                )
            graph = lane_graph_from_dict({"segments": segments, "drivable": []})
            depth = int(rng.integers(1, 5))
            routes = search_routes(graph, "s0", max_depth=depth)
            # Routes concatenate geometry; compare id sequences only.
            assert [r.segment_ids for r in routes] == self._enumerate_paths(succ, "s0", depth)


class TestProjection:
    def test_point_on_polyline(self):
        graph = lane_graph_from_dict(chain_map())
        route = build_route(graph, ("A", "B", "C"))
        proj, dev, s = project_to_route(route, (12.5, 0.0))
        assert dev == pytest.approx(0.0, abs=1e-12)
        assert s == pytest.approx(12.5)

    def test_perpendicular_foot(self):
        graph = lane_graph_from_dict(chain_map())
        route = build_route(graph, ("A", "B"))
        proj, dev, s = project_to_route(route, (5.0, 2.0))
        assert proj == pytest.approx([5.0, 0.0])
        assert dev == pytest.approx(2.0)
        assert s == pytest.approx(5.0)

    def test_l_shape_corner_against_dense_sampling(self):
        data = {
            "segments": [
                {"id": "A", "centerline": [[0, 0], [10, 0]], "width": 3.5, "successors": ["B"]},
                {"id": "B", "centerline": [[10, 0], [10, 10]], "width": 3.5, "successors": []},
            ],
            "drivable": [],
        }
        graph = lane_graph_from_dict(data)
        route = build_route(graph, ("A", "B"))
        point = np.array([11.5, -1.0])
        # Dense sampling oracle along the whole polyline.
        ts = np.linspace(0, 1, 200001)
        leg1 = np.column_stack([10 * ts, np.zeros_like(ts)])
        leg2 = np.column_stack([np.full_like(ts, 10.0), 10 * ts])
        samples = np.vstack([leg1, leg2])
        oracle = np.min(np.linalg.norm(samples - point, axis=1))
        _, dev, _ = project_to_route(route, point)
        assert dev == pytest.approx(oracle, abs=1e-5)

    def test_deviation_bounded_by_vertex_distances(self, rng):
        graph = lane_graph_from_dict(fixtures.fork_map())
        route = build_route(graph, ("A", "C"))
        for _ in range(100):
            p = rng.uniform(-5, 45, size=2)
            _, dev, _ = project_to_route(route, p)
            vertex_min = np.min(np.linalg.norm(route.polyline - p, axis=1))
            assert dev <= vertex_min + 1e-12

    def test_on_route_points_project_to_zero(self, rng):
        graph = lane_graph_from_dict(fixtures.fork_map())
        route = build_route(graph, ("A", "C"))
        length = route.length
        for s in rng.uniform(0, length, size=50):
            p = route.point_at(s)
            _, dev, _ = project_to_route(route, p)
            assert dev < 1e-9


class TestOffRoad:
    def test_inside_polygon(self, straight_scenario):
        graph = lane_graph_from_dict(straight_scenario["map"])
        assert not is_off_road(graph, [[10.0, 0.0], [50.0, 1.0]])

    def test_outside_everything(self, straight_scenario):
        graph = lane_graph_from_dict(straight_scenario["map"])
        assert is_off_road(graph, [[10.0, 0.0], [50.0, 4.0]])

    def test_boundary_point_is_on_road(self, straight_scenario):
        graph = lane_graph_from_dict(straight_scenario["map"])
        assert not is_off_road(graph, [[10.0, 3.0]])  # exactly on the edge

    def test_monotone_in_polygons(self, rng):
        base = {
            "segments": chain_map()["segments"],
            "drivable": [[[0, -2], [30, -2], [30, 2], [0, 2]]],
        }
        bigger = {
            "segments": chain_map()["segments"],
            "drivable": base["drivable"] + [[[25, -8], [40, -8], [40, 8], [25, 8]]],
        }
        g1 = lane_graph_from_dict(base)
        g2 = lane_graph_from_dict(bigger)
        for _ in range(200):
            traj = rng.uniform(-5, 45, size=(4, 2))
            if not is_off_road(g1, traj):
                assert not is_off_road(g2, traj)

    def test_empty_trajectory_rejected(self, straight_scenario):
        graph = lane_graph_from_dict(straight_scenario["map"])
        with pytest.raises(ValueError):
            is_off_road(graph, [])
