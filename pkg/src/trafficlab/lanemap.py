"""Lane-graph maps: loading, route search, projection, drivable-area tests."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels

DEFAULT_MAX_DEPTH = 10  # segments; covers an 8 s horizon at urban speeds
DEFAULT_LANE_WIDTH = 3.5
BOUNDARY_EPS = 1e-9


class MapError(ValueError):
    """Raised for unparseable or invariant-violating map data."""


@dataclass(frozen=True)
class LaneSegment:
    id: str
    centerline: np.ndarray  # (n, 2) meters
    width: float
    successors: tuple[str, ...]


@dataclass
class LaneGraph:
    segments: dict[str, LaneSegment]
    drivable: list[np.ndarray]  # simple polygons, (m, 2) each

    def successor_edge_count(self) -> int:
        return sum(len(s.successors) for s in self.segments.values())


@dataclass(frozen=True)
class Route:
    """A successor-linked chain of segments with a concatenated centerline."""

    segment_ids: tuple[str, ...]
    polyline: np.ndarray           # (m, 2)
    cumulative_arclength: np.ndarray  # (m,), strictly increasing
    vertex_widths: np.ndarray      # (m,), lane width of each vertex's segment

    @property
    def length(self) -> float:
        return float(self.cumulative_arclength[-1])

    def point_at(self, s: float) -> np.ndarray:
        """Interpolated point at arclength ``s`` (clamped to the route)."""
        cum = self.cumulative_arclength
        s = min(max(s, cum[0]), cum[-1])
        i = int(np.searchsorted(cum, s, side="right")) - 1
        i = min(max(i, 0), len(cum) - 2)
        span = cum[i + 1] - cum[i]
        t = (s - cum[i]) / span
        return self.polyline[i] + t * (self.polyline[i + 1] - self.polyline[i])

    def heading_at(self, s: float) -> float:
        cum = self.cumulative_arclength
        s = min(max(s, cum[0]), cum[-1])
        i = int(np.searchsorted(cum, s, side="right")) - 1
        i = min(max(i, 0), len(cum) - 2)
        d = self.polyline[i + 1] - self.polyline[i]
        return math.atan2(d[1], d[0])

    def width_at(self, s: float) -> float:
        cum = self.cumulative_arclength
        s = min(max(s, cum[0]), cum[-1])
        i = int(np.searchsorted(cum, s, side="right")) - 1
        i = min(max(i, 0), len(cum) - 2)
        return float(self.vertex_widths[i])


def _validate_segment(sid: str, centerline: np.ndarray, width: float) -> None:
    if centerline.ndim != 2 or centerline.shape[1] != 2 or centerline.shape[0] < 2:
        raise MapError(f"segment '{sid}': degenerate centerline (needs >= 2 2D points)")
    steps = np.linalg.norm(np.diff(centerline, axis=0), axis=1)
    if np.any(steps <= 1e-12):
        raise MapError(f"segment '{sid}': degenerate centerline (repeated consecutive points)")
    if not width > 0:
        raise MapError(f"segment '{sid}': width must be positive, got {width}")


def _validate_polygon(poly: np.ndarray, index: int) -> None:
    if poly.ndim != 2 or poly.shape[1] != 2 or poly.shape[0] < 3:
        raise MapError(f"drivable polygon #{index}: needs >= 3 2D points")
    n = poly.shape[0]
    for i in range(n):
        a1, a2 = poly[i], poly[(i + 1) % n]
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or (i + 1) % n == j:
                continue  # adjacent edges share a vertex by construction
            b1, b2 = poly[j], poly[(j + 1) % n]
            if kernels.segments_intersect(
                a1[0], a1[1], a2[0], a2[1], b1[0], b1[1], b2[0], b2[1]
            ):
                raise MapError(f"drivable polygon #{index}: self-intersecting")


def lane_graph_from_dict(data: dict) -> LaneGraph:
    """Build and validate a LaneGraph from the scenario-file ``map`` section."""
    segments: dict[str, LaneSegment] = {}
    for raw in data.get("segments", []):
        sid = str(raw["id"])
        if sid in segments:
            raise MapError(f"duplicate segment id '{sid}'")
        centerline = np.asarray(raw["centerline"], dtype=float)
        width = float(raw.get("width", DEFAULT_LANE_WIDTH))
        _validate_segment(sid, centerline, width)
        segments[sid] = LaneSegment(
            id=sid,
            centerline=centerline,
            width=width,
            successors=tuple(str(s) for s in raw.get("successors", [])),
        )
    for seg in segments.values():
        for succ in seg.successors:
            if succ not in segments:
                raise MapError(f"dangling successor '{succ}' in segment '{seg.id}'")
    drivable = []
    for i, raw_poly in enumerate(data.get("drivable", [])):
        poly = np.asarray(raw_poly, dtype=float)
        _validate_polygon(poly, i)
        drivable.append(poly)
    return LaneGraph(segments=segments, drivable=drivable)


def load_map(path) -> LaneGraph:
    """Load the map section of a scenario file."""
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise MapError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    except OSError as exc:
        raise MapError(f"{path}: {exc}") from exc
    if "map" not in data:
        raise MapError(f"{path}: missing 'map' section")
    return lane_graph_from_dict(data["map"])


def build_route(graph: LaneGraph, segment_ids) -> Route:
    """Concatenate segment centerlines into a Route (junction points deduped)."""
    ids = tuple(segment_ids)
    pts: list[np.ndarray] = []
    widths: list[float] = []
    prev = None
    for k, sid in enumerate(ids):
        seg = graph.segments[sid]
        if prev is not None and sid not in graph.segments[prev].successors:
            raise MapError(f"'{sid}' is not a successor of '{prev}'")
        cl = seg.centerline
        start = 0
        if pts and np.linalg.norm(cl[0] - pts[-1]) <= 1e-9:
            start = 1
        for p in cl[start:]:
            pts.append(p)
            widths.append(seg.width)
        prev = sid
    polyline = np.asarray(pts, dtype=float)
    steps = np.linalg.norm(np.diff(polyline, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(steps)])
    if np.any(steps <= 0):
        raise MapError(f"route {ids}: zero-length step after concatenation")
    return Route(
        segment_ids=ids,
        polyline=polyline,
        cumulative_arclength=cum,
        vertex_widths=np.asarray(widths, dtype=float),
    )


def search_routes(graph: LaneGraph, start_segment: str, max_depth: int = DEFAULT_MAX_DEPTH):
    """Every simple successor path from ``start_segment``, each extended
    maximally or truncated at ``max_depth`` segments; lexicographic order."""
    if start_segment not in graph.segments:
        raise MapError(f"unknown start segment '{start_segment}'")
    if max_depth < 1:
        raise ValueError("max_depth must be >= 1")
    paths: list[tuple[str, ...]] = []

    def dfs(path: list[str]) -> None:
        if len(path) == max_depth:
            paths.append(tuple(path))
            return
        nxt = [s for s in sorted(graph.segments[path[-1]].successors) if s not in path]
        if not nxt:
            paths.append(tuple(path))
            return
        for s in nxt:
            path.append(s)
            dfs(path)
            path.pop()

    dfs([start_segment])
    paths.sort()
    return [build_route(graph, p) for p in paths]


def project_to_route(route: Route, point) -> tuple[np.ndarray, float, float]:
    """Closest route point to ``point``: (projection, deviation, arclength)."""
    xs = np.ascontiguousarray(route.polyline[:, 0])
    ys = np.ascontiguousarray(route.polyline[:, 1])
    cum = np.ascontiguousarray(route.cumulative_arclength)
    qx, qy, d, s = kernels.polyline_project(xs, ys, cum, float(point[0]), float(point[1]))
    return np.array([qx, qy]), float(d), float(s)


def point_on_road(graph: LaneGraph, point) -> bool:
    px, py = float(point[0]), float(point[1])
    for poly in graph.drivable:
        xs = np.ascontiguousarray(poly[:, 0])
        ys = np.ascontiguousarray(poly[:, 1])
        if kernels.point_in_polygon(xs, ys, px, py, BOUNDARY_EPS):
            return True
    return False


def is_off_road(graph: LaneGraph, trajectory) -> bool:
    """True iff any trajectory point lies outside every drivable polygon.

    Points exactly on a polygon edge count as on-road.
    """
    traj = np.asarray(trajectory, dtype=float)
    if traj.size == 0:
        raise ValueError("trajectory must be non-empty")
    for p in traj.reshape(-1, traj.shape[-1])[:, :2]:
        if not point_on_road(graph, p):
            return True
    return False


def nearest_segment(graph: LaneGraph, point, heading: float | None = None):
    """Best (segment id, deviation) for a position, preferring aligned lanes.

    Segments whose local direction opposes ``heading`` are penalized so a
    vehicle is matched to its own lane rather than oncoming traffic.
    """
    best_id, best_cost, best_dev = None, math.inf, math.inf
    for sid in sorted(graph.segments):
        seg = graph.segments[sid]
        route = build_route(graph, (sid,))
        _, dev, s = project_to_route(route, point)
        cost = dev
        if heading is not None:
            misalign = abs(kernels.wrap_angle(route.heading_at(s) - heading))
            cost += 5.0 * misalign  # ~5 m penalty per radian of misalignment
        if cost < best_cost:
            best_id, best_cost, best_dev = sid, cost, dev
    if best_id is None:
        raise MapError("map has no segments")
    return best_id, best_dev


def routes_from_position(
    graph: LaneGraph, point, heading: float | None = None,
    max_depth: int = DEFAULT_MAX_DEPTH,
):
    """Feasible routes for an agent at ``point``: DFS from its matched segment."""
    sid, _ = nearest_segment(graph, point, heading)
    return search_routes(graph, sid, max_depth)
