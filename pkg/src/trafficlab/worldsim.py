"""Episode engine: joint agent state, 10 Hz stepping, termination, and
synthetic reactivity-scenario construction."""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .dynamics import DT, ControlInput, VehiclePose, bicycle_step
from .fileio import EPISODE_FORMAT
from .lanemap import LaneGraph, Route, lane_graph_from_dict, project_to_route, routes_from_position

REPLAY = "log-replay"
FOLLOWER = "proposal-follower"
POLICY = "policy-controlled"

HISTORY_T = 2.0           # seconds of logged history before the world starts
ENDPOINT_RADIUS = 2.0     # meters; success threshold around an endpoint
STATIC_SHAPE = (4.0, 1.8)  # planted static vehicle, typical sedan
_T_TOL = 1e-6


class WorldError(ValueError):
    """Scenario/state violations the episode engine refuses to run with."""


@dataclass
class AgentState:
    id: str
    pose: VehiclePose
    shape: tuple[float, float]  # (length, width)
    controller: str = REPLAY
    log: np.ndarray | None = None  # (n, 5) rows of (t, x, y, psi, v)


@dataclass
class EndpointTarget:
    """Success condition for one controlled agent.

    ``max_speed`` gates success on being (nearly) stopped, used by the
    static-car reactivity scenarios where driving through the endpoint
    window at speed must not count as success.
    """

    point: np.ndarray
    radius: float = ENDPOINT_RADIUS
    max_speed: float | None = None


@dataclass
class EpisodeResult:
    outcome: str  # success | collision | timeout
    ticks_elapsed: int
    trajectories: dict[str, np.ndarray]


@dataclass
class World:
    graph: LaneGraph
    agents: dict[str, AgentState]
    horizon_ticks: int
    tick: int = 0
    dt: float = DT
    t0: float = HISTORY_T
    history: dict[str, np.ndarray] = field(default_factory=dict)
    events: list[tuple[int, str, str]] = field(default_factory=list)
    traj: dict[str, list[tuple]] = field(default_factory=dict)
    scenario_name: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def time(self) -> float:
        return self.t0 + self.tick * self.dt

    def controlled_ids(self) -> list[str]:
        return [a.id for a in self.agents.values() if a.controller != REPLAY]


def _log_row_at(log: np.ndarray, t: float) -> np.ndarray:
    idx = int(round((t - log[0, 0]) / DT))
    idx = min(max(idx, 0), log.shape[0] - 1)
    return log[idx]


def init_world(scenario: dict, unroll_horizon: float) -> World:
    """Place agents at their 2 s logged states and buffer the history."""
    if unroll_horizon <= 0:
        raise WorldError("unroll_horizon must be positive")
    graph = lane_graph_from_dict(scenario["map"])
    agents: dict[str, AgentState] = {}
    history: dict[str, np.ndarray] = {}
    for tr in scenario["tracks"]:
        tid = str(tr["id"])
        states = np.asarray(tr["states"], dtype=float)
        if states[0, 0] > _T_TOL or states[-1, 0] < HISTORY_T - _T_TOL:
            have = max(0.0, states[-1, 0] - states[0, 0])
            raise WorldError(
                f"agent '{tid}' has {have:.1f}s of history, needs [0, {HISTORY_T}]s"
            )
        row = _log_row_at(states, HISTORY_T)
        agents[tid] = AgentState(
            id=tid,
            pose=VehiclePose(x=row[1], y=row[2], psi=row[3], v=row[4]),
            shape=(float(tr["length"]), float(tr["width"])),
            controller=REPLAY,
            log=states,
        )
        history[tid] = states[states[:, 0] <= HISTORY_T + _T_TOL]
    world = World(
        graph=graph,
        agents=agents,
        horizon_ticks=int(round(unroll_horizon / DT)),
        history=history,
        scenario_name=str(scenario.get("name", "")),
        meta=copy.deepcopy(scenario.get("meta", {})),
    )
    for aid, ag in agents.items():
        world.traj[aid] = [(world.t0, ag.pose.x, ag.pose.y, ag.pose.psi, ag.pose.v)]
    return world


def step(world: World, controls: dict[str, ControlInput]):
    """Advance one tick; returns this tick's collision events.

    Replay agents follow their logs (frozen at the last pose once the log
    ends); every other agent advances by the bicycle model with its supplied
    control. Controls must be given for exactly the non-replay agents.
    """
    controlled = set(world.controlled_ids())
    given = set(controls)
    if given - controlled:
        bad = sorted(given - controlled)
        raise WorldError(f"control supplied for replay/unknown agent(s): {bad}")
    if controlled - given:
        raise WorldError(f"missing control for agent(s): {sorted(controlled - given)}")

    t_next = world.t0 + (world.tick + 1) * world.dt
    for ag in world.agents.values():
        if ag.controller == REPLAY:
            row = _log_row_at(ag.log, t_next)
            ag.pose = VehiclePose(x=row[1], y=row[2], psi=row[3], v=row[4])
        else:
            ag.pose = bicycle_step(ag.pose, controls[ag.id], ag.shape, world.dt)
    world.tick += 1

    ids = list(world.agents)
    xs = np.ascontiguousarray([world.agents[i].pose.x for i in ids], dtype=float)
    ys = np.ascontiguousarray([world.agents[i].pose.y for i in ids], dtype=float)
    hs = np.ascontiguousarray([world.agents[i].pose.psi for i in ids], dtype=float)
    ls = np.ascontiguousarray([world.agents[i].shape[0] for i in ids], dtype=float)
    ws = np.ascontiguousarray([world.agents[i].shape[1] for i in ids], dtype=float)
    events = []
    for i, j in kernels.collide_pairs(xs, ys, hs, ls, ws):
        a, b = sorted((ids[i], ids[j]))
        events.append((world.tick, a, b))
    world.events.extend(events)

    for aid, ag in world.agents.items():
        world.traj[aid].append((t_next, ag.pose.x, ag.pose.y, ag.pose.psi, ag.pose.v))
    return events


def _controlled_trajectories(world: World) -> dict[str, np.ndarray]:
    return {
        aid: np.asarray(world.traj[aid], dtype=float)
        for aid in world.controlled_ids()
    }


def check_termination(world: World, targets: dict[str, EndpointTarget]) -> EpisodeResult | None:
    """Collision (dominant) -> success (all targets reached) -> timeout."""
    if world.events:
        return EpisodeResult(
            outcome="collision",
            ticks_elapsed=world.events[0][0],
            trajectories=_controlled_trajectories(world),
        )
    if targets:
        reached = True
        for aid, tgt in targets.items():
            pose = world.agents[aid].pose
            dist = math.hypot(pose.x - tgt.point[0], pose.y - tgt.point[1])
            if dist > tgt.radius or (tgt.max_speed is not None and pose.v >= tgt.max_speed):
                reached = False
                break
        if reached:
            return EpisodeResult(
                outcome="success",
                ticks_elapsed=world.tick,
                trajectories=_controlled_trajectories(world),
            )
    if world.tick >= world.horizon_ticks:
        return EpisodeResult(
            outcome="timeout",
            ticks_elapsed=world.tick,
            trajectories=_controlled_trajectories(world),
        )
    return None


def build_episode_dump(world: World, result: EpisodeResult, seed=None) -> dict:
    """Persistable per-tick record of one finished episode."""
    return {
        "format": EPISODE_FORMAT,
        "scenario": world.scenario_name,
        "seed": seed,
        "dt": world.dt,
        "t0": world.t0,
        "meta": world.meta,
        "agents": [
            {
                "id": ag.id,
                "length": ag.shape[0],
                "width": ag.shape[1],
                "controller": ag.controller,
            }
            for ag in world.agents.values()
        ],
        "trajectories": {aid: [list(row) for row in rows] for aid, rows in world.traj.items()},
        "events": [[t, a, b] for t, a, b in world.events],
        "outcome": {"kind": result.outcome, "ticks_elapsed": result.ticks_elapsed},
    }


def infer_route(graph: LaneGraph, track: np.ndarray, at_t: float = HISTORY_T) -> Route:
    """The map route best matching an agent's logged motion.

    Candidates come from a depth-limited DFS rooted at the lane matched to
    the agent's pose; the winner minimizes the mean deviation of the logged
    future waypoints.
    """
    row = _log_row_at(track, at_t)
    routes = routes_from_position(graph, (row[1], row[2]), heading=row[3])
    future = track[track[:, 0] >= at_t - _T_TOL][::5, 1:3]
    best, best_cost = None, math.inf
    for route in routes:
        cost = 0.0
        for p in future:
            cost += project_to_route(route, p)[1]
        cost /= max(len(future), 1)
        if cost < best_cost:
            best, best_cost = route, cost
    if best is None:
        raise WorldError("no route found for agent")
    return best


def make_reactivity_scenario(
    base: dict, controlled_agent: str, gap: float, static_shape=STATIC_SHAPE
) -> dict:
    """Plant a stationary vehicle ``gap`` meters ahead on the agent's route.

    The returned scenario carries a ``meta.reactivity`` block with the
    stop-gated success target: stopping with a bumper gap in (0, 4] m counts
    as success, driving on is a collision, braking far too early times out.
    """
    if gap <= 0:
        raise WorldError("gap must be positive")
    graph = lane_graph_from_dict(base["map"])
    track = None
    for tr in base["tracks"]:
        if str(tr["id"]) == controlled_agent:
            track = np.asarray(tr["states"], dtype=float)
            ego_shape = (float(tr["length"]), float(tr["width"]))
    if track is None:
        raise WorldError(f"unknown agent '{controlled_agent}'")

    route = infer_route(graph, track)
    row = _log_row_at(track, HISTORY_T)
    _, _, s_ego = project_to_route(route, (row[1], row[2]))
    s_static = s_ego + gap
    if s_static > route.length:
        raise WorldError(
            f"gap {gap} m exceeds route (remaining {route.length - s_ego:.1f} m)"
        )
    pos = route.point_at(s_static)
    heading = route.heading_at(s_static)

    static_id = "static"
    existing = {str(tr["id"]) for tr in base["tracks"]}
    n = 0
    while static_id in existing:
        n += 1
        static_id = f"static{n}"

    t_end = max(float(np.asarray(tr["states"], dtype=float)[-1, 0]) for tr in base["tracks"])
    ticks = np.arange(0.0, t_end + DT / 2, DT)
    states = [[float(t), float(pos[0]), float(pos[1]), float(heading), 0.0] for t in ticks]

    out = copy.deepcopy(base)
    out["name"] = f"{base.get('name', 'scenario')}+gap{gap:g}"
    out["tracks"].append(
        {
            "id": static_id,
            "length": float(static_shape[0]),
            "width": float(static_shape[1]),
            "states": states,
        }
    )
    stop_s = s_static - 0.5 * static_shape[0] - 0.5 * ego_shape[0] - 2.0
    stop_point = route.point_at(stop_s)
    meta = out.setdefault("meta", {})
    meta["reactivity"] = {
        "controlled": controlled_agent,
        "static": static_id,
        "gap": float(gap),
        "stop_point": [float(stop_point[0]), float(stop_point[1])],
        "radius": ENDPOINT_RADIUS,
        "stop_speed": 0.5,
    }
    return out


def reactivity_target(scenario: dict) -> dict[str, EndpointTarget]:
    """Success target encoded by ``make_reactivity_scenario``, if any."""
    info = scenario.get("meta", {}).get("reactivity")
    if not info:
        return {}
    return {
        info["controlled"]: EndpointTarget(
            point=np.asarray(info["stop_point"], dtype=float),
            radius=float(info["radius"]),
            max_speed=float(info["stop_speed"]),
        )
    }
