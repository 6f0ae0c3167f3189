"""Deterministic scenario/proposal fixtures: unit-test maps, static-car
reactivity batches, and defect-injected generation batches."""

from __future__ import annotations

import math

import numpy as np

from .dynamics import DT
from .fileio import SCENARIO_FORMAT
from .lanemap import build_route, lane_graph_from_dict
from .proposals import ProposalSet, generate_proposals
from .worldsim import make_reactivity_scenario

HORIZON = 8.0
DURATION = 10.0  # seconds of logged track per agent


def _track(tid, length, width, states):
    return {
        "id": tid,
        "length": float(length),
        "width": float(width),
        "states": [[float(c) for c in row] for row in states],
    }


def _const_track(tid, x0, y0, psi, v, duration=DURATION, length=4.0, width=1.8):
    states = []
    c, s = math.cos(psi), math.sin(psi)
    for i in range(int(round(duration / DT)) + 1):
        t = i * DT
        states.append([t, x0 + v * t * c, y0 + v * t * s, psi, v])
    return _track(tid, length, width, states)


# ---------------------------------------------------------------------------
# Maps

def straight_map() -> dict:
    return {
        "segments": [
            {"id": "A", "centerline": [[0.0, 0.0], [60.0, 0.0]], "width": 3.6,
             "successors": ["B"]},
            {"id": "B", "centerline": [[60.0, 0.0], [120.0, 0.0]], "width": 3.6,
             "successors": []},
        ],
        "drivable": [[[-5.0, -3.0], [125.0, -3.0], [125.0, 3.0], [-5.0, 3.0]]],
    }


def fork_map() -> dict:
    return {
        "segments": [
            {"id": "A", "centerline": [[0.0, 0.0], [20.0, 0.0]], "width": 3.5,
             "successors": ["B", "C"]},
            {"id": "B", "centerline": [[20.0, 0.0], [40.0, 0.0]], "width": 3.5,
             "successors": []},
            {"id": "C", "centerline": [[20.0, 0.0], [30.0, 2.0], [40.0, 6.0]], "width": 3.5,
             "successors": []},
        ],
        "drivable": [[[-2.0, -4.0], [42.0, -4.0], [42.0, 10.0], [-2.0, 10.0]]],
    }


def _arc(cx, cy, radius, a0, a1, n=19):
    angles = np.linspace(a0, a1, n)
    return [[cx + radius * math.cos(a), cy + radius * math.sin(a)] for a in angles]


def intersection_map() -> dict:
    """Four-way junction: 12 segments, 8 successor edges, 3 exits from w_in."""
    lane = 1.75
    w = 3.5
    seg = lambda sid, pts, succ: {
        "id": sid, "centerline": pts, "width": w, "successors": succ
    }
    return {
        "segments": [
            seg("w_in", [[-50.0, -lane], [-10.0, -lane]], ["w_left", "w_right", "w_straight"]),
            seg("w_straight", [[-10.0, -lane], [10.0, -lane]], ["e_out"]),
            seg("e_out", [[10.0, -lane], [50.0, -lane]], []),
            seg("w_left", _arc(-10.0, 10.0, 11.75, -math.pi / 2, 0.0), ["n_out"]),
            seg("n_out", [[lane, 10.0], [lane, 50.0]], []),
            seg("w_right", _arc(-10.0, -10.0, 8.25, math.pi / 2, 0.0), ["s_out"]),
            seg("s_out", [[-lane, -10.0], [-lane, -50.0]], []),
            seg("e_in", [[50.0, lane], [10.0, lane]], ["e_straight"]),
            seg("e_straight", [[10.0, lane], [-10.0, lane]], ["w_out"]),
            seg("w_out", [[-10.0, lane], [-50.0, lane]], []),
            seg("n_in", [[-lane, 50.0], [-lane, 10.0]], []),
            seg("s_in", [[lane, -50.0], [lane, -10.0]], []),
        ],
        "drivable": [
            [[-55.0, -5.0], [55.0, -5.0], [55.0, 5.0], [-55.0, 5.0]],
            [[-5.0, -55.0], [5.0, -55.0], [5.0, 55.0], [-5.0, 55.0]],
        ],
    }


# ---------------------------------------------------------------------------
# Unit-test scenarios

def straight_scenario(name="straight", v0=5.0, x0=4.0, duration=DURATION) -> dict:
    return {
        "format": SCENARIO_FORMAT,
        "name": name,
        "map": straight_map(),
        "tracks": [_const_track("ego", x0, 0.0, 0.0, v0, duration)],
    }


def two_agent_scenario(name="pair") -> dict:
    scenario = straight_scenario(name)
    scenario["tracks"].append(_const_track("npc", 20.0, 1.2, 0.0, 4.0))
    return scenario


def intersection_scenario(name="junction", v0=6.0, x0=-45.0) -> dict:
    lane = 1.75
    return {
        "format": SCENARIO_FORMAT,
        "name": name,
        "map": intersection_map(),
        "tracks": [_const_track("car0", x0, -lane, 0.0, v0)],
    }


# ---------------------------------------------------------------------------
# Reactivity batch (static car planted ahead of a moving agent)

def reactivity_batch(count: int, seed: int) -> list[dict]:
    """Solvable stopping tasks: gap always exceeds the braking distance."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(count):
        v0 = float(rng.uniform(4.0, 7.5))
        brake = v0 * v0 / 6.0  # full -3 m/s^2 braking distance
        gap = brake + float(rng.uniform(6.0, 14.0))
        base = straight_scenario(name=f"react{i:03d}", v0=v0)
        out.append(make_reactivity_scenario(base, "ego", gap))
    return out


def reactivity_task_proposal(scenario: dict, horizon: float = HORIZON) -> ProposalSet:
    """Constant-speed route proposal for the controlled agent."""
    graph = lane_graph_from_dict(scenario["map"])
    agent = scenario["meta"]["reactivity"]["controlled"]
    for tr in scenario["tracks"]:
        if str(tr["id"]) == agent:
            states = np.asarray(tr["states"], dtype=float)
            history = states[states[:, 0] <= 2.0 + 1e-6]
            return generate_proposals(graph, history, k=1, horizon=horizon, seed=0, agent=agent)
    raise ValueError(f"agent '{agent}' missing from scenario")


# ---------------------------------------------------------------------------
# Generation batch with injected defects

def _route_mode(route, s0: float, v0: float, accel: float, horizon: float) -> np.ndarray:
    n = int(round(horizon / DT))
    pts = np.empty((n, 2))
    s, v = s0, v0
    for i in range(n):
        s += v * DT
        pts[i] = route.point_at(s)
        v = min(max(v + accel * DT, 0.0), 10.0)
    return pts


def _zigzag(mode: np.ndarray, times: np.ndarray, amplitude=0.35, freq=1.0) -> np.ndarray:
    out = mode.copy()
    out[:, 1] += amplitude * np.sin(2.0 * math.pi * freq * (times - times[0]))
    return out


def _speed_spike(route, s0: float, v0: float, horizon: float, at: float = 2.0) -> np.ndarray:
    """Route-following waypoints with a one-tick +6 m/s jump (an AF defect)."""
    n = int(round(horizon / DT))
    pts = np.empty((n, 2))
    s, v = s0, v0
    for i in range(n):
        t = (i + 1) * DT
        speed = v + 6.0 if abs(t - at) < DT / 2 else v
        s += speed * DT
        pts[i] = route.point_at(s)
    return pts


def generation_batch(count: int, seed: int) -> list[tuple[dict, dict[str, ProposalSet]]]:
    """(scenario, proposals) pairs with injected infeasibilities.

    Roughly 60% are junction scenes whose selected straight mode rams a
    parked lead (some with a zigzag heading defect, some with an extra
    acceleration spike, a few AF-only or fully clean); the rest are clean
    straight-road scenes. Mode sets keep genuinely divergent alternatives so
    diversity metrics have something to preserve.
    """
    rng = np.random.default_rng(seed)
    lane = 1.75
    batch = []
    n_junction = int(round(count * 0.6))
    for i in range(count):
        if i < n_junction:
            v0 = float(rng.uniform(5.0, 7.0))
            scenario = intersection_scenario(name=f"gen{i:03d}", v0=v0)
            graph = lane_graph_from_dict(scenario["map"])
            defect = ["collision", "collision", "collision", "collision-zigzag",
                      "collision-af", "af", "clean"][int(rng.integers(7))]
            if defect.startswith("collision"):
                x_lead = float(rng.uniform(-6.0, 4.0))
                scenario["tracks"].append(
                    _track("lead", 4.0, 1.8,
                           [[k * DT, x_lead, -lane, 0.0, 0.0]
                            for k in range(int(DURATION / DT) + 1)])
                )
            routes = {
                "straight": build_route(graph, ("w_in", "w_straight", "e_out")),
                "left": build_route(graph, ("w_in", "w_left", "n_out")),
                "right": build_route(graph, ("w_in", "w_right", "s_out")),
            }
            ego_t2 = np.array([-45.0 + 2.0 * v0, -lane])
            from .lanemap import project_to_route

            times = 2.0 + DT * np.arange(1, int(HORIZON / DT) + 1)
            modes = []
            for rname in ("straight", "left", "right"):
                route = routes[rname]
                _, _, s0 = project_to_route(route, ego_t2)
                for accel in (0.0, -0.5):
                    modes.append(_route_mode(route, s0, v0, accel, HORIZON))
            modes = np.asarray(modes)
            if "zigzag" in defect:
                modes[0] = _zigzag(modes[0], times)
            if "af" in defect:
                route = routes["straight"]
                _, _, s0 = project_to_route(route, ego_t2)
                modes[0] = _speed_spike(route, s0, v0, HORIZON)
            scores = np.array([0.9, 0.5, 0.45, 0.4, 0.35, 0.3])
            proposals = {
                "car0": ProposalSet(agent="car0", times=times, modes=modes, scores=scores)
            }
        else:
            v0 = float(rng.uniform(4.0, 7.0))
            scenario = straight_scenario(name=f"gen{i:03d}", v0=v0)
            graph = lane_graph_from_dict(scenario["map"])
            states = np.asarray(scenario["tracks"][0]["states"], dtype=float)
            history = states[states[:, 0] <= 2.0 + 1e-6]
            proposals = {
                "ego": generate_proposals(graph, history, k=3, horizon=HORIZON,
                                          seed=int(rng.integers(2**31)), agent="ego")
            }
        batch.append((scenario, proposals))
    return batch
