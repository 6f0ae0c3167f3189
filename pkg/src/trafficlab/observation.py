"""Ego-frame observation vector, social-vehicle filter, and per-tick reward."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .worldsim import World

OBS_DIM = 48
SOCIAL_SLOTS = 5
SOCIAL_MAX_DIST = 30.0   # meters, center-to-center
SOCIAL_MIN_Y = -12.0     # ego-frame lateral cutoff
TREND_WAYPOINTS = 5
COLLISION_PENALTY = -500.0
SPEED_NORM = 10.0        # action-space maximum target speed
TRACKING_GAIN = 0.2
STEP_PENALTY = -0.5

# Frozen entry-by-entry layout of the 48-vector; the hash pins checkpoint
# compatibility. See docs/observation.md before touching anything here.
OBS_LAYOUT = (
    ("target_position_x", 1),
    ("target_position_y", 1),
    ("target_speed_rel", 1),
    ("route_trend_heading_error", TREND_WAYPOINTS),
    ("ego_length", 1),
    ("ego_width", 1),
    ("ego_speed", 1),
    ("ego_deadreckon_x", 1),
    ("ego_deadreckon_y", 1),
) + tuple(
    (f"social{i}_{name}", 1)
    for i in range(SOCIAL_SLOTS)
    for name in ("length", "width", "rel_x", "rel_y", "speed", "cos_heading", "sin_heading")
)


def obs_layout_hash() -> str:
    text = "|".join(f"{name}:{n}" for name, n in OBS_LAYOUT)
    return hashlib.sha256(text.encode()).hexdigest()


@dataclass
class TrackingTarget:
    """Where the tracked trajectory says the agent should be right now."""

    position: np.ndarray  # world frame (2,)
    speed: float


@dataclass
class Observation:
    o_r: np.ndarray       # (8,) target posture and route trend
    o_e: np.ndarray       # (5,) ego shape and movement trend
    o_social: np.ndarray  # (5, 7) nearby vehicles, zero-padded

    def vector(self) -> np.ndarray:
        v = np.concatenate([self.o_r, self.o_e, self.o_social.reshape(-1)])
        assert v.shape == (OBS_DIM,)
        return v


@dataclass
class RewardBreakdown:
    r_collision: float
    r_tracking: float
    r_step: float

    @property
    def total(self) -> float:
        return self.r_collision + self.r_tracking + self.r_step


def _to_ego_frame(point, ego_pose) -> np.ndarray:
    dx = point[0] - ego_pose.x
    dy = point[1] - ego_pose.y
    c = math.cos(ego_pose.psi)
    s = math.sin(ego_pose.psi)
    return np.array([c * dx + s * dy, -s * dx + c * dy])


def filter_social(world: World, ego: str) -> list[str]:
    """Nearby vehicles passing the distance/longitudinal rules, nearest first.

    Keeps agents with center distance < 30 m and ego-frame y > -12 m, sorted
    by distance ascending (ties by id) and truncated to the closest 5.
    """
    ego_pose = world.agents[ego].pose
    kept = []
    for aid, ag in world.agents.items():
        if aid == ego:
            continue
        d = math.hypot(ag.pose.x - ego_pose.x, ag.pose.y - ego_pose.y)
        if d >= SOCIAL_MAX_DIST:
            continue
        rel = _to_ego_frame((ag.pose.x, ag.pose.y), ego_pose)
        if rel[1] <= SOCIAL_MIN_Y:
            continue
        kept.append((d, aid))
    kept.sort()
    return [aid for _, aid in kept[:SOCIAL_SLOTS]]


def _guide_headings(guide: np.ndarray) -> np.ndarray:
    """Per-waypoint local direction of the guide polyline.

    Degenerate (zero-length) spans reuse the nearest defined direction, so a
    stopped tail keeps the last meaningful heading.
    """
    n = guide.shape[0]
    headings = np.full(n, np.nan)
    for i in range(n - 1):
        d = guide[i + 1] - guide[i]
        if d[0] * d[0] + d[1] * d[1] > 1e-18:
            headings[i] = math.atan2(d[1], d[0])
    last = np.nan
    for i in range(n - 1, -1, -1):
        if math.isnan(headings[i]):
            headings[i] = last
        else:
            last = headings[i]
    prev = np.nan
    for i in range(n):
        if math.isnan(headings[i]):
            headings[i] = prev
        else:
            prev = headings[i]
    return headings


def build_observation(world: World, ego: str, target: TrackingTarget, guide: np.ndarray) -> Observation:
    """Assemble the 48-dim ego observation.

    ``guide`` is the tracked trajectory polyline (the proposal being
    followed); its five waypoints nearest ahead of the ego supply the route
    trend. All positions and headings are expressed in the ego frame.
    """
    ego_ag = world.agents[ego]
    pose = ego_ag.pose

    rel_target = _to_ego_frame(target.position, pose)
    guide = np.asarray(guide, dtype=float)

    xs = np.ascontiguousarray(guide[:, 0])
    ys = np.ascontiguousarray(guide[:, 1])
    steps = np.hypot(np.diff(xs), np.diff(ys))
    cum = np.ascontiguousarray(np.concatenate([[0.0], np.cumsum(steps)]))
    _, _, _, s_ego = kernels.polyline_project(xs, ys, cum, pose.x, pose.y)

    headings = _guide_headings(guide)
    ahead = np.nonzero(cum > s_ego + 1e-9)[0]
    idxs = list(ahead[:TREND_WAYPOINTS])
    fill = idxs[-1] if idxs else guide.shape[0] - 1
    while len(idxs) < TREND_WAYPOINTS:
        idxs.append(fill)
    trend = np.array(
        [
            kernels.wrap_angle(headings[i] - pose.psi) if not math.isnan(headings[i]) else 0.0
            for i in idxs
        ]
    )

    o_r = np.concatenate([rel_target, [target.speed - pose.v], trend])

    o_e = np.array([ego_ag.shape[0], ego_ag.shape[1], pose.v, pose.v * 1.0, 0.0])

    o_social = np.zeros((SOCIAL_SLOTS, 7))
    for slot, aid in enumerate(filter_social(world, ego)):
        ag = world.agents[aid]
        rel = _to_ego_frame((ag.pose.x, ag.pose.y), pose)
        rel_psi = kernels.wrap_angle(ag.pose.psi - pose.psi)
        o_social[slot] = [
            ag.shape[0],
            ag.shape[1],
            rel[0],
            rel[1],
            ag.pose.v,
            math.cos(rel_psi),
            math.sin(rel_psi),
        ]
    return Observation(o_r=o_r, o_e=o_e, o_social=o_social)


def compute_reward(collided: bool, ego_speed: float, d_ep: float) -> RewardBreakdown:
    """Per-tick reward: collision penalty, tracking term, living cost."""
    if d_ep < 0:
        raise ValueError("d_ep must be non-negative")
    r_col = COLLISION_PENALTY * (1.0 + ego_speed / SPEED_NORM) if collided else 0.0
    return RewardBreakdown(
        r_collision=r_col,
        r_tracking=1.0 - TRACKING_GAIN * d_ep,
        r_step=STEP_PENALTY,
    )
