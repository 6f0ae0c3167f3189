"""Multi-modal trajectory proposals: the prediction loss suite and a
route-anchored synthetic provider.

The provider is the pluggable seam for a learned predictor; the losses never
assume how the proposals were produced.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from math import fsum

import numpy as np

from . import kernels
from .dynamics import DT
from .lanemap import DEFAULT_LANE_WIDTH, LaneGraph, Route, project_to_route, routes_from_position

ALPHA = 1.0          # regression weight in the total loss
BETA = 0.05          # route-hinge weight in the total loss
EPSILON = 0.2        # score margin of the classification hinge
T_SEQ = 10           # sampled waypoints per mode for the route hinge
HUBER_DELTA = 1.0    # smooth-L1 transition point
PROFILE_ACCELS = (0.0, 1.0, -1.0)  # m/s^2 speed profiles cycled over routes
SPEED_CAP = 10.0


class ProposalError(ValueError):
    pass


@dataclass
class ProposalSet:
    """K candidate future trajectories for one agent, with confidence scores."""

    agent: str
    times: np.ndarray   # (T,) absolute seconds, 10 Hz
    modes: np.ndarray   # (K, T, 2) waypoints
    scores: np.ndarray  # (K,)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.modes = np.asarray(self.modes, dtype=float)
        self.scores = np.asarray(self.scores, dtype=float)
        if self.modes.ndim != 3 or self.modes.shape[2] != 2:
            raise ProposalError("modes must have shape (K, T, 2)")
        if self.modes.shape[0] < 1:
            raise ProposalError("need at least one mode")
        if self.modes.shape[1] != self.times.shape[0]:
            raise ProposalError("mode horizon does not match times")
        if self.scores.shape != (self.modes.shape[0],) or not np.all(np.isfinite(self.scores)):
            raise ProposalError("scores must be finite, one per mode")

    @property
    def k(self) -> int:
        return self.modes.shape[0]


@dataclass
class LossReport:
    l_cls: float
    l_reg: float
    l_route: float
    l_total: float
    route_deviations: list[np.ndarray]  # per agent: (K, T_seq) hinge deviations


def best_mode_index(ps: ProposalSet, ground_truth: np.ndarray) -> int:
    """Mode with minimum final displacement error against the ground truth."""
    gt = np.asarray(ground_truth, dtype=float)
    fde = np.linalg.norm(ps.modes[:, -1, :] - gt[-1, :2], axis=1)
    return int(np.argmin(fde))


def classification_loss(sets, ground_truths, epsilon: float = EPSILON) -> float:
    """Max-margin hinge on confidence scores against the best mode."""
    total = []
    pair_count = 0
    for ps, gt in zip(sets, ground_truths):
        if ps.k < 2:
            raise ProposalError(f"agent '{ps.agent}': hinge needs K >= 2 modes")
        khat = best_mode_index(ps, gt)
        chat = ps.scores[khat]
        hinges = [
            max(0.0, ps.scores[k] + epsilon - chat)
            for k in range(ps.k)
            if k != khat
        ]
        total.append(fsum(hinges) / (ps.k - 1))
        pair_count += 1
    if pair_count == 0:
        raise ProposalError("empty batch")
    return fsum(total) / pair_count


def huber(residual: float, delta: float = HUBER_DELTA) -> float:
    a = abs(residual)
    if a <= delta:
        return 0.5 * a * a
    return delta * (a - 0.5 * delta)


def regression_loss(sets, ground_truths) -> float:
    """Smooth-L1 between each best mode and the ground truth.

    Per-coordinate Huber terms are summed over x and y at every step and
    normalized by agent count and horizon.
    """
    per_agent = []
    for ps, gt in zip(sets, ground_truths):
        gt = np.asarray(gt, dtype=float)
        if gt.shape[0] != ps.modes.shape[1]:
            raise ProposalError(
                f"agent '{ps.agent}': ground-truth horizon {gt.shape[0]} != {ps.modes.shape[1]}"
            )
        khat = best_mode_index(ps, gt)
        residuals = ps.modes[khat] - gt[:, :2]
        per_agent.append(
            fsum(huber(r) for r in residuals.reshape(-1)) / residuals.shape[0]
        )
    if not per_agent:
        raise ProposalError("empty batch")
    return fsum(per_agent) / len(per_agent)


def sample_indices(horizon: int, t_seq: int = T_SEQ) -> np.ndarray:
    """`t_seq` indices uniform in time, including start and end points."""
    if t_seq < 2:
        raise ProposalError("t_seq must be >= 2")
    return np.round(np.linspace(0, horizon - 1, t_seq)).astype(int)


def _route_hinge(route: Route, samples: np.ndarray, lane_width) -> tuple[float, np.ndarray]:
    devs = np.empty(samples.shape[0])
    hinge = []
    for i, p in enumerate(samples):
        _, dev, s = project_to_route(route, p)
        devs[i] = dev
        m = lane_width if lane_width is not None else route.width_at(s)
        hinge.append(max(0.0, dev - m))
    return fsum(hinge), devs


def route_loss(sets, routes_per_agent, lane_width: float | None = None, t_seq: int = T_SEQ):
    """Hinge on deviation beyond lane width, against each mode's best route.

    For every mode, `t_seq` time-uniform waypoints are projected onto each
    candidate route and the route minimizing the summed hinge is charged.
    Returns (loss, per-agent (K, t_seq) deviation arrays at the chosen route).
    """
    total = []
    deviations = []
    for ps, routes in zip(sets, routes_per_agent):
        if not routes:
            raise ProposalError(f"agent '{ps.agent}': empty route set")
        idx = sample_indices(ps.modes.shape[1], t_seq)
        agent_devs = np.empty((ps.k, idx.shape[0]))
        for k in range(ps.k):
            samples = ps.modes[k, idx, :]
            best_val, best_devs = math.inf, None
            for route in routes:
                val, devs = _route_hinge(route, samples, lane_width)
                if val < best_val:
                    best_val, best_devs = val, devs
            total.append(best_val)
            agent_devs[k] = best_devs
        deviations.append(agent_devs)
    return fsum(total), deviations


def total_loss(sets, ground_truths, routes_per_agent, lane_width: float | None = None) -> LossReport:
    """Weighted sum of the three loss terms (alpha=1, beta=0.05)."""
    l_cls = classification_loss(sets, ground_truths)
    l_reg = regression_loss(sets, ground_truths)
    l_route, deviations = route_loss(sets, routes_per_agent, lane_width)
    return LossReport(
        l_cls=l_cls,
        l_reg=l_reg,
        l_route=l_route,
        l_total=l_cls + ALPHA * l_reg + BETA * l_route,
        route_deviations=deviations,
    )


def align_ground_truth(sets, tracks: dict[str, np.ndarray], t_tol: float = 1e-6):
    """Pair proposal sets with log trajectories sampled at the proposal times.

    Agents whose logs do not cover the full prediction horizon are excluded
    and counted rather than padded.
    """
    pairs = []
    excluded = 0
    for ps in sets:
        log = tracks.get(ps.agent)
        if log is None or log[-1, 0] < ps.times[-1] - t_tol or log[0, 0] > ps.times[0] + t_tol:
            excluded += 1
            continue
        gt = np.column_stack(
            [
                np.interp(ps.times, log[:, 0], log[:, 1]),
                np.interp(ps.times, log[:, 0], log[:, 2]),
            ]
        )
        pairs.append((ps, gt))
    return pairs, excluded


def generate_proposals(
    graph: LaneGraph,
    history: np.ndarray,
    k: int,
    horizon: float,
    seed: int,
    agent: str = "agent",
) -> ProposalSet:
    """Synthetic route-following proposals standing in for a learned predictor.

    Modes are assigned route-major over the DFS route set, cycling constant /
    accelerating / decelerating speed profiles when routes run out; scores are
    a softmax of negative initial heading misalignment.
    """
    history = np.asarray(history, dtype=float)
    if history.shape[0] < 2:
        raise ProposalError("history needs >= 2 samples to estimate motion")
    if k < 1:
        raise ProposalError("k must be >= 1")
    t0 = float(history[-1, 0])
    pos = history[-1, 1:3]
    psi = float(history[-1, 3])
    v0 = max(float(history[-1, 4]), 0.0)

    routes = routes_from_position(graph, pos, heading=psi)
    if not routes:
        raise ProposalError(f"agent '{agent}': no route found (off-map)")
    rng = np.random.default_rng(seed)
    n_steps = int(round(horizon / DT))
    times = t0 + DT * np.arange(1, n_steps + 1)

    modes = np.empty((k, n_steps, 2))
    misalign = np.empty(k)
    for mode in range(k):
        route = routes[mode % len(routes)]
        profile = mode // len(routes)
        if profile < len(PROFILE_ACCELS):
            accel = PROFILE_ACCELS[profile]
        else:
            accel = float(rng.uniform(-1.5, 1.5))
        _, _, s0 = project_to_route(route, pos)
        misalign[mode] = abs(kernels.wrap_angle(route.heading_at(s0) - psi))
        s, v = s0, v0
        for i in range(n_steps):
            s += v * DT
            modes[mode, i] = route.point_at(s)
            v = min(max(v + accel * DT, 0.0), SPEED_CAP)
    logits = -misalign
    logits -= logits.max()
    scores = np.exp(logits)
    scores /= scores.sum()
    return ProposalSet(agent=agent, times=times, modes=modes, scores=scores)
