"""Scenario-quality metric suite over episode dumps and proposal sets."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from math import fsum

import numpy as np

from . import kernels
from .dynamics import DT
from .lanemap import LaneGraph, is_off_road
from .worldsim import REPLAY

AF_LIMIT = 4.0           # m/s^2; above this a trajectory raises an AF
ACC_BIN_WIDTH = 0.25     # m/s^2 histogram bins
KL_BINS = 41
KL_RANGE = (-1.0, 1.0)   # rad/s
KL_SMOOTHING = 1e-6


class MetricError(ValueError):
    pass


@dataclass
class MetricsReport:
    rmse: float | None = None
    or_rate: float | None = None
    scr: float | None = None
    tcr: float | None = None
    af_count: int | None = None
    kl_angular: float | None = None
    masd: float | None = None
    min_ade: float | None = None
    min_fde: float | None = None
    mean_ade: float | None = None
    mean_fde: float | None = None
    max_acc_histogram: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# Trajectory plumbing

def dump_trajectories(dump: dict, generated_only: bool = False) -> dict[str, np.ndarray]:
    """Agent id -> (T, 5) realized rows from an episode dump."""
    controllers = {a["id"]: a["controller"] for a in dump["agents"]}
    out = {}
    for aid, rows in dump["trajectories"].items():
        if generated_only and controllers.get(aid, REPLAY) == REPLAY:
            continue
        out[aid] = np.asarray(rows, dtype=float)
    return out


def _positions(traj: np.ndarray) -> np.ndarray:
    traj = np.asarray(traj, dtype=float)
    if traj.ndim != 2:
        raise MetricError("trajectory must be a 2D array")
    if traj.shape[1] >= 3:
        return traj[:, 1:3]  # (t, x, y, ...) rows
    return traj[:, 0:2]


def _speeds(traj: np.ndarray) -> np.ndarray:
    """Speed series: the logged channel when present, else position-derived."""
    traj = np.asarray(traj, dtype=float)
    if traj.shape[1] >= 5:
        return traj[:, 4]
    pos = _positions(traj)
    return np.linalg.norm(np.diff(pos, axis=0), axis=1) / DT


def _yaw_rates(traj: np.ndarray) -> np.ndarray:
    """Per-tick yaw rate, wrapped before differencing.

    Uses the heading channel when present; otherwise headings come from the
    position increments with degenerate (stationary) spans forward-filled.
    """
    traj = np.asarray(traj, dtype=float)
    if traj.shape[1] >= 4:
        headings = traj[:, 3]
    else:
        pos = _positions(traj)
        d = np.diff(pos, axis=0)
        headings = np.full(d.shape[0], np.nan)
        for i in range(d.shape[0]):
            if d[i, 0] ** 2 + d[i, 1] ** 2 > 1e-18:
                headings[i] = math.atan2(d[i, 1], d[i, 0])
        last = np.nan
        for i in range(headings.shape[0] - 1, -1, -1):
            if math.isnan(headings[i]):
                headings[i] = last
            else:
                last = headings[i]
        prev = np.nan
        for i in range(headings.shape[0]):
            if math.isnan(headings[i]):
                headings[i] = prev
            else:
                prev = headings[i]
        headings = headings[~np.isnan(headings)]
    if headings.shape[0] < 2:
        return np.empty(0)
    diffs = np.array(
        [kernels.wrap_angle(headings[i + 1] - headings[i]) for i in range(headings.shape[0] - 1)]
    )
    return diffs / DT


# ---------------------------------------------------------------------------
# Fidelity

def rmse(generated, ground_truth) -> float:
    """Per-agent RMS positional error, averaged over agents.

    Horizons may differ between batches; each pair is compared over its own
    overlap.
    """
    if len(generated) != len(ground_truth) or not generated:
        raise MetricError("generated/ground-truth batches must align and be non-empty")
    per_agent = []
    for gen, ref in zip(generated, ground_truth):
        g = _positions(gen)
        r = _positions(ref)
        n = min(g.shape[0], r.shape[0])
        if n == 0:
            raise MetricError("zero overlapping timesteps")
        sq = np.sum((g[:n] - r[:n]) ** 2, axis=1)
        per_agent.append(math.sqrt(fsum(sq) / n))
    return fsum(per_agent) / len(per_agent)


def ade_fde(sets, ground_truths):
    """(min_ade, min_fde, mean_ade, mean_fde) over a proposal batch."""
    if not sets:
        raise MetricError("empty batch")
    min_ades, min_fdes, mean_ades, mean_fdes = [], [], [], []
    for ps, gt in zip(sets, ground_truths):
        gt = np.asarray(gt, dtype=float)[:, :2]
        ades, fdes = [], []
        for k in range(ps.k):
            dists = np.linalg.norm(ps.modes[k] - gt, axis=1)
            ades.append(fsum(dists) / dists.shape[0])
            fdes.append(float(dists[-1]))
        min_ades.append(min(ades))
        min_fdes.append(min(fdes))
        mean_ades.append(fsum(ades) / len(ades))
        mean_fdes.append(fsum(fdes) / len(fdes))
    n = len(min_ades)
    return (
        fsum(min_ades) / n,
        fsum(min_fdes) / n,
        fsum(mean_ades) / n,
        fsum(mean_fdes) / n,
    )


# ---------------------------------------------------------------------------
# Reactivity / common-sense feasibility

def collision_rates(episodes, kind: str) -> float:
    """SCR (``kind='synthetic'``, per scenario) or TCR (``kind='generated'``,
    per generated trajectory) over a batch of episode dumps."""
    if not episodes:
        raise MetricError("empty episode batch")
    if kind == "synthetic":
        hits = sum(1 for d in episodes if d["events"])
        return hits / len(episodes)
    if kind != "generated":
        raise MetricError(f"unknown kind '{kind}'")
    total = 0
    collided = 0
    for dump in episodes:
        generated = dump_trajectories(dump, generated_only=True)
        involved = {aid for _, a, b in dump["events"] for aid in (a, b)}
        total += len(generated)
        collided += sum(1 for aid in generated if aid in involved)
    if total == 0:
        raise MetricError("batch contains no generated trajectories")
    return collided / total


# ---------------------------------------------------------------------------
# Kinematic feasibility

def max_abs_acceleration(traj) -> float:
    speeds = _speeds(traj)
    if speeds.shape[0] < 2 or _positions(traj).shape[0] < 3:
        raise MetricError("trajectory shorter than 3 points")
    return float(np.max(np.abs(np.diff(speeds))) / DT)


def acceleration_feasibility(trajectories):
    """AF count (max |accel| beyond 4 m/s^2) and a 0.25-wide histogram."""
    maxima = [max_abs_acceleration(t) for t in trajectories]
    af_count = sum(1 for m in maxima if m > AF_LIMIT)
    top = max(maxima + [AF_LIMIT])
    n_bins = int(math.ceil(top / ACC_BIN_WIDTH)) + 1
    counts = [0] * n_bins
    for m in maxima:
        counts[min(int(m / ACC_BIN_WIDTH), n_bins - 1)] += 1
    histogram = [
        ((i + 0.5) * ACC_BIN_WIDTH, counts[i])
        for i in range(n_bins)
    ]
    return af_count, histogram


def angular_velocity_kl(generated, reference) -> float:
    """KL divergence of binned yaw-rate distributions, generated vs reference.

    41 uniform bins over [-1, 1] rad/s (values clipped into range), additive
    smoothing 1e-6 so the divergence is always finite.
    """
    if not generated or not reference:
        raise MetricError("both batches must be non-empty")

    def histogram(trajs):
        counts = np.zeros(KL_BINS)
        lo, hi = KL_RANGE
        width = (hi - lo) / KL_BINS
        for t in trajs:
            for w in _yaw_rates(t):
                w = min(max(w, lo), hi)
                idx = min(int((w - lo) / width), KL_BINS - 1)
                counts[idx] += 1
        return counts

    p = histogram(generated) + KL_SMOOTHING
    q = histogram(reference) + KL_SMOOTHING
    p /= p.sum()
    q /= q.sum()
    return fsum(pi * math.log(pi / qi) for pi, qi in zip(p, q))


# ---------------------------------------------------------------------------
# Diversity

def _pair_msd(a: np.ndarray, b: np.ndarray) -> float:
    n = min(a.shape[0], b.shape[0])
    sq = np.sum((a[:n] - b[:n]) ** 2, axis=1)
    return fsum(sq) / n


def masd(sets, graph: LaneGraph | None) -> float:
    """Largest mean squared pairwise mode distance, averaged over agents.

    Off-road modes are filtered out first; agents left with fewer than two
    valid modes contribute zero but stay in the average.
    """
    if not sets:
        raise MetricError("empty batch")
    per_agent = []
    for ps in sets:
        valid = [
            ps.modes[k]
            for k in range(ps.k)
            if graph is None or not is_off_road(graph, ps.modes[k])
        ]
        if len(valid) < 2:
            per_agent.append(0.0)
            continue
        best = 0.0
        for i in range(len(valid)):
            for j in range(i + 1, len(valid)):
                best = max(best, _pair_msd(valid[i], valid[j]))
        per_agent.append(best)
    return fsum(per_agent) / len(per_agent)


def masd_batch(scenario_sets, graphs) -> float:
    """Mean of per-scenario MASD values."""
    vals = [masd(sets, g) for sets, g in zip(scenario_sets, graphs) if sets]
    if not vals:
        raise MetricError("empty batch")
    return fsum(vals) / len(vals)


def off_road_rate(sets, graph: LaneGraph) -> float:
    """Fraction of mode trajectories leaving the drivable area."""
    total = 0
    off = 0
    for ps in sets:
        for k in range(ps.k):
            total += 1
            if is_off_road(graph, ps.modes[k]):
                off += 1
    if total == 0:
        raise MetricError("empty batch")
    return off / total
