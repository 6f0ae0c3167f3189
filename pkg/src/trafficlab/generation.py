"""End-to-end scenario generation: score raw proposals, flag infeasible
trajectories (collision or acceleration failure), repair them with the
trained policy, and emit revised scenario artifacts."""

from __future__ import annotations

import math

import numpy as np

from . import kernels
from .dynamics import DT
from .fileio import EPISODE_FORMAT
from .metrics import AF_LIMIT, max_abs_acceleration
from .proposals import ProposalSet
from .td3 import PolicyBundle
from .training import modify_trajectories, select_mode
from .worldsim import FOLLOWER, REPLAY


def _mode_headings(waypoints: np.ndarray) -> np.ndarray:
    """Forward-filled local directions of a waypoint sequence."""
    n = waypoints.shape[0]
    out = np.full(n, np.nan)
    for i in range(n - 1):
        d = waypoints[i + 1] - waypoints[i]
        if d[0] * d[0] + d[1] * d[1] > 1e-18:
            out[i] = math.atan2(d[1], d[0])
    last = np.nan
    for i in range(n - 1, -1, -1):
        if math.isnan(out[i]):
            out[i] = last
        else:
            last = out[i]
    prev = 0.0
    for i in range(n):
        if math.isnan(out[i]):
            out[i] = prev
        else:
            prev = out[i]
    return out


def proposal_scan_dump(scenario: dict, proposals: dict[str, ProposalSet], horizon: float) -> dict:
    """Collision-scan the selected raw proposals against the replayed logs.

    No dynamics are involved: every proposal agent sits exactly on its
    waypoints while the others replay, and oriented-box overlap is checked
    tick by tick over the full horizon. The result is shaped like an episode
    dump so the metric suite can consume it unchanged.
    """
    shapes = {}
    logs = {}
    for tr in scenario["tracks"]:
        tid = str(tr["id"])
        shapes[tid] = (float(tr["length"]), float(tr["width"]))
        logs[tid] = np.asarray(tr["states"], dtype=float)

    n_ticks = int(round(horizon / DT))
    t0 = 2.0
    ids = sorted(logs)
    prop_headings = {}
    prop_speeds = {}
    for aid, ps in proposals.items():
        k = select_mode(ps)
        wp = ps.modes[k]
        prop_headings[aid] = _mode_headings(wp)
        steps = np.linalg.norm(np.diff(wp, axis=0), axis=1) / DT
        prop_speeds[aid] = np.concatenate([steps[:1], steps]) if steps.size else np.zeros(1)

    trajectories = {aid: [] for aid in ids}
    events = []
    for tick in range(n_ticks + 1):
        t = t0 + tick * DT
        xs, ys, hs, ls, ws = [], [], [], [], []
        for aid in ids:
            if aid in proposals:
                ps = proposals[aid]
                k = select_mode(ps)
                if tick == 0:
                    log = logs[aid]
                    idx = min(max(int(round((t - log[0, 0]) / DT)), 0), log.shape[0] - 1)
                    x, y, h, v = log[idx, 1], log[idx, 2], log[idx, 3], log[idx, 4]
                else:
                    i = min(tick - 1, ps.modes.shape[1] - 1)
                    x, y = ps.modes[k, i]
                    h = prop_headings[aid][i]
                    v = prop_speeds[aid][i]
            else:
                log = logs[aid]
                idx = min(max(int(round((t - log[0, 0]) / DT)), 0), log.shape[0] - 1)
                x, y, h, v = log[idx, 1], log[idx, 2], log[idx, 3], log[idx, 4]
            trajectories[aid].append([t, float(x), float(y), float(h), float(v)])
            xs.append(x)
            ys.append(y)
            hs.append(h)
            ls.append(shapes[aid][0])
            ws.append(shapes[aid][1])
        if tick == 0:
            continue
        pairs = kernels.collide_pairs(
            np.ascontiguousarray(xs), np.ascontiguousarray(ys),
            np.ascontiguousarray(hs), np.ascontiguousarray(ls),
            np.ascontiguousarray(ws),
        )
        for i, j in pairs:
            a, b = sorted((ids[i], ids[j]))
            events.append([tick, a, b])

    return {
        "format": EPISODE_FORMAT,
        "scenario": str(scenario.get("name", "")),
        "seed": None,
        "dt": DT,
        "t0": t0,
        "meta": scenario.get("meta", {}),
        "agents": [
            {
                "id": aid,
                "length": shapes[aid][0],
                "width": shapes[aid][1],
                "controller": FOLLOWER if aid in proposals else REPLAY,
            }
            for aid in ids
        ],
        "trajectories": trajectories,
        "events": events,
        "outcome": {
            "kind": "collision" if events else "timeout",
            "ticks_elapsed": events[0][0] if events else n_ticks,
        },
    }


def af_agents(proposals: dict[str, ProposalSet]) -> set[str]:
    """Agents whose selected raw mode exceeds the 4 m/s^2 acceleration limit."""
    out = set()
    for aid, ps in proposals.items():
        k = select_mode(ps)
        traj = np.column_stack([ps.times, ps.modes[k]])
        if max_abs_acceleration(traj) > AF_LIMIT:
            out.add(aid)
    return out


def detect_flags(scenario_batch, horizon: float):
    """Flag trajectories needing modification: collisions union AF.

    Returns (flagged pairs, raw scan dumps, stats with the per-rule counts
    and the duplicate overlap).
    """
    flagged = []
    raw_dumps = []
    n_collision = 0
    n_af = 0
    n_both = 0
    for scenario, proposals in scenario_batch:
        name = str(scenario.get("name", ""))
        dump = proposal_scan_dump(scenario, proposals, horizon)
        raw_dumps.append(dump)
        involved = {aid for _, a, b in dump["events"] for aid in (a, b)}
        coll = {aid for aid in proposals if aid in involved}
        af = af_agents(proposals)
        n_collision += len(coll)
        n_af += len(af)
        n_both += len(coll & af)
        for aid in sorted(coll | af):
            flagged.append((name, aid))
    stats = {
        "collision_flags": n_collision,
        "af_flags": n_af,
        "duplicate_flags": n_both,
        "flagged": len(flagged),
    }
    return flagged, raw_dumps, stats


def run_generation(bundle: PolicyBundle, scenario_batch, horizon: float = 8.0):
    """Full generation pass: scan, flag, repair flagged agents, re-emit.

    Returns a dict with the flag stats, the raw scan dumps, the final
    episode dumps, and per-scenario revised proposal sets.
    """
    flagged, raw_dumps, stats = detect_flags(scenario_batch, horizon)
    outputs = modify_trajectories(bundle, scenario_batch, flagged, horizon)
    return {
        "stats": stats,
        "flagged": flagged,
        "raw_dumps": raw_dumps,
        "final_dumps": [dump for _, dump, _ in outputs],
        "revised_sets": [revised for _, _, revised in outputs],
        "scenarios": [scenario for scenario, _, _ in outputs],
    }
