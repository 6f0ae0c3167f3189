"""Persistence for every artifact the pipeline exchanges.

All formats are structured text (JSON) with frozen field names, documented in
docs/formats.md. Floats round-trip exactly (shortest-repr encoding), so a
re-read artifact compares equal to the in-memory value.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .lanemap import lane_graph_from_dict

SCENARIO_FORMAT = "scenario-v1"
EPISODE_FORMAT = "episode-v1"
PROPOSALS_FORMAT = "proposals-v1"
CHECKPOINT_FORMAT = "checkpoint-v1"
REPORT_FORMAT = "metrics-v1"

TICK_DT = 0.1
_GRID_TOL = 1e-6


class DataError(ValueError):
    """Unreadable or schema-violating artifact file."""


def _load_json(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    except OSError as exc:
        raise DataError(f"{path}: {exc}") from exc


def _save_json(data: dict, path, indent=None) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as fh:
        json.dump(data, fh, indent=indent, separators=(",", ": ") if indent else (",", ":"))
        fh.write("\n")


def _require_format(data: dict, expected: str, path) -> None:
    got = data.get("format")
    if got != expected:
        raise DataError(f"{path}: expected format '{expected}', got '{got}'")


# ---------------------------------------------------------------------------
# Scenario files

def validate_scenario(data: dict, path="<scenario>") -> dict:
    _require_format(data, SCENARIO_FORMAT, path)
    if "map" not in data or "tracks" not in data:
        raise DataError(f"{path}: missing 'map' or 'tracks' section")
    lane_graph_from_dict(data["map"])  # raises MapError on bad maps
    seen = set()
    for tr in data["tracks"]:
        tid = str(tr["id"])
        if tid in seen:
            raise DataError(f"{path}: duplicate track id '{tid}'")
        seen.add(tid)
        if not (float(tr["length"]) > 0 and float(tr["width"]) > 0):
            raise DataError(f"{path}: track '{tid}' has non-positive shape")
        states = np.asarray(tr["states"], dtype=float)
        if states.ndim != 2 or states.shape[1] != 5 or states.shape[0] < 2:
            raise DataError(f"{path}: track '{tid}' states must be (n>=2, 5)")
        dts = np.diff(states[:, 0])
        if np.any(np.abs(dts - TICK_DT) > _GRID_TOL):
            raise DataError(f"{path}: track '{tid}' is not on a 10 Hz grid")
    return data


def load_scenario(path) -> dict:
    return validate_scenario(_load_json(path), path)


def save_scenario(data: dict, path) -> None:
    validate_scenario(data, path)
    _save_json(data, path, indent=1)


# ---------------------------------------------------------------------------
# Episode dumps

def save_episode_dump(dump: dict, path) -> None:
    if dump.get("format") != EPISODE_FORMAT:
        raise DataError(f"{path}: refusing to save non-episode payload")
    _save_json(dump, path)


def load_episode_dump(path) -> dict:
    data = _load_json(path)
    _require_format(data, EPISODE_FORMAT, path)
    return data


# ---------------------------------------------------------------------------
# Proposal sets

def proposals_to_dict(sets, scenario: str = "") -> dict:
    return {
        "format": PROPOSALS_FORMAT,
        "scenario": scenario,
        "sets": [
            {
                "agent": ps.agent,
                "times": ps.times.tolist(),
                "modes": ps.modes.tolist(),
                "scores": ps.scores.tolist(),
            }
            for ps in sets
        ],
    }


def proposals_from_dict(data: dict, path="<proposals>"):
    from .proposals import ProposalSet

    _require_format(data, PROPOSALS_FORMAT, path)
    sets = []
    for raw in data["sets"]:
        sets.append(
            ProposalSet(
                agent=str(raw["agent"]),
                times=np.asarray(raw["times"], dtype=float),
                modes=np.asarray(raw["modes"], dtype=float),
                scores=np.asarray(raw["scores"], dtype=float),
            )
        )
    return data.get("scenario", ""), sets


def save_proposals(sets, path, scenario: str = "") -> None:
    _save_json(proposals_to_dict(sets, scenario), path)


def load_proposals(path):
    return proposals_from_dict(_load_json(path), path)


# ---------------------------------------------------------------------------
# Policy checkpoints

class CheckpointMismatch(DataError):
    """Checkpoint does not match the running observation layout."""


def save_checkpoint(payload: dict, path) -> None:
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise DataError(f"{path}: refusing to save non-checkpoint payload")
    _save_json(payload, path)


def load_checkpoint(path, expect_obs_hash: str | None = None) -> dict:
    data = _load_json(path)
    _require_format(data, CHECKPOINT_FORMAT, path)
    if expect_obs_hash is not None and data.get("obs_hash") != expect_obs_hash:
        raise CheckpointMismatch(
            f"{path}: checkpoint observation layout {data.get('obs_hash')!r} "
            f"does not match running layout {expect_obs_hash!r}"
        )
    return data


# ---------------------------------------------------------------------------
# Metrics reports

REPORT_FIELDS = (
    "rmse",
    "or_rate",
    "scr",
    "tcr",
    "af_count",
    "kl_angular",
    "masd",
    "min_ade",
    "min_fde",
    "mean_ade",
    "mean_fde",
)


def save_report(report, path_json, path_csv=None) -> None:
    data = {"format": REPORT_FORMAT}
    data.update({f: getattr(report, f) for f in REPORT_FIELDS})
    data["max_acc_histogram"] = [list(pair) for pair in report.max_acc_histogram]
    _save_json(data, path_json, indent=1)
    if path_csv is not None:
        os.makedirs(os.path.dirname(os.path.abspath(path_csv)), exist_ok=True)
        with open(path_csv, "w") as fh:
            fh.write(",".join(REPORT_FIELDS) + "\n")
            fh.write(
                ",".join(
                    "" if getattr(report, f) is None else repr(getattr(report, f))
                    for f in REPORT_FIELDS
                )
                + "\n"
            )


def load_report(path) -> dict:
    data = _load_json(path)
    _require_format(data, REPORT_FORMAT, path)
    return data
