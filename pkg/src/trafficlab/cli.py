"""Command-line entry points: replay, train, generate, evaluate, serve,
make-fixtures.

Exit codes: 0 success, 2 configuration/usage errors, 3 data errors
(unreadable or mismatched artifacts), 4 numerical failures.
"""

from __future__ import annotations

import argparse
import glob
import json
import os
import sys

import numpy as np

from . import fileio, fixtures, metrics
from .fileio import DataError
from .generation import run_generation
from .lanemap import MapError, lane_graph_from_dict
from .observation import obs_layout_hash
from .proposals import align_ground_truth, generate_proposals
from .td3 import Hyperparams, NumericalFailure, PolicyBundle
from .training import TrainConfig, TrainTask, train_stage2
from .worldsim import WorldError, build_episode_dump, check_termination, init_world, step

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

OUTPUT_ROOT_ENV = "TRAFFICLAB_OUTPUT_ROOT"


class ConfigError(ValueError):
    pass


def _out_dir(args, command: str) -> str:
    out = args.out or os.path.join(os.environ.get(OUTPUT_ROOT_ENV, "runs"), command)
    os.makedirs(out, exist_ok=True)
    return out


def _scenario_paths(args) -> list[str]:
    paths = list(getattr(args, "scenario", None) or [])
    if getattr(args, "scenario_dir", None):
        paths.extend(
            p for p in sorted(glob.glob(os.path.join(args.scenario_dir, "*.json")))
            if not p.endswith(".proposals.json")
        )
    if not paths:
        raise ConfigError("no scenario files given (use --scenario or --scenario-dir)")
    return paths


def _load_scenarios(paths) -> list[dict]:
    return [fileio.load_scenario(p) for p in paths]


def _proposals_for(scenario: dict, proposals_dir: str | None):
    name = str(scenario.get("name", ""))
    if proposals_dir:
        path = os.path.join(proposals_dir, f"{name}.proposals.json")
        if os.path.exists(path):
            _, sets = fileio.load_proposals(path)
            return {ps.agent: ps for ps in sets}
    return None


def _controlled_agent(scenario: dict) -> str:
    meta = scenario.get("meta", {})
    if "reactivity" in meta:
        return str(meta["reactivity"]["controlled"])
    if "controlled" in meta:
        return str(meta["controlled"])
    return str(scenario["tracks"][0]["id"])


def _default_proposal(scenario: dict, agent: str, horizon: float):
    graph = lane_graph_from_dict(scenario["map"])
    for tr in scenario["tracks"]:
        if str(tr["id"]) == agent:
            states = np.asarray(tr["states"], dtype=float)
            history = states[states[:, 0] <= 2.0 + 1e-6]
            return generate_proposals(graph, history, k=1, horizon=horizon, seed=0, agent=agent)
    raise DataError(f"agent '{agent}' missing from scenario '{scenario.get('name')}'")


def _plot_episode(dump: dict, scenario: dict, path: str) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(8, 8))
    for poly in scenario["map"].get("drivable", []):
        arr = np.asarray(poly, dtype=float)
        ax.fill(arr[:, 0], arr[:, 1], color="0.9", zorder=0)
    for seg in scenario["map"]["segments"]:
        arr = np.asarray(seg["centerline"], dtype=float)
        ax.plot(arr[:, 0], arr[:, 1], color="0.7", lw=0.8, zorder=1)
    for aid, rows in dump["trajectories"].items():
        arr = np.asarray(rows, dtype=float)
        ax.plot(arr[:, 1], arr[:, 2], lw=1.5, label=aid, zorder=2)
    ax.set_aspect("equal")
    ax.legend(loc="best", fontsize=8)
    ax.set_title(dump.get("scenario", ""))
    fig.savefig(path, dpi=110)
    plt.close(fig)


# ---------------------------------------------------------------------------
# Commands

def cmd_replay(args) -> int:
    out = _out_dir(args, "replay")
    paths = _scenario_paths(args)
    for path, scenario in zip(paths, _load_scenarios(paths)):
        world = init_world(scenario, args.horizon)
        result = None
        while result is None:
            step(world, {})
            result = check_termination(world, {})
        dump = build_episode_dump(world, result, seed=args.seed)
        name = scenario.get("name") or os.path.splitext(os.path.basename(path))[0]
        fileio.save_episode_dump(dump, os.path.join(out, f"{name}.episode.json"))
        if args.plot:
            _plot_episode(dump, scenario, os.path.join(out, f"{name}.png"))
    print(f"replayed episodes written to {out}")
    return EXIT_OK


def _parse_hyper(args) -> Hyperparams:
    hyper = Hyperparams()
    overrides = {}
    for item in args.hyper or []:
        if "=" not in item:
            raise ConfigError(f"--hyper expects key=value, got '{item}'")
        key, raw = item.split("=", 1)
        if not hasattr(hyper, key):
            raise ConfigError(f"unknown hyperparameter '{key}'")
        current = getattr(hyper, key)
        if key == "dtype":
            overrides[key] = raw
        elif isinstance(current, tuple):
            overrides[key] = tuple(int(v) for v in raw.split(","))
        elif isinstance(current, int):
            overrides[key] = int(raw)
        else:
            overrides[key] = float(raw)
    if args.batch_size:
        overrides["batch_size"] = args.batch_size
    return hyper.replace(**overrides)


def cmd_train(args) -> int:
    out = _out_dir(args, "train")
    scenarios = _load_scenarios(_scenario_paths(args))
    tasks = []
    for scenario in scenarios:
        agent = _controlled_agent(scenario)
        provided = _proposals_for(scenario, args.proposals_dir)
        if provided and agent in provided:
            proposal = provided[agent]
        else:
            proposal = _default_proposal(scenario, agent, args.horizon)
        tasks.append(TrainTask(scenario=scenario, agent=agent, proposal=proposal))

    bundle = None
    if args.resume:
        payload = fileio.load_checkpoint(args.resume, expect_obs_hash=obs_layout_hash())
        bundle = PolicyBundle.from_checkpoint(payload)

    ckpt_path = os.path.join(out, "checkpoint.json")

    def save_ckpt(b, episode):
        fileio.save_checkpoint(b.checkpoint(), ckpt_path)

    config = TrainConfig(
        episodes=args.episodes,
        seed=args.seed,
        hyper=_parse_hyper(args),
        horizon=args.horizon,
        workers=args.workers,
        checkpoint_every=args.checkpoint_every,
        checkpoint_fn=save_ckpt if args.checkpoint_every else None,
    )
    try:
        bundle, log_rows = train_stage2(tasks, config, bundle=bundle)
    except NumericalFailure as exc:
        with open(os.path.join(out, "failure_dump.json"), "w") as fh:
            json.dump(exc.dump, fh, indent=1)
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC

    fileio.save_checkpoint(bundle.checkpoint(), ckpt_path)
    log_path = os.path.join(out, "training_log.csv")
    with open(log_path, "w") as fh:
        fh.write("episode,outcome,return,steps,critic_loss,actor_objective\n")
        for row in log_rows:
            fh.write(
                f"{row['episode']},{row['outcome']},{row['return']!r},{row['steps']},"
                f"{row['critic_loss']!r},{row['actor_objective']!r}\n"
            )
    print(f"checkpoint: {ckpt_path}")
    print(f"training log: {log_path}")
    return EXIT_OK


def cmd_generate(args) -> int:
    out = _out_dir(args, "generate")
    payload = fileio.load_checkpoint(args.checkpoint, expect_obs_hash=obs_layout_hash())
    bundle = PolicyBundle.from_checkpoint(payload)
    scenario_batch = []
    for scenario in _load_scenarios(_scenario_paths(args)):
        proposals = _proposals_for(scenario, args.proposals_dir)
        if not proposals:
            agent = _controlled_agent(scenario)
            proposals = {agent: _default_proposal(scenario, agent, args.horizon)}
        scenario_batch.append((scenario, proposals))

    result = run_generation(bundle, scenario_batch, horizon=args.horizon)
    for dump in result["raw_dumps"]:
        fileio.save_episode_dump(dump, os.path.join(out, f"{dump['scenario']}.raw.episode.json"))
    for dump in result["final_dumps"]:
        fileio.save_episode_dump(dump, os.path.join(out, f"{dump['scenario']}.episode.json"))
    for scenario, revised in zip(result["scenarios"], result["revised_sets"]):
        name = scenario.get("name", "")
        fileio.save_proposals(revised, os.path.join(out, f"{name}.proposals.json"), scenario=name)
    summary = {"stats": result["stats"], "flagged": [list(p) for p in result["flagged"]]}
    with open(os.path.join(out, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=1)
    print(f"generation summary: {json.dumps(result['stats'])}")
    print(f"outputs in {out}")
    return EXIT_OK


def _dump_files(directory: str) -> list[dict]:
    paths = sorted(glob.glob(os.path.join(directory, "*.episode.json")))
    if not paths:
        raise DataError(f"no episode dumps in '{directory}'")
    return [fileio.load_episode_dump(p) for p in paths]


def cmd_evaluate(args) -> int:
    out = _out_dir(args, "evaluate")
    dumps = _dump_files(args.dumps)
    scenarios = {}
    if args.scenario_dir or args.scenario:
        for scenario in _load_scenarios(_scenario_paths(args)):
            scenarios[str(scenario.get("name", ""))] = scenario

    report = metrics.MetricsReport()

    def eval_agents(dump):
        gen = metrics.dump_trajectories(dump, generated_only=True)
        return gen if gen else metrics.dump_trajectories(dump)

    # Fidelity against the logs of matching scenarios.
    gen_trajs, ref_trajs = [], []
    for dump in dumps:
        scenario = scenarios.get(dump.get("scenario", ""))
        if scenario is None:
            continue
        logs = {str(tr["id"]): np.asarray(tr["states"], dtype=float) for tr in scenario["tracks"]}
        for aid, traj in eval_agents(dump).items():
            if aid in logs:
                log = logs[aid]
                gen_trajs.append(traj)
                ref_trajs.append(log[log[:, 0] >= dump["t0"] - 1e-6])
    if gen_trajs:
        report.rmse = metrics.rmse(gen_trajs, ref_trajs)

    kind = args.kind or ("synthetic" if any(d.get("meta", {}).get("reactivity") for d in dumps) else "generated")
    if kind == "synthetic":
        report.scr = metrics.collision_rates(dumps, "synthetic")
    else:
        try:
            report.tcr = metrics.collision_rates(dumps, "generated")
        except metrics.MetricError:
            pass
        report.scr = metrics.collision_rates(dumps, "synthetic")

    all_eval = [t for d in dumps for t in eval_agents(d).values()]
    if all_eval:
        report.af_count, report.max_acc_histogram = metrics.acceleration_feasibility(all_eval)

    if args.reference:
        reference = [t for d in _dump_files(args.reference) for t in metrics.dump_trajectories(d).values()]
    else:
        reference = ref_trajs
    if all_eval and reference:
        report.kl_angular = metrics.angular_velocity_kl(all_eval, reference)

    if args.proposals_dir:
        scenario_sets, graphs, ade_sets, ade_gts = [], [], [], []
        for name, scenario in scenarios.items():
            proposals = _proposals_for(scenario, args.proposals_dir)
            if not proposals:
                continue
            graph = lane_graph_from_dict(scenario["map"])
            sets = list(proposals.values())
            scenario_sets.append(sets)
            graphs.append(graph)
            logs = {str(tr["id"]): np.asarray(tr["states"], dtype=float) for tr in scenario["tracks"]}
            pairs, _ = align_ground_truth(sets, logs)
            for ps, gt in pairs:
                ade_sets.append(ps)
                ade_gts.append(gt)
        if scenario_sets:
            report.masd = metrics.masd_batch(scenario_sets, graphs)
            flat = [ps for sets in scenario_sets for ps in sets]
            graph_per_set = [g for sets, g in zip(scenario_sets, graphs) for _ in sets]
            total, off = 0, 0
            for ps, g in zip(flat, graph_per_set):
                for k in range(ps.k):
                    total += 1
                    off += bool(metrics.is_off_road(g, ps.modes[k]))
            report.or_rate = off / total if total else None
        if ade_sets:
            report.min_ade, report.min_fde, report.mean_ade, report.mean_fde = metrics.ade_fde(
                ade_sets, ade_gts
            )

    fileio.save_report(report, os.path.join(out, "report.json"), os.path.join(out, "report.csv"))
    print(json.dumps({f: getattr(report, f) for f in fileio.REPORT_FIELDS}, indent=1))
    print(f"report in {out}")
    return EXIT_OK


def cmd_serve(args) -> int:
    from .server import serve

    print(f"serving episodes on {args.host}:{args.port}")
    serve(args.host, args.port)
    return EXIT_OK


def cmd_make_fixtures(args) -> int:
    out = _out_dir(args, "fixtures")
    if args.kind == "unit":
        items = [
            fixtures.straight_scenario(),
            fixtures.two_agent_scenario(),
            fixtures.intersection_scenario(),
        ]
        for scenario in items:
            fileio.save_scenario(scenario, os.path.join(out, f"{scenario['name']}.json"))
    elif args.kind == "reactivity":
        for scenario in fixtures.reactivity_batch(args.count, args.seed):
            name = scenario["name"]
            fileio.save_scenario(scenario, os.path.join(out, f"{name}.json"))
            proposal = fixtures.reactivity_task_proposal(scenario)
            fileio.save_proposals([proposal], os.path.join(out, f"{name}.proposals.json"), scenario=name)
    elif args.kind == "generate":
        for scenario, proposals in fixtures.generation_batch(args.count, args.seed):
            name = scenario["name"]
            fileio.save_scenario(scenario, os.path.join(out, f"{name}.json"))
            fileio.save_proposals(
                list(proposals.values()), os.path.join(out, f"{name}.proposals.json"), scenario=name
            )
    else:
        raise ConfigError(f"unknown fixture kind '{args.kind}'")
    print(f"fixtures in {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trafficlab",
        description="Kinematic traffic scenario simulation, training, and evaluation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_scenarios(p):
        p.add_argument("--scenario", action="append", help="scenario file (repeatable)")
        p.add_argument("--scenario-dir", help="directory of scenario .json files")

    p = sub.add_parser("replay", help="replay logged scenarios and dump episodes")
    add_scenarios(p)
    p.add_argument("--out")
    p.add_argument("--horizon", type=float, default=8.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--plot", action=argparse.BooleanOptionalAction, default=True)
    p.set_defaults(fn=cmd_replay)

    p = sub.add_parser("train", help="train the trajectory-modification policy")
    add_scenarios(p)
    p.add_argument("--proposals-dir")
    p.add_argument("--episodes", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--horizon", type=float, default=8.0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--hyper", action="append", metavar="KEY=VALUE")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("generate", help="run the two-stage generation pipeline")
    add_scenarios(p)
    p.add_argument("--proposals-dir")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out")
    p.add_argument("--horizon", type=float, default=8.0)
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("evaluate", help="compute the scenario-quality metrics")
    add_scenarios(p)
    p.add_argument("--dumps", required=True, help="directory of episode dumps")
    p.add_argument("--proposals-dir")
    p.add_argument("--reference", help="directory of reference dumps for the KL metric")
    p.add_argument("--kind", choices=["synthetic", "generated"])
    p.add_argument("--out")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("serve", help="serve the episode wire protocol")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=7007)
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("make-fixtures", help="write deterministic fixture files")
    p.add_argument("--kind", required=True, choices=["unit", "reactivity", "generate"])
    p.add_argument("--out")
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_make_fixtures)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, MapError, WorldError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
