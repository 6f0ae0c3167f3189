"""Trajectory-tracking rollouts, the stage-2 learner loop, and
policy-based modification of flagged trajectories."""

from __future__ import annotations

import math
import multiprocessing
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from . import kernels
from .dynamics import ControlInput, pid_speed, pid_steer, speed_pid, steer_pid
from .nets import Actor, ActorSizes, get_state, set_state
from .observation import TrackingTarget, build_observation, compute_reward
from .proposals import ProposalSet
from .td3 import Hyperparams, PolicyBundle, ReplayBuffer, action_to_target_speed, td3_update
from .worldsim import (
    FOLLOWER,
    POLICY,
    EndpointTarget,
    World,
    build_episode_dump,
    check_termination,
    init_world,
    reactivity_target,
    step,
)


class TrackingController:
    """Per-agent conversion of a tracked trajectory into low-level controls.

    Longitudinal: PID on a target speed (the trajectory's own profile for a
    non-reactive follower, the policy's mapped action otherwise).
    Lateral: PID on the folded cross-track/heading error against the
    trajectory polyline.
    """

    def __init__(self, times: np.ndarray, waypoints: np.ndarray):
        self.times = np.asarray(times, dtype=float)
        self.waypoints = np.asarray(waypoints, dtype=float)
        self.xs = np.ascontiguousarray(self.waypoints[:, 0])
        self.ys = np.ascontiguousarray(self.waypoints[:, 1])
        steps = np.hypot(np.diff(self.xs), np.diff(self.ys))
        self.cum = np.ascontiguousarray(np.concatenate([[0.0], np.cumsum(steps)]))
        dts = np.diff(self.times)
        seg_speed = steps / np.where(dts > 0, dts, 1.0)
        if seg_speed.shape[0]:
            self.speeds = np.concatenate([[seg_speed[0]], seg_speed])
        else:
            self.speeds = np.zeros(1)
        self.pid_speed = speed_pid()
        self.pid_steer = steer_pid()

    @property
    def guide(self) -> np.ndarray:
        return self.waypoints

    def target(self, t: float) -> TrackingTarget:
        x = np.interp(t, self.times, self.xs)
        y = np.interp(t, self.times, self.ys)
        v = np.interp(t, self.times, self.speeds)
        return TrackingTarget(position=np.array([x, y]), speed=float(v))

    def d_ep(self, pose, t: float) -> float:
        tgt = self.target(t)
        return math.hypot(pose.x - tgt.position[0], pose.y - tgt.position[1])

    def _path_heading(self, s: float) -> float:
        cum = self.cum
        i = int(np.searchsorted(cum, min(max(s, cum[0]), cum[-1]), side="right")) - 1
        i = min(max(i, 0), len(cum) - 2)
        dx = self.xs[i + 1] - self.xs[i]
        dy = self.ys[i + 1] - self.ys[i]
        if dx * dx + dy * dy <= 1e-18:
            for j in range(i - 1, -1, -1):
                dx = self.xs[j + 1] - self.xs[j]
                dy = self.ys[j + 1] - self.ys[j]
                if dx * dx + dy * dy > 1e-18:
                    break
        return math.atan2(dy, dx)

    def controls(self, pose, t: float, dt: float, target_speed: float | None = None) -> ControlInput:
        if target_speed is None:
            target_speed = self.target(t).speed
        acc = pid_speed(self.pid_speed, target_speed, pose.v, dt)
        qx, qy, _, s = kernels.polyline_project(self.xs, self.ys, self.cum, pose.x, pose.y)
        h_path = self._path_heading(s)
        # Signed cross-track: positive when the vehicle sits left of the path.
        nx = -math.sin(h_path)
        ny = math.cos(h_path)
        cross = (pose.x - qx) * nx + (pose.y - qy) * ny
        herr = kernels.wrap_angle(h_path - pose.psi)
        delta = pid_steer(self.pid_steer, (cross, herr), dt, speed=pose.v)
        return ControlInput(acc=acc, delta_f=delta)


def select_mode(ps: ProposalSet) -> int:
    """Deterministic selected mode: highest score, lowest index on ties."""
    return int(np.argmax(ps.scores))


@dataclass
class EpisodeSpec:
    """One rollout: who is policy-controlled, who follows a proposal."""

    scenario: dict
    proposals: dict[str, ProposalSet]
    policy_agents: tuple[str, ...] = ()
    follower_agents: tuple[str, ...] = ()
    mode_index: dict[str, int] = field(default_factory=dict)
    horizon: float = 8.0
    use_targets: bool = True


def prepare_world(spec: EpisodeSpec):
    world = init_world(spec.scenario, spec.horizon)
    controllers: dict[str, TrackingController] = {}
    for aid in tuple(spec.policy_agents) + tuple(spec.follower_agents):
        ps = spec.proposals[aid]
        k = spec.mode_index.get(aid, select_mode(ps))
        controllers[aid] = TrackingController(ps.times, ps.modes[k])
        world.agents[aid].controller = POLICY if aid in spec.policy_agents else FOLLOWER
    targets: dict[str, EndpointTarget] = {}
    if spec.use_targets:
        reactive = reactivity_target(spec.scenario)
        for aid in spec.policy_agents:
            if aid in reactive:
                targets[aid] = reactive[aid]
            else:
                targets[aid] = EndpointTarget(point=controllers[aid].waypoints[-1].copy())
    return world, controllers, targets


def run_episode(world: World, controllers, targets, policy_ids, action_fn,
                on_tick=None, stop_on_event: bool = True):
    """Roll one episode to termination.

    ``action_fn(agent_id, obs_vector) -> action`` supplies policy actions;
    follower agents track their own speed profile. With
    ``stop_on_event=False`` the world always runs to the horizon (events are
    still recorded and still dominate the outcome), which modification
    rollouts use to emit complete realized trajectories. Returns
    (result, summed policy reward, transitions).
    """
    policy_ids = tuple(policy_ids)
    follower_ids = [aid for aid in world.controlled_ids() if aid not in policy_ids]
    obs = {
        aid: build_observation(
            world, aid, controllers[aid].target(world.time), controllers[aid].guide
        ).vector()
        for aid in policy_ids
    }
    transitions = []
    total_reward = 0.0
    result = None
    while result is None:
        t = world.time
        controls = {}
        actions = {}
        for aid in follower_ids:
            controls[aid] = controllers[aid].controls(world.agents[aid].pose, t, world.dt)
        for aid in policy_ids:
            a = float(action_fn(aid, obs[aid]))
            actions[aid] = a
            controls[aid] = controllers[aid].controls(
                world.agents[aid].pose, t, world.dt,
                target_speed=action_to_target_speed(a),
            )
        events = step(world, controls)
        if stop_on_event or world.tick >= world.horizon_ticks:
            result = check_termination(world, targets)
        t2 = world.time
        tick_transitions = []
        for aid in policy_ids:
            pose = world.agents[aid].pose
            collided = any(aid in (a, b) for _, a, b in events)
            reward = compute_reward(collided, pose.v, controllers[aid].d_ep(pose, t2)).total
            s2 = build_observation(
                world, aid, controllers[aid].target(t2), controllers[aid].guide
            ).vector()
            done = 1.0 if result is not None and result.outcome in ("collision", "success") else 0.0
            tick_transitions.append((aid, obs[aid], actions[aid], reward, s2, done))
            obs[aid] = s2
            total_reward += reward
        transitions.extend(tick_transitions)
        if on_tick is not None:
            on_tick(tick_transitions)
    return result, total_reward, transitions


# ---------------------------------------------------------------------------
# Stage-2 training


@dataclass
class TrainTask:
    scenario: dict
    agent: str
    proposal: ProposalSet


@dataclass
class TrainConfig:
    episodes: int
    seed: int
    hyper: Hyperparams = field(default_factory=Hyperparams)
    horizon: float = 8.0
    workers: int = 1
    checkpoint_every: int = 0
    checkpoint_fn: object = None  # callable(bundle, episode) when periodic saving is on


def _episode_rng(seed: int, episode: int) -> np.random.Generator:
    """Per-episode stream: derived from the run seed and the episode index,
    independent of worker assignment."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(1, episode)))


def _update_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(2,)))


def _worker_job(args):
    (scenario, agent, times, mode, seed, episode, horizon,
     actor_state, sizes, dtype, sigma, warmup_remaining) = args
    actor = Actor(np.random.default_rng(0), ActorSizes(*sizes), np.dtype(dtype))
    set_state(actor, actor_state)
    rng = _episode_rng(seed, episode)
    rng.integers(1)  # mirror the trainer-side task draw
    spec = EpisodeSpec(
        scenario=scenario,
        proposals={agent: ProposalSet(agent=agent, times=times, modes=mode[None], scores=np.ones(1))},
        policy_agents=(agent,),
        horizon=horizon,
    )
    world, controllers, targets = prepare_world(spec)
    countdown = [warmup_remaining]

    def action_fn(aid, obs_vec):
        if countdown[0] > 0:
            countdown[0] -= 1
            return float(rng.uniform(-1.0, 1.0))
        a = actor.act(obs_vec) + float(rng.normal(0.0, sigma))
        return min(max(a, -1.0), 1.0)

    result, ret, transitions = run_episode(world, controllers, targets, (agent,), action_fn)
    return episode, result.outcome, ret, world.tick, transitions


def train_stage2(tasks: list[TrainTask], config: TrainConfig, bundle: PolicyBundle | None = None):
    """Run the episode/update loop over a scenario batch.

    A single learner owns the bundle and replay buffer and applies one
    update per environment step past warm-up. Single-worker runs are
    bit-reproducible under a fixed seed; multi-worker runs roll whole
    episodes against snapshot actors in parallel and are statistically
    equivalent but not bit-stable. Pass a ``bundle`` restored from a
    checkpoint to continue a run (the replay buffer starts empty; episode
    and step counters carry on).
    """
    if not tasks:
        raise ValueError("no training tasks")
    with threadpool_limits(limits=1):
        return _train_stage2(tasks, config, bundle)


def _train_stage2(tasks, config: TrainConfig, bundle):
    # BLAS threading is counterproductive at these matrix sizes, so the whole
    # loop runs under a single-thread limit (see train_stage2).
    hyper = config.hyper
    if bundle is None:
        bundle = PolicyBundle.create(hyper, config.seed)
    else:
        hyper = bundle.hyper
    buffer = ReplayBuffer(hyper.buffer_capacity)
    rng_upd = _update_rng(config.seed)
    log_rows: list[dict] = []
    last_stats: dict = {}

    def ingest(tick_transitions):
        nonlocal last_stats
        for _, s, a, r, s2, done in tick_transitions:
            buffer.add(s, a, r, s2, done)
        bundle.env_steps += 1
        if bundle.env_steps >= hyper.warmup_steps and buffer.size >= hyper.batch_size:
            last_stats = td3_update(bundle, buffer.sample(rng_upd, hyper.batch_size), rng_upd)

    def log_episode(episode, outcome, ret, steps):
        bundle.episodes += 1
        log_rows.append(
            {
                "episode": episode,
                "outcome": outcome,
                "return": ret,
                "steps": steps,
                "critic_loss": last_stats.get("critic1_loss"),
                "actor_objective": last_stats.get("actor_objective"),
            }
        )
        if config.checkpoint_every and config.checkpoint_fn is not None:
            if (episode + 1) % config.checkpoint_every == 0:
                config.checkpoint_fn(bundle, episode)

    start = bundle.episodes
    if config.workers <= 1:
        for ep in range(start, start + config.episodes):
            rng_ep = _episode_rng(config.seed, ep)
            task = tasks[int(rng_ep.integers(len(tasks)))]
            spec = EpisodeSpec(
                scenario=task.scenario,
                proposals={task.agent: task.proposal},
                policy_agents=(task.agent,),
                horizon=config.horizon,
            )
            world, controllers, targets = prepare_world(spec)

            def action_fn(aid, obs_vec, _rng=rng_ep):
                if bundle.env_steps < hyper.warmup_steps:
                    return float(_rng.uniform(-1.0, 1.0))
                a = bundle.actor.act(obs_vec) + float(_rng.normal(0.0, hyper.sigma))
                return min(max(a, -1.0), 1.0)

            result, ret, _ = run_episode(
                world, controllers, targets, (task.agent,), action_fn, on_tick=ingest
            )
            log_episode(ep, result.outcome, ret, world.tick)
        return bundle, log_rows

    ctx = multiprocessing.get_context("fork")
    episode = start
    end = start + config.episodes
    with ctx.Pool(config.workers) as pool:
        while episode < end:
            chunk = min(config.workers, end - episode)
            actor_state = get_state(bundle.actor)
            warmup_remaining = max(hyper.warmup_steps - bundle.env_steps, 0)
            jobs = []
            for i in range(chunk):
                ep = episode + i
                rng_pick = _episode_rng(config.seed, ep)
                task = tasks[int(rng_pick.integers(len(tasks)))]
                k = select_mode(task.proposal)
                jobs.append(
                    (
                        task.scenario, task.agent, task.proposal.times,
                        task.proposal.modes[k], config.seed, ep, config.horizon,
                        actor_state, hyper.actor_sizes, hyper.dtype, hyper.sigma,
                        warmup_remaining,
                    )
                )
            for ep, outcome, ret, steps, transitions in pool.imap(_worker_job, jobs):
                for tr in transitions:
                    ingest([tr])
                log_episode(ep, outcome, ret, steps)
            episode += chunk
    return bundle, log_rows


# ---------------------------------------------------------------------------
# Policy rollouts for evaluation and trajectory modification


def rollout(spec: EpisodeSpec, actor: Actor | None = None, stop_on_event=True):
    """Deterministic (noise-free) rollout of one episode spec."""
    if spec.policy_agents and actor is None:
        raise ValueError("policy agents need an actor")
    world, controllers, targets = prepare_world(spec)

    def action_fn(aid, obs_vec):
        return actor.act(obs_vec)
    result, ret, _ = run_episode(
        world, controllers, targets, spec.policy_agents, action_fn,
        stop_on_event=stop_on_event,
    )
    return world, result, ret


def resample_rollout(ps: ProposalSet, mode_idx: int, realized: np.ndarray) -> ProposalSet:
    """Replace one mode's waypoints with a realized rollout resampled at the
    proposal timestamps (frozen at the final pose past the rollout's end)."""
    t = realized[:, 0]
    new_mode = np.column_stack(
        [
            np.interp(ps.times, t, realized[:, 1]),
            np.interp(ps.times, t, realized[:, 2]),
        ]
    )
    modes = ps.modes.copy()
    modes[mode_idx] = new_mode
    return ProposalSet(agent=ps.agent, times=ps.times.copy(), modes=modes, scores=ps.scores.copy())


def modify_trajectories(bundle: PolicyBundle, scenario_batch, flagged, horizon: float = 8.0):
    """Re-roll flagged agents under the trained policy, others unchanged.

    ``scenario_batch`` is a list of (scenario, {agent: ProposalSet}) pairs;
    ``flagged`` lists (scenario_name, agent) pairs to put under policy
    control (sharing the bundle's parameters). Non-flagged proposal agents
    keep following their proposals; pure log agents replay. Returns
    (scenario, dump, revised proposal sets) triples with complete realized
    trajectories (episodes run to the horizon).
    """
    flagged_set = set(flagged)
    outputs = []
    for scenario, proposals in scenario_batch:
        name = scenario.get("name", "")
        policy_agents = tuple(sorted(a for a in proposals if (name, a) in flagged_set))
        follower_agents = tuple(sorted(a for a in proposals if (name, a) not in flagged_set))
        spec = EpisodeSpec(
            scenario=scenario,
            proposals=proposals,
            policy_agents=policy_agents,
            follower_agents=follower_agents,
            horizon=horizon,
            use_targets=False,
        )
        world, result, _ = rollout(spec, bundle.actor, stop_on_event=False)
        dump = build_episode_dump(world, result)
        revised = []
        for aid in sorted(proposals):
            ps = proposals[aid]
            if aid in policy_agents:
                realized = np.asarray(world.traj[aid], dtype=float)
                revised.append(resample_rollout(ps, select_mode(ps), realized))
            else:
                revised.append(ps)
        outputs.append((scenario, dump, revised))
    return outputs
