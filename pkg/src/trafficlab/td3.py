"""Twin-critic delayed deterministic policy-gradient learner.

Owns the replay buffer, the actor/critic bundle with target copies, and the
per-batch update rule: clipped-noise smoothed targets, twin-minimum
bootstrap, delayed actor steps, and soft target blending.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from .fileio import CHECKPOINT_FORMAT
from .nets import (
    Actor,
    ActorSizes,
    Adam,
    Critic,
    CriticSizes,
    copy_params,
    get_state,
    named_params,
    set_state,
    soft_update,
    zero_grads,
)
from .observation import OBS_DIM, obs_layout_hash


class NumericalFailure(RuntimeError):
    """Raised when an update produces non-finite losses; carries a dump."""

    def __init__(self, message: str, dump: dict):
        super().__init__(message)
        self.dump = dump


@dataclass
class Hyperparams:
    gamma: float = 0.99
    tau: float = 0.005
    sigma: float = 0.1          # exploration and target-smoothing noise std
    noise_clip: float = 0.5
    policy_delay: int = 2
    batch_size: int = 256
    actor_lr: float = 1e-4
    critic_lr: float = 5e-5
    warmup_steps: int = 1000
    buffer_capacity: int = 100_000
    # Learner-internal positive scaling of rewards before the bootstrap sum;
    # keeps Q on an O(1) scale the critic head can reach quickly. Optimal
    # policies are invariant to it. The environment reward is unscaled.
    reward_scale: float = 0.01
    actor_sizes: tuple[int, int, int] = (64, 64, 256)   # enc, attn, dec
    critic_sizes: tuple[int, int] = (64, 64)            # enc, dec
    dtype: str = "float64"

    def replace(self, **kw) -> "Hyperparams":
        data = asdict(self)
        data.update(kw)
        data["actor_sizes"] = tuple(data["actor_sizes"])
        data["critic_sizes"] = tuple(data["critic_sizes"])
        return Hyperparams(**data)


class ReplayBuffer:
    """Flat preallocated transition store with uniform sampling."""

    def __init__(self, capacity: int, obs_dim: int = OBS_DIM):
        self.capacity = capacity
        self.s = np.zeros((capacity, obs_dim))
        self.a = np.zeros((capacity, 1))
        self.r = np.zeros((capacity, 1))
        self.s2 = np.zeros((capacity, obs_dim))
        self.done = np.zeros((capacity, 1))
        self.ptr = 0
        self.size = 0

    def add(self, s, a, r, s2, done) -> None:
        i = self.ptr
        self.s[i] = s
        self.a[i] = a
        self.r[i] = r
        self.s2[i] = s2
        self.done[i] = float(done)
        self.ptr = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, rng: np.random.Generator, batch: int) -> dict:
        idx = rng.integers(0, self.size, size=batch)
        return {
            "s": self.s[idx],
            "a": self.a[idx],
            "r": self.r[idx],
            "s2": self.s2[idx],
            "done": self.done[idx],
        }


@dataclass
class PolicyBundle:
    actor: Actor
    critic1: Critic
    critic2: Critic
    target_actor: Actor
    target_critic1: Critic
    target_critic2: Critic
    adam_actor: Adam
    adam_critic1: Adam
    adam_critic2: Adam
    hyper: Hyperparams
    updates: int = 0
    episodes: int = 0
    env_steps: int = 0

    @classmethod
    def create(cls, hyper: Hyperparams, seed: int) -> "PolicyBundle":
        dtype = np.dtype(hyper.dtype)
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(0,)))
        a_sizes = ActorSizes(*hyper.actor_sizes)
        c_sizes = CriticSizes(*hyper.critic_sizes)
        actor = Actor(rng, a_sizes, dtype)
        critic1 = Critic(rng, c_sizes, dtype)
        critic2 = Critic(rng, c_sizes, dtype)
        t_actor = Actor(rng, a_sizes, dtype)
        t_critic1 = Critic(rng, c_sizes, dtype)
        t_critic2 = Critic(rng, c_sizes, dtype)
        copy_params(t_actor, actor)
        copy_params(t_critic1, critic1)
        copy_params(t_critic2, critic2)
        return cls(
            actor=actor,
            critic1=critic1,
            critic2=critic2,
            target_actor=t_actor,
            target_critic1=t_critic1,
            target_critic2=t_critic2,
            adam_actor=Adam(actor, hyper.actor_lr),
            adam_critic1=Adam(critic1, hyper.critic_lr),
            adam_critic2=Adam(critic2, hyper.critic_lr),
            hyper=hyper,
        )

    def checkpoint(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": 1,
            "obs_hash": obs_layout_hash(),
            "hyper": asdict(self.hyper),
            "counters": {
                "updates": self.updates,
                "episodes": self.episodes,
                "env_steps": self.env_steps,
            },
            "nets": {
                "actor": get_state(self.actor),
                "critic1": get_state(self.critic1),
                "critic2": get_state(self.critic2),
                "target_actor": get_state(self.target_actor),
                "target_critic1": get_state(self.target_critic1),
                "target_critic2": get_state(self.target_critic2),
            },
            "adam": {
                "actor": self.adam_actor.get_state(),
                "critic1": self.adam_critic1.get_state(),
                "critic2": self.adam_critic2.get_state(),
            },
        }

    @classmethod
    def from_checkpoint(cls, payload: dict) -> "PolicyBundle":
        raw = dict(payload["hyper"])
        raw["actor_sizes"] = tuple(raw["actor_sizes"])
        raw["critic_sizes"] = tuple(raw["critic_sizes"])
        hyper = Hyperparams(**raw)
        bundle = cls.create(hyper, seed=0)
        nets = payload["nets"]
        set_state(bundle.actor, nets["actor"])
        set_state(bundle.critic1, nets["critic1"])
        set_state(bundle.critic2, nets["critic2"])
        set_state(bundle.target_actor, nets["target_actor"])
        set_state(bundle.target_critic1, nets["target_critic1"])
        set_state(bundle.target_critic2, nets["target_critic2"])
        bundle.adam_actor.set_state(payload["adam"]["actor"])
        bundle.adam_critic1.set_state(payload["adam"]["critic1"])
        bundle.adam_critic2.set_state(payload["adam"]["critic2"])
        counters = payload["counters"]
        bundle.updates = int(counters["updates"])
        bundle.episodes = int(counters["episodes"])
        bundle.env_steps = int(counters["env_steps"])
        return bundle


def action_to_target_speed(action: float) -> float:
    """Map a [-1, 1] action linearly onto the (0, 10) m/s target-speed range."""
    a = min(max(float(action), -1.0), 1.0)
    return 5.0 * (a + 1.0)


def td3_update(bundle: PolicyBundle, batch: dict, rng: np.random.Generator) -> dict:
    """One critic step (both critics), with a delayed actor/target step.

    Done-flagged transitions drop the bootstrap term. Raises
    ``NumericalFailure`` when any loss goes non-finite.
    """
    h = bundle.hyper
    dtype = bundle.actor.dtype
    s = np.asarray(batch["s"], dtype=dtype)
    a = np.asarray(batch["a"], dtype=dtype)
    r = np.asarray(batch["r"], dtype=dtype)
    s2 = np.asarray(batch["s2"], dtype=dtype)
    done = np.asarray(batch["done"], dtype=dtype)
    b = s.shape[0]

    noise = rng.normal(0.0, h.sigma, size=(b, 1))
    noise = np.clip(noise, -h.noise_clip, h.noise_clip).astype(dtype)
    a2, _ = bundle.target_actor.forward(s2)
    a2 = a2 + noise
    q1t, _ = bundle.target_critic1.forward(s2, a2)
    q2t, _ = bundle.target_critic2.forward(s2, a2)
    q_target = np.minimum(q1t, q2t)
    y = h.reward_scale * r + h.gamma * (1.0 - done) * q_target

    stats = {}
    for name, critic, adam in (
        ("critic1", bundle.critic1, bundle.adam_critic1),
        ("critic2", bundle.critic2, bundle.adam_critic2),
    ):
        q, cache = critic.forward(s, a)
        err = q - y
        loss = float(np.mean(err * err))
        zero_grads(critic)
        critic.backward(cache, (2.0 / b) * err)
        adam.step()
        stats[f"{name}_loss"] = loss
    stats["q_target_mean"] = float(np.mean(y))

    bundle.updates += 1
    if bundle.updates % h.policy_delay == 0:
        a_pi, cache_a = bundle.actor.forward(s)
        q1, cache_q = bundle.critic1.forward(s, a_pi)
        stats["actor_objective"] = float(np.mean(q1))
        # Ascend on Q1: feed -1/b through the critic without touching its
        # parameter grads, then accumulate into the actor.
        _, dact = bundle.critic1.backward(
            cache_q, np.full((b, 1), -1.0 / b, dtype=dtype), accumulate=False
        )
        zero_grads(bundle.actor)
        bundle.actor.backward(cache_a, dact)
        bundle.adam_actor.step()
        soft_update(bundle.target_actor, bundle.actor, h.tau)
        soft_update(bundle.target_critic1, bundle.critic1, h.tau)
        soft_update(bundle.target_critic2, bundle.critic2, h.tau)

    bad = [k for k, v in stats.items() if not np.isfinite(v)]
    if bad:
        dump = {
            "updates": bundle.updates,
            "env_steps": bundle.env_steps,
            "stats": stats,
            "param_norms": {
                name: float(np.linalg.norm(p))
                for name, p, _ in named_params(bundle.actor)
            },
        }
        raise NumericalFailure(f"non-finite update statistics: {bad}", dump)
    return stats
