"""Seeded SNN-TD3 training loop, single process or data parallel."""

from __future__ import annotations

import logging
import threading
import time
from typing import Optional

import numpy as np

from . import __version__, envs
from .amp import CastPolicy
from .checkpoint import param_hash
from .config import RunConfig
from .dist import (DistributedDataParallel, LoopbackHub, init_group, reduce_test_reward,
                   use_explicit_averaging)
from .greenscope import make_meter, measure_run
from .snn import ActorConfig, LifConfig, SpikingActor, Surrogate
from .td3 import Td3Agent, Td3Config

log = logging.getLogger(__name__)

ARTIFACT_SCHEMA = 1
EVAL_SEED_BASE = 1_000_003


def build_agent(cfg: RunConfig, rank: int = 0) -> tuple:
    env = envs.make(cfg.env)
    spec = env.spec
    s = cfg.snn
    actor_cfg = ActorConfig(
        obs_dim=spec.obs_dim, action_dim=spec.action_dim, action_bound=spec.action_bound,
        obs_range=spec.obs_range, hidden=tuple(s.hidden), enc_pop=s.enc_pop, dec_pop=s.dec_pop,
        lif=LifConfig(s.current_decay, s.voltage_decay, s.threshold, s.timesteps),
        train_encoder=s.train_encoder)
    # Parameter init depends on the seed only, so ranks start identical even
    # before the broadcast; the agent stream is rank specific.
    init_rng = np.random.default_rng([cfg.seed, 0])
    actor = SpikingActor(actor_cfg, init_rng)
    t = cfg.td3
    td3_cfg = Td3Config(gamma=t.gamma, tau=t.tau, policy_noise=t.policy_noise,
                        noise_clip=t.noise_clip, exploration_noise=t.exploration_noise,
                        policy_delay=t.policy_delay, batch_size=t.batch_size,
                        lr_actor=t.lr_actor, lr_critic=t.lr_critic, warmup_steps=t.warmup_steps,
                        replay_capacity=t.replay_capacity, critic_hidden=tuple(t.critic_hidden))
    policy = CastPolicy.from_mode(cfg.amp.mode) if cfg.amp.enabled else None
    scaler_kwargs = {"init_scale": cfg.amp.init_scale, "growth_interval": cfg.amp.growth_interval,
                     "enabled": cfg.amp.loss_scaling}
    agent = Td3Agent(actor, td3_cfg, seed=[cfg.seed, 1, rank], critic_rng=init_rng,
                     policy=policy, scaler_kwargs=scaler_kwargs,
                     surrogate=Surrogate(s.surrogate_width, s.surrogate_height))
    return env, agent


def evaluate(agent: Td3Agent, env_name: str, episodes: int, seed: int) -> float:
    env = envs.make(env_name)
    total = 0.0
    for k in range(episodes):
        obs = env.reset(seed=[EVAL_SEED_BASE, seed, k])
        done = False
        ret = 0.0
        while not done:
            obs, r, done = env.step(agent.select_action(obs))
            ret += r
        total += ret
    return total / episodes


def _train_loop(cfg: RunConfig, env, agent: Td3Agent, group, rank: int) -> dict:
    def test_reward():
        local = evaluate(agent, cfg.env, cfg.eval_episodes, cfg.seed * 7919 + rank)
        return reduce_test_reward(group, local)[0] if group is not None else local

    initial = test_reward()
    obs = env.reset(seed=[cfg.seed, 2, rank])
    epochs = []
    step = 0
    t0 = time.perf_counter()
    for epoch in range(1, cfg.epochs + 1):
        critic_losses = []
        for _ in range(cfg.steps_per_epoch):
            if step < agent.cfg.warmup_steps:
                action = agent.random_action()
            else:
                action = agent.select_action(obs, explore=True)
            next_obs, reward, done = env.step(action)
            # Time-limit endings are not terminal for bootstrapping.
            agent.replay.push(obs, action, reward, next_obs, 0.0)
            obs = env.reset() if done else next_obs
            step += 1
            if step >= agent.cfg.warmup_steps and len(agent.replay) >= agent.cfg.batch_size:
                critic_losses.append(agent.train_step()["critic_loss"])
        reward = test_reward()
        epochs.append({"epoch": epoch, "env_steps": step, "test_reward": reward,
                       "critic_loss": float(np.mean(critic_losses)) if critic_losses else None,
                       "elapsed_s": time.perf_counter() - t0})
        log.info("rank %d epoch %d: test reward %.2f", rank, epoch, reward)
    return {"initial_test_reward": initial, "epochs": epochs}


def _artifact(cfg: RunConfig, agent: Td3Agent, body: dict, metrics, rank: int, world: int) -> dict:
    art = {
        "schema_version": ARTIFACT_SCHEMA,
        "tool": "spikerl",
        "tool_version": __version__,
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "rank": rank,
        "world_size": world,
        "amp_mode": cfg.amp.mode if cfg.amp.enabled else "off",
        "initial_test_reward": body["initial_test_reward"],
        "epochs": body["epochs"],
        "reward_trace": [e["test_reward"] for e in body["epochs"]],
        "param_hash": param_hash(agent.state_arrays()),
        "metrics": metrics.to_dict(),
    }
    if agent.amp:
        art["grad_scale"] = {"actor": agent.actor_scaler.scale, "critic": agent.critic_scaler.scale}
    return art


def run_rank(cfg: RunConfig, group=None, meter=None) -> tuple:
    """Train one rank. Returns ``(artifact, agent)``."""
    rank = group.rank if group is not None else 0
    world = group.world_size if group is not None else 1
    env, agent = build_agent(cfg, rank)
    if group is not None and world > 1:
        if cfg.dist.scheme == "hook":
            DistributedDataParallel(agent, group)
        else:
            use_explicit_averaging(agent, group)
    meter = meter if meter is not None else make_meter(cfg.meter.kind, cfg.meter.watts)
    metrics, body = measure_run(meter, lambda: _train_loop(cfg, env, agent, group, rank),
                                label=f"{cfg.env}-seed{cfg.seed}")
    return _artifact(cfg, agent, body, metrics, rank, world), agent


def run(cfg: RunConfig, hub: Optional[LoopbackHub] = None) -> list:
    """Run every rank this process owns; returns ``[(artifact, agent), ...]`` by rank.

    A loopback group runs all its ranks as threads here; a tcp group runs
    only ``cfg.dist.rank``.
    """
    d = cfg.dist
    if d.world_size == 1:
        return [run_rank(cfg)]
    if d.backend == "tcp":
        group = init_group(d.rank, d.world_size, d.peers, "tcp", d.timeout_s)
        try:
            return [run_rank(cfg, group)]
        finally:
            group.close()

    hub = hub or LoopbackHub(d.world_size)
    results: list = [None] * d.world_size
    errors: list = []

    def worker(r):
        try:
            group = init_group(r, d.world_size, backend="loopback", timeout=d.timeout_s, hub=hub)
            results[r] = run_rank(cfg, group)
        except BaseException as exc:  # surfaced in the caller below
            errors.append((r, exc))

    threads = [threading.Thread(target=worker, args=(r,), name=f"spikerl-rank{r}")
               for r in range(d.world_size)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if errors:
        r, exc = errors[0]
        raise RuntimeError(f"rank {r} failed: {exc}") from exc
    return results
