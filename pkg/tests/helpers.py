"""Scenario builders shared by the module tests and the acceptance suite."""

import numpy as np

from spikerl.checkpoint import param_hash
from spikerl.dist import DistributedDataParallel, broadcast_weights, use_explicit_averaging
from spikerl.snn import ActorConfig, LifConfig, SpikingActor
from spikerl.td3 import Td3Agent, Td3Config
from tests.conftest import run_ranks


def small_agent(seed=0, dtype=np.float64, policy=None, **overrides):
    kw = dict(batch_size=8, critic_hidden=(16, 16), warmup_steps=0, replay_capacity=512)
    kw.update(overrides)
    cfg = ActorConfig(3, 1, [2.0], obs_range=[(-1, 1), (-1, 1), (-8, 8)], hidden=(16,),
                      enc_pop=4, dec_pop=4, lif=LifConfig(timesteps=4))
    actor = SpikingActor(cfg, np.random.default_rng(seed), dtype=dtype)
    return Td3Agent(actor, Td3Config(**kw), seed=seed, policy=policy)


def _pendulum_obs(rng, n):
    t = rng.uniform(-np.pi, np.pi, n)
    return np.column_stack([np.cos(t), np.sin(t), rng.uniform(-8, 8, n)])


def random_batch(rng, n):
    return {"obs": _pendulum_obs(rng, n), "action": rng.uniform(-2, 2, (n, 1)),
            "reward": -rng.uniform(0, 16, n), "next_obs": _pendulum_obs(rng, n),
            "done": np.zeros(n)}


def split(batch, k, parts):
    n = len(batch["reward"]) // parts
    return {key: v[k * n:(k + 1) * n] for key, v in batch.items()}


def max_rel_diff(a: dict, b: dict) -> float:
    worst = 0.0
    for k in a:
        scale = max(np.abs(b[k]).max(), 1e-12)
        worst = max(worst, float(np.abs(a[k] - b[k]).max() / scale))
    return worst


def broadcast_hashes(world, backend="loopback"):
    """Each rank builds a differently seeded agent, then broadcasts from rank 0."""

    def body(group):
        agent = small_agent(seed=100 + group.rank)
        for params in agent.networks().values():
            broadcast_weights(group, params)
        return param_hash(agent.state_arrays())

    return run_ranks(world, body, backend)


def gradient_average_error(world, backend="loopback", seed=3, per_rank=6):
    """average_gradients over ``world`` equal batches vs the concatenated batch.

    Returns the worst relative difference over critic and actor gradients.
    """
    batch = random_batch(np.random.default_rng(seed), per_rank * world)
    ref = small_agent(seed=seed, policy_noise=0.0)
    y = ref.compute_target(batch)
    _, want_c = ref.critic_grads(batch, y)
    _, want_a = ref.actor_grads(batch)

    def body(group):
        from spikerl.dist import average_gradients

        agent = small_agent(seed=seed, policy_noise=0.0)
        part = split(batch, group.rank, world)
        _, gc = agent.critic_grads(part, agent.compute_target(part))
        _, ga = agent.actor_grads(part)
        return average_gradients(group, gc), average_gradients(group, ga)

    results = run_ranks(world, body, backend)
    for r in results:
        if isinstance(r, BaseException):
            raise r
    return max(max(max_rel_diff(gc, want_c), max_rel_diff(ga, want_a)) for gc, ga in results)


def train_scheme(scheme, world=2, steps=20, backend="loopback", seed=9, per_rank=8):
    """Train ``world`` ranks for ``steps`` on fixed, partitioned batches.

    Returns per-rank ``(param_hash, state_arrays copy)``.
    """
    rng = np.random.default_rng(seed)
    batches = [random_batch(rng, per_rank * world) for _ in range(steps)]

    def body(group):
        agent = small_agent(seed=seed + group.rank, policy_noise=0.0, batch_size=per_rank)
        if scheme == "explicit":
            use_explicit_averaging(agent, group)
        else:
            DistributedDataParallel(agent, group)
        for b in batches:
            agent.train_step(split(b, group.rank, world))
        arrays = {k: v.copy() for k, v in agent.state_arrays().items()}
        return param_hash(arrays), arrays

    results = run_ranks(world, body, backend, timeout=60)
    for r in results:
        if isinstance(r, BaseException):
            raise r
    return results


def train_single(steps=20, seed=9, batch=16):
    rng = np.random.default_rng(seed)
    batches = [random_batch(rng, batch) for _ in range(steps)]
    agent = small_agent(seed=seed, policy_noise=0.0, batch_size=batch)
    for b in batches:
        agent.train_step(b)
    return {k: v.copy() for k, v in agent.state_arrays().items()}
