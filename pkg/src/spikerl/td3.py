"""TD3 trainer for the spiking actor: twin critics, target smoothing, delayed updates."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .amp import CastPolicy, GradScaler, MasterWeights
from .numeric import DimensionError
from .snn import SpikingActor, Surrogate


class NotReady(Exception):
    """The replay buffer does not yet hold enough transitions."""


@dataclass
class Td3Config:
    gamma: float = 0.99
    tau: float = 0.005
    # noise magnitudes are fractions of each action bound
    policy_noise: float = 0.2
    noise_clip: float = 0.5
    exploration_noise: float = 0.1
    policy_delay: int = 2
    batch_size: int = 128
    lr_actor: float = 3e-4
    lr_critic: float = 1e-3
    warmup_steps: int = 1000
    replay_capacity: int = 100_000
    critic_hidden: tuple = (256, 256)

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")
        if self.policy_noise < 0 or self.noise_clip < 0 or self.exploration_noise < 0:
            raise ValueError("noise parameters must be non-negative")
        if self.policy_delay < 1 or self.batch_size < 1 or self.replay_capacity < 1:
            raise ValueError("policy_delay, batch_size and replay_capacity must be >= 1")
        self.critic_hidden = tuple(self.critic_hidden)


class ReplayBuffer:
    def __init__(self, capacity: int, obs_dim: int, action_dim: int):
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim))
        self.action = np.zeros((capacity, action_dim))
        self.reward = np.zeros(capacity)
        self.next_obs = np.zeros((capacity, obs_dim))
        self.done = np.zeros(capacity)
        self.size = 0
        self.cursor = 0

    def __len__(self):
        return self.size

    def push(self, obs, action, reward, next_obs, done):
        i = self.cursor
        self.obs[i] = obs
        self.action[i] = action
        self.reward[i] = reward
        self.next_obs[i] = next_obs
        self.done[i] = float(done)
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def indices(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.size < n:
            raise NotReady(f"replay holds {self.size} transitions, need {n}")
        return rng.integers(0, self.size, size=n)

    def gather(self, idx) -> dict:
        return {"obs": self.obs[idx], "action": self.action[idx], "reward": self.reward[idx],
                "next_obs": self.next_obs[idx], "done": self.done[idx]}

    def sample(self, n: int, rng: np.random.Generator) -> dict:
        return self.gather(self.indices(n, rng))


class Adam:
    def __init__(self, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m: dict = {}
        self.v: dict = {}

    def step(self, params: dict, grads: dict):
        """In-place update of ``params``."""
        self.t += 1
        if self.lr == 0:
            return
        b1, b2 = self.b1, self.b2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for k, p in params.items():
            g = grads[k]
            m = self.m.get(k)
            if m is None:
                m = self.m[k] = np.zeros_like(p)
                self.v[k] = np.zeros_like(p)
            v = self.v[k]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            p -= (self.lr / c1) * m / (np.sqrt(v / c2) + self.eps)


class CriticNet:
    """ReLU MLP ``Q(s, a)`` with parameters ``fc{i}.weight`` / ``fc{i}.bias``."""

    def __init__(self, obs_dim: int, action_dim: int, hidden=(256, 256),
                 rng: Optional[np.random.Generator] = None, dtype=np.float32,
                 params: Optional[dict] = None):
        self.obs_dim, self.action_dim = obs_dim, action_dim
        self.hidden = tuple(hidden)
        self.dtype = np.dtype(dtype)
        self.widths = [obs_dim + action_dim, *self.hidden, 1]
        if params is not None:
            self.params = {k: np.array(v, dtype=self.dtype) for k, v in params.items()}
        else:
            rng = rng if rng is not None else np.random.default_rng(0)
            self.params = {}
            for i in range(len(self.widths) - 1):
                lim = 1.0 / math.sqrt(self.widths[i])
                shape = (self.widths[i + 1], self.widths[i])
                self.params[f"fc{i}.weight"] = rng.uniform(-lim, lim, shape).astype(self.dtype)
                self.params[f"fc{i}.bias"] = rng.uniform(-lim, lim, shape[0]).astype(self.dtype)

    @property
    def n_layers(self):
        return len(self.widths) - 1

    def copy(self) -> "CriticNet":
        return CriticNet(self.obs_dim, self.action_dim, self.hidden, dtype=self.dtype,
                         params=self.params)

    def forward(self, obs, action, policy: Optional[CastPolicy] = None):
        """Returns ``(q[batch], cache)``."""
        x = np.concatenate([np.asarray(obs, self.dtype), np.asarray(action, self.dtype)], axis=-1)
        if x.shape[-1] != self.widths[0]:
            raise DimensionError(f"critic expects {self.widths[0]} inputs, got {x.shape[-1]}")
        acts = [x]
        for i in range(self.n_layers):
            W, b = self.params[f"fc{i}.weight"], self.params[f"fc{i}.bias"]
            z = policy.affine(x, W, b) if policy is not None else x @ W.T + b
            x = np.maximum(z, 0) if i < self.n_layers - 1 else z
            acts.append(x)
        return x[:, 0], acts

    def backward(self, cache, grad_q, policy: Optional[CastPolicy] = None):
        """Returns ``(param_grads, grad_action)`` for cotangent ``grad_q[batch]``."""
        acts = cache
        g = np.asarray(grad_q, self.dtype)[:, None]
        grads = {}
        for i in reversed(range(self.n_layers)):
            if i < self.n_layers - 1:
                g = g * (acts[i + 1] > 0)
            grads[f"fc{i}.weight"] = g.T @ acts[i]
            grads[f"fc{i}.bias"] = g.sum(0)
            g = g @ self.params[f"fc{i}.weight"]
            if policy is not None:
                g = policy.cast(g)
        return grads, g[:, self.obs_dim:]


class CriticPair:
    """Twin critics sharing one parameter namespace (``q1.*``, ``q2.*``)."""

    def __init__(self, q1: CriticNet, q2: CriticNet):
        self.q1, self.q2 = q1, q2
        self.params = {**{f"q1.{k}": v for k, v in q1.params.items()},
                       **{f"q2.{k}": v for k, v in q2.params.items()}}

    def copy(self) -> "CriticPair":
        return CriticPair(self.q1.copy(), self.q2.copy())


def soft_update(target: dict, source: dict, tau: float) -> dict:
    """``target <- tau * source + (1 - tau) * target`` in place."""
    if target.keys() != source.keys():
        raise DimensionError("parameter sets differ")
    for k, t in target.items():
        s = source[k]
        if t.shape != s.shape:
            raise DimensionError(f"{k}: shape {t.shape} vs {s.shape}")
        if tau == 1.0:
            t[...] = s
        else:
            t[...] = tau * s + (1.0 - tau) * t
    return target


GradHook = Callable[[str, dict], dict]


class Td3Agent:
    """Owns the actor, critics, their targets, optimizers, replay and RNG.

    ``grad_reducer`` (if set) is called as ``grad_reducer(name, grads)``
    between backward and the optimizer step; data-parallel training plugs the
    gradient all-reduce in there. ``policy`` enables emulated mixed precision.
    """

    def __init__(self, actor: SpikingActor, cfg: Td3Config, seed: int = 0,
                 critic_rng: Optional[np.random.Generator] = None,
                 policy: Optional[CastPolicy] = None, scaler_kwargs: Optional[dict] = None,
                 surrogate: Surrogate = Surrogate()):
        self.cfg = cfg
        self.rng = np.random.default_rng(seed)
        self.actor = actor
        obs_dim, act_dim = actor.cfg.obs_dim, actor.cfg.action_dim
        critic_rng = critic_rng if critic_rng is not None else self.rng
        self.critic = CriticPair(
            CriticNet(obs_dim, act_dim, cfg.critic_hidden, critic_rng, actor.dtype),
            CriticNet(obs_dim, act_dim, cfg.critic_hidden, critic_rng, actor.dtype),
        )
        self.actor_target = actor.copy()
        self.critic_target = self.critic.copy()
        self.replay = ReplayBuffer(cfg.replay_capacity, obs_dim, act_dim)
        self.bound = actor.bound.astype(np.float64)
        self.surrogate = surrogate
        self.actor_opt = Adam(cfg.lr_actor)
        self.critic_opt = Adam(cfg.lr_critic)
        self.total_it = 0
        self.grad_reducer: Optional[GradHook] = None
        self.grad_hooks: list = []
        self.policy = policy
        self.amp = policy is not None
        if self.amp:
            kw = dict(scaler_kwargs or {})
            self.actor_master = MasterWeights(self.actor.params, policy)
            self.critic_master = MasterWeights(self.critic.params, policy)
            self.actor_scaler = GradScaler(**kw)
            self.critic_scaler = GradScaler(**kw)

    # -- acting -----------------------------------------------------------

    def select_action(self, obs, explore: bool = False, noise=None) -> np.ndarray:
        a = np.asarray(self.actor.act(obs, self.policy), dtype=np.float64)
        if explore:
            if noise is None:
                noise = self.rng.normal(0.0, 1.0, a.shape) * (self.cfg.exploration_noise * self.bound)
            a = a + noise
        return np.clip(a, -self.bound, self.bound)

    def random_action(self) -> np.ndarray:
        return self.rng.uniform(-self.bound, self.bound)

    # -- learning ---------------------------------------------------------

    def compute_target(self, batch: dict) -> np.ndarray:
        cfg = self.cfg
        a_next = self.actor_target.act(batch["next_obs"], self.policy).astype(np.float64)
        eps = self.rng.normal(0.0, 1.0, a_next.shape) * (cfg.policy_noise * self.bound)
        clip = cfg.noise_clip * self.bound
        eps = np.clip(eps, -clip, clip)
        a_next = np.clip(a_next + eps, -self.bound, self.bound)
        q1, _ = self.critic_target.q1.forward(batch["next_obs"], a_next, self.policy)
        q2, _ = self.critic_target.q2.forward(batch["next_obs"], a_next, self.policy)
        q = np.minimum(q1, q2).astype(np.float64)
        return batch["reward"] + cfg.gamma * (1.0 - batch["done"]) * q

    def critic_grads(self, batch: dict, y: np.ndarray, seed_scale: float = 1.0):
        """MSE(Q1, y) + MSE(Q2, y) and its parameter gradients."""
        n = len(y)
        grads = {}
        loss = 0.0
        for name, net in (("q1", self.critic.q1), ("q2", self.critic.q2)):
            q, cache = net.forward(batch["obs"], batch["action"], self.policy)
            err = q.astype(np.float64) - y
            loss += float(np.mean(err * err))
            g, _ = net.backward(cache, (2.0 * seed_scale / n) * err, self.policy)
            grads.update({f"{name}.{k}": v for k, v in g.items()})
        return loss, grads

    def actor_grads(self, batch: dict, seed_scale: float = 1.0):
        """Loss ``-mean Q1(s, pi(s))`` and actor gradients via surrogate BPTT."""
        action, tape = self.actor.forward(batch["obs"], self.policy)
        q, cache = self.critic.q1.forward(batch["obs"], action, self.policy)
        n = len(q)
        _, g_action = self.critic.q1.backward(cache, np.full(n, -seed_scale / n), self.policy)
        grads = self.actor.backward(tape, g_action, self.surrogate, self.policy)
        return -float(np.mean(q)), grads

    def _reduce(self, name: str, net_params: dict, grads: dict) -> dict:
        if self.grad_reducer is not None:
            grads = self.grad_reducer(name, grads)
        for hook in self.grad_hooks:
            grads = hook(name, grads)
        return grads

    def _apply(self, name, params, grads, opt, master, scaler):
        if not self.amp:
            opt.step(params, grads)
            return True
        grads = {k: g.astype(np.float32) for k, g in grads.items()}
        grads, found_inf = scaler.unscale_and_check(grads)

        def step():
            opt.step(master.master, grads)
            master.sync_working_copy()

        stepped, _ = scaler.step_or_skip(step, found_inf)
        return stepped

    def train_step(self, batch: Optional[dict] = None) -> dict:
        """One TD3 iteration. Raises :class:`NotReady` without mutating anything."""
        if batch is None:
            idx = self.replay.indices(self.cfg.batch_size, self.rng)
            batch = self.replay.gather(idx)
        if not self.amp:
            return self._train_step(batch)
        # scaled low-precision gradients may overflow; the scaler handles it
        with np.errstate(over="ignore", invalid="ignore"):
            return self._train_step(batch)

    def _train_step(self, batch: dict) -> dict:
        cfg = self.cfg
        info = {"updated_actor": False}
        y = self.compute_target(batch)

        c_scale = self.critic_scaler.scale if self.amp and self.critic_scaler.enabled else 1.0
        loss, grads = self.critic_grads(batch, y, c_scale)
        grads = self._reduce("critic", self.critic.params, grads)
        info["critic_loss"] = loss
        info["critic_stepped"] = self._apply(
            "critic", self.critic.params, grads, self.critic_opt,
            getattr(self, "critic_master", None), getattr(self, "critic_scaler", None))

        self.total_it += 1
        if self.total_it % cfg.policy_delay == 0:
            a_scale = self.actor_scaler.scale if self.amp and self.actor_scaler.enabled else 1.0
            aloss, agrads = self.actor_grads(batch, a_scale)
            agrads = self._reduce("actor", self.actor.params, agrads)
            stepped = self._apply("actor", self.actor.params, agrads, self.actor_opt,
                                  getattr(self, "actor_master", None),
                                  getattr(self, "actor_scaler", None))
            if stepped:
                self._post_actor_update()
            info["actor_loss"] = aloss
            info["updated_actor"] = True
            soft_update(self.actor_target.params, self.actor.params, cfg.tau)
            soft_update(self.critic_target.params, self.critic.params, cfg.tau)
            self.actor_target.mark_updated()
        return info

    def _post_actor_update(self):
        if self.amp:
            np.maximum(self.actor_master.master["enc.std"], 1e-3,
                       out=self.actor_master.master["enc.std"])
            self.actor_master.sync_working_copy()
        else:
            self.actor.clamp_std()
        self.actor.mark_updated()

    # -- parameter access ---------------------------------------------------

    def networks(self) -> dict:
        return {"actor": self.actor.params, "critic": self.critic.params,
                "actor_target": self.actor_target.params,
                "critic_target": self.critic_target.params}

    def state_arrays(self) -> dict:
        """Every trainable array (working and, under AMP, master copies)."""
        out = {}
        for net, params in self.networks().items():
            out.update({f"{net}/{k}": v for k, v in params.items()})
        if self.amp:
            out.update({f"actor_master/{k}": v for k, v in self.actor_master.master.items()})
            out.update({f"critic_master/{k}": v for k, v in self.critic_master.master.items()})
        return out

    def load_from(self, arrays: dict):
        """Overwrite parameters in place from :meth:`state_arrays`-style keys."""
        current = self.state_arrays()
        for k, v in arrays.items():
            current[k][...] = v
        self.actor.mark_updated()
        self.actor_target.mark_updated()
