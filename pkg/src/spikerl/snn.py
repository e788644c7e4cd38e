"""Population-coded spiking actor.

Observations are encoded by Gaussian receptive fields into regular spike
trains, processed by fully connected LIF layers for ``T`` timesteps, and the
output-population firing rates are decoded into bounded actions. The
backward pass is hand-written BPTT with a rectangular surrogate for the
spike threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .numeric import DimensionError

# Spike threshold of the regular encoder. Slightly below 1 so that drives
# summing to exactly one in float arithmetic (e.g. ten steps of 0.1) fire.
ENCODER_THRESHOLD = 0.999
STD_FLOOR = 1e-3


class ParameterDomainError(ValueError):
    pass


class TapeMismatchError(RuntimeError):
    """A forward tape was replayed against different parameters."""


@dataclass(frozen=True)
class LifConfig:
    current_decay: float = 0.5
    voltage_decay: float = 0.75
    threshold: float = 0.5
    timesteps: int = 5

    def __post_init__(self):
        if not (0.0 <= self.current_decay <= 1.0 and 0.0 <= self.voltage_decay <= 1.0):
            raise ParameterDomainError("LIF decays must lie in [0, 1]")
        if self.threshold <= 0:
            raise ParameterDomainError("LIF threshold must be positive")
        if self.timesteps < 1:
            raise ParameterDomainError("need at least one timestep")


@dataclass(frozen=True)
class Surrogate:
    """Rectangular pseudo-derivative: ``height`` inside ``|v - v_th| < width``."""

    width: float = 0.5
    height: float = 0.5

    def grad(self, v: np.ndarray, threshold: float) -> np.ndarray:
        return np.where(np.abs(v - threshold) < self.width, self.height, 0.0).astype(v.dtype)


@dataclass
class LifLayerState:
    current: np.ndarray
    voltage: np.ndarray
    spikes: np.ndarray

    @classmethod
    def zeros(cls, shape, dtype=np.float64) -> "LifLayerState":
        z = np.zeros(shape, dtype=dtype)
        return cls(z, z.copy(), z.copy())


def _affine(x, W, b, policy):
    if policy is not None:
        return policy.affine(x, W, b)
    out = x @ W.T
    if b is not None:
        out = out + b
    return out


def gaussian_stim(s, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    """Receptive-field stimulation ``exp(-(s - mean)^2 / (2 std^2))``.

    ``s`` is ``[obs_dim]`` or ``[batch, obs_dim]``; ``mean`` and ``std`` are
    ``[obs_dim, pop]``. The result is flattened to ``[..., obs_dim * pop]``
    with the population index varying fastest.
    """
    s = np.asarray(s, dtype=mean.dtype)
    if np.any(std <= 0):
        raise ParameterDomainError("receptive field widths must be positive")
    if s.shape[-1] != mean.shape[0]:
        raise DimensionError(f"observation has {s.shape[-1]} dims, encoder expects {mean.shape[0]}")
    d = s[..., :, None] - mean
    A = np.exp(-(d * d) / (2.0 * std * std))
    return A.reshape(*s.shape[:-1], -1)


def encode_spikes(A: np.ndarray, timesteps: int) -> np.ndarray:
    """Deterministic accumulate-and-fire spike trains, shape ``[T, *A.shape]``."""
    A = np.asarray(A)
    acc = np.zeros_like(A)
    out = np.empty((timesteps,) + A.shape, dtype=A.dtype)
    for t in range(timesteps):
        acc = acc + A
        o = (acc > ENCODER_THRESHOLD).astype(A.dtype)
        acc = acc - o
        out[t] = o
    return out


def lif_step(state: LifLayerState, input_spikes, W, cfg: LifConfig, bias=None, policy=None):
    """One LIF update with hard reset of neurons that spiked on the previous step.

    Returns ``(new_state, spikes)``.
    """
    input_spikes = np.asarray(input_spikes, dtype=W.dtype)
    if input_spikes.shape[-1] != W.shape[1] or state.voltage.shape[-1] != W.shape[0]:
        raise DimensionError(
            f"input {input_spikes.shape} / state {state.voltage.shape} do not fit weights {W.shape}"
        )
    c = cfg.current_decay * state.current + _affine(input_spikes, W, bias, policy)
    v = cfg.voltage_decay * state.voltage * (1.0 - state.spikes) + c
    o = (v > cfg.threshold).astype(W.dtype)
    return LifLayerState(c, v, o), o


def decode_action(spike_counts, weight, bias, bound, timesteps: int) -> np.ndarray:
    """Firing rates to actions: ``bound * tanh(sum_k W[j,k] * fr[j,k] + b[j])``.

    ``spike_counts`` is ``[..., action_dim * pop]``.
    """
    counts = np.asarray(spike_counts, dtype=weight.dtype)
    if np.any(counts < 0) or np.any(counts > timesteps):
        raise ParameterDomainError(f"spike counts must lie in [0, {timesteps}]")
    act_dim, pop = weight.shape
    fr = counts.reshape(*counts.shape[:-1], act_dim, pop) / timesteps
    return bound * np.tanh((fr * weight).sum(-1) + bias)


@dataclass
class ForwardTape:
    obs: np.ndarray
    stim: np.ndarray
    enc_spikes: np.ndarray
    # per hidden/output layer, each [T, batch, width]
    inputs: list
    currents: list
    voltages: list
    spikes: list
    rates: np.ndarray
    pre_act: np.ndarray
    action: np.ndarray
    signature: tuple
    version: int
    squeeze: bool


@dataclass
class ActorConfig:
    obs_dim: int
    action_dim: int
    action_bound: Sequence[float]
    obs_range: Sequence[tuple] = ()
    hidden: Sequence[int] = (256, 256)
    enc_pop: int = 10
    dec_pop: int = 10
    lif: LifConfig = field(default_factory=LifConfig)
    train_encoder: bool = True


class SpikingActor:
    """Encoder, LIF stack and decoder with named parameter arrays.

    Parameter names: ``enc.mean``, ``enc.std``, ``layer{i}.weight``,
    ``layer{i}.bias``, ``dec.weight``, ``dec.bias``. Hidden layers plus the
    output population layer are all LIF layers.
    """

    def __init__(self, cfg: ActorConfig, rng: Optional[np.random.Generator] = None,
                 dtype=np.float32, params: Optional[dict] = None):
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        self.bound = np.asarray(cfg.action_bound, dtype=self.dtype).reshape(cfg.action_dim)
        if np.any(self.bound <= 0):
            raise ParameterDomainError("action bounds must be positive")
        self.widths = [cfg.obs_dim * cfg.enc_pop, *cfg.hidden, cfg.action_dim * cfg.dec_pop]
        self.n_layers = len(self.widths) - 1
        self.version = 0
        if params is not None:
            self.params = {k: np.array(v, dtype=self.dtype) for k, v in params.items()}
        else:
            self.params = self._init_params(rng if rng is not None else np.random.default_rng(0))

    def _init_params(self, rng):
        cfg = self.cfg
        E = cfg.enc_pop
        ranges = list(cfg.obs_range) or [(-3.0, 3.0)] * cfg.obs_dim
        if len(ranges) != cfg.obs_dim:
            raise DimensionError("obs_range needs one (low, high) per observation dim")
        mean = np.zeros((cfg.obs_dim, E))
        std = np.zeros((cfg.obs_dim, E))
        for i, (lo, hi) in enumerate(ranges):
            if E == 1:
                mean[i] = 0.5 * (lo + hi)
                std[i] = max(hi - lo, STD_FLOOR)
            else:
                mean[i] = np.linspace(lo, hi, E)
                std[i] = (hi - lo) / (E - 1)
        p = {"enc.mean": mean, "enc.std": std}
        for i in range(self.n_layers):
            fan_in = self.widths[i]
            lim = 1.0 / math.sqrt(fan_in)
            p[f"layer{i}.weight"] = rng.uniform(-lim, lim, (self.widths[i + 1], fan_in))
            p[f"layer{i}.bias"] = rng.uniform(-lim, lim, self.widths[i + 1])
        lim = 1.0 / math.sqrt(cfg.dec_pop)
        p["dec.weight"] = rng.uniform(-lim, lim, (cfg.action_dim, cfg.dec_pop))
        p["dec.bias"] = rng.uniform(-lim, lim, cfg.action_dim)
        return {k: v.astype(self.dtype) for k, v in p.items()}

    def _signature(self):
        return tuple((k, v.shape) for k, v in self.params.items())

    def mark_updated(self):
        self.version += 1

    def clamp_std(self):
        np.maximum(self.params["enc.std"], STD_FLOOR, out=self.params["enc.std"])

    def copy(self) -> "SpikingActor":
        return SpikingActor(self.cfg, dtype=self.dtype, params=self.params)

    def forward(self, obs, policy=None):
        """Run the full pipeline; returns ``(action, tape)``."""
        P = self.params
        lif = self.cfg.lif
        T = lif.timesteps
        obs = np.asarray(obs, dtype=self.dtype)
        squeeze = obs.ndim == 1
        if squeeze:
            obs = obs[None, :]
        stim = gaussian_stim(obs, P["enc.mean"], P["enc.std"])
        enc = encode_spikes(stim, T)
        batch = obs.shape[0]
        inputs, currents, voltages, spikes = [], [], [], []
        x = enc
        for i in range(self.n_layers):
            W, b = P[f"layer{i}.weight"], P[f"layer{i}.bias"]
            width = self.widths[i + 1]
            state = LifLayerState.zeros((batch, width), self.dtype)
            cs = np.empty((T, batch, width), self.dtype)
            vs = np.empty_like(cs)
            os_ = np.empty_like(cs)
            for t in range(T):
                state, o = lif_step(state, x[t], W, lif, b, policy)
                cs[t], vs[t], os_[t] = state.current, state.voltage, o
            inputs.append(x)
            currents.append(cs)
            voltages.append(vs)
            spikes.append(os_)
            x = os_
        counts = x.sum(0)
        A = self.cfg.action_dim
        rates = counts.reshape(batch, A, self.cfg.dec_pop) / T
        pre = (rates * P["dec.weight"]).sum(-1) + P["dec.bias"]
        action = self.bound * np.tanh(pre)
        tape = ForwardTape(obs, stim, enc, inputs, currents, voltages, spikes, rates, pre,
                           action, self._signature(), self.version, squeeze)
        return (action[0] if squeeze else action), tape

    def act(self, obs, policy=None) -> np.ndarray:
        return self.forward(obs, policy)[0]

    def backward(self, tape: ForwardTape, grad_action, surrogate: Surrogate = Surrogate(),
                 policy=None) -> dict:
        """Surrogate-gradient BPTT. Gradients are summed over the batch."""
        if tape.signature != self._signature() or tape.version != self.version:
            raise TapeMismatchError("tape was recorded with different parameters")
        P = self.params
        lif = self.cfg.lif
        T = lif.timesteps
        g_a = np.asarray(grad_action, dtype=self.dtype)
        if tape.squeeze:
            g_a = g_a[None, :]
        grads = {}
        th = np.tanh(tape.pre_act)
        g_pre = g_a * self.bound * (1.0 - th * th)
        grads["dec.weight"] = np.einsum("bj,bjk->jk", g_pre, tape.rates)
        grads["dec.bias"] = g_pre.sum(0)
        g_counts = (g_pre[:, :, None] * P["dec.weight"]).reshape(g_pre.shape[0], -1) / T
        # Every output timestep sees the same count cotangent.
        g_out = np.broadcast_to(g_counts, (T,) + g_counts.shape)

        dc, dv = lif.current_decay, lif.voltage_decay
        for i in reversed(range(self.n_layers)):
            W = P[f"layer{i}.weight"]
            v, o, x = tape.voltages[i], tape.spikes[i], tape.inputs[i]
            sg = surrogate.grad(v, lif.threshold)
            g_c = np.empty_like(v)
            gv_next = np.zeros_like(v[0])
            gc_next = np.zeros_like(v[0])
            for t in reversed(range(T)):
                gv = g_out[t] * sg[t] + gv_next
                gc = gv + dc * gc_next
                g_c[t] = gc
                # reset gate (1 - o_{t-1}) is held constant
                if t > 0:
                    gv_next = dv * (1.0 - o[t - 1]) * gv
                gc_next = gc
            flat_gc = g_c.reshape(-1, g_c.shape[-1])
            grads[f"layer{i}.weight"] = flat_gc.T @ x.reshape(-1, x.shape[-1])
            grads[f"layer{i}.bias"] = flat_gc.sum(0)
            g_in = g_c @ W
            if policy is not None:
                g_in = policy.cast(g_in)
            g_out = g_in

        if self.cfg.train_encoder:
            # Straight-through encoder spikes: each spike passes its cotangent
            # to the stimulation unchanged.
            g_stim = g_out.sum(0).reshape(tape.obs.shape[0], self.cfg.obs_dim, self.cfg.enc_pop)
            A = tape.stim.reshape(g_stim.shape)
            d = tape.obs[:, :, None] - P["enc.mean"]
            std = P["enc.std"]
            gA = g_stim * A
            grads["enc.mean"] = (gA * d).sum(0) / (std * std)
            grads["enc.std"] = (gA * d * d).sum(0) / (std * std * std)
        else:
            grads["enc.mean"] = np.zeros_like(P["enc.mean"])
            grads["enc.std"] = np.zeros_like(P["enc.std"])
        return {k: grads[k].astype(self.dtype, copy=False) for k in P}
