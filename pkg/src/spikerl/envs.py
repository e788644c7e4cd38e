"""Analytic continuous-control environments with a gym-style reset/step API."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class EnvSpec:
    name: str
    obs_dim: int
    action_dim: int
    action_bound: tuple
    max_episode_steps: int
    obs_range: tuple


def angle_normalize(x: float) -> float:
    return ((x + math.pi) % (2 * math.pi)) - math.pi


class Pendulum:
    """Swing-up pendulum; angle 0 is upright. Observation ``[cos, sin, thdot]``."""

    g = 10.0
    m = 1.0
    l = 1.0
    dt = 0.05
    max_speed = 8.0
    max_torque = 2.0

    def __init__(self):
        self.theta = 0.0
        self.theta_dot = 0.0
        self.steps = 0
        self.rng = np.random.default_rng()

    @property
    def spec(self) -> EnvSpec:
        return EnvSpec("pendulum", 3, 1, (self.max_torque,), 200,
                       ((-1.0, 1.0), (-1.0, 1.0), (-self.max_speed, self.max_speed)))

    def reset(self, seed=None) -> np.ndarray:
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        self.theta = float(self.rng.uniform(-math.pi, math.pi))
        self.theta_dot = float(self.rng.uniform(-1.0, 1.0))
        self.steps = 0
        return self._obs()

    def set_state(self, theta: float, theta_dot: float):
        self.theta, self.theta_dot = float(theta), float(theta_dot)
        return self._obs()

    def _obs(self) -> np.ndarray:
        return np.array([math.cos(self.theta), math.sin(self.theta), self.theta_dot])

    def step(self, action):
        u = float(np.clip(np.asarray(action, dtype=np.float64).reshape(-1)[0],
                          -self.max_torque, self.max_torque))
        th, thdot = self.theta, self.theta_dot
        cost = angle_normalize(th) ** 2 + 0.1 * thdot ** 2 + 0.001 * u ** 2
        thdot = thdot + (3 * self.g / (2 * self.l) * math.sin(th)
                         + 3.0 / (self.m * self.l ** 2) * u) * self.dt
        thdot = min(max(thdot, -self.max_speed), self.max_speed)
        self.theta = th + thdot * self.dt
        self.theta_dot = thdot
        self.steps += 1
        return self._obs(), -cost, self.steps >= self.spec.max_episode_steps


class PointMass:
    """Double integrator regulated to the origin. Observation ``[x, v]``."""

    dt = 0.1

    def __init__(self):
        self.x = 0.0
        self.v = 0.0
        self.steps = 0
        self.rng = np.random.default_rng()

    @property
    def spec(self) -> EnvSpec:
        return EnvSpec("pointmass", 2, 1, (1.0,), 100, ((-2.0, 2.0), (-2.0, 2.0)))

    def reset(self, seed=None) -> np.ndarray:
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        self.x, self.v = (float(z) for z in self.rng.uniform(-1.0, 1.0, 2))
        self.steps = 0
        return self._obs()

    def set_state(self, x: float, v: float):
        self.x, self.v = float(x), float(v)
        return self._obs()

    def _obs(self) -> np.ndarray:
        return np.array([self.x, self.v])

    def step(self, action):
        u = float(np.clip(np.asarray(action, dtype=np.float64).reshape(-1)[0], -1.0, 1.0))
        reward = -(self.x ** 2 + 0.01 * u ** 2)
        self.x, self.v = self.x + self.dt * self.v, self.v + self.dt * u
        self.steps += 1
        return self._obs(), reward, self.steps >= self.spec.max_episode_steps


ENVIRONMENTS = {"pendulum": Pendulum, "pointmass": PointMass}


def make(name: str):
    try:
        return ENVIRONMENTS[name]()
    except KeyError:
        raise ValueError(f"unknown environment {name!r}; choose from {sorted(ENVIRONMENTS)}") from None
