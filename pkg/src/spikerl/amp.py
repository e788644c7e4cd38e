"""Emulated mixed precision: cast policy, FP32 master weights, dynamic loss scaling."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .numeric import NumFormat, round_to

LOW_PRECISION_OPS = frozenset({"matmul", "affine"})
FP32_OPS = frozenset({"reduction", "loss", "softmax", "voltage", "current"})


@dataclass(frozen=True)
class CastPolicy:
    """Which op classes run in the low-precision ``compute_format``.

    ``FP32`` as compute format disables the policy; accumulation is always FP32.
    """

    compute_format: NumFormat = NumFormat.BF16

    def __post_init__(self):
        fmt = NumFormat.parse(self.compute_format)
        if fmt is NumFormat.FP64:
            raise ValueError("compute format must be BF16, FP16 or FP32")
        object.__setattr__(self, "compute_format", fmt)

    @classmethod
    def from_mode(cls, mode: str) -> "CastPolicy":
        mode = mode.lower()
        if mode in ("off", "fp32", "none"):
            return cls(NumFormat.FP32)
        if mode in ("bf16", "fp16"):
            return cls(NumFormat.parse(mode))
        raise ValueError(f"amp mode must be bf16, fp16 or off, not {mode!r}")

    @property
    def enabled(self) -> bool:
        return self.compute_format.is_emulated

    @property
    def accumulation_format(self) -> NumFormat:
        return NumFormat.FP32

    def format_for(self, op_class: str) -> NumFormat:
        if self.enabled and op_class in LOW_PRECISION_OPS:
            return self.compute_format
        return NumFormat.FP32

    def cast(self, x):
        if not self.enabled:
            return x
        return round_to(x, self.compute_format)

    def affine(self, x, W, b=None):
        out = self.cast(x) @ self.cast(W).T
        if b is not None:
            out = out + self.cast(b)
        return self.cast(out)


class GradScaler:
    """Dynamic loss scale with skip-on-overflow.

    The scale stays a power of two, so scaling and unscaling are exact unless
    a value leaves the representable range.
    """

    def __init__(self, init_scale: float = 2.0 ** 16, growth_factor: float = 2.0,
                 backoff_factor: float = 0.5, growth_interval: int = 2000, enabled: bool = True):
        for name, v in (("init_scale", init_scale), ("growth_factor", growth_factor),
                        ("backoff_factor", backoff_factor)):
            m, _ = math.frexp(v)
            if v <= 0 or m != 0.5:
                raise ValueError(f"{name} must be a positive power of two, got {v}")
        if growth_interval < 1:
            raise ValueError("growth_interval must be >= 1")
        self.scale = float(init_scale) if enabled else 1.0
        self.growth_factor = float(growth_factor)
        self.backoff_factor = float(backoff_factor)
        self.growth_interval = int(growth_interval)
        self.enabled = enabled
        self.good_steps = 0

    def scale_loss(self, loss):
        if not self.enabled:
            return loss
        return loss * self.scale

    def unscale_and_check(self, grads: Mapping[str, np.ndarray]):
        """Return ``(grads / scale, found_inf)``; non-finite check runs on the raw grads."""
        found_inf = any(not np.isfinite(g).all() for g in grads.values())
        if not self.enabled:
            return dict(grads), found_inf
        inv = 1.0 / self.scale
        return {k: g * g.dtype.type(inv) for k, g in grads.items()}, found_inf

    def step_or_skip(self, optimizer_step: Callable[[], None], found_inf: bool):
        """Apply ``optimizer_step`` unless ``found_inf``; returns ``(stepped, scale)``."""
        if found_inf:
            if self.enabled:
                self.scale *= self.backoff_factor
            self.good_steps = 0
            return False, self.scale
        optimizer_step()
        if self.enabled:
            self.good_steps += 1
            if self.good_steps == self.growth_interval:
                self.scale *= self.growth_factor
                self.good_steps = 0
        return True, self.scale

    def state_dict(self) -> dict:
        return {"scale": self.scale, "good_steps": self.good_steps}


class MasterWeights:
    """FP32 master parameters with a working copy rounded to the compute format.

    ``working`` is the dict of arrays the network reads; it is updated in
    place so networks holding references see the new values.
    """

    def __init__(self, working: dict, policy: CastPolicy):
        self.policy = policy
        self.working = working
        self.master = {k: np.array(v, dtype=np.float32) for k, v in working.items()}
        self.sync_working_copy()

    def sync_working_copy(self) -> dict:
        for k, m in self.master.items():
            self.working[k][...] = self.policy.cast(m)
        return self.working
