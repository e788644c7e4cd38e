"""Cumulative energy meters: Linux RAPL powercap, constant power, scripted counters."""

from __future__ import annotations

import glob
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from queue import Queue
from typing import Callable, Iterable, Optional, Sequence

log = logging.getLogger(__name__)

RAPL_GLOB = "/sys/class/powercap/intel-rapl:*"


class MeterError(RuntimeError):
    pass


class WrapCounter:
    """Rebuilds a monotone total from a counter that wraps at ``max_range``."""

    def __init__(self, max_range: int):
        if max_range <= 0:
            raise ValueError("max_range must be positive")
        self.max_range = max_range
        self.last: Optional[int] = None
        self.total = 0

    def update(self, raw: int) -> int:
        if self.last is not None:
            delta = raw - self.last
            if delta < 0:
                delta += self.max_range
            self.total += delta
        self.last = raw
        return self.total


class ConstantPowerMeter:
    kind = "constant_power"

    def __init__(self, watts: float, clock: Callable[[], float] = time.perf_counter):
        if watts < 0:
            raise ValueError("power must be non-negative")
        self.watts = watts
        self.clock = clock
        self.t0 = clock()

    def read_joules(self) -> float:
        return self.watts * (self.clock() - self.t0)


class InjectedMeter:
    """Replays a scripted raw counter sequence in microjoules, with wraparound."""

    kind = "injected"

    def __init__(self, counter_uj: Iterable[int], max_range_uj: int):
        self._values = iter(counter_uj)
        self._wrap = WrapCounter(max_range_uj)

    def read_joules(self) -> float:
        try:
            raw = next(self._values)
        except StopIteration:
            raise MeterError("scripted counter sequence exhausted") from None
        return self._wrap.update(int(raw)) * 1e-6


class ScriptedEnergyMeter:
    """Returns scripted cumulative joules; used to replay published run totals."""

    kind = "injected"

    def __init__(self, joules: Sequence[float]):
        self._values = iter(joules)

    def read_joules(self) -> float:
        try:
            return float(next(self._values))
        except StopIteration:
            raise MeterError("scripted energy sequence exhausted") from None


@dataclass
class RaplDomain:
    path: str
    max_range_uj: int
    counter: WrapCounter = field(init=False)

    def __post_init__(self):
        self.counter = WrapCounter(self.max_range_uj)

    def read(self) -> int:
        try:
            with open(os.path.join(self.path, "energy_uj")) as fh:
                raw = int(fh.read().strip())
        except (OSError, ValueError) as exc:
            raise MeterError(f"cannot read energy counter in {self.path}: {exc}") from exc
        return self.counter.update(raw)


class RaplMeter:
    """Sum of wraparound-corrected ``energy_uj`` over powercap domains."""

    kind = "rapl"

    def __init__(self, domain_paths: Optional[Sequence[str]] = None):
        paths = list(domain_paths) if domain_paths is not None else sorted(glob.glob(RAPL_GLOB))
        if not paths:
            raise MeterError("no RAPL powercap domains found")
        self.domains = []
        for p in paths:
            try:
                with open(os.path.join(p, "max_energy_range_uj")) as fh:
                    max_range = int(fh.read().strip())
            except (OSError, ValueError) as exc:
                raise MeterError(f"cannot read max_energy_range_uj in {p}: {exc}") from exc
            self.domains.append(RaplDomain(p, max_range))
        self.read_joules()

    def read_joules(self) -> float:
        return sum(d.read() for d in self.domains) * 1e-6


def make_meter(kind: str = "rapl", watts: float = 100.0, domain_paths=None):
    """Build a meter; a missing or unreadable RAPL falls back to constant power."""
    if kind == "constant_power":
        return ConstantPowerMeter(watts)
    if kind == "rapl":
        try:
            return RaplMeter(domain_paths)
        except MeterError as exc:
            log.warning("RAPL unavailable (%s); using constant_power at %.1f W", exc, watts)
            return ConstantPowerMeter(watts)
    raise ValueError(f"unknown meter kind {kind!r}")


def read_cumulative_energy(meter) -> float:
    """Cumulative joules reported by ``meter``."""
    return meter.read_joules()


class Sampler:
    """Background thread appending ``(timestamp, joules)`` samples to a queue."""

    def __init__(self, meter, interval_s: float = 1.0, clock=time.perf_counter):
        self.meter = meter
        self.interval = interval_s
        self.clock = clock
        self.samples: Queue = Queue()
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, daemon=True, name="spikerl-meter")

    def _run(self):
        while not self._stop.is_set():
            try:
                self.samples.put((self.clock(), self.meter.read_joules()))
            except MeterError as exc:
                self.samples.put((self.clock(), exc))
                return
            self._stop.wait(self.interval)

    def start(self):
        self._thread.start()
        return self

    def stop(self) -> list:
        self._stop.set()
        self._thread.join()
        out = []
        while not self.samples.empty():
            out.append(self.samples.get())
        return out
