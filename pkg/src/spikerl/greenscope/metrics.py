"""Run metrics and GPS-UP (greenup, powerup, speedup) analysis."""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import Callable, Optional

from .meters import MeterError

J_PER_KWH = 3.6e6
MIN_DURATION_S = 1e-3


class MetricDomainError(ValueError):
    pass


def display(x: float, places: int = 2) -> str:
    """Round half away from zero to ``places`` decimals, as the tables print."""
    q = Decimal(1).scaleb(-places)
    return str(Decimal(repr(x)).quantize(q, rounding=ROUND_HALF_UP))


@dataclass(frozen=True)
class RunMetrics:
    """Wall time (s), energy (kWh) and average power (kW) of one run.

    ``energy_kwh`` may be ``None`` when the meter failed (power unknown).
    """

    label: str
    wall_time_s: float
    energy_kwh: Optional[float]
    avg_power_kw: Optional[float]

    def __post_init__(self):
        if not self.wall_time_s > 0:
            raise MetricDomainError(f"{self.label}: wall time must be positive")
        if self.energy_kwh is not None and self.energy_kwh < 0:
            raise MetricDomainError(f"{self.label}: energy must be non-negative")

    @classmethod
    def from_energy(cls, label: str, wall_time_s: float, energy_kwh: float) -> "RunMetrics":
        if not wall_time_s > 0:
            raise MetricDomainError(f"{label}: wall time must be positive")
        return cls(label, wall_time_s, energy_kwh, energy_kwh / (wall_time_s / 3600.0))

    @classmethod
    def from_hours(cls, label: str, hours: float, energy_kwh: Optional[float] = None,
                   avg_power_kw: Optional[float] = None) -> "RunMetrics":
        """Build from table-style values; missing power is derived from energy."""
        if avg_power_kw is None and energy_kwh is not None:
            avg_power_kw = energy_kwh / hours
        return cls(label, hours * 3600.0, energy_kwh, avg_power_kw)

    @property
    def hours(self) -> float:
        return self.wall_time_s / 3600.0

    @property
    def power_known(self) -> bool:
        return self.energy_kwh is not None and self.avg_power_kw is not None

    def is_consistent(self, rel: float = 0.005) -> bool:
        if not self.power_known:
            return False
        implied = self.energy_kwh / self.hours
        return math.isclose(self.avg_power_kw, implied, rel_tol=rel)

    def to_dict(self) -> dict:
        return asdict(self)


def measure_run(meter, work: Callable[[], object], label: str = "run",
                clock: Callable[[], float] = time.perf_counter):
    """Time and meter ``work()``; returns ``(RunMetrics, work_result)``.

    A failing meter yields metrics with unknown energy rather than an error.
    """
    try:
        e0 = meter.read_joules()
    except MeterError:
        e0 = None
    t0 = clock()
    result = work()
    t1 = clock()
    e1 = None
    if e0 is not None:
        try:
            e1 = meter.read_joules()
        except MeterError:
            e1 = None
    duration = t1 - t0
    if duration < MIN_DURATION_S:
        raise MetricDomainError(f"{label}: measured duration {duration:.2e} s is below 1 ms")
    if e1 is None:
        return RunMetrics(label, duration, None, None), result
    return RunMetrics.from_energy(label, duration, (e1 - e0) / J_PER_KWH), result


GREEN_BOTTOM_RIGHT = "green: faster-and-lower-power (bottom-right)"
GREEN_TOP_RIGHT = "green: speed-driven (top-right)"
RED_TOP_RIGHT = "red: power-dominated (top-right)"
GREEN_BOTTOM_LEFT = "green: power-saving-despite-slowdown (bottom-left)"
RED_BOTTOM_LEFT = "red: slowdown-dominated (bottom-left)"
RED_TOP_LEFT = "red: slower-and-more-power (top-left)"
ZONES = (GREEN_BOTTOM_RIGHT, GREEN_TOP_RIGHT, RED_TOP_RIGHT,
         GREEN_BOTTOM_LEFT, RED_BOTTOM_LEFT, RED_TOP_LEFT)


def classify(speedup: float, powerup: float, greenup: float) -> str:
    if speedup > 1:
        if powerup <= 1:
            return GREEN_BOTTOM_RIGHT
        return GREEN_TOP_RIGHT if greenup > 1 else RED_TOP_RIGHT
    if powerup < 1:
        return GREEN_BOTTOM_LEFT if greenup > 1 else RED_BOTTOM_LEFT
    return RED_TOP_LEFT


@dataclass(frozen=True)
class GpsUp:
    label: str
    speedup: float
    powerup: float
    greenup: float

    @property
    def zone(self) -> str:
        return classify_zone(self)

    @property
    def is_green(self) -> bool:
        return self.zone.startswith("green")

    def row(self) -> str:
        return f"{display(self.speedup)} {display(self.powerup)} {display(self.greenup)}"

    def to_dict(self) -> dict:
        return {"label": self.label, "speedup": self.speedup, "powerup": self.powerup,
                "greenup": self.greenup, "zone": self.zone,
                "display": {"speedup": display(self.speedup), "powerup": display(self.powerup),
                            "greenup": display(self.greenup)}}


def gps_up(baseline: RunMetrics, candidate: RunMetrics, label: Optional[str] = None) -> GpsUp:
    """Speedup ``T0/Tc``, powerup ``Pc/P0``, greenup = speedup / powerup."""
    for r in (baseline, candidate):
        if not (r.wall_time_s > 0 and r.avg_power_kw is not None and r.avg_power_kw > 0):
            raise MetricDomainError(f"{r.label}: need positive wall time and power")
    speedup = baseline.wall_time_s / candidate.wall_time_s
    powerup = candidate.avg_power_kw / baseline.avg_power_kw
    return GpsUp(label or f"{candidate.label} over {baseline.label}",
                 speedup, powerup, speedup / powerup)


def classify_zone(g: GpsUp) -> str:
    return classify(g.speedup, g.powerup, g.greenup)
