"""Carbon equivalences and GPS-UP quadrant artifacts."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .metrics import GpsUp, display

DEFAULT_EMISSION_FACTOR = 0.475  # kg CO2 per kWh
DEFAULT_EQUIVALENCES = {
    "miles_driven": 0.404,         # kg CO2 per mile, gasoline car
    "household_weeks": 176.6,      # kg CO2 per household-week
    "tv_hours": 0.097,             # kg CO2 per hour of TV
}
# Published figure for the Ant-v4 pair that the table energies do not reproduce.
PUBLISHED_ANT_REDUCTION = 0.235


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class CarbonReport:
    energy_kwh: float
    emission_factor: float
    emissions_kg: float
    equivalences: dict
    equivalence_factors: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"energy_kwh": self.energy_kwh, "emission_factor_kg_per_kwh": self.emission_factor,
                "emissions_kg": self.emissions_kg, "equivalences": dict(self.equivalences),
                "equivalence_factors_kg_per_unit": dict(self.equivalence_factors)}

    def lines(self) -> list:
        out = [f"energy: {self.energy_kwh:.4f} kWh",
               f"emission factor: {self.emission_factor} kg CO2/kWh",
               f"emissions: {self.emissions_kg:.4f} kg CO2"]
        for k, v in self.equivalences.items():
            out.append(f"{k}: {v:.4f} (at {self.equivalence_factors[k]} kg CO2 each)")
        return out


def carbon_report(e_kwh: float, emission_factor: float = DEFAULT_EMISSION_FACTOR,
                  equivalence_factors: Optional[dict] = None) -> CarbonReport:
    factors = dict(DEFAULT_EQUIVALENCES if equivalence_factors is None else equivalence_factors)
    if e_kwh < 0:
        raise ConfigError("energy must be non-negative")
    if not emission_factor > 0:
        raise ConfigError(f"emission factor must be positive, got {emission_factor}")
    for k, v in factors.items():
        if not v > 0:
            raise ConfigError(f"equivalence factor {k} must be positive, got {v}")
    kg = e_kwh * emission_factor
    return CarbonReport(e_kwh, emission_factor, kg, {k: kg / v for k, v in factors.items()}, factors)


def percent_reduction(baseline: CarbonReport, candidate: CarbonReport) -> dict:
    """Fractional reduction per line item (emissions and each equivalence)."""
    if baseline.emission_factor != candidate.emission_factor:
        raise ConfigError("reductions need the same emission factor on both reports")
    out = {}
    if baseline.emissions_kg > 0:
        out["emissions"] = (baseline.emissions_kg - candidate.emissions_kg) / baseline.emissions_kg
    for k, v in baseline.equivalences.items():
        if v > 0 and k in candidate.equivalences:
            out[k] = (v - candidate.equivalences[k]) / v
    return out


CSV_FIELDS = ("label", "speedup", "powerup", "greenup", "zone")


def quadrant_csv(points: Sequence[GpsUp]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for p in points:
        w.writerow([p.label, repr(p.speedup), repr(p.powerup), repr(p.greenup), p.zone])
    return buf.getvalue()


def read_quadrant_csv(path) -> list:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [{"label": r["label"], "speedup": float(r["speedup"]), "powerup": float(r["powerup"]),
             "greenup": float(r["greenup"]), "zone": r["zone"]} for r in rows]


def _svg(points: Sequence[GpsUp], path: Path, title: str):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    xs = [p.speedup for p in points]
    ys = [p.powerup for p in points]
    span = max(0.5, max(abs(v - 1) for v in xs + ys) * 1.3)
    lo, hi = 1 - span, 1 + span
    fig, ax = plt.subplots(figsize=(5, 5))
    # green: faster with lower power, or greenup > 1 above the diagonal split
    ax.fill_between([1, hi], lo, 1, color="#cde8c4", zorder=0)
    ax.fill_between([1, hi], 1, [1, hi], color="#e3f2dc", zorder=0)
    ax.fill_between([1, hi], [1, hi], hi, color="#f6d5d1", zorder=0)
    ax.fill_between([lo, 1], lo, [lo, 1], color="#e3f2dc", zorder=0)
    ax.fill_between([lo, 1], [lo, 1], 1, color="#f6d5d1", zorder=0)
    ax.fill_between([lo, 1], 1, hi, color="#efbcb6", zorder=0)
    ax.axvline(1.0, color="black", lw=1)
    ax.axhline(1.0, color="black", lw=1)
    for p in points:
        ax.scatter([p.speedup], [p.powerup], color="green" if p.is_green else "red", zorder=3)
        ax.annotate(f"{p.label} (G={display(p.greenup)})", (p.speedup, p.powerup),
                    textcoords="offset points", xytext=(4, 4), fontsize=7)
    ax.set_xlim(lo, hi)
    ax.set_ylim(lo, hi)
    ax.set_xlabel("Speedup")
    ax.set_ylabel("Powerup")
    ax.set_title(title)
    fig.savefig(path, format="svg")
    plt.close(fig)


def emit_quadrant_data(points: Sequence[GpsUp], out, title: str = "GPS-UP") -> dict:
    """Write ``<out>.csv``, ``<out>.svg`` and ``<out>.json``; returns the paths."""
    if not points:
        raise ValueError("no GPS-UP points to plot")
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    paths = {"csv": out.with_suffix(".csv"), "svg": out.with_suffix(".svg"),
             "json": out.with_suffix(".json")}
    paths["csv"].write_text(quadrant_csv(points))
    paths["json"].write_text(json.dumps([p.to_dict() for p in points], indent=2))
    _svg(points, paths["svg"], title)
    return paths
