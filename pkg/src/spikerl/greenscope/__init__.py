"""Energy metering, GPS-UP metrics and carbon reporting."""

from .meters import (ConstantPowerMeter, InjectedMeter, MeterError, RaplMeter, Sampler,
                     ScriptedEnergyMeter, WrapCounter, make_meter, read_cumulative_energy)
from .metrics import (ZONES, GpsUp, MetricDomainError, RunMetrics, classify, classify_zone,
                      display, gps_up, measure_run)
from .report import (DEFAULT_EMISSION_FACTOR, DEFAULT_EQUIVALENCES, PUBLISHED_ANT_REDUCTION,
                     CarbonReport, ConfigError, carbon_report, emit_quadrant_data,
                     percent_reduction, read_quadrant_csv)
