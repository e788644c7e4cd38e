"""Reference energy-benchmark tables (hours, kWh, kW) and their GPS-UP cells.

Each environment lists three runs and the three published comparisons as
``(candidate, baseline, speedup, powerup, greenup)`` at two decimals.
"""

RUNS = {
    "Ant-v4": {"PopSAN": (11.92, 18.70, 1.57), "NCCL": (6.00, 14.40, 2.40),
               "MPI": (6.46, 15.11, 2.34)},
    "Hopper-v4": {"PopSAN": (8.52, 18.93, 2.22), "NCCL": (6.57, 13.63, 2.07),
                  "MPI": (6.22, 13.45, 2.16)},
    "HalfCheetah-v4": {"PopSAN": (9.09, 19.73, 2.17), "NCCL": (6.14, 12.99, 2.12),
                       "MPI": (6.43, 13.44, 2.09)},
}

COMPARISONS = {
    "Ant-v4": [("NCCL", "PopSAN", "1.99", "1.53", "1.30"),
               ("MPI", "PopSAN", "1.84", "1.49", "1.24"),
               ("NCCL", "MPI", "1.08", "1.03", "1.05")],
    "Hopper-v4": [("NCCL", "PopSAN", "1.30", "0.93", "1.39"),
                  ("MPI", "PopSAN", "1.37", "0.97", "1.41"),
                  ("NCCL", "MPI", "0.95", "0.96", "0.99")],
    "HalfCheetah-v4": [("NCCL", "PopSAN", "1.48", "0.98", "1.52"),
                       ("MPI", "PopSAN", "1.41", "0.96", "1.47"),
                       ("NCCL", "MPI", "1.05", "1.01", "1.03")],
}

# quadrant placement of the two framework-over-PopSAN points per environment
ZONE_PREFIX = {"Ant-v4": "green: speed-driven", "Hopper-v4": "green: faster-and-lower-power",
               "HalfCheetah-v4": "green: faster-and-lower-power"}


def run_metrics(env, name):
    from spikerl.greenscope import RunMetrics

    hours, kwh, kw = RUNS[env][name]
    return RunMetrics.from_hours(f"{env}/{name}", hours, energy_kwh=kwh, avg_power_kw=kw)
