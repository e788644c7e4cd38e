"""``spikerl`` command line: train, eval, benchmark, report, launch.

Exit codes: 0 success, 1 runtime failure, 2 configuration or usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import socket
import subprocess
import sys
from pathlib import Path

from . import checkpoint
from .config import ConfigError, load_config

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
log = logging.getLogger("spikerl")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _parse_overrides(extra: list) -> dict:
    """``--td3.gamma 0.98`` / ``--td3.gamma=0.98`` pairs to a dict."""
    out, i = {}, 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--"):
            raise UsageError(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, val = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extra):
                raise UsageError(f"missing value for {tok}")
            val = extra[i + 1]
            i += 2
        out[key.replace("-", "_")] = val
    return out


def _write_json(path, obj):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _rank_path(out: str, rank: int, suffix: str) -> Path:
    p = Path(out)
    return p.with_name(f"{p.stem}.rank{rank}{suffix}")


def cmd_train(args, extra) -> int:
    overrides = _parse_overrides(extra)
    for key, val in (("env", args.env), ("epochs", args.epochs), ("seed", args.seed),
                     ("out", args.out)):
        if val is not None:
            overrides[key] = val
    if args.amp is not None:
        if args.amp == "off":
            overrides["amp.enabled"] = False
        else:
            overrides["amp.enabled"] = True
            overrides["amp.format"] = args.amp
    cfg = load_config(args.config, overrides)

    from .train import run

    results = run(cfg)
    for art, agent in results:
        rank = art["rank"]
        if rank == 0:
            _write_json(cfg.out, art)
            checkpoint.save(Path(cfg.out).with_suffix(".ckpt"), agent.actor.params,
                            meta={"env": cfg.env, "config": cfg.to_dict()})
            print(f"wrote {cfg.out}")
        else:
            _write_json(_rank_path(cfg.out, rank, ".json"), art)
        for e in art["epochs"]:
            log.info("rank %d epoch %d test reward %.3f", rank, e["epoch"], e["test_reward"])
    return EXIT_OK


def cmd_eval(args, extra) -> int:
    from .envs import make
    from .snn import ActorConfig, LifConfig, SpikingActor
    from .train import evaluate

    params, meta = checkpoint.load(args.checkpoint)
    cfg = load_config(None, {k: v for k, v in _flatten(meta.get("config", {})).items()
                             if not k.startswith("dist.")})
    spec = make(cfg.env).spec
    s = cfg.snn
    actor = SpikingActor(ActorConfig(spec.obs_dim, spec.action_dim, spec.action_bound,
                                     spec.obs_range, tuple(s.hidden), s.enc_pop, s.dec_pop,
                                     LifConfig(s.current_decay, s.voltage_decay, s.threshold,
                                               s.timesteps)),
                         params=params)

    class _Greedy:
        def select_action(self, obs):
            return actor.act(obs)

    mean = evaluate(_Greedy(), cfg.env, args.episodes, args.seed)
    print(json.dumps({"env": cfg.env, "episodes": args.episodes, "mean_return": mean}))
    return EXIT_OK


def _flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        if isinstance(v, dict):
            out.update(_flatten(v, f"{prefix}{k}."))
        else:
            out[f"{prefix}{k}"] = v
    return out


def _load_metrics(path):
    from .greenscope import RunMetrics

    try:
        art = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read artifact {path}: {exc}") from exc
    m = art.get("metrics") if isinstance(art, dict) else None
    if not m or m.get("wall_time_s") is None or m.get("avg_power_kw") is None:
        raise UsageError(f"{path} has no run metrics (wall_time_s, avg_power_kw)")
    return RunMetrics(m.get("label") or Path(path).stem, float(m["wall_time_s"]),
                      None if m.get("energy_kwh") is None else float(m["energy_kwh"]),
                      float(m["avg_power_kw"]))


def cmd_benchmark(args, extra) -> int:
    from .greenscope import emit_quadrant_data, gps_up

    base = _load_metrics(args.baseline)
    points = [gps_up(base, _load_metrics(c)) for c in args.candidates]
    print("comparison speedup powerup greenup zone")
    for p in points:
        print(f"{p.label}: {p.row()}  [{p.zone}]")
    if args.out:
        paths = emit_quadrant_data(points, args.out, title=args.title)
        print("wrote " + ", ".join(str(p) for p in paths.values()))
    return EXIT_OK


def cmd_report(args, extra) -> int:
    from .greenscope import PUBLISHED_ANT_REDUCTION, carbon_report, percent_reduction

    if not args.emission_factor > 0:
        raise UsageError(f"emission factor must be positive, got {args.emission_factor}")
    reports = []
    for path in args.artifacts:
        m = _load_metrics_energy(path)
        reports.append((path, carbon_report(m, args.emission_factor)))
    for path, rep in reports:
        print(f"[{path}]")
        for line in rep.lines():
            print("  " + line)
    if len(reports) == 2:
        red = percent_reduction(reports[0][1], reports[1][1])
        print("reduction (baseline -> candidate):")
        for k, v in red.items():
            print(f"  {k}: {100 * v:.2f}%")
        print(f"  note: the published Ant-v4 carbon reduction is {100 * PUBLISHED_ANT_REDUCTION:.1f}%, "
              "which the published energy totals do not reproduce; figures here derive from energy only")
    return EXIT_OK


def _load_metrics_energy(path) -> float:
    try:
        art = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read artifact {path}: {exc}") from exc
    e = (art.get("metrics") or {}).get("energy_kwh") if isinstance(art, dict) else None
    if e is None:
        raise UsageError(f"{path} has no energy_kwh")
    return float(e)


def _free_ports(n: int) -> list:
    socks = []
    for _ in range(n):
        s = socket.socket()
        s.bind(("127.0.0.1", 0))
        socks.append(s)
    ports = [s.getsockname()[1] for s in socks]
    for s in socks:
        s.close()
    return ports


def cmd_launch(args, extra) -> int:
    if args.world < 1:
        raise UsageError("--world must be >= 1")
    peers = ",".join(f"127.0.0.1:{p}" for p in _free_ports(args.world))
    procs = []
    for r in range(args.world):
        env = dict(os.environ, SPIKERL_RANK=str(r), SPIKERL_WORLD=str(args.world),
                   SPIKERL_PEERS=peers, SPIKERL_BACKEND="tcp")
        procs.append(subprocess.Popen([sys.executable, "-m", "spikerl", "train", *extra], env=env))
    codes = [p.wait() for p in procs]
    return max(codes)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="spikerl", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train an SNN-TD3 agent (extra --section.key VALUE overrides)")
    t.add_argument("--config")
    t.add_argument("--env")
    t.add_argument("--epochs", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--out")
    t.add_argument("--amp", choices=("off", "bf16", "fp16"))
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a saved actor checkpoint")
    e.add_argument("checkpoint")
    e.add_argument("--episodes", type=int, default=5)
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("benchmark", help="GPS-UP table of candidates against a baseline")
    b.add_argument("baseline")
    b.add_argument("candidates", nargs="+")
    b.add_argument("--out", help="path prefix for CSV/SVG/JSON quadrant files")
    b.add_argument("--title", default="GPS-UP quadrant")
    b.set_defaults(func=cmd_benchmark)

    r = sub.add_parser("report", help="carbon report for one artifact, or reductions for two")
    r.add_argument("artifacts", nargs="+")
    r.add_argument("--emission-factor", type=float, default=0.475)
    r.set_defaults(func=cmd_report)

    la = sub.add_parser("launch", help="spawn local tcp ranks running `train`")
    la.add_argument("--world", type=int, required=True)
    la.set_defaults(func=cmd_launch)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if extra and args.command not in ("train", "launch"):
            raise UsageError(f"unrecognized arguments: {' '.join(extra)}")
        if args.command == "report" and len(args.artifacts) > 2:
            raise UsageError("report takes one or two artifacts")
        return args.func(args, extra)
    except (UsageError, ConfigError) as exc:
        print(f"spikerl: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # runtime failures map to exit 1
        log.debug("runtime failure", exc_info=True)
        print(f"spikerl: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
