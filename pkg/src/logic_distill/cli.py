"""Command-line entry point.

    logic-distill run --seed 3 --policy oracle --fixed-start 3,8,14,19,17,2,20,18
    logic-distill tournament --episodes 200 --policy kd --emergency --out runs/kd
    logic-distill replay --trace runs/kd/traces/episode_0000.jsonl
    logic-distill plot-data --trace runs/kd/traces/episode_0000.jsonl --out plots/
    logic-distill entropy --k 5 --m 100000
    logic-distill base --validate

A YAML ``--config`` file may supply any of the flag values (plus a ``board``
mapping); flags given explicitly on the command line take precedence.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import yaml

from .function_base import build_default_base, load_shipped_base, shipped_base_text
from .grid_world import BoardConfig, GridPoint
from .harness import (
    TournamentConfig,
    build_task,
    emit_trajectories,
    max_entropy,
    policy_for,
    replay,
    run_tournament,
    trace_from_header,
)
from .planner import read_trace, run_episode
from .retriever import DEFAULT_K, Retriever

DEFAULTS = {"seed": 0, "policy": "oracle", "emergency": False, "episodes": 200, "k": DEFAULT_K}


class CliError(Exception):
    pass


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path, encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise CliError(f"{path}: config must be a mapping")
    return data


def _settings(args: argparse.Namespace, keys: list[str]) -> dict:
    """Merge defaults < config file < explicit flags."""
    cfg = _load_config(getattr(args, "config", None))
    out = {}
    for key in keys:
        flag = getattr(args, key, None)
        if flag is not None:
            out[key] = flag
        elif key in cfg:
            out[key] = cfg[key]
        else:
            out[key] = DEFAULTS.get(key)
    out["board"] = BoardConfig.from_dict(cfg.get("board") or {})
    return out


def _parse_start(text: str) -> tuple[GridPoint, ...]:
    try:
        nums = [int(v) for v in text.split(",")]
    except ValueError:
        raise CliError(f"--fixed-start must be comma-separated integers, got {text!r}") from None
    if len(nums) % 2:
        raise CliError("--fixed-start needs an even number of coordinates")
    return tuple(GridPoint(nums[i], nums[i + 1]) for i in range(0, len(nums), 2))


def cmd_run(args: argparse.Namespace) -> int:
    s = _settings(args, ["seed", "policy", "emergency", "k"])
    start = _parse_start(args.fixed_start) if args.fixed_start else None
    task = build_task(s["board"], bool(s["emergency"]), start)
    policy = policy_for(s["policy"], s["seed"], s["board"])
    trace = run_episode(task, policy, Retriever(build_default_base(), k=s["k"]), s["seed"])
    if args.trace:
        Path(args.trace).parent.mkdir(parents=True, exist_ok=True)
        Path(args.trace).write_text(trace.to_jsonl(), encoding="utf-8")
    print(f"outcome={trace.outcome.kind.value} steps={trace.outcome.steps} "
          f"violations={trace.steps[-1].state_after.violation_count if trace.steps else 0}")
    return 0


def cmd_tournament(args: argparse.Namespace) -> int:
    s = _settings(args, ["seed", "policy", "emergency", "episodes", "out", "k"])
    cfg = TournamentConfig(
        episodes=int(s["episodes"]),
        seed=int(s["seed"]),
        policy=s["policy"],
        board=s["board"],
        emergency=bool(s["emergency"]),
        out=Path(s["out"]) if s["out"] else None,
        k=int(s["k"]),
    )
    report = run_tournament(cfg)
    sys.stdout.write(report.table())
    return 0


def cmd_replay(args: argparse.Namespace) -> int:
    result = replay(args.trace)
    print(f"recorded={result.recorded.kind.value}/{result.recorded.steps} "
          f"replayed={result.replayed.kind.value}/{result.replayed.steps} identical={result.identical}")
    return 0 if result.outcome_matches and result.identical else 1


def cmd_plot_data(args: argparse.Namespace) -> int:
    header, _, _ = read_trace(Path(args.trace).read_text(encoding="utf-8").splitlines())
    trace = trace_from_header(header)
    for path in emit_trajectories(trace, args.out):
        print(path)
    return 0


def cmd_entropy(args: argparse.Namespace) -> int:
    hk, hm = max_entropy(args.k), max_entropy(args.m)
    print(f"max selection entropy  log K = log {args.k} = {hk:.6f} nats")
    print(f"max generation entropy log M = log {args.m} = {hm:.6f} nats")
    return 0


def cmd_base(args: argparse.Namespace) -> int:
    if args.write:
        build_default_base().save(args.write)
        print(f"wrote {args.write}")
        return 0
    if args.validate:
        shipped = load_shipped_base()
        if shipped != build_default_base() or shipped.dumps() != shipped_base_text():
            print("shipped function base differs from the built-in definition", file=sys.stderr)
            return 1
        print(f"ok: {len(shipped)} functions: {', '.join(shipped.names())}")
        return 0
    sys.stdout.write(shipped_base_text())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="logic-distill", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="YAML config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--policy", help="oracle | noisy:<eps> | kd[:starts[:seed]] | fixed[:x,y] | remote:<url>")
        p.add_argument("--emergency", action="store_true", default=None,
                       help="add the centred 5x5 restricted area and its emergency function")
        p.add_argument("--k", type=int, help="retrieval depth")

    p = sub.add_parser("run", help="play one episode")
    common(p)
    p.add_argument("--fixed-start", help="x,y pairs: pursuers then evader")
    p.add_argument("--trace", help="write the episode trace here")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("tournament", help="play many seeded episodes and report")
    common(p)
    p.add_argument("--episodes", type=int)
    p.add_argument("--out", help="output directory for reports, traces and plot data")
    p.set_defaults(func=cmd_tournament)

    p = sub.add_parser("replay", help="re-run a trace and compare")
    p.add_argument("--trace", required=True)
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("plot-data", help="emit trajectory and visit-count CSVs for a trace")
    p.add_argument("--trace", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot_data)

    p = sub.add_parser("entropy", help="compare selection and generation entropy bounds")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--m", type=int, default=100_000)
    p.set_defaults(func=cmd_entropy)

    p = sub.add_parser("base", help="print or validate the shipped function base")
    p.add_argument("--validate", action="store_true")
    p.add_argument("--write", help="write the built-in base to this path")
    p.set_defaults(func=cmd_base)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CliError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
