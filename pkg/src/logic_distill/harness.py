"""Tournaments, outcome metrics, entropy bounds and trajectory plot data."""

from __future__ import annotations

import csv
import json
import math
import random
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

from .function_base import build_default_base
from .grid_world import BoardConfig, GameOutcome, OutcomeKind, Rect
from .planner import TRIGGERS, EpisodeTrace, TaskSpec, read_trace, run_episode
from .policies import make_policy
from .retriever import DEFAULT_K, Retriever


@dataclass(frozen=True)
class TournamentConfig:
    episodes: int = 200
    seed: int = 0
    policy: str = "oracle"
    board: BoardConfig = field(default_factory=BoardConfig)
    emergency: bool = False
    out: Path | None = None
    k: int = DEFAULT_K

    def __post_init__(self) -> None:
        if self.episodes < 1:
            raise ValueError("episodes must be >= 1")

    def to_dict(self) -> dict:
        return {
            "episodes": self.episodes,
            "seed": self.seed,
            "policy": self.policy,
            "board": self.board.to_dict(),
            "emergency": self.emergency,
            "k": self.k,
        }


def build_task(board: BoardConfig, emergency: bool, fixed_start=None) -> TaskSpec:
    """Task for the given board; ``emergency`` adds the restricted area and its trigger."""
    if emergency:
        if board.restricted_area is None:
            board = replace(board, restricted_area=Rect.centered(board.width, board.height))
        return TaskSpec(board=board, emergency_triggers=(TRIGGERS["restricted_area"],), fixed_start=fixed_start)
    return TaskSpec(board=board, fixed_start=fixed_start)


def policy_for(spec: str, seed: int, board: BoardConfig):
    # imitation baselines learn on the plain board; the restricted area is new to them
    return make_policy(spec, seed=seed, board=replace(board, restricted_area=None))


def episode_seeds(seed: int, n: int) -> list[int]:
    rng = random.Random(f"tournament:{seed}")
    return [rng.randrange(2**31) for _ in range(n)]


@dataclass
class MetricsReport:
    config: dict
    outcomes: list[dict]

    @property
    def episodes(self) -> int:
        return len(self.outcomes)

    def counts(self) -> dict[str, int]:
        c = Counter(o["kind"] for o in self.outcomes)
        return {k.value: c.get(k.value, 0) for k in OutcomeKind}

    def rate(self, kind: OutcomeKind) -> float:
        return self.counts()[kind.value] / self.episodes

    @property
    def success_rate(self) -> float:
        return self.rate(OutcomeKind.SUCCESS)

    @property
    def failure_no_violation_rate(self) -> float:
        return self.rate(OutcomeKind.FAILURE_NO_VIOLATION)

    @property
    def failure_with_violation_rate(self) -> float:
        return self.rate(OutcomeKind.FAILURE_WITH_VIOLATION)

    @property
    def avg_steps_of_success(self) -> float | None:
        steps = [o["steps"] for o in self.outcomes if o["kind"] == OutcomeKind.SUCCESS.value]
        return sum(steps) / len(steps) if steps else None

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "counts": self.counts(),
            "success_rate": self.success_rate,
            "failure_no_violation_rate": self.failure_no_violation_rate,
            "failure_with_violation_rate": self.failure_with_violation_rate,
            "avg_steps_of_success": self.avg_steps_of_success,
            "outcomes": self.outcomes,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def table(self) -> str:
        avg = self.avg_steps_of_success
        avg_s = "-" if avg is None else f"{avg:.2f}"
        head = ["policy", "Success", "Failure without Violation", "Failure with Violation", "Average Steps of Success"]
        row = [
            self.config.get("policy", "?"),
            f"{100 * self.success_rate:.2f}%",
            f"{100 * self.failure_no_violation_rate:.2f}%",
            f"{100 * self.failure_with_violation_rate:.2f}%",
            avg_s,
        ]
        widths = [max(len(a), len(b)) for a, b in zip(head, row)]
        fmt = " | ".join(f"{{:<{w}}}" for w in widths)
        lines = [
            f"episodes={self.episodes} seed={self.config.get('seed')} emergency={self.config.get('emergency')}",
            fmt.format(*head),
            "-+-".join("-" * w for w in widths),
            fmt.format(*row),
        ]
        return "\n".join(lines) + "\n"


def run_tournament(cfg: TournamentConfig) -> MetricsReport:
    """Play ``cfg.episodes`` seeded episodes and aggregate in episode order.

    With ``cfg.out`` set, writes report.json, report.txt, one trace per
    episode under traces/ and plot data under trajectories/.
    """
    task = build_task(cfg.board, cfg.emergency)
    policy = policy_for(cfg.policy, cfg.seed, cfg.board)
    retriever = Retriever(build_default_base(), k=cfg.k)
    out = Path(cfg.out) if cfg.out is not None else None
    if out is not None:
        (out / "traces").mkdir(parents=True, exist_ok=True)
    outcomes = []
    for i, seed in enumerate(episode_seeds(cfg.seed, cfg.episodes)):
        trace = run_episode(task, policy, retriever, seed)
        outcomes.append({"episode": i, "seed": seed, **trace.outcome.to_dict()})
        if out is not None:
            (out / "traces" / f"episode_{i:04d}.jsonl").write_text(trace.to_jsonl(), encoding="utf-8")
            emit_trajectories(trace, out / "trajectories" / f"episode_{i:04d}")
    report = MetricsReport(cfg.to_dict(), outcomes)
    if out is not None:
        (out / "report.json").write_text(report.to_json(), encoding="utf-8")
        (out / "report.txt").write_text(report.table(), encoding="utf-8")
    return report


# --- entropy ------------------------------------------------------------------


def max_entropy(n: int) -> float:
    """Largest entropy (nats) of any distribution over ``n`` outcomes."""
    if n < 1:
        raise ValueError("need at least one outcome")
    return math.log(n)


def empirical_entropy(dist: Sequence[float], tol: float = 1e-9) -> float:
    """Shannon entropy in nats, with 0 log 0 taken as 0."""
    if len(dist) == 0:
        raise ValueError("empty distribution")
    if any(not math.isfinite(p) or p < 0 for p in dist):
        raise ValueError("probabilities must be finite and non-negative")
    if abs(math.fsum(dist) - 1.0) > tol:
        raise ValueError(f"probabilities sum to {math.fsum(dist)}, not 1")
    return -math.fsum(p * math.log(p) for p in dist if p > 0)


# --- trajectories -----------------------------------------------------------------


def agent_names(n_pursuers: int) -> list[str]:
    return [f"pursuer{i}" for i in range(n_pursuers)] + ["evader"]


def emit_trajectories(trace: EpisodeTrace, out_dir: str | Path) -> tuple[Path, Path]:
    """Write trajectory.csv (step, agent, x, y) and visits.csv (agent, x, y, count)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = agent_names(len(trace.initial.pursuers))
    visits: Counter = Counter()
    traj_path = out / "trajectory.csv"
    with traj_path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "agent", "x", "y"])
        for step, state in enumerate(trace.positions()):
            for name, p in zip(names, (*state.pursuers, state.evader)):
                w.writerow([step, name, p.x, p.y])
                visits[(name, p.x, p.y)] += 1
    visits_path = out / "visits.csv"
    order = {n: i for i, n in enumerate(names)}
    with visits_path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["agent", "x", "y", "count"])
        for (name, x, y), count in sorted(visits.items(), key=lambda kv: (order[kv[0][0]], kv[0][1], kv[0][2])):
            w.writerow([name, x, y, count])
    return traj_path, visits_path


# --- replay -----------------------------------------------------------------------


@dataclass(frozen=True)
class ReplayResult:
    recorded: GameOutcome
    replayed: GameOutcome
    identical: bool
    trace: EpisodeTrace

    @property
    def outcome_matches(self) -> bool:
        return self.recorded == self.replayed


def trace_from_header(header: dict) -> EpisodeTrace:
    task = TaskSpec.from_dict(header["task"])
    policy = policy_for(header["policy"], header["seed"], task.board)
    retriever = Retriever(build_default_base(), k=header.get("retriever_k", DEFAULT_K))
    return run_episode(task, policy, retriever, header["seed"])


def replay(path: str | Path) -> ReplayResult:
    text = Path(path).read_text(encoding="utf-8")
    header, _, outcome = read_trace(text.splitlines())
    trace = trace_from_header(header)
    recorded = GameOutcome.from_dict(outcome)
    return ReplayResult(recorded, trace.outcome, trace.to_jsonl() == text, trace)
