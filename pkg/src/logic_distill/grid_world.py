"""Pursuit-game board: geometry, move legality, capture and termination.

Three pursuers chase one evader on a bounded grid. Pursuers may displace up
to ``pursuer_budget`` cells (Manhattan) per step, the evader up to
``evader_budget``. The game is won when every pursuer is strictly closer than
``capture_radius`` to the evader.

All values here are immutable; every operation returns a new state.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Iterator, Union

EVADER = "evader"

AgentId = Union[int, str]


@dataclass(frozen=True, order=True)
class GridPoint:
    x: int
    y: int

    def __str__(self) -> str:
        return f"({self.x},{self.y})"

    def as_list(self) -> list[int]:
        return [self.x, self.y]


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle with inclusive corners."""

    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self) -> None:
        if self.x0 > self.x1 or self.y0 > self.y1:
            raise ValueError(f"malformed rectangle {self}")

    def contains(self, p: GridPoint) -> bool:
        return self.x0 <= p.x <= self.x1 and self.y0 <= p.y <= self.y1

    def cells(self) -> Iterator[GridPoint]:
        for x in range(self.x0, self.x1 + 1):
            for y in range(self.y0, self.y1 + 1):
                yield GridPoint(x, y)

    @classmethod
    def centered(cls, width: int, height: int, size: int = 5) -> "Rect":
        x0 = (width - size) // 2
        y0 = (height - size) // 2
        return cls(x0, y0, x0 + size - 1, y0 + size - 1)

    def as_list(self) -> list[int]:
        return [self.x0, self.y0, self.x1, self.y1]


@dataclass(frozen=True)
class BoardConfig:
    width: int = 21
    height: int = 21
    pursuer_budget: int = 2
    evader_budget: int = 1
    capture_radius: int = 2
    step_limit: int = 100
    violation_limit: int = 7
    restricted_area: Rect | None = None
    # when set, a move must displace the agent by at least one cell
    strict_moves: bool = False
    num_pursuers: int = 3

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise ValueError("board must be at least 1x1")
        if not self.pursuer_budget >= self.evader_budget >= 0:
            raise ValueError("need pursuer_budget >= evader_budget >= 0")
        if self.capture_radius < 1:
            raise ValueError("capture_radius must be >= 1")
        if self.step_limit < 0 or self.violation_limit < 0:
            raise ValueError("limits must be non-negative")
        if self.num_pursuers < 1:
            raise ValueError("need at least one pursuer")

    def in_bounds(self, p: GridPoint) -> bool:
        return 0 <= p.x < self.width and 0 <= p.y < self.height

    def is_restricted(self, p: GridPoint) -> bool:
        return self.restricted_area is not None and self.restricted_area.contains(p)

    def to_dict(self) -> dict:
        d = {
            "width": self.width,
            "height": self.height,
            "pursuer_budget": self.pursuer_budget,
            "evader_budget": self.evader_budget,
            "capture_radius": self.capture_radius,
            "step_limit": self.step_limit,
            "violation_limit": self.violation_limit,
            "restricted_area": None if self.restricted_area is None else self.restricted_area.as_list(),
            "strict_moves": self.strict_moves,
            "num_pursuers": self.num_pursuers,
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BoardConfig":
        d = dict(d)
        area = d.pop("restricted_area", None)
        if area is not None:
            area = Rect(*area)
        return cls(restricted_area=area, **d)


@dataclass(frozen=True)
class GameState:
    pursuers: tuple[GridPoint, ...]
    evader: GridPoint
    config: BoardConfig = field(default_factory=BoardConfig)
    step_count: int = 0
    violation_count: int = 0

    def __post_init__(self) -> None:
        if len(self.pursuers) != self.config.num_pursuers:
            raise ValueError(
                f"expected {self.config.num_pursuers} pursuers, got {len(self.pursuers)}"
            )
        for p in (*self.pursuers, self.evader):
            if not self.config.in_bounds(p):
                raise ValueError(f"{p} is outside the {self.config.width}x{self.config.height} board")
            if self.config.is_restricted(p):
                raise ValueError(f"{p} lies in the restricted area")

    def position(self, agent: AgentId) -> GridPoint:
        _check_agent(self, agent)
        return self.evader if agent == EVADER else self.pursuers[agent]

    def render(self) -> str:
        """Canonical one-line text form; identical states render identically."""
        ps = " ".join(f"pursuer {i} at {p.x} {p.y};" for i, p in enumerate(self.pursuers))
        return (
            f"{ps} evader at {self.evader.x} {self.evader.y}; "
            f"step {self.step_count}; violations {self.violation_count}"
        )

    def to_dict(self) -> dict:
        return {
            "pursuers": [p.as_list() for p in self.pursuers],
            "evader": self.evader.as_list(),
            "step_count": self.step_count,
            "violation_count": self.violation_count,
        }


class Verdict(str, enum.Enum):
    LEGAL = "legal"
    ILLEGAL = "illegal"


class OutcomeKind(str, enum.Enum):
    SUCCESS = "Success"
    FAILURE_NO_VIOLATION = "FailureNoViolation"
    FAILURE_WITH_VIOLATION = "FailureWithViolation"


@dataclass(frozen=True)
class GameOutcome:
    kind: OutcomeKind
    # only meaningful for SUCCESS
    steps: int

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "steps": self.steps}

    @classmethod
    def from_dict(cls, d: dict) -> "GameOutcome":
        return cls(OutcomeKind(d["kind"]), int(d["steps"]))


def _check_agent(state: GameState, agent: AgentId) -> None:
    if agent == EVADER:
        return
    if isinstance(agent, bool) or not isinstance(agent, int) or not 0 <= agent < len(state.pursuers):
        raise ValueError(f"unknown agent id {agent!r}")


def manhattan_distance(a: GridPoint, b: GridPoint) -> int:
    return abs(a.x - b.x) + abs(a.y - b.y)


def budget_of(config: BoardConfig, agent: AgentId) -> int:
    return config.evader_budget if agent == EVADER else config.pursuer_budget


def enumerate_legal_moves(
    state: GameState, agent: AgentId, *, respect_restricted: bool = True
) -> frozenset[GridPoint]:
    """Every cell the agent may end its move on.

    ``respect_restricted=False`` ignores the restricted area; the stage
    function ``filter_valid_moves`` uses that so the exclusion stays the
    emergency filter's job.
    """
    _check_agent(state, agent)
    cfg = state.config
    here = state.position(agent)
    budget = budget_of(cfg, agent)
    out = set()
    for dx in range(-budget, budget + 1):
        rest = budget - abs(dx)
        for dy in range(-rest, rest + 1):
            if cfg.strict_moves and dx == 0 and dy == 0:
                continue
            p = GridPoint(here.x + dx, here.y + dy)
            if not cfg.in_bounds(p):
                continue
            if respect_restricted and cfg.is_restricted(p):
                continue
            out.add(p)
    return frozenset(out)


def is_legal(state: GameState, agent: AgentId, target: GridPoint) -> bool:
    cfg = state.config
    here = state.position(agent)
    d = manhattan_distance(here, target)
    if d > budget_of(cfg, agent) or (cfg.strict_moves and d == 0):
        return False
    return cfg.in_bounds(target) and not cfg.is_restricted(target)


def is_captured(state: GameState) -> bool:
    r = state.config.capture_radius
    return all(manhattan_distance(p, state.evader) < r for p in state.pursuers)


def apply_move(state: GameState, agent: AgentId, target: GridPoint) -> tuple[GameState, Verdict]:
    """Move one agent. Illegal targets cost a violation and leave it in place."""
    _check_agent(state, agent)
    if not is_legal(state, agent, target):
        return replace(state, violation_count=state.violation_count + 1), Verdict.ILLEGAL
    if agent == EVADER:
        return replace(state, evader=target), Verdict.LEGAL
    pursuers = list(state.pursuers)
    pursuers[agent] = target
    return replace(state, pursuers=tuple(pursuers)), Verdict.LEGAL


def violations_exceeded(state: GameState) -> bool:
    return state.violation_count > state.config.violation_limit


def outcome_of(state: GameState) -> GameOutcome | None:
    """Label a state as finished, or return None while play continues.

    Violation overflow takes precedence over capture, capture over the step
    limit, so the three kinds are mutually exclusive.
    """
    if violations_exceeded(state):
        return GameOutcome(OutcomeKind.FAILURE_WITH_VIOLATION, state.step_count)
    if is_captured(state):
        return GameOutcome(OutcomeKind.SUCCESS, state.step_count)
    if state.step_count >= state.config.step_limit:
        return GameOutcome(OutcomeKind.FAILURE_NO_VIOLATION, state.step_count)
    return None


def evader_policy_greedy(state: GameState) -> GridPoint:
    """Maximin escape: the legal cell farthest from the nearest pursuer.

    Ties go to the smallest (x, y). With no legal cell the evader stays put.
    """
    moves = enumerate_legal_moves(state, EVADER)
    if not moves:
        return state.evader

    def nearest(p: GridPoint) -> int:
        return min(manhattan_distance(p, q) for q in state.pursuers)

    return min(moves, key=lambda p: (-nearest(p), p.x, p.y))


def all_cells(config: BoardConfig) -> Iterator[GridPoint]:
    for x in range(config.width):
        for y in range(config.height):
            yield GridPoint(x, y)
