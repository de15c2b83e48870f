"""Registry of planning functions and their user-manual entries.

Each step of the pursuit game is planned by chaining small stage functions:
distances, then candidate moves, then the chosen move. Every function carries
a manual entry; the manual text is what the retriever indexes.

The base serializes to JSON Lines, one function per line, fields in a fixed
order. See ``docs/formats.md``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Iterator, Mapping, Union

from .grid_world import GameState, GridPoint, Rect, enumerate_legal_moves, manhattan_distance


# --- stage values -----------------------------------------------------------


@dataclass(frozen=True)
class TaskContext:
    instructions: str
    state: GameState


@dataclass(frozen=True)
class DistanceTable:
    state: GameState
    distances: tuple[int, ...]


@dataclass(frozen=True)
class MoveCandidates:
    state: GameState
    candidates: tuple[tuple[GridPoint, ...], ...]


@dataclass(frozen=True)
class ChosenMoves:
    state: GameState
    moves: tuple[GridPoint, ...]


StageValue = Union[TaskContext, DistanceTable, MoveCandidates, ChosenMoves]

VARIANTS: dict[str, type] = {
    "TaskContext": TaskContext,
    "DistanceTable": DistanceTable,
    "MoveCandidates": MoveCandidates,
    "ChosenMoves": ChosenMoves,
}


def variant_name(value: StageValue) -> str:
    return type(value).__name__


def stage_value_to_dict(value: StageValue) -> dict:
    d: dict = {"variant": variant_name(value), "state": value.state.to_dict()}
    if isinstance(value, TaskContext):
        d["instructions"] = value.instructions
    elif isinstance(value, DistanceTable):
        d["distances"] = list(value.distances)
    elif isinstance(value, MoveCandidates):
        d["candidates"] = [[p.as_list() for p in c] for c in value.candidates]
    elif isinstance(value, ChosenMoves):
        d["moves"] = [p.as_list() for p in value.moves]
    return d


class StageError(Exception):
    pass


class VariantMismatchError(StageError):
    def __init__(self, function: str, expected: Iterable[str], actual: str):
        self.function = function
        self.expected = tuple(expected)
        self.actual = actual
        super().__init__(f"{function} expects {' or '.join(self.expected)}, got {actual}")


class EmptyCandidatesError(StageError):
    """A pursuer has nowhere to go; the planner's stall fallback takes over."""

    def __init__(self, pursuers: Iterable[int]):
        self.pursuers = tuple(pursuers)
        super().__init__(f"no candidate moves for pursuer(s) {list(self.pursuers)}")


# --- function specs -----------------------------------------------------------


@dataclass(frozen=True)
class ManualEntry:
    rule_explanation: str
    code_comment: str
    invocation_stage_description: str
    usage_example: str

    def __post_init__(self) -> None:
        for name in ("rule_explanation", "code_comment", "invocation_stage_description", "usage_example"):
            if not getattr(self, name).strip():
                raise ValueError(f"manual field {name} is empty")

    def text(self) -> str:
        return "\n".join(
            [self.rule_explanation, self.code_comment, self.invocation_stage_description, self.usage_example]
        )


@dataclass(frozen=True)
class FunctionSpec:
    name: str
    # ordering key; fractional tags slot emergency stages between integer ones
    stage_tag: float
    manual: ManualEntry
    inputs: tuple[str, ...]
    output: str
    impl: Callable[[StageValue], StageValue] | None = field(default=None, compare=False, repr=False)

    def __post_init__(self) -> None:
        if not self.name:
            raise ValueError("function name must be non-empty")
        if self.stage_tag < 1:
            raise ValueError(f"{self.name}: stage_tag must be >= 1")
        for v in (*self.inputs, self.output):
            if v not in VARIANTS:
                raise ValueError(f"{self.name}: unknown stage value variant {v}")

    def document(self) -> str:
        """Text the retriever indexes: name plus all four manual fields."""
        return f"{self.name}\n{self.manual.text()}"

    def to_record(self) -> dict:
        return {
            "name": self.name,
            "stage_tag": self.stage_tag,
            "inputs": list(self.inputs),
            "output": self.output,
            "manual": {
                "rule_explanation": self.manual.rule_explanation,
                "code_comment": self.manual.code_comment,
                "invocation_stage_description": self.manual.invocation_stage_description,
                "usage_example": self.manual.usage_example,
            },
        }


class FunctionBase:
    """Immutable, ordered collection of FunctionSpecs with lookup by name."""

    def __init__(self, entries: Iterable[FunctionSpec]):
        self._entries = tuple(entries)
        self._by_name: dict[str, FunctionSpec] = {}
        for spec in self._entries:
            if spec.name in self._by_name:
                raise ValueError(f"duplicate function name {spec.name!r}")
            self._by_name[spec.name] = spec

    @property
    def entries(self) -> tuple[FunctionSpec, ...]:
        return self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[FunctionSpec]:
        return iter(self._entries)

    def __contains__(self, name: object) -> bool:
        return name in self._by_name

    def __getitem__(self, name: str) -> FunctionSpec:
        return self._by_name[name]

    def __eq__(self, other: object) -> bool:
        return isinstance(other, FunctionBase) and self._entries == other._entries

    def names(self) -> list[str]:
        return [s.name for s in self._entries]

    def dumps(self) -> str:
        return "".join(json.dumps(s.to_record(), ensure_ascii=False) + "\n" for s in self._entries)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def loads(cls, text: str, implementations: Mapping[str, Callable] | None = None) -> "FunctionBase":
        impls = IMPLEMENTATIONS if implementations is None else implementations
        specs = []
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                spec = FunctionSpec(
                    name=rec["name"],
                    stage_tag=rec["stage_tag"],
                    manual=ManualEntry(**rec["manual"]),
                    inputs=tuple(rec["inputs"]),
                    output=rec["output"],
                    impl=impls.get(rec["name"]),
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"bad function record on line {lineno}: {exc}") from exc
            specs.append(spec)
        return cls(specs)

    @classmethod
    def load(cls, path: str | Path) -> "FunctionBase":
        return cls.loads(Path(path).read_text(encoding="utf-8"))


# --- shipped stage functions ----------------------------------------------


def _sorted_points(points: Iterable[GridPoint]) -> tuple[GridPoint, ...]:
    return tuple(sorted(points))


def compute_distances(ctx: TaskContext) -> DistanceTable:
    s = ctx.state
    return DistanceTable(s, tuple(manhattan_distance(p, s.evader) for p in s.pursuers))


def filter_valid_moves(value: DistanceTable | TaskContext) -> MoveCandidates:
    # restricted cells are deliberately kept; excluding them is the emergency filter's job
    s = value.state
    return MoveCandidates(
        s,
        tuple(
            _sorted_points(enumerate_legal_moves(s, i, respect_restricted=False))
            for i in range(len(s.pursuers))
        ),
    )


def filter_restricted_cells(value: MoveCandidates, area: Rect | None = None) -> MoveCandidates:
    """Drop every candidate inside ``area`` (defaults to the board's restricted area)."""
    if area is None:
        area = value.state.config.restricted_area
    if area is None:
        return value
    return MoveCandidates(
        value.state,
        tuple(tuple(p for p in c if not area.contains(p)) for c in value.candidates),
    )


def select_best_move(value: MoveCandidates) -> ChosenMoves:
    s = value.state
    empty = [i for i, c in enumerate(value.candidates) if not c]
    if empty:
        raise EmptyCandidatesError(empty)
    moves = tuple(
        min(c, key=lambda p: (manhattan_distance(p, s.evader), p.x, p.y)) for c in value.candidates
    )
    return ChosenMoves(s, moves)


IMPLEMENTATIONS: dict[str, Callable] = {
    "compute_distances": compute_distances,
    "filter_valid_moves": filter_valid_moves,
    "filter_restricted_cells": filter_restricted_cells,
    "select_best_move": select_best_move,
}


# Canned per-stage retrieval queries, keyed by stage tag.
STAGE_QUERIES: dict[float, str] = {
    1.0: "compute the manhattan distance from each pursuer to the evader",
    2.0: "list the valid moves each pursuer can legally make within its movement budget",
    2.5: "emergency: filter the candidate moves to exclude restricted area cells; no restricted coordinates",
    3.0: "select the best move for each pursuer: the candidate closest to the evader",
}


def build_default_base() -> FunctionBase:
    return FunctionBase(
        [
            FunctionSpec(
                name="compute_distances",
                stage_tag=1.0,
                inputs=("TaskContext",),
                output="DistanceTable",
                impl=compute_distances,
                manual=ManualEntry(
                    rule_explanation=(
                        "The game ends when the Manhattan distance from every pursuer to the evader "
                        "is less than the capture radius. Measure how far each pursuer is from the evader."
                    ),
                    code_comment="Return the Manhattan distance |dx| + |dy| from each pursuer to the evader.",
                    invocation_stage_description="Stage 1: call first, on the task context, to compute distances.",
                    usage_example="compute_distances(context) -> distances [27, 7, 19]",
                ),
            ),
            FunctionSpec(
                name="filter_valid_moves",
                stage_tag=2.0,
                inputs=("DistanceTable", "TaskContext"),
                output="MoveCandidates",
                impl=filter_valid_moves,
                manual=ManualEntry(
                    rule_explanation=(
                        "A pursuer may move at most two units per step and must stay on the board. "
                        "Any other move is illegal and counts as a violation."
                    ),
                    code_comment="Enumerate the valid moves of each pursuer: legal cells within its movement budget.",
                    invocation_stage_description="Stage 2: call after the distances to list valid candidate moves.",
                    usage_example="filter_valid_moves(distances) -> valid moves per pursuer",
                ),
            ),
            FunctionSpec(
                name="filter_restricted_cells",
                stage_tag=2.5,
                inputs=("MoveCandidates",),
                output="MoveCandidates",
                impl=filter_restricted_cells,
                manual=ManualEntry(
                    rule_explanation=(
                        "Emergency rule: no agent may enter the restricted area. "
                        "Restricted cells are forbidden."
                    ),
                    code_comment="Exclude every coordinate inside the restricted area rectangle from the candidates.",
                    invocation_stage_description=(
                        "Emergency stage between stage 2 and stage 3: filter the output of filter_valid_moves."
                    ),
                    usage_example="filter_restricted_cells(candidates, area) -> candidates outside the area",
                ),
            ),
            FunctionSpec(
                name="select_best_move",
                stage_tag=3.0,
                inputs=("MoveCandidates",),
                output="ChosenMoves",
                impl=select_best_move,
                manual=ManualEntry(
                    rule_explanation=(
                        "Each pursuer should approach the evader as quickly as possible to capture it."
                    ),
                    code_comment=(
                        "Select the best move per pursuer: the candidate closest to the evader, "
                        "ties broken by smallest (x, y)."
                    ),
                    invocation_stage_description="Stage 3: call last to choose the final move of each pursuer.",
                    usage_example="select_best_move(candidates) -> one chosen move per pursuer",
                ),
            ),
        ]
    )


def shipped_base_text() -> str:
    return resources.files("logic_distill").joinpath("data/function_base.jsonl").read_text(encoding="utf-8")


def load_shipped_base() -> FunctionBase:
    return FunctionBase.loads(shipped_base_text())
