"""Stage-wise executor: retrieve, select, execute, repeat until the game ends.

One *step* moves every agent once. Within a step the selector policy picks one
function per stage from the retrieved candidates; each function consumes the
previous stage's output, and the last stage yields the pursuers' moves.
Emergencies (e.g. a restricted area) add an overlay function and an extra
stage for the rest of the episode without touching the shared base.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping, Protocol

from .function_base import (
    STAGE_QUERIES,
    ChosenMoves,
    EmptyCandidatesError,
    FunctionBase,
    FunctionSpec,
    MoveCandidates,
    StageError,
    StageValue,
    TaskContext,
    VariantMismatchError,
    build_default_base,
    filter_restricted_cells,
    stage_value_to_dict,
    variant_name,
)
from .grid_world import (
    EVADER,
    BoardConfig,
    GameOutcome,
    GameState,
    GridPoint,
    OutcomeKind,
    Verdict,
    all_cells,
    apply_move,
    evader_policy_greedy,
    is_captured,
    outcome_of,
    violations_exceeded,
)
from .retriever import RankedCandidates, RetrievalQuery, Retriever

DEFAULT_INSTRUCTIONS = (
    "Three pursuers chase one evader on a grid. Each step every pursuer moves at most two units "
    "(Manhattan), the evader at most one. The pursuers win when all three are within Manhattan "
    "distance less than 2 of the evader. More than seven illegal moves, or 100 steps without a "
    "capture, lose the game."
)


# --- task description -------------------------------------------------------


@dataclass(frozen=True)
class StageDescriptor:
    stage_tag: float
    query: str

    def to_dict(self) -> dict:
        return {"stage_tag": self.stage_tag, "query": self.query}


DEFAULT_STAGE_PLAN = tuple(StageDescriptor(tag, STAGE_QUERIES[tag]) for tag in (1.0, 2.0, 3.0))


@dataclass(frozen=True)
class EmergencyTrigger:
    trigger_id: str
    template: str
    predicate: Callable[[GameState], bool] = field(compare=False, repr=False)


def _restricted_area_active(state: GameState) -> bool:
    return state.config.restricted_area is not None


TRIGGERS: dict[str, EmergencyTrigger] = {
    "restricted_area": EmergencyTrigger("restricted_area", "filter_restricted_cells", _restricted_area_active),
}


@dataclass(frozen=True)
class TaskSpec:
    board: BoardConfig = field(default_factory=BoardConfig)
    instructions: str = DEFAULT_INSTRUCTIONS
    stage_plan: tuple[StageDescriptor, ...] = DEFAULT_STAGE_PLAN
    emergency_triggers: tuple[EmergencyTrigger, ...] = ()
    # pursuers followed by the evader; None means sample from the seed
    fixed_start: tuple[GridPoint, ...] | None = None

    def __post_init__(self) -> None:
        if not self.stage_plan:
            raise ValueError("stage plan needs at least one stage")
        tags = [s.stage_tag for s in self.stage_plan]
        if tags != sorted(tags) or len(set(tags)) != len(tags):
            raise ValueError("stage plan must be strictly ordered by stage tag")
        if self.fixed_start is not None and len(self.fixed_start) != self.board.num_pursuers + 1:
            raise ValueError("fixed_start needs one position per pursuer plus the evader")

    def to_dict(self) -> dict:
        return {
            "board": self.board.to_dict(),
            "instructions": self.instructions,
            "stage_plan": [s.to_dict() for s in self.stage_plan],
            "emergency_triggers": [t.trigger_id for t in self.emergency_triggers],
            "fixed_start": None if self.fixed_start is None else [p.as_list() for p in self.fixed_start],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TaskSpec":
        try:
            triggers = tuple(TRIGGERS[t] for t in d.get("emergency_triggers", []))
        except KeyError as exc:
            raise ValueError(f"unknown emergency trigger {exc}") from exc
        start = d.get("fixed_start")
        return cls(
            board=BoardConfig.from_dict(d["board"]),
            instructions=d.get("instructions", DEFAULT_INSTRUCTIONS),
            stage_plan=tuple(StageDescriptor(float(s["stage_tag"]), s["query"]) for s in d["stage_plan"])
            if "stage_plan" in d
            else DEFAULT_STAGE_PLAN,
            emergency_triggers=triggers,
            fixed_start=None if start is None else tuple(GridPoint(*p) for p in start),
        )


# --- emergency templates ------------------------------------------------------


@dataclass(frozen=True)
class EmergencyTemplate:
    name: str
    stage: StageDescriptor
    instantiate: Callable[[GameState, FunctionBase], FunctionSpec] = field(compare=False, repr=False)


def _instantiate_restricted_filter(state: GameState, base: FunctionBase) -> FunctionSpec:
    area = state.config.restricted_area
    if area is None:
        raise ValueError("restricted-area emergency without a restricted area")
    proto = base["filter_restricted_cells"] if "filter_restricted_cells" in base else build_default_base()["filter_restricted_cells"]

    def bound(value: MoveCandidates) -> MoveCandidates:
        return filter_restricted_cells(value, area)

    return FunctionSpec(proto.name, proto.stage_tag, proto.manual, proto.inputs, proto.output, bound)


TEMPLATES: dict[str, EmergencyTemplate] = {
    "filter_restricted_cells": EmergencyTemplate(
        "filter_restricted_cells",
        StageDescriptor(2.5, STAGE_QUERIES[2.5]),
        _instantiate_restricted_filter,
    ),
}


class EmergencyGenerator(Protocol):
    """Turns a fired trigger into an executable function and its stage slot.

    The default draws from the vetted template registry; a model-backed
    generator can implement the same method.
    """

    def generate(self, trigger: EmergencyTrigger, state: GameState, base: FunctionBase) -> tuple[FunctionSpec, StageDescriptor]: ...


class TemplateGenerator:
    def __init__(self, templates: Mapping[str, EmergencyTemplate] | None = None):
        self.templates = TEMPLATES if templates is None else templates

    def generate(self, trigger: EmergencyTrigger, state: GameState, base: FunctionBase) -> tuple[FunctionSpec, StageDescriptor]:
        try:
            tpl = self.templates[trigger.template]
        except KeyError:
            raise KeyError(f"no emergency template {trigger.template!r} for trigger {trigger.trigger_id!r}") from None
        return tpl.instantiate(state, base), tpl.stage


class Overlay:
    """Episode-local functions layered over the shared base."""

    def __init__(self, base: FunctionBase):
        self.base = base
        self.functions: dict[str, FunctionSpec] = {}
        self.stages: dict[str, StageDescriptor] = {}  # trigger id -> slotted stage
        self.injected: dict[str, str] = {}  # trigger id -> function name

    def resolve(self, name: str) -> FunctionSpec:
        spec = self.functions.get(name)
        return spec if spec is not None else self.base[name]

    def specs(self) -> dict[str, FunctionSpec]:
        out = {s.name: s for s in self.base}
        out.update(self.functions)
        return out

    def stage_plan(self, task: TaskSpec) -> list[StageDescriptor]:
        plan = {s.stage_tag: s for s in task.stage_plan}
        for s in self.stages.values():
            plan.setdefault(s.stage_tag, s)
        return [plan[t] for t in sorted(plan)]


class UnknownTriggerError(KeyError):
    pass


def inject_emergency(
    task: TaskSpec,
    trigger_id: str,
    candidates: RankedCandidates,
    overlay: Overlay,
    state: GameState,
    generator: EmergencyGenerator | None = None,
    stage_tag: float | None = None,
) -> RankedCandidates:
    """Register the trigger's function in the overlay and add it to ``candidates``.

    Idempotent per trigger. The candidate list only changes when ``stage_tag``
    is None or matches the emergency stage.
    """
    trigger = next((t for t in task.emergency_triggers if t.trigger_id == trigger_id), None)
    if trigger is None:
        raise UnknownTriggerError(trigger_id)
    if trigger_id not in overlay.injected:
        spec, stage = (generator or TemplateGenerator()).generate(trigger, state, overlay.base)
        overlay.functions[spec.name] = spec
        overlay.stages[trigger_id] = stage
        overlay.injected[trigger_id] = spec.name
    name = overlay.injected[trigger_id]
    if stage_tag is not None and overlay.stages[trigger_id].stage_tag != stage_tag:
        return candidates
    if name in candidates:
        return candidates
    return RankedCandidates(candidates.items + ((name, 0.0),), candidates.injected + (name,))


# --- selection and execution --------------------------------------------------


@dataclass(frozen=True)
class SelectionContext:
    stage_tag: float
    value: StageValue
    specs: Mapping[str, FunctionSpec]
    rng: random.Random = field(compare=False, repr=False, default_factory=random.Random)

    @property
    def state(self) -> GameState:
        return self.value.state


class SelectionFault(Exception):
    """The selector returned something outside the candidate list."""


def select_function(
    candidates: RankedCandidates,
    policy: Any,
    ctx: SelectionContext,
    query: RetrievalQuery | None = None,
) -> FunctionSpec:
    if len(candidates) == 0:
        raise ValueError("no candidates to select from")
    if len(candidates) == 1:
        return ctx.specs[candidates.items[0][0]]
    name = policy.select(query, candidates, ctx)
    if name not in candidates:
        raise SelectionFault(f"policy selected {name!r}, not among {candidates.names()}")
    return ctx.specs[name]


def execute_stage(f: FunctionSpec, value: StageValue) -> StageValue:
    actual = variant_name(value)
    if actual not in f.inputs:
        raise VariantMismatchError(f.name, f.inputs, actual)
    if f.impl is None:
        raise StageError(f"{f.name} has no registered implementation")
    out = f.impl(value)
    if variant_name(out) != f.output:
        raise VariantMismatchError(f.name + " (output)", (f.output,), variant_name(out))
    return out


def digest(value: StageValue) -> str:
    blob = json.dumps(stage_value_to_dict(value), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


# --- steps and episodes -------------------------------------------------------


@dataclass(frozen=True)
class StageRecord:
    stage_index: int
    stage_tag: float
    candidates: RankedCandidates
    selected: str
    input_digest: str
    output_digest: str | None

    def to_dict(self) -> dict:
        return {
            "stage_index": self.stage_index,
            "stage_tag": self.stage_tag,
            "candidates": self.candidates.to_dict(),
            "selected": self.selected,
            "input_digest": self.input_digest,
            "output_digest": self.output_digest,
        }


@dataclass(frozen=True)
class StepRecord:
    step: int
    stages: tuple[StageRecord, ...]
    proposals: tuple[GridPoint, ...]
    verdicts: tuple[str, ...]
    evader_move: GridPoint | None
    violations: tuple[int, ...]
    stalled: tuple[int, ...]
    fault: str | None
    emergencies: tuple[str, ...]
    state_after: GameState

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "stages": [s.to_dict() for s in self.stages],
            "proposals": [p.as_list() for p in self.proposals],
            "verdicts": list(self.verdicts),
            "evader_move": None if self.evader_move is None else self.evader_move.as_list(),
            "violations": list(self.violations),
            "stalled": list(self.stalled),
            "fault": self.fault,
            "emergencies": list(self.emergencies),
            "state_after": self.state_after.to_dict(),
        }


def _plan_moves(
    state: GameState,
    task: TaskSpec,
    policy: Any,
    retriever: Retriever,
    overlay: Overlay,
    rng: random.Random,
) -> tuple[tuple[GridPoint, ...] | None, list[StageRecord], list[int], str | None]:
    """Run the stage pipeline. Returns (moves or None on fault, records, stalled, fault)."""
    value: StageValue = TaskContext(task.instructions, state)
    records: list[StageRecord] = []
    stalled: list[int] = []
    specs = overlay.specs()
    for j, stage in enumerate(overlay.stage_plan(task), 1):
        query = RetrievalQuery(stage.query, state.render(), stage.stage_tag)
        cands = retriever.top_k(query)
        for trigger_id in overlay.injected:
            cands = inject_emergency(task, trigger_id, cands, overlay, state, stage_tag=stage.stage_tag)
        ctx = SelectionContext(stage.stage_tag, value, specs, rng)
        try:
            spec = select_function(cands, policy, ctx, query)
        except SelectionFault as exc:
            return None, records, stalled, f"stage {j}: {exc}"
        in_digest = digest(value)
        try:
            try:
                out = execute_stage(spec, value)
            except EmptyCandidatesError as exc:
                # boxed-in pursuers hold position; staying is always legal
                stalled.extend(exc.pursuers)
                assert isinstance(value, MoveCandidates)
                patched = tuple(
                    c if c else (state.pursuers[i],) for i, c in enumerate(value.candidates)
                )
                out = execute_stage(spec, MoveCandidates(value.state, patched))
        except StageError as exc:
            records.append(StageRecord(j, stage.stage_tag, cands, spec.name, in_digest, None))
            return None, records, stalled, f"stage {j}: {exc}"
        records.append(StageRecord(j, stage.stage_tag, cands, spec.name, in_digest, digest(out)))
        value = out
    if not isinstance(value, ChosenMoves):
        return None, records, stalled, f"pipeline ended with {variant_name(value)}, not ChosenMoves"
    return value.moves, records, stalled, None


def run_step(
    state: GameState,
    task: TaskSpec,
    policy: Any,
    retriever: Retriever,
    overlay: Overlay | None = None,
    rng: random.Random | None = None,
    generator: EmergencyGenerator | None = None,
) -> tuple[GameState, StepRecord]:
    if outcome_of(state) is not None:
        raise ValueError("cannot step a finished game")
    overlay = overlay if overlay is not None else Overlay(retriever.base)
    rng = rng if rng is not None else random.Random(0)

    fired = []
    for trigger in task.emergency_triggers:
        if trigger.predicate(state):
            if trigger.trigger_id not in overlay.injected:
                inject_emergency(task, trigger.trigger_id, RankedCandidates(()), overlay, state, generator)
            fired.append(trigger.trigger_id)

    records: list[StageRecord] = []
    stalled: list[int] = []
    fault = None
    if hasattr(policy, "propose_moves"):
        # output-imitating policies skip the function pipeline
        moves = tuple(policy.propose_moves(state))
    else:
        moves, records, stalled, fault = _plan_moves(state, task, policy, retriever, overlay, rng)

    new = state
    proposals: list[GridPoint] = []
    verdicts: list[str] = []
    violations: list[int] = []
    if moves is not None:
        for i, target in enumerate(moves):
            proposals.append(target)
            if i in stalled:
                verdicts.append("stalled")
                continue
            new, verdict = apply_move(new, i, target)
            verdicts.append(verdict.value)
            if verdict is Verdict.ILLEGAL:
                violations.append(i)
                if violations_exceeded(new):
                    break

    evader_move = None
    if not violations_exceeded(new):
        evader_move = evader_policy_greedy(new)
        new, _ = apply_move(new, EVADER, evader_move)
    new = GameState(new.pursuers, new.evader, new.config, new.step_count + 1, new.violation_count)

    record = StepRecord(
        step=new.step_count,
        stages=tuple(records),
        proposals=tuple(proposals),
        verdicts=tuple(verdicts),
        evader_move=evader_move,
        violations=tuple(violations),
        stalled=tuple(stalled),
        fault=fault,
        emergencies=tuple(fired),
        state_after=new,
    )
    return new, record


def sample_start(board: BoardConfig, rng: random.Random) -> GameState:
    """Uniform distinct free cells, resampled while already captured."""
    cells = [c for c in all_cells(board) if not board.is_restricted(c)]
    n = board.num_pursuers + 1
    if len(cells) < n:
        raise ValueError("board too small for distinct start positions")
    for _ in range(10_000):
        picks = rng.sample(cells, n)
        state = GameState(tuple(picks[:-1]), picks[-1], board)
        if not is_captured(state):
            return state
    raise ValueError("could not sample an uncaptured start position")


def initial_state(task: TaskSpec, seed: int) -> GameState:
    if task.fixed_start is not None:
        return GameState(tuple(task.fixed_start[:-1]), task.fixed_start[-1], task.board)
    return sample_start(task.board, random.Random(seed))


@dataclass
class EpisodeTrace:
    seed: int
    task: TaskSpec
    policy: str
    initial: GameState
    steps: list[StepRecord]
    outcome: GameOutcome
    retriever_k: int = 5

    def header(self) -> dict:
        return {
            "type": "header",
            "seed": self.seed,
            "policy": self.policy,
            "retriever_k": self.retriever_k,
            "task": self.task.to_dict(),
            "initial": self.initial.to_dict(),
        }

    def to_jsonl(self) -> str:
        lines = [self.header()]
        lines += [{"type": "step", **s.to_dict()} for s in self.steps]
        lines.append({"type": "outcome", **self.outcome.to_dict()})
        return "".join(json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n" for rec in lines)

    def positions(self) -> list[GameState]:
        """Board state before the first step and after each step."""
        return [self.initial] + [s.state_after for s in self.steps]


def policy_name(policy: Any) -> str:
    return getattr(policy, "spec", type(policy).__name__)


def run_episode(
    task: TaskSpec,
    policy: Any,
    retriever: Retriever | None = None,
    seed: int = 0,
    generator: EmergencyGenerator | None = None,
) -> EpisodeTrace:
    retriever = retriever or Retriever(build_default_base())
    state = initial_state(task, seed)
    rng = random.Random(f"{seed}:select")
    overlay = Overlay(retriever.base)
    steps: list[StepRecord] = []
    start = state
    while (outcome := outcome_of(state)) is None:
        state, record = run_step(state, task, policy, retriever, overlay, rng, generator)
        steps.append(record)
    if outcome.kind is not OutcomeKind.SUCCESS:
        outcome = GameOutcome(outcome.kind, state.step_count)
    return EpisodeTrace(seed, task, policy_name(policy), start, steps, outcome, retriever.k)


def read_trace(lines: Iterable[str]) -> tuple[dict, list[dict], dict]:
    """Split a trace file into (header, step records, outcome record)."""
    header: dict | None = None
    steps: list[dict] = []
    outcome: dict | None = None
    for line in lines:
        if not line.strip():
            continue
        rec = json.loads(line)
        kind = rec.get("type")
        if kind == "header":
            header = rec
        elif kind == "step":
            steps.append(rec)
        elif kind == "outcome":
            outcome = rec
        else:
            raise ValueError(f"unknown trace record type {kind!r}")
    if header is None or outcome is None:
        raise ValueError("trace is missing its header or outcome record")
    return header, steps, outcome
