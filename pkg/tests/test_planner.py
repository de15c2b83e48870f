from __future__ import annotations

import random
from dataclasses import replace

import pytest
from hypothesis import given, settings

from logic_distill.function_base import (
    ChosenMoves,
    DistanceTable,
    EmptyCandidatesError,
    MoveCandidates,
    TaskContext,
    VariantMismatchError,
    compute_distances,
    filter_restricted_cells,
    filter_valid_moves,
    select_best_move,
)
from logic_distill.grid_world import BoardConfig, GameState, GridPoint, OutcomeKind, Rect
from logic_distill.planner import (
    TEMPLATES,
    TRIGGERS,
    EmergencyTemplate,
    Overlay,
    SelectionContext,
    SelectionFault,
    StageDescriptor,
    TaskSpec,
    TemplateGenerator,
    UnknownTriggerError,
    execute_stage,
    inject_emergency,
    read_trace,
    run_episode,
    run_step,
    select_function,
)
from logic_distill.policies import FixedMovePolicy, NoisyPolicy, OraclePolicy
from logic_distill.retriever import RankedCandidates, RetrievalQuery

from .conftest import CENTER_AREA, SAMPLE_EVADER, SAMPLE_PURSUERS, make_state, states

EMERGENCY = (TRIGGERS["restricted_area"],)


def restricted_task(**kw) -> TaskSpec:
    return TaskSpec(board=BoardConfig(restricted_area=CENTER_AREA), emergency_triggers=EMERGENCY, **kw)


class Scripted:
    """Selector that follows a stage -> name table and defers to the oracle otherwise."""

    def __init__(self, table):
        self.table = table

    def select(self, q, candidates, ctx):
        return self.table.get(ctx.stage_tag) or OraclePolicy().select(q, candidates, ctx)


class TestSelectFunction:
    def _ctx(self, base, tag, state):
        return SelectionContext(tag, TaskContext("x", state), {s.name: s for s in base})

    def test_oracle_stage_two(self, base, retriever, sample_state):
        cands = retriever.top_k(RetrievalQuery("anything"))
        assert select_function(cands, OraclePolicy(), self._ctx(base, 2.0, sample_state)).name == "filter_valid_moves"

    def test_single_candidate_bypasses_policy(self, base, sample_state):
        class Boom:
            def select(self, *a):
                raise AssertionError("policy consulted")

        cands = RankedCandidates((("select_best_move", 0.2),))
        assert select_function(cands, Boom(), self._ctx(base, 1.0, sample_state)).name == "select_best_move"

    def test_epsilon_one_never_picks_oracle(self, base, retriever, sample_state):
        cands = retriever.top_k(RetrievalQuery("anything"))
        ctx = replace(self._ctx(base, 2.0, sample_state), rng=random.Random(3))
        picks = [select_function(cands, NoisyPolicy(1.0), ctx).name for _ in range(1000)]
        assert "filter_valid_moves" not in picks

    def test_out_of_set_name_is_a_fault(self, base, sample_state):
        cands = RankedCandidates((("compute_distances", 0.5), ("select_best_move", 0.1)))
        with pytest.raises(SelectionFault):
            select_function(cands, Scripted({1.0: "filter_valid_moves"}), self._ctx(base, 1.0, sample_state))

    def test_empty_candidates(self, base, sample_state):
        with pytest.raises(ValueError):
            select_function(RankedCandidates(()), OraclePolicy(), self._ctx(base, 1.0, sample_state))


class TestExecuteStage:
    def test_compute_distances_on_sample_start(self, base, sample_state):
        out = execute_stage(base["compute_distances"], TaskContext("x", sample_state))
        assert isinstance(out, DistanceTable) and out.distances == (27, 7, 19)

    def test_empty_move_candidates(self, base, sample_state):
        with pytest.raises(EmptyCandidatesError):
            execute_stage(base["select_best_move"], MoveCandidates(sample_state, ((), (), ())))

    def test_variant_mismatch_names_both_sides(self, base, sample_state):
        with pytest.raises(VariantMismatchError, match="MoveCandidates.*TaskContext"):
            execute_stage(base["select_best_move"], TaskContext("x", sample_state))

    def test_chain_equals_manual_composition(self, base, sample_state):
        v = TaskContext("x", sample_state)
        for name in ("compute_distances", "filter_valid_moves", "select_best_move"):
            v = execute_stage(base[name], v)
        assert v == select_best_move(filter_valid_moves(compute_distances(TaskContext("x", sample_state))))


class TestRunStep:
    def test_oracle_step_is_violation_free(self, retriever, sample_state):
        new, rec = run_step(sample_state, TaskSpec(), OraclePolicy(), retriever)
        assert new.violation_count == 0 and rec.violations == () and rec.fault is None
        assert [s.selected for s in rec.stages] == ["compute_distances", "filter_valid_moves", "select_best_move"]
        assert new.step_count == 1

    def test_finished_game_rejected(self, retriever):
        captured = make_state([(6, 5), (6, 7), (5, 6)], (6, 6))
        with pytest.raises(ValueError):
            run_step(captured, TaskSpec(), OraclePolicy(), retriever)

    def test_wrong_variant_is_a_fault_not_a_violation(self, retriever, sample_state):
        new, rec = run_step(sample_state, TaskSpec(), Scripted({3.0: "compute_distances"}), retriever)
        assert rec.fault is not None and "compute_distances" in rec.fault
        assert new.pursuers == sample_state.pursuers
        assert new.violation_count == 0
        assert rec.evader_move is not None and rec.proposals == ()
        assert rec.stages[-1].selected == "compute_distances" and rec.stages[-1].output_digest is None

    def test_selection_fault_stalls_step(self, retriever, sample_state):
        new, rec = run_step(sample_state, TaskSpec(), Scripted({1.0: "nonexistent"}), retriever)
        assert rec.fault is not None and new.pursuers == sample_state.pursuers

    def test_selected_names_always_among_candidates(self, retriever, sample_state):
        trace = run_episode(TaskSpec(), NoisyPolicy(0.3), retriever, seed=11)
        for step in trace.steps:
            for st in step.stages:
                assert st.selected in st.candidates

    def test_stalled_pursuer_holds_without_violation(self, retriever):
        board = BoardConfig(width=1, height=6, restricted_area=Rect(0, 1, 0, 3), strict_moves=True)
        state = GameState((GridPoint(0, 0), GridPoint(0, 4), GridPoint(0, 5)), GridPoint(0, 5), board)
        task = TaskSpec(board=board, emergency_triggers=EMERGENCY)
        new, rec = run_step(state, task, OraclePolicy(), retriever)
        assert rec.stalled == (0,)
        assert rec.verdicts[0] == "stalled"
        assert new.pursuers[0] == GridPoint(0, 0)
        assert new.violation_count == 0


class TestRunEpisode:
    def test_sample_start_succeeds(self, retriever):
        task = TaskSpec(fixed_start=SAMPLE_PURSUERS + (SAMPLE_EVADER,))
        trace = run_episode(task, OraclePolicy(), retriever)
        assert trace.outcome.kind is OutcomeKind.SUCCESS
        assert 0 < trace.outcome.steps <= 100
        assert trace.steps[-1].state_after.violation_count == 0

    def test_zero_step_limit(self, retriever):
        trace = run_episode(TaskSpec(board=BoardConfig(step_limit=0)), OraclePolicy(), retriever, seed=4)
        assert trace.outcome.kind is OutcomeKind.FAILURE_NO_VIOLATION and trace.steps == []

    def test_zero_step_limit_but_captured_at_start(self, retriever):
        task = TaskSpec(board=BoardConfig(step_limit=0), fixed_start=(GridPoint(6, 5), GridPoint(6, 7), GridPoint(5, 6), GridPoint(6, 6)))
        trace = run_episode(task, OraclePolicy(), retriever)
        assert trace.outcome.kind is OutcomeKind.SUCCESS and trace.outcome.steps == 0

    def test_always_illegal_policy(self, retriever):
        trace = run_episode(TaskSpec(), FixedMovePolicy(GridPoint(-1, -1)), retriever, seed=2)
        assert trace.outcome.kind is OutcomeKind.FAILURE_WITH_VIOLATION
        illegal = sum(v == "illegal" for s in trace.steps for v in s.verdicts)
        assert illegal == BoardConfig().violation_limit + 1
        assert len(trace.steps) == 3

    def test_deterministic_trace(self, retriever):
        a = run_episode(restricted_task(), NoisyPolicy(0.2), retriever, seed=99).to_jsonl()
        b = run_episode(restricted_task(), NoisyPolicy(0.2), retriever, seed=99).to_jsonl()
        assert a == b

    def test_different_seeds_differ(self, retriever):
        a = run_episode(TaskSpec(), OraclePolicy(), retriever, seed=1)
        b = run_episode(TaskSpec(), OraclePolicy(), retriever, seed=2)
        assert a.initial != b.initial

    def test_stage_count_conservation(self, retriever):
        plain = run_episode(TaskSpec(), OraclePolicy(), retriever, seed=5)
        assert all(len(s.stages) == 3 for s in plain.steps)
        emerg = run_episode(restricted_task(), OraclePolicy(), retriever, seed=5)
        assert all(len(s.stages) == 4 for s in emerg.steps)
        assert all(s.stages[2].selected == "filter_restricted_cells" for s in emerg.steps)

    def test_trace_file_layout(self, retriever):
        trace = run_episode(TaskSpec(), OraclePolicy(), retriever, seed=5)
        header, steps, outcome = read_trace(trace.to_jsonl().splitlines())
        assert header["seed"] == 5 and header["policy"] == "oracle"
        assert TaskSpec.from_dict(header["task"]) == trace.task
        assert len(steps) == len(trace.steps)
        assert outcome["kind"] == trace.outcome.kind.value

    def test_task_round_trip_with_emergency(self):
        task = restricted_task(fixed_start=SAMPLE_PURSUERS + (SAMPLE_EVADER,))
        assert TaskSpec.from_dict(task.to_dict()) == task

    def test_task_validation(self):
        with pytest.raises(ValueError):
            TaskSpec(stage_plan=())
        with pytest.raises(ValueError):
            TaskSpec(stage_plan=(StageDescriptor(2.0, "b"), StageDescriptor(1.0, "a")))
        with pytest.raises(ValueError):
            TaskSpec(fixed_start=(GridPoint(0, 0),))


class TestEmergency:
    def test_restricted_area_is_excluded_downstream(self, retriever):
        state = make_state([(7, 8), (12, 13), (0, 0)], (15, 15), restricted_area=CENTER_AREA)
        new, rec = run_step(state, restricted_task(), OraclePolicy(), retriever)
        assert rec.emergencies == ("restricted_area",)
        assert [s.stage_tag for s in rec.stages] == [1.0, 2.0, 2.5, 3.0]
        for p in new.pursuers:
            assert not CENTER_AREA.contains(p)

    def test_injection_is_idempotent(self, base, retriever):
        state = make_state([(0, 0), (1, 1), (2, 2)], (15, 15), restricted_area=CENTER_AREA)
        overlay = Overlay(base)
        few = RankedCandidates((("compute_distances", 0.4),))
        once = inject_emergency(restricted_task(), "restricted_area", few, overlay, state)
        twice = inject_emergency(restricted_task(), "restricted_area", once, overlay, state)
        assert once == twice
        assert once.names() == ["compute_distances", "filter_restricted_cells"]
        assert once.injected == ("filter_restricted_cells",)
        assert list(overlay.functions) == ["filter_restricted_cells"]

    def test_base_is_never_mutated(self, base, retriever):
        before = base.dumps()
        run_episode(restricted_task(), OraclePolicy(), retriever, seed=3)
        assert base.dumps() == before
        assert retriever.base is base

    def test_overlay_function_is_bound_to_area(self, base):
        area = Rect(0, 0, 1, 1)
        state = make_state([(3, 3), (5, 5), (6, 6)], (15, 15), restricted_area=area)
        overlay = Overlay(base)
        task = TaskSpec(board=state.config, emergency_triggers=EMERGENCY)
        inject_emergency(task, "restricted_area", RankedCandidates(()), overlay, state)
        mc = MoveCandidates(state, ((GridPoint(0, 0), GridPoint(2, 2)), (), ()))
        assert overlay.resolve("filter_restricted_cells").impl(mc).candidates[0] == (GridPoint(2, 2),)

    def test_unknown_trigger(self, base):
        state = make_state([(0, 0), (1, 1), (2, 2)], (15, 15))
        with pytest.raises(UnknownTriggerError):
            inject_emergency(TaskSpec(), "whirlpool", RankedCandidates(()), Overlay(base), state)

    def test_no_triggers_means_plain_retriever_output(self, retriever):
        trace = run_episode(TaskSpec(), OraclePolicy(), retriever, seed=8)
        for step in trace.steps:
            assert step.emergencies == ()
            for st in step.stages:
                q = RetrievalQuery(TaskSpec().stage_plan[st.stage_index - 1].query, "", st.stage_tag)
                assert st.candidates.injected == ()
                assert sorted(st.candidates.names()) == sorted(retriever.top_k(q).names())

    def test_extra_templates_do_not_change_plain_episodes(self, retriever):
        extra = dict(TEMPLATES)
        extra["avoid_whirlpool"] = EmergencyTemplate("avoid_whirlpool", StageDescriptor(2.7, "avoid whirlpools"), lambda s, b: None)
        plain = run_episode(TaskSpec(), OraclePolicy(), retriever, seed=21)
        with_reg = run_episode(TaskSpec(), OraclePolicy(), retriever, seed=21, generator=TemplateGenerator(extra))
        assert plain.to_jsonl() == with_reg.to_jsonl()


def monolithic_moves(state: GameState) -> tuple[GridPoint, ...]:
    v = filter_valid_moves(compute_distances(TaskContext("x", state)))
    if state.config.restricted_area is not None:
        v = filter_restricted_cells(v, state.config.restricted_area)
    return select_best_move(v).moves


@settings(max_examples=200, deadline=None)
@given(states(restricted=False) | states(restricted=True))
def test_step_moves_equal_direct_composition(retriever, state):
    from logic_distill.grid_world import is_captured

    if is_captured(state):
        return
    task = restricted_task() if state.config.restricted_area is not None else TaskSpec()
    _, rec = run_step(state, task, OraclePolicy(), retriever)
    assert rec.proposals == monolithic_moves(state)
    assert isinstance(ChosenMoves(state, rec.proposals), ChosenMoves)
