from __future__ import annotations

import json

import pytest

from sqlmend.actions import AddWhere, QA, parse_actions, serialize_actions
from sqlmend.detector import UNRESOLVED_SUB_QUESTION, load_rules
from sqlmend.orchestrator import (
    Demonstration,
    RefinementConfig,
    ScriptedAgent,
    build_context,
    reduce_schema,
    render_schema,
    resolve_qa,
    run,
)

QUESTION = "Who wrote the episode that aired first?"

MISMATCH_ACTIONS = ('add_select(written_by)\nadd_from(episode)\n'
                    'add_where(written_by, =, "todd casey")')
FIXED_ACTIONS = ('add_select(written_by)\nadd_from(episode)\n'
                 'add_where(written_by, =, "Todd Casey")')
CLEAN_ACTIONS = "add_select(title)\nadd_from(episode)"


def test_first_shot_approved(episode_catalog, episode_index):
    agent = ScriptedAgent({QUESTION: [CLEAN_ACTIONS]})
    trace = run(QUESTION, episode_catalog, episode_index, (), agent)
    assert len(trace.iterations) == 1
    assert trace.exhausted is False
    assert trace.fallback_applied is False
    assert trace.iterations[0][1].approved


def test_mismatch_then_fix(episode_catalog, episode_index):
    agent = ScriptedAgent({QUESTION: [MISMATCH_ACTIONS, FIXED_ACTIONS]})
    trace = run(QUESTION, episode_catalog, episode_index, (), agent)
    assert len(trace.iterations) == 2
    assert trace.exhausted is False
    final_where = trace.final.conditional_actions()[0]
    assert final_where.value.value == "Todd Casey"
    first_feedback = trace.iterations[0][1]
    assert not first_feedback.approved
    assert first_feedback.mismatches
    top = first_feedback.mismatches[0][1].candidates[0]
    assert (top.raw_value, top.score) == ("Todd Casey", 1.0)


def test_never_converging_agent_falls_back(episode_catalog, episode_index):
    agent = ScriptedAgent({QUESTION: [MISMATCH_ACTIONS]})  # repeats forever
    config = RefinementConfig(max_iterations=3)
    trace = run(QUESTION, episode_catalog, episode_index, (), agent, config)
    assert len(trace.iterations) == 4
    assert trace.exhausted is True
    assert trace.fallback_applied is True
    initial = trace.iterations[0][0]
    assert [serialize_actions_for(a) for a in trace.final.conditional_actions()] == \
        [serialize_actions_for(a) for a in initial.conditional_actions()]


def serialize_actions_for(action) -> str:
    from sqlmend.actions import ActionSequence

    return serialize_actions(ActionSequence(actions=[action]))


def test_refine_not_called_after_approval(episode_catalog, episode_index):
    calls = {"generate": 0, "refine": 0}

    class CountingAgent(ScriptedAgent):
        def generate(self, ctx):
            calls["generate"] += 1
            return super().generate(ctx)

        def refine(self, ctx, prior, feedback):
            calls["refine"] += 1
            return super().refine(ctx, prior, feedback)

    agent = CountingAgent({QUESTION: [CLEAN_ACTIONS]})
    run(QUESTION, episode_catalog, episode_index, (), agent)
    assert calls == {"generate": 1, "refine": 0}


def test_parse_failure_consumes_an_iteration(episode_catalog, episode_index):
    agent = ScriptedAgent({QUESTION: ["complete garbage ((", CLEAN_ACTIONS]})
    trace = run(QUESTION, episode_catalog, episode_index, (), agent)
    assert len(trace.iterations) == 2
    assert trace.iterations[0][1].parse_errors
    assert not trace.iterations[0][1].approved
    assert trace.iterations[1][1].approved


def test_agent_failure_yields_exhausted_trace(episode_catalog, episode_index):
    trace = run(QUESTION, episode_catalog, episode_index, (), ScriptedAgent({}))
    assert trace.exhausted is True
    assert trace.iterations == []
    assert trace.final.actions == []


def test_detector_findings_block_approval(episode_catalog, episode_index):
    bad = "add_select(flavor)\nadd_from(episode)"
    agent = ScriptedAgent({QUESTION: [bad, CLEAN_ACTIONS]})
    trace = run(QUESTION, episode_catalog, episode_index, (), agent)
    assert len(trace.iterations) == 2
    assert trace.iterations[0][1].findings[0].kind == "UnknownColumn"


def test_ablation_flags_disable_tools(episode_catalog, episode_index):
    bad = 'add_select(flavor)\nadd_from(episode)\nadd_where(title, =, "nope")'
    agent = ScriptedAgent({QUESTION: [bad]})
    config = RefinementConfig(use_retriever=False, use_detector=False)
    trace = run(QUESTION, episode_catalog, episode_index, (), agent, config)
    assert len(trace.iterations) == 1
    assert trace.iterations[0][1].approved  # nothing inspected, nothing blocks


def test_dbms_feedback_mode(episode_catalog, episode_index):
    bad = "add_select(title)\nadd_from(episodes)"
    agent = ScriptedAgent({QUESTION: [bad, CLEAN_ACTIONS]})
    config = RefinementConfig(dbms_feedback=True, use_detector=False)
    trace = run(QUESTION, episode_catalog, episode_index, (), agent, config)
    assert trace.iterations[0][1].findings[0].kind == "UnknownTable"
    assert trace.iterations[1][1].approved


def test_exclusions_accumulate_and_reduce_schema(episode_catalog, episode_index):
    wrong_column_then_right = [
        'add_select(written_by)\nadd_from(episode)\nadd_where(directed_by, =, "todd casey")',
        MISMATCH_ACTIONS,
        FIXED_ACTIONS,
    ]
    agent = ScriptedAgent({QUESTION: wrong_column_then_right})
    trace = run(QUESTION, episode_catalog, episode_index, (), agent)
    assert trace.exclusion_history == ["episode.directed_by", "episode.written_by"]


def test_exclusion_monotonicity(episode_catalog, episode_index):
    agent = ScriptedAgent({QUESTION: [MISMATCH_ACTIONS]})
    trace = run(QUESTION, episode_catalog, episode_index, (), agent,
                RefinementConfig(max_iterations=4))
    # same column mismatches every iteration but is excluded exactly once
    assert trace.exclusion_history == ["episode.written_by"]


def test_render_schema_excludes_columns(episode_catalog):
    full = render_schema(episode_catalog)
    assert "written_by" in full and "directed_by" in full
    reduced = render_schema(episode_catalog,
                            frozenset({("episode", "written_by")}))
    assert "written_by" not in reduced
    assert "directed_by" in reduced


def test_reduce_schema_identity_on_empty_set(episode_catalog):
    ctx = build_context(episode_catalog, QUESTION)
    assert reduce_schema(ctx, set()) == ctx


def test_reduce_schema_keeps_emptied_table_header(episode_catalog):
    ctx = build_context(episode_catalog, QUESTION)
    all_network = {("network", "id"), ("network", "name")}
    reduced = reduce_schema(ctx, all_network)
    assert "table network:" in reduced.schema_view
    assert "name (TEXT)" not in reduced.schema_view


def test_resolve_qa_without_qa_is_identity(episode_catalog, episode_index):
    seq = parse_actions(CLEAN_ACTIONS).sequence
    ctx = build_context(episode_catalog, QUESTION)
    resolved, findings = resolve_qa(seq, ScriptedAgent({}), ctx)
    assert findings == []
    assert resolved == parse_actions(CLEAN_ACTIONS).sequence


def test_resolve_qa_embeds_scripted_child(episode_catalog, episode_index):
    seq = parse_actions('qa("which episodes aired in 2009")\n'
                        "add_select(title)\nadd_from(episode)").sequence
    agent = ScriptedAgent({
        "which episodes aired in 2009":
            ['add_select(id)\nadd_from(episode)\nadd_where(air_date, LIKE, "2009%")'],
    })
    ctx = build_context(episode_catalog, QUESTION)
    resolved, findings = resolve_qa(seq, agent, ctx)
    assert findings == []
    qa_action = resolved.actions[0]
    assert isinstance(qa_action, QA)
    assert len(qa_action.resolved.actions) == 3
    assert qa_action.resolved.id == "s.0.qa"


def test_resolve_qa_depth_cap(episode_catalog):
    agent = ScriptedAgent({
        "outer": ['qa("inner")'],
        "inner": ['qa("innermost")'],
        "innermost": [CLEAN_ACTIONS],
    })
    seq = parse_actions('qa("outer")').sequence
    ctx = build_context(episode_catalog, QUESTION)
    _, findings = resolve_qa(seq, agent, ctx, max_depth=2)
    assert [f.kind for f in findings] == [UNRESOLVED_SUB_QUESTION]


def test_replay_determinism_byte_identical_traces(episode_catalog, episode_index):
    def one_run():
        agent = ScriptedAgent({QUESTION: [MISMATCH_ACTIONS, FIXED_ACTIONS]})
        trace = run(QUESTION, episode_catalog, episode_index, (), agent)
        return json.dumps(trace.to_json_dict(), sort_keys=True)

    assert one_run() == one_run()


def test_config_bounds():
    with pytest.raises(ValueError):
        RefinementConfig(max_iterations=11)
    with pytest.raises(ValueError):
        RefinementConfig(max_iterations=-1)


def test_zero_max_iterations_single_shot(episode_catalog, episode_index):
    agent = ScriptedAgent({QUESTION: [MISMATCH_ACTIONS]})
    trace = run(QUESTION, episode_catalog, episode_index, (), agent,
                RefinementConfig(max_iterations=0))
    assert len(trace.iterations) == 1
    assert trace.exhausted is True
    assert trace.fallback_applied is False  # final already is iteration 0


def test_rules_flow_through_run(episode_catalog, episode_index):
    rules = load_rules([{"rule_id": "no-null-airdates", "kind": "require_null_filter",
                         "params": {"column": "episode.air_date"}}])
    flagged = "add_select(air_date)\nadd_from(episode)"
    guarded = "add_select(air_date)\nadd_from(episode)\nadd_where(air_date, !=, NULL)"
    agent = ScriptedAgent({QUESTION: [flagged, guarded]})
    trace = run(QUESTION, episode_catalog, episode_index, rules, agent)
    assert trace.iterations[0][1].findings[0].kind == "CustomRuleViolation"
    assert trace.iterations[1][1].approved


def test_matched_literal_pinned_to_raw_cell(episode_catalog, episode_index):
    agent = ScriptedAgent({QUESTION: [FIXED_ACTIONS]})
    trace = run(QUESTION, episode_catalog, episode_index, (), agent)
    where = next(a for a in trace.final.actions if isinstance(a, AddWhere))
    assert where.value.value == "Todd Casey"


def test_demonstrations_are_carried_in_context(episode_catalog):
    demo = Demonstration(schema="table t: x (TEXT)", question="q", actions="add_select(x)")
    ctx = build_context(episode_catalog, QUESTION, demonstrations=(demo,))
    assert ctx.demonstrations == (demo,)


def test_feedback_render_mentions_candidates(episode_catalog, episode_index):
    agent = ScriptedAgent({QUESTION: [MISMATCH_ACTIONS]})
    trace = run(QUESTION, episode_catalog, episode_index, (), agent,
                RefinementConfig(max_iterations=0))
    text = trace.iterations[0][1].render()
    assert "matches no database entry" in text
    assert "'Todd Casey' (1.00)" in text
