import json

import pytest
from hypothesis import given, settings, strategies as st

from sarcexplain.agent import (
    BUDGET_OUTCOME,
    CORRECTIVE_PROMPT,
    FINAL_ANSWER,
    FINAL_ANSWER_OUTCOME,
    SEARCH,
    Action,
    AgentStep,
    AgentTrace,
    InvalidJson,
    MissingKey,
    NoJsonFound,
    Outcome,
    ToolRegistry,
    UnknownAction,
    kg_compatibility_check,
    parse_action_blob,
    run_agent,
)
from sarcexplain.llm_client import Completion, EndpointConfig, GenerationConfig, LLMClient
from sarcexplain.mock_backend import MockEndpoint, scripted
from sarcexplain.search import FixtureSearch
from sarcexplain.verdicts import Label, parse_verdict

from conftest import FIXTURES

EP = EndpointConfig("http://mock/v1", "mock-chat")
CFG = GenerationConfig()

CRIME_THOUGHT_1 = (
    "The text uses a comparison to a low-quality, fictional crime show (Crime Patrol) to express "
    "disbelief or mockery of a real-life case. I need to check what Crime Patrol is to ensure the "
    "comparison is understood."
)
CRIME_TURN_1 = (
    f"Thought: {CRIME_THOUGHT_1}\nAction:\n```\n"
    '{"action": "Search", "action_input": "What is Crime Patrol?"}\n```\n'
    "Observation: (the model sometimes hallucinates this)"
)
CRIME_TURN_2 = (
    "Thought: The search result confirms that Crime Patrol is a well-known Indian crime show. "
    "The sarcasm lies in the unexpected and humorous comparison.\nAction:\n```\n"
    '{"action": "Final Answer", "action_input": "sarcastic. Explanation: The statement uses a '
    "negative comparison to Crime Patrol to mock the quality of the case, implying it is "
    'unrealistic or poorly handled."}\n```'
)


class RecordingModel:
    """Chat model stub that replays ``replies`` and records every bundle it is sent."""

    def __init__(self, replies):
        self.replies = list(replies)
        self.bundles = []

    def complete(self, bundle, cfg, ep):
        self.bundles.append(bundle)
        idx = min(len(self.bundles) - 1, len(self.replies) - 1)
        reply = self.replies[idx]
        if isinstance(reply, Exception):
            raise reply
        return Completion(reply, "stop", 1, ep.model_id)


def crime_tools():
    return ToolRegistry.with_search(FixtureSearch.from_path(FIXTURES / "search"))


# -- parse_action_blob ---------------------------------------------------------

def test_parse_search_blob():
    out = 'Thought: need info\nAction:\n{"action": "Search", "action_input": "What is Crime Patrol?"}'
    thought, action = parse_action_blob(out)
    assert thought == "need info"
    assert action == Action(SEARCH, "What is Crime Patrol?")


def test_parse_minimal_final_answer():
    thought, action = parse_action_blob('{"action": "Final Answer", "action_input": "not_sarcastic"}')
    assert thought == ""
    assert action == Action(FINAL_ANSWER, "not_sarcastic")


def test_parse_dual_blob_takes_first():
    out = (
        'Thought: two\n{"action": "Search", "action_input": "first"}\n'
        '{"action": "Final Answer", "action_input": "second"}'
    )
    warnings = []
    _, action = parse_action_blob(out, warnings)
    assert action == Action(SEARCH, "first")
    assert len(warnings) == 1 and "extra" in warnings[0]


def test_parse_single_quotes():
    _, action = parse_action_blob("{'action': 'Final Answer', 'action_input': \"it's sarcastic\"}")
    assert action == Action(FINAL_ANSWER, "it's sarcastic")
    _, action = parse_action_blob("Action: {'action': 'Search', 'action_input': 'Nek Minit meaning'}")
    assert action == Action(SEARCH, "Nek Minit meaning")


def test_parse_braces_inside_strings():
    out = '{"action": "Final Answer", "action_input": "a {curly} answer"}'
    assert parse_action_blob(out)[1].input == "a {curly} answer"


def test_parse_code_fence_and_case():
    out = 'Thought: x\n```json\n{"action": "search", "action_input": {"query": "q"}}\n```'
    thought, action = parse_action_blob(out)
    assert thought == "x"
    assert action == Action(SEARCH, "q")


def test_parse_skips_unparseable_leading_braces():
    out = 'I think {this} matters.\n{"action": "Search", "action_input": "q"}'
    assert parse_action_blob(out)[1] == Action(SEARCH, "q")


@pytest.mark.parametrize(
    "out,error",
    [
        ("just prose", NoJsonFound),
        ("", NoJsonFound),
        ("{not json at all}", InvalidJson),
        ('{"action": "Search"}', MissingKey),
        ('{"action_input": "q"}', MissingKey),
        ('{"action": "Calculator", "action_input": "1+1"}', UnknownAction),
    ],
)
def test_parse_errors(out, error):
    with pytest.raises(error):
        parse_action_blob(out)


# -- run_agent -------------------------------------------------------------------

def test_crime_patrol_episode(in_sample):
    model = RecordingModel([CRIME_TURN_1, CRIME_TURN_2])
    trace = run_agent(in_sample, crime_tools(), model, EP, CFG)
    assert trace.outcome.kind == FINAL_ANSWER_OUTCOME
    assert [s.action.name for s in trace.steps] == [SEARCH, FINAL_ANSWER]
    assert trace.steps[0].action.input == "What is Crime Patrol?"
    assert trace.steps[0].thought == CRIME_THOUGHT_1
    assert "longest-running reality crime television series" in trace.steps[0].observation
    assert trace.steps[1].observation == ""
    assert "negative comparison" in trace.final_answer
    verdict = parse_verdict(trace.final_answer, "kg")
    assert verdict.label is Label.SARCASTIC
    assert verdict.explanation.startswith("The statement uses a negative comparison")

    # the second prompt holds the observation, but not the hallucinated one
    second = model.bundles[1].messages
    assert second[-1].content.startswith("Observation: Crime Patrol, the iconic")
    assert "hallucinates" not in second[-2].content


def test_crime_patrol_over_http(in_sample):
    mock = MockEndpoint(chat=scripted([CRIME_TURN_1, CRIME_TURN_2]))
    client = LLMClient(transport=mock.transport())
    trace = run_agent(in_sample, crime_tools(), client, EP, CFG)
    assert "negative comparison" in trace.final_answer
    assert mock.calls == 2


def test_immediate_final_answer(au_sample):
    model = RecordingModel(['{"action": "Final Answer", "action_input": "not_sarcastic"}'])
    trace = run_agent(au_sample, {}, model, EP, CFG)
    assert len(trace.steps) == 1
    assert trace.outcome == Outcome.final_answer("not_sarcastic")
    assert trace.turns == 1


def test_prose_twice_is_protocol_failure(au_sample):
    model = RecordingModel(["I believe this is sarcastic.", "Still no blob."])
    trace = run_agent(au_sample, crime_tools(), model, EP, CFG)
    assert trace.outcome == Outcome.protocol_failure("no action blob")
    assert trace.failed and trace.steps == ()
    assert model.bundles[1].messages[-1].content == CORRECTIVE_PROMPT


def test_one_malformed_reply_recovers(au_sample):
    model = RecordingModel(["prose", '{"action": "Final Answer", "action_input": "need_context"}'])
    trace = run_agent(au_sample, {}, model, EP, CFG)
    assert trace.final_answer == "need_context"
    assert trace.turns == 2


def test_invalid_blob_twice(au_sample):
    model = RecordingModel(['{"action": "Dance", "action_input": "x"}'])
    trace = run_agent(au_sample, {}, model, EP, CFG)
    assert trace.failed
    assert trace.outcome.detail.startswith("invalid action blob")


def test_budget_exceeded(au_sample):
    model = RecordingModel(['Thought: again\n{"action": "Search", "action_input": "What is Crime Patrol?"}'])
    trace = run_agent(au_sample, crime_tools(), model, EP, CFG, max_steps=3)
    assert trace.outcome.kind == BUDGET_OUTCOME
    assert len(trace.steps) == 3
    assert all(s.observation for s in trace.steps)


def test_tool_error_once_then_failure(au_sample):
    def broken(query):
        raise RuntimeError("network down")

    search = '{"action": "Search", "action_input": "q"}'
    final = '{"action": "Final Answer", "action_input": "need_context"}'
    trace = run_agent(au_sample, {SEARCH: broken}, RecordingModel([search, final]), EP, CFG)
    assert trace.steps[0].observation == "Error: network down"
    assert trace.final_answer == "need_context"

    trace = run_agent(au_sample, {SEARCH: broken}, RecordingModel([search]), EP, CFG)
    assert trace.failed and trace.outcome.detail.startswith("tool error")
    assert len(trace.steps) == 2


def test_missing_tool_is_error_observation(au_sample):
    model = RecordingModel(['{"action": "Search", "action_input": "q"}', '{"action": "Final Answer", "action_input": "x"}'])
    trace = run_agent(au_sample, {}, model, EP, CFG)
    assert trace.steps[0].observation.startswith("Error:")


def test_client_error_is_protocol_failure(au_sample):
    trace = run_agent(au_sample, {}, RecordingModel([RuntimeError("boom")]), EP, CFG)
    assert trace.failed and "client error: boom" in trace.outcome.detail


def test_max_steps_validated(au_sample):
    with pytest.raises(ValueError):
        run_agent(au_sample, {}, RecordingModel(["x"]), EP, CFG, max_steps=0)


def test_transcript_prefix_monotonic(in_sample):
    search = 'Thought: t\n{"action": "Search", "action_input": "What is Crime Patrol?"} trailing'
    model = RecordingModel(["prose", search, search, '{"action": "Final Answer", "action_input": "x"}'])
    run_agent(in_sample, crime_tools(), model, EP, CFG)
    seqs = [b.messages for b in model.bundles]
    assert len(seqs) == 4
    for before, after in zip(seqs, seqs[1:]):
        assert len(after) > len(before)
        assert after[: len(before)] == before


def test_trace_roundtrip(in_sample):
    trace = run_agent(in_sample, crime_tools(), RecordingModel([CRIME_TURN_1, CRIME_TURN_2]), EP, CFG)
    data = json.loads(json.dumps(trace.to_dict()))
    assert AgentTrace.from_dict(data) == trace
    failed = AgentTrace("x", (AgentStep("t", Action(SEARCH, "q"), "obs", ("w",)),), Outcome.protocol_failure("r"), 3)
    assert AgentTrace.from_dict(json.loads(json.dumps(failed.to_dict()))) == failed


_replies = st.lists(
    st.sampled_from(
        [
            "prose",
            '{"action": "Search", "action_input": "What is Crime Patrol?"}',
            '{"action": "Search", "action_input": "unknown"}',
            '{"action": "Final Answer", "action_input": "sarcastic. Explanation: x"}',
            "{'action': 'Bogus', 'action_input': 1}",
        ]
    ),
    min_size=1,
    max_size=12,
)


@settings(max_examples=60, deadline=None)
@given(_replies, st.integers(min_value=1, max_value=6))
def test_loop_terminates_within_budget(replies, max_steps):
    from sarcexplain.dataset_io import Sample, Variety

    sample = Sample("h", "text", Variety.INDIAN, "sarcastic", "gold")
    model = RecordingModel(replies)
    trace = run_agent(sample, crime_tools(), model, EP, CFG, max_steps=max_steps)
    assert len(trace.steps) <= max_steps
    assert trace.turns <= 2 * max_steps
    if trace.outcome.kind == FINAL_ANSWER_OUTCOME:
        assert trace.steps[-1].action.name == FINAL_ANSWER
    for step in trace.steps:
        if step.action.name != FINAL_ANSWER:
            assert step.observation


# -- compatibility -------------------------------------------------------------

def _traces(failures, n):
    ok = Outcome.final_answer("x")
    bad = Outcome.protocol_failure("no action blob")
    return [AgentTrace(str(i), (), bad if i < failures else ok) for i in range(n)]


def test_compatibility_all_failed():
    assert not kg_compatibility_check(_traces(150, 150)).compatible


def test_compatibility_none_failed():
    assert kg_compatibility_check(_traces(0, 150)).compatible


def test_compatibility_80_of_150():
    verdict = kg_compatibility_check(_traces(80, 150), threshold=0.5)
    assert not verdict.compatible
    assert verdict.failures == 80 and verdict.failure_rate == pytest.approx(80 / 150)


def test_compatibility_boundary():
    assert kg_compatibility_check(_traces(75, 150)).compatible
    assert kg_compatibility_check([]).compatible
