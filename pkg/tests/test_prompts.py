import pytest

from sarcexplain.prompts import (
    OriginUnsupportedVariety,
    Strategy,
    build_kg_system_prompt,
    build_prompt,
    few_shot_exemplars,
)

from conftest import GOLDEN

PMP_HEADERS = [
    "1. Comprehension of Context/Understanding:",
    "2. General Pragmatic Analysis:",
    "3. Preliminary Judgment:",
    "4. Comprehension of Preliminary Judgment/Context:",
    "5. Specific Pragmatic Analysis/Reassessment:",
    "6. After completing your analysis, perform one of the tasks.",
]


def test_five_exemplars_in_order():
    ex = few_shot_exemplars()
    assert len(ex) == 5
    assert ex[0].text.startswith("I got the greatest news today")
    assert ex[4].text.startswith("I am on seventh heaven")
    assert all(e.explanation.startswith("sarcastic.") for e in ex)


def test_exemplars_are_a_copy():
    few_shot_exemplars().clear()
    assert len(few_shot_exemplars()) == 5


def test_origin_fills_variety(au_sample, in_sample):
    au = build_prompt(Strategy.ORIGIN, au_sample).messages[0].content
    assert au.startswith("This text is from Australian subreddit")
    assert build_prompt("origin", in_sample).messages[0].content.startswith("This text is from Indian subreddit")


def test_origin_rejects_standard_american(us_sample):
    with pytest.raises(OriginUnsupportedVariety):
        build_prompt(Strategy.ORIGIN, us_sample)


@pytest.mark.parametrize("strategy", list(Strategy))
def test_two_messages_with_text_line(strategy, au_sample):
    bundle = build_prompt(strategy, au_sample)
    assert [m.role for m in bundle.messages] == ["system", "user"]
    user_text = [m for m in bundle.messages if m.content.startswith("Text: ")]
    assert len(user_text) == 1
    assert user_text[0].content == "Text: " + au_sample.text
    assert bundle.strategy is strategy


def test_pmp_has_six_step_headers(au_sample):
    system = build_prompt(Strategy.PMP, au_sample).messages[0].content
    for header in PMP_HEADERS:
        assert header in system
    assert "Specific Pragmatic Analysis/Reassessment" in system
    positions = [system.index(h) for h in PMP_HEADERS]
    assert positions == sorted(positions)


def test_few_contains_exemplars_in_order(au_sample):
    system = build_prompt(Strategy.FEW, au_sample).messages[0].content
    positions = [system.index(e.text) for e in few_shot_exemplars()]
    assert positions == sorted(positions)


def test_kg_system_prompt():
    text = build_kg_system_prompt()
    assert '{"action": "Final Answer"' in text
    assert text.endswith("Thought:")
    tools = [ln for ln in text.splitlines() if ln.startswith("- ") and ": Tool for" in ln]
    assert len(tools) == 1 and tools[0].startswith("- Search:")
    assert 'Valid "action" values are: "Final Answer" or "Search".' in text
    assert "Provide only ONE action per $JSON_BLOB" in text


def test_build_prompt_is_pure(au_sample):
    assert build_prompt(Strategy.FEW, au_sample) == build_prompt(Strategy.FEW, au_sample)
    assert build_prompt(Strategy.PMP, au_sample).render() == build_prompt(Strategy.PMP, au_sample).render()


def test_strategy_parse():
    assert Strategy.parse("PMP") is Strategy.PMP
    with pytest.raises(ValueError):
        Strategy.parse("cot")


@pytest.mark.parametrize(
    "golden,strategy,sample_fixture",
    [
        ("zero.txt", Strategy.ZERO, "au_sample"),
        ("few.txt", Strategy.FEW, "au_sample"),
        ("origin_au.txt", Strategy.ORIGIN, "au_sample"),
        ("origin_in.txt", Strategy.ORIGIN, "in_sample"),
        ("kg.txt", Strategy.KG, "in_sample"),
        ("pmp.txt", Strategy.PMP, "au_sample"),
    ],
)
def test_golden_render(golden, strategy, sample_fixture, request):
    sample = request.getfixturevalue(sample_fixture)
    expected = (GOLDEN / golden).read_text(encoding="utf-8")
    assert build_prompt(strategy, sample).render() == expected
