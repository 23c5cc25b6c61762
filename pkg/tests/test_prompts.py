from __future__ import annotations

import pytest

from conftest import GOLDEN, make_pair
from ecitrace.corpus import Label
from ecitrace.errors import ConfigError, ValidationError
from ecitrace.prompts import (
    Answer,
    FewShotDemo,
    ParsedAnswer,
    TemplateId,
    answer_matches_label,
    build_eci_prompt,
    build_intervention_prompt,
    build_rewrite_prompt,
    intervention_sentence,
    load_default_demos,
    parse_final_answer,
    render_mentions,
    template_body,
    validate_demo_set,
)

SNOW_CTX = "Heavy snow closed the mountain pass, stranding dozens of drivers."


def snow_pair(label: Label = Label.CAUSAL):
    return make_pair(label=label, context=SNOW_CTX, a="closed", b="stranding")


class TestGoldenPrompts:
    """Byte-exact comparisons against checked-in renderings."""

    def test_question_prompt_matches_golden(self):
        expected = (GOLDEN / "eci_zero_shot.txt").read_text("utf-8")
        assert build_eci_prompt(snow_pair()) == expected

    def test_intervention_prompt_matches_golden(self):
        expected = (GOLDEN / "eci_intervention.txt").read_text("utf-8")
        assert build_intervention_prompt(snow_pair()) == expected

    def test_rewrite_prompt_official_matches_golden(self):
        expected = (GOLDEN / "rewrite_official.txt").read_text("utf-8")
        got = build_rewrite_prompt(
            "Is there a causal relationship between <flooding> and <forcing>?",
            "The flood forced families out. [Final Answer: Yes]",
            TemplateId.REWRITE_OFFICIAL,
        )
        assert got == expected

    def test_rewrite_prompt_alternate_matches_golden(self):
        expected = (GOLDEN / "rewrite_ours.txt").read_text("utf-8")
        got = build_rewrite_prompt(
            "Is there a causal relationship between <flooding> and <forcing>?",
            "The flood forced families out. [Final Answer: Yes]",
            TemplateId.REWRITE_OURS,
        )
        assert got == expected

    def test_injected_claim_contradicts_causal_label(self):
        expected = (GOLDEN / "intervention_for_causal.txt").read_text("utf-8")
        pair = make_pair(
            label=Label.CAUSAL,
            context="They argued for hours before the board approves the plan.",
            a="argued", b="approves",
        )
        assert intervention_sentence(pair) + "\n" == expected

    def test_injected_claim_contradicts_non_causal_label(self):
        expected = (GOLDEN / "intervention_for_non_causal.txt").read_text("utf-8")
        pair = make_pair(
            label=Label.NON_CAUSAL,
            context="They argued for hours before the board approves the plan.",
            a="argued", b="approves",
        )
        assert intervention_sentence(pair) + "\n" == expected


class TestTemplates:
    def test_every_template_loads(self):
        for tid in TemplateId:
            assert template_body(tid).strip()

    def test_slot_values_are_not_rescanned(self):
        pair = make_pair(
            context="The {demos} marker wrecked the log, forcing a reparse.",
            a="wrecked", b="forcing",
        )
        prompt = build_eci_prompt(pair)
        assert "{demos}" in prompt

    def test_cot_variant_adds_step_by_step_cue(self):
        prompt = build_eci_prompt(snow_pair(), TemplateId.ZERO_SHOT_COT)
        assert "Let's think step by step" in prompt
        assert prompt.startswith(f"Text: {SNOW_CTX}")


class TestMentions:
    def test_distinct_surfaces_bracketed_plainly(self):
        assert render_mentions(snow_pair()) == ("<closed>", "<stranding>")

    def test_identical_surfaces_get_order_tags(self):
        pair = make_pair(
            context="One crash echoed another crash downtown.", a="crash", b="crash"
        )
        assert render_mentions(pair) == ("<crash#1>", "<crash#2>")
        prompt = build_eci_prompt(pair)
        assert "<crash#1>" in prompt and "<crash#2>" in prompt


class TestFewShotPrompt:
    def test_causal_demo_comes_first(self):
        demos = load_default_demos()
        flipped = sorted(demos, key=lambda d: 0 if d.label is Label.NON_CAUSAL else 1)
        prompt = build_eci_prompt(snow_pair(), TemplateId.FEW_SHOT_ICL, demos=flipped)
        causal = next(d for d in demos if d.label is Label.CAUSAL)
        non_causal = next(d for d in demos if d.label is Label.NON_CAUSAL)
        assert prompt.index(causal.trace_text) < prompt.index(non_causal.trace_text)

    def test_question_for_target_pair_comes_last(self):
        prompt = build_eci_prompt(snow_pair(), TemplateId.FEW_SHOT_ICL, demos=load_default_demos())
        assert prompt.rstrip().endswith("[Final Answer: Yes/No].")
        assert prompt.index(SNOW_CTX) > prompt.index("[Final Answer: Yes]")

    def test_demo_blocks_are_question_plus_trace(self):
        demos = load_default_demos()
        prompt = build_eci_prompt(snow_pair(), TemplateId.FEW_SHOT_ICL, demos=demos)
        for d in demos:
            assert d.pair.context_text in prompt
            assert d.trace_text in prompt

    def test_requires_demos(self):
        with pytest.raises(ConfigError):
            build_eci_prompt(snow_pair(), TemplateId.FEW_SHOT_ICL)

    def test_rejects_demos_for_plain_templates(self):
        with pytest.raises(ConfigError):
            build_eci_prompt(snow_pair(), TemplateId.ZERO_SHOT, demos=load_default_demos())

    def test_rejects_rewrite_templates_as_questions(self):
        with pytest.raises(ConfigError):
            build_eci_prompt(snow_pair(), TemplateId.REWRITE_OFFICIAL)


class TestDemoSetValidation:
    def test_one_of_each_label_accepted(self):
        validate_demo_set(load_default_demos())

    def test_two_causal_rejected(self):
        causal = next(d for d in load_default_demos() if d.label is Label.CAUSAL)
        twin = FewShotDemo("d2", causal.pair, causal.trace_text, Label.CAUSAL)
        with pytest.raises(ConfigError):
            validate_demo_set([causal, twin])

    def test_single_demo_rejected(self):
        causal = next(d for d in load_default_demos() if d.label is Label.CAUSAL)
        with pytest.raises(ConfigError):
            validate_demo_set([causal])


class TestBundledDemos:
    def test_traces_answer_their_own_labels(self):
        demos = load_default_demos()
        assert len(demos) == 2
        for d in demos:
            parsed = parse_final_answer(d.trace_text)
            assert answer_matches_label(parsed.value, d.label)
            assert not d.trace_text.endswith("\n")


class TestRewritePrompt:
    def test_rejects_non_rewrite_template(self):
        with pytest.raises(ConfigError):
            build_rewrite_prompt("i", "trace", TemplateId.ZERO_SHOT)

    def test_rejects_empty_trace(self):
        with pytest.raises(ValidationError):
            build_rewrite_prompt("i", "   \n", TemplateId.REWRITE_OFFICIAL)


class TestParseFinalAnswer:
    def test_simple_yes(self):
        text = "Reasoning here. [Final Answer: Yes]"
        parsed = parse_final_answer(text)
        assert parsed.value is Answer.YES
        assert text[parsed.marker_span[0]:parsed.marker_span[1]] == "[Final Answer: Yes]"

    def test_simple_no(self):
        assert parse_final_answer("[Final Answer: No]").value is Answer.NO

    def test_last_marker_wins(self):
        text = "[Final Answer: Yes] wait, reconsidering. [Final Answer: No]"
        assert parse_final_answer(text).value is Answer.NO

    def test_first_marker_mode(self):
        text = "[Final Answer: Yes] wait, reconsidering. [Final Answer: No]"
        assert parse_final_answer(text, first_marker=True).value is Answer.YES

    def test_case_and_whitespace_tolerant(self):
        assert parse_final_answer("[ FINAL  ANSWER :  yes ]").value is Answer.YES
        assert parse_final_answer("[final answer:NO]").value is Answer.NO

    def test_instruction_literal_is_not_an_answer(self):
        text = "the strict format: [Final Answer: Yes/No]."
        assert parse_final_answer(text).value is Answer.UNPARSEABLE

    def test_missing_marker_unparseable(self):
        parsed = parse_final_answer("I believe the events are related somehow.")
        assert parsed.value is Answer.UNPARSEABLE
        assert parsed.marker_span is None

    def test_unknown_value_unparseable(self):
        assert parse_final_answer("[Final Answer: Maybe]").value is Answer.UNPARSEABLE

    def test_marker_inside_longer_text(self):
        text = "Step 1. Step 2.\n[Final Answer: Yes]\nPost-script chatter."
        assert parse_final_answer(text).value is Answer.YES

    def test_round_trip_serialization(self):
        parsed = parse_final_answer("x [Final Answer: No]")
        assert ParsedAnswer.from_json_dict(parsed.to_json_dict()) == parsed


class TestParsedAnswerInvariant:
    def test_parsed_value_requires_span(self):
        with pytest.raises(ValidationError):
            ParsedAnswer(Answer.YES, None)

    def test_unparseable_forbids_span(self):
        with pytest.raises(ValidationError):
            ParsedAnswer(Answer.UNPARSEABLE, (0, 5))


class TestAnswerLabelAgreement:
    def test_yes_matches_causal_only(self):
        assert answer_matches_label(Answer.YES, Label.CAUSAL)
        assert not answer_matches_label(Answer.YES, Label.NON_CAUSAL)

    def test_no_matches_non_causal_only(self):
        assert answer_matches_label(Answer.NO, Label.NON_CAUSAL)
        assert not answer_matches_label(Answer.NO, Label.CAUSAL)

    def test_unparseable_never_matches(self):
        assert not answer_matches_label(Answer.UNPARSEABLE, Label.CAUSAL)
        assert not answer_matches_label(Answer.UNPARSEABLE, Label.NON_CAUSAL)
