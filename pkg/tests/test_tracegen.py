from __future__ import annotations

import random

import pytest

from conftest import make_pair
from ecitrace.corpus import Label
from ecitrace.errors import ConfigError, ValidationError
from ecitrace.gateway import EndpointConfig, Gateway, MockBackend, register_mock
from ecitrace.prompts import Answer, FewShotDemo, load_default_demos, parse_final_answer
from ecitrace.store import InMemoryCache
from ecitrace.tracegen import (
    CoTTrace,
    SelectionKind,
    SelectionStrategy,
    TraceStage,
    attach_perplexities,
    filter_correct,
    generate_traces,
    make_trace,
    mean_token_length,
    select_traces,
)

DEMOS = load_default_demos()


def endpoint(name: str = "gen", model: str = "gen-model", **kwargs) -> EndpointConfig:
    return EndpointConfig(base_url=f"mock://{name}", model_name=model, **kwargs)


def gw() -> Gateway:
    return Gateway(sleep=lambda _d: None)


def trace(pair_id: str = "p1", model: str = "m1", text: str = "Because. [Final Answer: Yes]",
          label: Label = Label.CAUSAL, ppl: float | None = None,
          stage: TraceStage = TraceStage.GENERATED, tokens: int = 4) -> CoTTrace:
    parsed = parse_final_answer(text)
    return CoTTrace(
        pair_id=pair_id,
        source_model_id=model,
        prompt_text="prompt",
        response_text=text,
        parsed=parsed,
        is_correct=parsed.value is Answer.YES if label is Label.CAUSAL
        else parsed.value is Answer.NO,
        token_count=tokens,
        perplexity=ppl,
        stage=stage,
        meta={"label": label.value, "instruction": "q?"},
    )


class TestCoTTrace:
    def test_round_trip(self):
        t = trace(ppl=3.5)
        assert CoTTrace.from_json_dict(t.to_json_dict()) == t

    def test_non_positive_perplexity_rejected(self):
        with pytest.raises(ValidationError):
            trace(ppl=0.0)
        with pytest.raises(ValidationError):
            trace(ppl=-1.0)

    def test_nonempty_response_needs_tokens(self):
        with pytest.raises(ValidationError):
            trace(tokens=0)

    def test_label_property_reads_meta(self):
        assert trace(label=Label.NON_CAUSAL, text="[Final Answer: No]").label is Label.NON_CAUSAL

    def test_correctness_agrees_with_reparse(self):
        for text, label, expected in [
            ("So. [Final Answer: Yes]", Label.CAUSAL, True),
            ("So. [Final Answer: Yes]", Label.NON_CAUSAL, False),
            ("So. [Final Answer: No]", Label.NON_CAUSAL, True),
            ("no marker at all", Label.CAUSAL, False),
        ]:
            pair = make_pair(label=label)
            t = make_trace(pair, "m", "p", text, 3, TraceStage.GENERATED,
                           {"label": label.value})
            assert t.is_correct is expected


class TestSelectionStrategy:
    def test_per_model_requires_model_id(self):
        with pytest.raises(ConfigError):
            SelectionStrategy(kind=SelectionKind.PER_MODEL)

    def test_long_only_requires_exclusions(self):
        with pytest.raises(ConfigError):
            SelectionStrategy(kind=SelectionKind.LOWEST_PERPLEXITY_LONG_ONLY)

    def test_constructors(self):
        assert SelectionStrategy.per_model("m").model_id == "m"
        assert SelectionStrategy.lowest_perplexity().kind is SelectionKind.LOWEST_PERPLEXITY
        assert SelectionStrategy.long_only(["a"]).excluded_model_ids == frozenset({"a"})


class TestGenerateTraces:
    def _pairs(self):
        return [
            make_pair(
                label=Label.CAUSAL, doc_id="d1",
                context="The quake toppled the tower, trapping workers inside.",
                a="toppled", b="trapping",
            ),
            make_pair(
                label=Label.NON_CAUSAL, doc_id="d2",
                context="The mayor spoke at noon while vendors arranged their stalls.",
                a="spoke", b="arranged",
            ),
            make_pair(
                label=Label.CAUSAL, doc_id="d3",
                context="A burst pipe soaked the archive, ruining county records.",
                a="soaked", b="ruining",
            ),
        ]

    def test_correctness_marked_per_pair(self):
        pairs = self._pairs()
        backend = MockBackend()
        backend.script_contains(pairs[0].context_text, "Linked. [Final Answer: Yes]")
        backend.script_default("Unrelated. [Final Answer: No]")
        register_mock("gen", backend)
        traces = generate_traces(pairs, endpoint(), DEMOS, gateway=gw())
        by_pair = {t.pair_id: t for t in traces}
        assert by_pair[pairs[0].pair_id].is_correct is True   # Yes on Causal
        assert by_pair[pairs[1].pair_id].is_correct is True   # No on NonCausal
        assert by_pair[pairs[2].pair_id].is_correct is False  # No on Causal

    def test_unparseable_response_is_incorrect(self):
        pairs = self._pairs()[:1]
        register_mock("gen", MockBackend().script_default("I cannot decide."))
        (t,) = generate_traces(pairs, endpoint(), DEMOS, gateway=gw())
        assert t.parsed.value is Answer.UNPARSEABLE
        assert t.is_correct is False

    def test_traces_sorted_by_pair_id(self):
        register_mock("gen", MockBackend().script_default("x. [Final Answer: Yes]"))
        traces = generate_traces(self._pairs(), endpoint(), DEMOS, gateway=gw())
        assert [t.pair_id for t in traces] == sorted(t.pair_id for t in traces)

    def test_meta_records_generation_context(self):
        pairs = self._pairs()[:1]
        register_mock("gen", MockBackend().script_default("x. [Final Answer: Yes]"))
        (t,) = generate_traces(pairs, endpoint(), DEMOS, gateway=gw(), seed=11)
        assert t.stage is TraceStage.GENERATED
        assert t.meta["seed"] == 11
        assert t.meta["demo_ids"] == [d.demo_id for d in DEMOS]
        assert t.meta["label"] == pairs[0].label.value
        assert t.meta["instruction"].startswith("Text: ")
        assert "Question:" in t.meta["instruction"]
        # the stored instruction is demo-free
        assert DEMOS[0].pair.context_text not in t.meta["instruction"]

    def test_prompt_contains_demos_but_instruction_does_not(self):
        pairs = self._pairs()[:1]
        register_mock("gen", MockBackend().script_default("x. [Final Answer: Yes]"))
        (t,) = generate_traces(pairs, endpoint(), DEMOS, gateway=gw())
        for d in DEMOS:
            assert d.trace_text in t.prompt_text
        assert t.prompt_text.endswith(t.meta["instruction"])

    def test_invalid_demo_set_rejected_before_any_call(self):
        backend = register_mock("gen", MockBackend().script_default("x"))
        causal = next(d for d in DEMOS if d.label is Label.CAUSAL)
        bad = [causal, FewShotDemo("again", causal.pair, causal.trace_text, Label.CAUSAL)]
        with pytest.raises(ConfigError):
            generate_traces(self._pairs(), endpoint(), bad, gateway=gw())
        assert backend.call_count == 0

    def test_failed_pairs_recorded_and_skipped(self):
        pairs = self._pairs()
        backend = MockBackend().script_default("x. [Final Answer: Yes]")
        backend.fail_next(status=418)
        register_mock("gen", backend)
        failures: list[dict] = []
        traces = generate_traces(
            pairs, endpoint(max_in_flight=1), DEMOS, gateway=gw(), failures=failures
        )
        assert len(traces) == 2
        assert len(failures) == 1
        assert failures[0]["pair_id"] in {p.pair_id for p in pairs}
        assert "ApiError" in failures[0]["error"]
        assert failures[0]["pair_id"] not in {t.pair_id for t in traces}

    def test_identical_rerun_yields_identical_traces(self):
        rng = random.Random(3)
        contexts = [
            f"Event {rng.randrange(100)} hit the area, causing trouble number {i} overnight."
            for i in range(100)
        ]
        pairs = [
            make_pair(
                label=Label.CAUSAL if i % 2 == 0 else Label.NON_CAUSAL,
                doc_id=f"doc{i}", topic_id=i % 7, context=contexts[i],
                a="hit", b="causing",
            )
            for i in range(100)
        ]
        register_mock("gen", MockBackend().script_default(
            lambda p: f"Signal {len(p)}. [Final Answer: Yes]"
        ))
        first = generate_traces(pairs, endpoint(max_in_flight=8), DEMOS, gateway=gw())
        second = generate_traces(pairs, endpoint(max_in_flight=8), DEMOS, gateway=gw())
        stripped = lambda ts: [
            {**t.to_json_dict(), "meta": {k: v for k, v in t.meta.items() if k != "timestamp"}}
            for t in ts
        ]
        assert stripped(first) == stripped(second)
        assert len(first) == 100

    def test_endpoint_token_counts_attached(self):
        register_mock("gen", MockBackend().script_default("one two three [Final Answer: Yes]"))
        (t,) = generate_traces(self._pairs()[:1], endpoint(), DEMOS, gateway=gw())
        assert t.token_count == 6
        assert t.meta["token_method"] == "endpoint"


class TestFilterCorrect:
    def test_keeps_only_correct(self):
        ts = [trace("a"), trace("b", text="Hmm. [Final Answer: No]")]
        kept = filter_correct(ts)
        assert [t.pair_id for t in kept] == ["a"]

    def test_idempotent(self):
        ts = [trace("a"), trace("b", text="No marker")]
        once = filter_correct(ts)
        assert filter_correct(once) == once

    def test_matches_bruteforce_oracle(self):
        rng = random.Random(12)
        ts = []
        for i in range(200):
            label = rng.choice([Label.CAUSAL, Label.NON_CAUSAL])
            answer = rng.choice(["Yes", "No", None])
            text = f"Reason {i}. [Final Answer: {answer}]" if answer else f"Reason {i}."
            ts.append(trace(f"p{i:03d}", label=label, text=text))
        kept = filter_correct(ts)
        expected = [
            t for t in ts
            if (t.label is Label.CAUSAL and t.parsed.value is Answer.YES)
            or (t.label is Label.NON_CAUSAL and t.parsed.value is Answer.NO)
        ]
        assert kept == expected


class TestAttachPerplexities:
    def test_scores_response_against_instruction(self):
        register_mock("scorer", MockBackend())
        t = trace()
        (scored,) = attach_perplexities([t], endpoint("scorer"), gateway=gw())
        assert scored.perplexity is not None and scored.perplexity > 0
        assert scored.response_text == t.response_text
        assert scored.pair_id == t.pair_id

    def test_pinned_logprobs_give_exact_perplexity(self):
        import math
        t = trace(text="x y")
        backend = MockBackend().script_echo("q?x y", [-5.0, -math.log(2), -math.log(2)])
        register_mock("scorer", backend)
        (scored,) = attach_perplexities([t], endpoint("scorer"), gateway=gw())
        assert scored.perplexity == 2.0


class TestSelectTraces:
    def _pools(self):
        return {
            "model-b": [trace("p1", "model-b", ppl=3.0), trace("p2", "model-b", ppl=9.0)],
            "model-a": [trace("p1", "model-a", ppl=5.0), trace("p2", "model-a", ppl=2.0)],
        }

    def test_per_model_takes_that_pool_only(self):
        chosen = select_traces(self._pools(), SelectionStrategy.per_model("model-a"))
        assert {pid: t.source_model_id for pid, t in chosen.items()} == {
            "p1": "model-a", "p2": "model-a",
        }

    def test_per_model_missing_pool_rejected(self):
        with pytest.raises(ConfigError):
            select_traces(self._pools(), SelectionStrategy.per_model("ghost"))

    def test_lowest_perplexity_takes_argmin_per_pair(self):
        chosen = select_traces(self._pools(), SelectionStrategy.lowest_perplexity())
        assert chosen["p1"].source_model_id == "model-b"
        assert chosen["p2"].source_model_id == "model-a"

    def test_tie_breaks_to_lexicographically_first_model(self):
        pools = {
            "zeta": [trace("p1", "zeta", ppl=2.0)],
            "alpha": [trace("p1", "alpha", ppl=2.0)],
        }
        chosen = select_traces(pools, SelectionStrategy.lowest_perplexity())
        assert chosen["p1"].source_model_id == "alpha"

    def test_long_only_ignores_excluded_models(self):
        pools = self._pools()
        pools["short-model"] = [trace("p1", "short-model", ppl=0.5)]
        chosen = select_traces(pools, SelectionStrategy.long_only(["short-model"]))
        assert chosen["p1"].source_model_id == "model-b"

    def test_exclusion_can_remove_a_pair_entirely(self):
        pools = {
            "only": [trace("p9", "only", ppl=1.5)],
            "rest": [trace("p1", "rest", ppl=2.0)],
        }
        chosen = select_traces(pools, SelectionStrategy.long_only(["only"]))
        assert set(chosen) == {"p1"}

    def test_missing_perplexity_is_an_error(self):
        pools = {"m": [trace("p1", "m", ppl=None)]}
        with pytest.raises(ValidationError) as exc:
            select_traces(pools, SelectionStrategy.lowest_perplexity())
        assert "p1" in str(exc.value)

    def test_matches_bruteforce_argmin_oracle(self):
        rng = random.Random(99)
        models = [f"model-{c}" for c in "abcde"]
        pools: dict[str, list[CoTTrace]] = {m: [] for m in models}
        for m in models:
            for i in range(30):
                if rng.random() < 0.7:
                    pools[m].append(
                        trace(f"p{i:02d}", m, ppl=round(rng.uniform(1.0, 9.0), 2))
                    )
        chosen = select_traces(pools, SelectionStrategy.lowest_perplexity())
        entries: dict[str, list] = {}
        for m, pool in pools.items():
            for t in pool:
                entries.setdefault(t.pair_id, []).append(t)
        assert set(chosen) == set(entries)
        for pid, ts in entries.items():
            best = min(ts, key=lambda t: (t.perplexity, t.source_model_id))
            assert chosen[pid] == best

    def test_single_pool_equivalences(self):
        pools = {"m": [trace("p1", "m", ppl=2.0), trace("p2", "m", ppl=3.0)]}
        by_ppl = select_traces(pools, SelectionStrategy.lowest_perplexity())
        by_model = select_traces(pools, SelectionStrategy.per_model("m"))
        assert by_ppl == by_model


class TestMeanTokenLength:
    def test_single_trace(self):
        assert mean_token_length([trace(tokens=242)]) == 242.0

    def test_two_traces(self):
        assert mean_token_length([trace("a", tokens=1), trace("b", tokens=3)]) == 2.0

    def test_matches_naive_average(self):
        rng = random.Random(8)
        ts = [trace(f"p{i}", tokens=rng.randrange(1, 500)) for i in range(500)]
        naive = sum(t.token_count for t in ts) / len(ts)
        assert mean_token_length(ts) == pytest.approx(naive, abs=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(ValidationError):
            mean_token_length([])
