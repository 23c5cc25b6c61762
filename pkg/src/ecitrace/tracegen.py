"""Trace generation: few-shot prompting, correctness filtering, selection.

Step 1 of the pipeline. A generator endpoint is prompted once per event pair
(temperature 0 makes resampling pointless); each response is parsed and marked
correct or not, and only correct traces survive the filter. Selection
strategies then choose one trace per pair across model pools.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from enum import Enum

from .corpus import EventPair, Label
from .errors import ApiError, ConfigError, TransportError, ValidationError
from .gateway import EndpointConfig, Gateway
from .prompts import (
    Answer,
    FewShotDemo,
    ParsedAnswer,
    TemplateId,
    answer_matches_label,
    build_eci_prompt,
    parse_final_answer,
    validate_demo_set,
)


class TraceStage(str, Enum):
    GENERATED = "Generated"
    REWRITTEN = "Rewritten"


@dataclass(frozen=True)
class CoTTrace:
    pair_id: str
    source_model_id: str
    prompt_text: str
    response_text: str
    parsed: ParsedAnswer
    is_correct: bool
    token_count: int
    perplexity: float | None
    stage: TraceStage
    meta: dict

    def __post_init__(self):
        if self.perplexity is not None and self.perplexity <= 0:
            raise ValidationError(f"trace {self.pair_id}: perplexity must be positive")
        if self.response_text and self.token_count < 1:
            raise ValidationError(f"trace {self.pair_id}: nonempty response with zero tokens")

    @property
    def label(self) -> Label:
        return Label(self.meta["label"])

    def to_json_dict(self) -> dict:
        return {
            "pair_id": self.pair_id,
            "source_model_id": self.source_model_id,
            "prompt_text": self.prompt_text,
            "response_text": self.response_text,
            "parsed": {
                "value": self.parsed.value.value,
                "marker_span": list(self.parsed.marker_span) if self.parsed.marker_span else None,
            },
            "is_correct": self.is_correct,
            "token_count": self.token_count,
            "perplexity": self.perplexity,
            "stage": self.stage.value,
            "meta": self.meta,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "CoTTrace":
        span = d["parsed"]["marker_span"]
        return cls(
            pair_id=d["pair_id"],
            source_model_id=d["source_model_id"],
            prompt_text=d["prompt_text"],
            response_text=d["response_text"],
            parsed=ParsedAnswer(
                value=Answer(d["parsed"]["value"]),
                marker_span=tuple(span) if span else None,
            ),
            is_correct=d["is_correct"],
            token_count=d["token_count"],
            perplexity=d["perplexity"],
            stage=TraceStage(d["stage"]),
            meta=d["meta"],
        )


class SelectionKind(str, Enum):
    PER_MODEL = "PerModel"
    LOWEST_PERPLEXITY = "LowestPerplexity"
    LOWEST_PERPLEXITY_LONG_ONLY = "LowestPerplexityLongOnly"


@dataclass(frozen=True)
class SelectionStrategy:
    kind: SelectionKind
    model_id: str | None = None
    excluded_model_ids: frozenset = frozenset()

    def __post_init__(self):
        if self.kind is SelectionKind.PER_MODEL and not self.model_id:
            raise ConfigError("PerModel selection requires a model_id")
        if self.kind is SelectionKind.LOWEST_PERPLEXITY_LONG_ONLY and not self.excluded_model_ids:
            raise ConfigError("LongOnly selection requires a nonempty exclusion set")

    @classmethod
    def per_model(cls, model_id: str) -> "SelectionStrategy":
        return cls(kind=SelectionKind.PER_MODEL, model_id=model_id)

    @classmethod
    def lowest_perplexity(cls) -> "SelectionStrategy":
        return cls(kind=SelectionKind.LOWEST_PERPLEXITY)

    @classmethod
    def long_only(cls, excluded_model_ids) -> "SelectionStrategy":
        return cls(
            kind=SelectionKind.LOWEST_PERPLEXITY_LONG_ONLY,
            excluded_model_ids=frozenset(excluded_model_ids),
        )


def make_trace(
    pair: EventPair,
    model_id: str,
    prompt_text: str,
    response_text: str,
    token_count: int,
    stage: TraceStage,
    meta: dict,
) -> CoTTrace:
    parsed = parse_final_answer(response_text)
    return CoTTrace(
        pair_id=pair.pair_id,
        source_model_id=model_id,
        prompt_text=prompt_text,
        response_text=response_text,
        parsed=parsed,
        is_correct=answer_matches_label(parsed.value, pair.label),
        token_count=token_count,
        perplexity=None,
        stage=stage,
        meta=meta,
    )


def _response_token_count(completion, response_text: str) -> tuple[int, str]:
    n = completion.usage.completion_tokens
    if n and n > 0:
        return n, "endpoint"
    return max(len(response_text.split()), 1 if response_text else 0), "whitespace"


def generate_traces(
    pairs: list[EventPair],
    generator: EndpointConfig,
    demos: list[FewShotDemo],
    gateway: Gateway | None = None,
    seed: int = 0,
    failures: list | None = None,
) -> list[CoTTrace]:
    """One few-shot generation attempt per pair; output sorted by pair_id.

    Transport and API failures land in `failures` (pair_id + error) and the
    affected pairs are skipped.
    """
    validate_demo_set(demos)
    gw = gateway or Gateway()
    demo_ids = [d.demo_id for d in demos]

    def attempt(pair: EventPair):
        prompt = build_eci_prompt(pair, TemplateId.FEW_SHOT_ICL, demos)
        try:
            completion = gw.complete(generator, prompt)
        except (TransportError, ApiError) as exc:
            return pair, prompt, exc
        return pair, prompt, completion

    if generator.max_in_flight > 1 and len(pairs) > 1:
        with ThreadPoolExecutor(max_workers=generator.max_in_flight) as pool:
            results = list(pool.map(attempt, pairs))
    else:
        results = [attempt(p) for p in pairs]

    traces = []
    for pair, prompt, outcome in results:
        if isinstance(outcome, Exception):
            if failures is not None:
                failures.append(
                    {
                        "pair_id": pair.pair_id,
                        "error": f"{type(outcome).__name__}: {outcome}",
                    }
                )
            continue
        token_count, token_method = _response_token_count(outcome, outcome.text)
        meta = {
            "template_id": TemplateId.FEW_SHOT_ICL.value,
            "demo_ids": demo_ids,
            "seed": seed,
            "timestamp": time.time(),
            "label": pair.label.value,
            "instruction": build_eci_prompt(pair, TemplateId.ZERO_SHOT),
            "token_method": token_method,
        }
        traces.append(
            make_trace(pair, generator.model_name, prompt, outcome.text,
                       token_count, TraceStage.GENERATED, meta)
        )
    traces.sort(key=lambda t: t.pair_id)
    return traces


def filter_correct(traces: list[CoTTrace]) -> list[CoTTrace]:
    return [t for t in traces if t.is_correct]


def attach_perplexities(
    traces: list[CoTTrace],
    scorer: EndpointConfig,
    gateway: Gateway | None = None,
) -> list[CoTTrace]:
    """Score each trace's response against its instruction with the given model."""
    gw = gateway or Gateway()
    out = []
    for t in traces:
        prompt = t.meta.get("instruction") or t.prompt_text
        ppl = gw.score_perplexity(scorer, prompt, t.response_text)
        out.append(replace(t, perplexity=ppl))
    return out


def select_traces(
    pools: dict[str, list[CoTTrace]],
    strategy: SelectionStrategy,
) -> dict[str, CoTTrace]:
    if strategy.kind is SelectionKind.PER_MODEL:
        if strategy.model_id not in pools:
            raise ConfigError(f"no trace pool for model {strategy.model_id!r}")
        result = {}
        for t in pools[strategy.model_id]:
            result.setdefault(t.pair_id, t)
        return result

    active = {
        model_id: pool
        for model_id, pool in pools.items()
        if model_id not in strategy.excluded_model_ids
    }
    candidates: dict[str, list[tuple[float, str, CoTTrace]]] = {}
    for model_id in sorted(active):
        for t in active[model_id]:
            if t.perplexity is None:
                raise ValidationError(
                    f"trace {t.pair_id} from {model_id} lacks perplexity; "
                    "perplexity selection needs scored traces"
                )
            candidates.setdefault(t.pair_id, []).append((t.perplexity, model_id, t))
    return {
        pair_id: min(entries, key=lambda e: (e[0], e[1]))[2]
        for pair_id, entries in candidates.items()
    }


def mean_token_length(traces: list[CoTTrace]) -> float:
    if not traces:
        raise ValidationError("cannot average token length of zero traces")
    return sum(t.token_count for t in traces) / len(traces)
