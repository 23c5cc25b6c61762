"""Trace rewriting with the target model, plus the perplexity gate.

Step 2 of the pipeline. Each correct trace is rewritten by the target model;
rewrites that change or lose the answer fall back to the original trace. The
gate then verifies rewriting did not increase perplexity under the target
model, either corpus-wide or per trace.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from enum import Enum

from .corpus import Label
from .errors import ApiError, TransportError, ValidationError
from .gateway import EndpointConfig, Gateway
from .prompts import TemplateId, answer_matches_label, build_rewrite_prompt, parse_final_answer
from .tracegen import CoTTrace, TraceStage, _response_token_count


class RewriteReason(str, Enum):
    ACCEPTED = "RewriteAccepted"
    INCORRECT = "RewriteIncorrect"
    FAILED = "RewriteFailed"
    REJECTED_BY_GATE = "RewriteRejectedByGate"


class GateMode(str, Enum):
    CORPUS_MEAN = "CorpusMean"
    PER_TRACE = "PerTrace"


@dataclass(frozen=True)
class RewriteOutcome:
    pair_id: str
    original: CoTTrace
    rewritten: CoTTrace | None
    final: CoTTrace
    reason: RewriteReason

    def __post_init__(self):
        accepted = self.reason is RewriteReason.ACCEPTED
        if accepted != (self.final is self.rewritten):
            raise ValidationError(
                f"outcome {self.pair_id}: final must be the rewritten trace exactly "
                f"when the rewrite is accepted (reason={self.reason.value})"
            )

    def to_json_dict(self) -> dict:
        return {
            "pair_id": self.pair_id,
            "original": self.original.to_json_dict(),
            "rewritten": self.rewritten.to_json_dict() if self.rewritten else None,
            "final": self.final.to_json_dict(),
            "reason": self.reason.value,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "RewriteOutcome":
        original = CoTTrace.from_json_dict(d["original"])
        rewritten = CoTTrace.from_json_dict(d["rewritten"]) if d["rewritten"] else None
        reason = RewriteReason(d["reason"])
        final = rewritten if reason is RewriteReason.ACCEPTED else \
            CoTTrace.from_json_dict(d["final"])
        return cls(pair_id=d["pair_id"], original=original, rewritten=rewritten,
                   final=final, reason=reason)


@dataclass(frozen=True)
class PplGateReport:
    mean_ppl_original: float
    mean_ppl_final: float
    mode: GateMode
    passed: bool
    tolerance: float = 0.0
    reverted_pair_ids: tuple[str, ...] = ()

    def to_json_dict(self) -> dict:
        return {
            "mean_ppl_original": self.mean_ppl_original,
            "mean_ppl_final": self.mean_ppl_final,
            "mode": self.mode.value,
            "passed": self.passed,
            "tolerance": self.tolerance,
            "reverted_pair_ids": list(self.reverted_pair_ids),
        }


def rewrite_traces(
    traces: list[CoTTrace],
    target: EndpointConfig,
    variant: TemplateId = TemplateId.REWRITE_OFFICIAL,
    gateway: Gateway | None = None,
) -> list[RewriteOutcome]:
    """Rewrite each trace; fall back to the original when the rewrite is wrong.

    Input traces must be correct, generated-stage traces; anything else is a
    pipeline wiring bug and rejected outright.
    """
    for t in traces:
        if t.stage is not TraceStage.GENERATED:
            raise ValidationError(f"trace {t.pair_id} is not a generated-stage trace")
        if not t.is_correct:
            raise ValidationError(f"trace {t.pair_id} is not correct; filter first")
    gw = gateway or Gateway()

    def attempt(trace: CoTTrace):
        instruction = trace.meta.get("instruction") or trace.prompt_text
        prompt = build_rewrite_prompt(instruction, trace.response_text, variant)
        try:
            completion = gw.complete(target, prompt)
        except (TransportError, ApiError) as exc:
            return trace, prompt, exc
        return trace, prompt, completion

    if target.max_in_flight > 1 and len(traces) > 1:
        with ThreadPoolExecutor(max_workers=target.max_in_flight) as pool:
            results = list(pool.map(attempt, traces))
    else:
        results = [attempt(t) for t in traces]

    outcomes = []
    for trace, prompt, outcome in results:
        if isinstance(outcome, Exception):
            outcomes.append(
                RewriteOutcome(
                    pair_id=trace.pair_id,
                    original=trace,
                    rewritten=None,
                    final=trace,
                    reason=RewriteReason.FAILED,
                )
            )
            continue
        token_count, token_method = _response_token_count(outcome, outcome.text)
        meta = {
            "template_id": variant.value,
            "demo_ids": [],
            "seed": trace.meta.get("seed", 0),
            "timestamp": time.time(),
            "label": trace.meta["label"],
            "instruction": trace.meta.get("instruction") or trace.prompt_text,
            "token_method": token_method,
            "rewritten_from": trace.source_model_id,
        }
        parsed = parse_final_answer(outcome.text)
        rewritten = CoTTrace(
            pair_id=trace.pair_id,
            source_model_id=target.model_name,
            prompt_text=prompt,
            response_text=outcome.text,
            parsed=parsed,
            is_correct=answer_matches_label(parsed.value, Label(trace.meta["label"])),
            token_count=token_count,
            perplexity=None,
            stage=TraceStage.REWRITTEN,
            meta=meta,
        )
        if rewritten.is_correct:
            outcomes.append(
                RewriteOutcome(trace.pair_id, trace, rewritten, rewritten,
                               RewriteReason.ACCEPTED)
            )
        else:
            outcomes.append(
                RewriteOutcome(trace.pair_id, trace, rewritten, trace,
                               RewriteReason.INCORRECT)
            )
    outcomes.sort(key=lambda o: o.pair_id)
    return outcomes


def _revert(outcome: RewriteOutcome) -> RewriteOutcome:
    return RewriteOutcome(
        pair_id=outcome.pair_id,
        original=outcome.original,
        rewritten=outcome.rewritten,
        final=outcome.original,
        reason=RewriteReason.REJECTED_BY_GATE,
    )


def ppl_gate(
    outcomes: list[RewriteOutcome],
    target: EndpointConfig,
    mode: GateMode = GateMode.CORPUS_MEAN,
    tolerance: float = 0.0,
    gateway: Gateway | None = None,
) -> PplGateReport:
    """Verify rewriting did not increase perplexity under the target model.

    Scores originals and finals, then either compares corpus means
    (CorpusMean: on failure every accepted rewrite is reverted to its
    original) or reverts individual rewrites that got worse (PerTrace).
    Reverted entries are replaced in the given list; traces come back with
    their perplexity fields populated.
    """
    if not outcomes:
        raise ValidationError("cannot gate an empty outcome set")
    gw = gateway or Gateway()

    def score(trace: CoTTrace) -> CoTTrace:
        prompt = trace.meta.get("instruction") or trace.prompt_text
        return replace(trace, perplexity=gw.score_perplexity(target, prompt, trace.response_text))

    scored: list[RewriteOutcome] = []
    for o in outcomes:
        original = score(o.original)
        rewritten = score(o.rewritten) if o.rewritten is not None else None
        final = rewritten if o.reason is RewriteReason.ACCEPTED else original
        scored.append(RewriteOutcome(o.pair_id, original, rewritten, final, o.reason))

    mean_original = sum(o.original.perplexity for o in scored) / len(scored)
    mean_final_before = sum(o.final.perplexity for o in scored) / len(scored)

    reverted: list[str] = []
    if mode is GateMode.PER_TRACE:
        for i, o in enumerate(scored):
            if o.reason is RewriteReason.ACCEPTED and \
                    o.rewritten.perplexity > o.original.perplexity + tolerance:
                scored[i] = _revert(o)
                reverted.append(o.pair_id)
        mean_final = sum(o.final.perplexity for o in scored) / len(scored)
        passed = mean_final <= mean_original + tolerance
        report = PplGateReport(mean_original, mean_final, mode, passed,
                               tolerance, tuple(reverted))
    else:
        passed = mean_final_before <= mean_original + tolerance
        if not passed:
            for i, o in enumerate(scored):
                if o.reason is RewriteReason.ACCEPTED:
                    scored[i] = _revert(o)
                    reverted.append(o.pair_id)
        report = PplGateReport(mean_original, mean_final_before, mode, passed,
                               tolerance, tuple(reverted))

    outcomes[:] = scored
    return report
