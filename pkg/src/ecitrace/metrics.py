"""Causal-hallucination metrics and the evaluation/robustness protocols.

The headline number is the gap between per-class accuracies: a model that
says "yes" to everything scores 100% on causal pairs and 0% on non-causal
ones, and the gap exposes that. Reported alongside: mean accuracy, FPR/TNR,
and MCC over the 2x2 confusion table.
"""

from __future__ import annotations

import csv
import hashlib
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .corpus import EventPair, Label
from .errors import ApiError, IoError, StageError, TransportError, ValidationError
from .gateway import EndpointConfig, Gateway
from .prompts import (
    Answer,
    FewShotDemo,
    TemplateId,
    build_eci_prompt,
    build_intervention_prompt,
    parse_final_answer,
)


@dataclass(frozen=True)
class PredictionRecord:
    pair_id: str
    label: Label
    predicted: Answer
    raw_digest: str
    error: str | None = None

    def to_json_dict(self) -> dict:
        return {
            "pair_id": self.pair_id,
            "label": self.label.value,
            "predicted": self.predicted.value,
            "raw_digest": self.raw_digest,
            "error": self.error,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "PredictionRecord":
        return cls(
            pair_id=d["pair_id"],
            label=Label(d["label"]),
            predicted=Answer(d["predicted"]),
            raw_digest=d["raw_digest"],
            error=d.get("error"),
        )


@dataclass(frozen=True)
class MetricsReport:
    n_causal: int
    n_non_causal: int
    acc_causal: float | None
    acc_non_causal: float | None
    chr: float | None
    m_acc: float | None
    fpr: float | None
    tnr: float | None
    mcc: float
    unparseable_count: int
    mean_token_len: float | None = None
    tokenizer_provenance: str | None = None
    intervention: bool = False

    def to_json_dict(self) -> dict:
        return {
            "n_causal": self.n_causal,
            "n_non_causal": self.n_non_causal,
            "acc_causal": self.acc_causal,
            "acc_non_causal": self.acc_non_causal,
            "chr": self.chr,
            "m_acc": self.m_acc,
            "fpr": self.fpr,
            "tnr": self.tnr,
            "mcc": self.mcc,
            "unparseable_count": self.unparseable_count,
            "mean_token_len": self.mean_token_len,
            "tokenizer_provenance": self.tokenizer_provenance,
            "intervention": self.intervention,
        }


def text_digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def evaluate_predictions(
    records: list[PredictionRecord],
    mean_token_len: float | None = None,
    tokenizer_provenance: str | None = None,
    intervention: bool = False,
) -> MetricsReport:
    """Per-class accuracies and derived metrics; unparseable answers count
    against the gold class and are folded into the wrong cell for MCC."""
    if not records:
        raise ValidationError("cannot evaluate zero prediction records")
    n_causal = sum(1 for r in records if r.label is Label.CAUSAL)
    n_non_causal = len(records) - n_causal
    tp = sum(1 for r in records if r.label is Label.CAUSAL and r.predicted is Answer.YES)
    tn = sum(1 for r in records if r.label is Label.NON_CAUSAL and r.predicted is Answer.NO)
    fn = n_causal - tp
    fp = n_non_causal - tn
    unparseable = sum(1 for r in records if r.predicted is Answer.UNPARSEABLE)

    acc_causal = tp / n_causal if n_causal else None
    acc_non_causal = tn / n_non_causal if n_non_causal else None
    both = acc_causal is not None and acc_non_causal is not None
    return MetricsReport(
        n_causal=n_causal,
        n_non_causal=n_non_causal,
        acc_causal=acc_causal,
        acc_non_causal=acc_non_causal,
        chr=acc_causal - acc_non_causal if both else None,
        m_acc=(acc_causal + acc_non_causal) / 2 if both else None,
        fpr=1.0 - acc_non_causal if acc_non_causal is not None else None,
        tnr=acc_non_causal,
        mcc=_mcc(tp, fp, tn, fn),
        unparseable_count=unparseable,
        mean_token_len=mean_token_len,
        tokenizer_provenance=tokenizer_provenance,
        intervention=intervention,
    )


def _mcc(tp: int, fp: int, tn: int, fn: int) -> float:
    denominator = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    if denominator == 0:
        return 0.0
    return (tp * tn - fp * fn) / math.sqrt(denominator)


def _predict(
    endpoint: EndpointConfig,
    pairs: list[EventPair],
    prompt_for,
    gateway: Gateway | None,
    raw_sink: list | None,
) -> tuple[list[PredictionRecord], float | None, str | None]:
    if not pairs:
        raise ValidationError("cannot evaluate an empty pair list")
    gw = gateway or Gateway()

    def attempt(pair: EventPair):
        prompt = prompt_for(pair)
        try:
            return pair, prompt, gw.complete(endpoint, prompt)
        except (TransportError, ApiError) as exc:
            return pair, prompt, exc

    if endpoint.max_in_flight > 1 and len(pairs) > 1:
        with ThreadPoolExecutor(max_workers=endpoint.max_in_flight) as pool:
            results = list(pool.map(attempt, pairs))
    else:
        results = [attempt(p) for p in pairs]

    records: list[PredictionRecord] = []
    token_counts: list[int] = []
    methods: set[str] = set()
    n_errors = 0
    for pair, prompt, outcome in results:
        if isinstance(outcome, Exception):
            n_errors += 1
            records.append(
                PredictionRecord(
                    pair_id=pair.pair_id,
                    label=pair.label,
                    predicted=Answer.UNPARSEABLE,
                    raw_digest=text_digest(""),
                    error=f"{type(outcome).__name__}: {outcome}",
                )
            )
            if raw_sink is not None:
                raw_sink.append({"pair_id": pair.pair_id, "prompt": prompt, "response": None,
                                 "error": f"{type(outcome).__name__}: {outcome}"})
            continue
        text = outcome.text
        records.append(
            PredictionRecord(
                pair_id=pair.pair_id,
                label=pair.label,
                predicted=parse_final_answer(text).value,
                raw_digest=text_digest(text),
            )
        )
        if raw_sink is not None:
            raw_sink.append({"pair_id": pair.pair_id, "prompt": prompt, "response": text,
                             "error": None})
        n = outcome.usage.completion_tokens
        if n and n > 0:
            token_counts.append(n)
            methods.add("endpoint")
        else:
            token_counts.append(len(text.split()))
            methods.add("whitespace")
    if n_errors == len(pairs):
        raise StageError(
            f"endpoint {endpoint.base_url} failed on all {len(pairs)} requests; "
            "refusing to report"
        )
    mean_len = sum(token_counts) / len(token_counts) if token_counts else None
    provenance = methods.pop() if len(methods) == 1 else ("mixed" if methods else None)
    return records, mean_len, provenance


def run_evaluation(
    endpoint: EndpointConfig,
    pairs: list[EventPair],
    template: TemplateId = TemplateId.ZERO_SHOT,
    demos: list[FewShotDemo] | None = None,
    gateway: Gateway | None = None,
    raw_sink: list | None = None,
) -> tuple[MetricsReport, list[PredictionRecord]]:
    records, mean_len, provenance = _predict(
        endpoint, pairs, lambda p: build_eci_prompt(p, template, demos), gateway, raw_sink
    )
    report = evaluate_predictions(records, mean_token_len=mean_len,
                                  tokenizer_provenance=provenance)
    return report, records


def run_robustness(
    endpoint: EndpointConfig,
    pairs: list[EventPair],
    gateway: Gateway | None = None,
    raw_sink: list | None = None,
    records_sink: list | None = None,
) -> MetricsReport:
    """Evaluation with a contradictory claim injected into every prompt."""
    records, mean_len, provenance = _predict(
        endpoint, pairs, build_intervention_prompt, gateway, raw_sink
    )
    if records_sink is not None:
        records_sink.extend(records)
    return evaluate_predictions(records, mean_token_len=mean_len,
                                tokenizer_provenance=provenance, intervention=True)


CSV_COLUMNS = [
    "label", "n_causal", "n_non_causal", "acc_causal", "acc_non_causal",
    "chr", "m_acc", "fpr", "tnr", "mcc", "unparseable_count",
    "mean_token_len", "tokenizer_provenance", "intervention",
]


def format_percent(fraction: float | None) -> str:
    return "" if fraction is None else f"{fraction * 100:.2f}"


def emit_report_csv(reports: list[tuple[str, MetricsReport]], path) -> Path:
    """One row per labeled report; accuracy-style columns as two-decimal percents."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_COLUMNS)
            for label, r in reports:
                writer.writerow([
                    label,
                    r.n_causal,
                    r.n_non_causal,
                    format_percent(r.acc_causal),
                    format_percent(r.acc_non_causal),
                    format_percent(r.chr),
                    format_percent(r.m_acc),
                    format_percent(r.fpr),
                    format_percent(r.tnr),
                    f"{r.mcc:.3f}",
                    r.unparseable_count,
                    "" if r.mean_token_len is None else f"{r.mean_token_len:.2f}",
                    r.tokenizer_provenance or "",
                    "true" if r.intervention else "false",
                ])
    except OSError as exc:
        raise IoError(f"cannot write report to {path}: {exc}") from exc
    return path
