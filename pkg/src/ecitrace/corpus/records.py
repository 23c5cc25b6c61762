"""Unified record model for event-causality corpora.

Every loader normalizes its source format into ``ParsedDocument`` objects,
from which labeled ``EventPair`` records are extracted at either sentence or
passage granularity.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from enum import Enum

from ..errors import ValidationError


class DatasetKind(str, Enum):
    EVENT_STORY_LINE = "EventStoryLine"
    CAUSAL_TIME_BANK = "CausalTimeBank"
    MAVEN_ERE = "MavenEre"
    SYNTHETIC = "Synthetic"


class Label(str, Enum):
    CAUSAL = "Causal"
    NON_CAUSAL = "NonCausal"


class Granularity(str, Enum):
    INTRA_SENTENCE = "IntraSentence"
    INTER_SENTENCE = "InterSentence"


_WS_RE = re.compile(r"\s+")


def normalize_ws(text: str) -> str:
    """Collapse whitespace runs to single spaces and strip the ends."""
    return _WS_RE.sub(" ", text).strip()


@dataclass(frozen=True)
class EventMention:
    surface: str
    char_span: tuple[int, int]  # offsets into the owning pair's context_text
    sentence_index: int

    def validate(self, context_text: str) -> None:
        start, end = self.char_span
        if not (0 <= start < end <= len(context_text)):
            raise ValidationError(
                f"mention span {self.char_span} out of bounds for context of length {len(context_text)}"
            )
        if context_text[start:end] != self.surface:
            raise ValidationError(
                f"mention surface {self.surface!r} does not match context slice "
                f"{context_text[start:end]!r}"
            )

    def to_json_dict(self) -> dict:
        return {
            "surface": self.surface,
            "char_span": list(self.char_span),
            "sentence_index": self.sentence_index,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "EventMention":
        return cls(
            surface=d["surface"],
            char_span=(d["char_span"][0], d["char_span"][1]),
            sentence_index=d["sentence_index"],
        )


@dataclass(frozen=True)
class EventPair:
    pair_id: str
    dataset: DatasetKind
    topic_id: int
    doc_id: str
    context_text: str
    event_a: EventMention
    event_b: EventMention
    label: Label
    granularity: Granularity

    @staticmethod
    def make_pair_id(
        dataset: DatasetKind,
        doc_id: str,
        granularity: Granularity,
        event_a: EventMention,
        event_b: EventMention,
    ) -> str:
        parts = [dataset.value, doc_id, granularity.value]
        for ev in (event_a, event_b):
            parts.append(f"{ev.sentence_index}:{ev.char_span[0]}-{ev.char_span[1]}:{ev.surface}")
        return hashlib.sha256("|".join(parts).encode("utf-8")).hexdigest()[:16]

    @classmethod
    def build(
        cls,
        dataset: DatasetKind,
        topic_id: int,
        doc_id: str,
        context_text: str,
        event_a: EventMention,
        event_b: EventMention,
        label: Label,
        granularity: Granularity,
    ) -> "EventPair":
        pair = cls(
            pair_id=cls.make_pair_id(dataset, doc_id, granularity, event_a, event_b),
            dataset=dataset,
            topic_id=topic_id,
            doc_id=doc_id,
            context_text=context_text,
            event_a=event_a,
            event_b=event_b,
            label=label,
            granularity=granularity,
        )
        pair.validate()
        return pair

    def validate(self) -> None:
        self.event_a.validate(self.context_text)
        self.event_b.validate(self.context_text)
        same_sentence = self.event_a.sentence_index == self.event_b.sentence_index
        if same_sentence != (self.granularity is Granularity.INTRA_SENTENCE):
            raise ValidationError(
                f"pair {self.pair_id}: granularity {self.granularity.value} inconsistent with "
                f"sentence indices {self.event_a.sentence_index}/{self.event_b.sentence_index}"
            )

    def to_json_dict(self) -> dict:
        return {
            "pair_id": self.pair_id,
            "dataset": self.dataset.value,
            "topic_id": self.topic_id,
            "doc_id": self.doc_id,
            "context_text": self.context_text,
            "event_a": self.event_a.to_json_dict(),
            "event_b": self.event_b.to_json_dict(),
            "label": self.label.value,
            "granularity": self.granularity.value,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "EventPair":
        return cls(
            pair_id=d["pair_id"],
            dataset=DatasetKind(d["dataset"]),
            topic_id=d["topic_id"],
            doc_id=d["doc_id"],
            context_text=d["context_text"],
            event_a=EventMention.from_json_dict(d["event_a"]),
            event_b=EventMention.from_json_dict(d["event_b"]),
            label=Label(d["label"]),
            granularity=Granularity(d["granularity"]),
        )


@dataclass(frozen=True)
class FoldSpec:
    fold_index: int  # 1-based
    train_topics: tuple[int, ...]
    test_topics: tuple[int, ...]

    def to_json_dict(self) -> dict:
        return {
            "fold_index": self.fold_index,
            "train_topics": list(self.train_topics),
            "test_topics": list(self.test_topics),
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "FoldSpec":
        return cls(
            fold_index=d["fold_index"],
            train_topics=tuple(d["train_topics"]),
            test_topics=tuple(d["test_topics"]),
        )


@dataclass
class Dataset:
    pairs: list[EventPair]
    source_kind: DatasetKind
    provenance: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for p in self.pairs:
            if p.pair_id in seen:
                raise ValidationError(f"duplicate pair_id {p.pair_id}")
            seen.add(p.pair_id)

    def counts(self) -> dict:
        pos = sum(1 for p in self.pairs if p.label is Label.CAUSAL)
        return {"total": len(self.pairs), "pos": pos, "neg": len(self.pairs) - pos}

    def subset(self, pairs: list[EventPair]) -> "Dataset":
        return Dataset(pairs=pairs, source_kind=self.source_kind, provenance=dict(self.provenance))


@dataclass(frozen=True)
class DocEvent:
    """An annotated trigger inside a parsed document, sentence-local span."""

    surface: str
    sentence_index: int
    start: int  # char offset within its sentence
    end: int


@dataclass
class ParsedDocument:
    doc_id: str
    topic_id: int
    sentences: list[str]
    events: list[DocEvent]
    causal_links: set[frozenset[int]]  # pairs of event indices
    kind: DatasetKind = DatasetKind.SYNTHETIC
    annotated_links: set[frozenset[int]] = field(default_factory=set)

    def passage(self) -> str:
        return " ".join(self.sentences)

    def sentence_offsets(self) -> list[int]:
        offsets, pos = [], 0
        for s in self.sentences:
            offsets.append(pos)
            pos += len(s) + 1  # single joining space
        return offsets
