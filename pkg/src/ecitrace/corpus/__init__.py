"""Corpus loading, pair extraction, and split construction."""

from .folds import analysis_split, make_folds, sample_doc_level, split_by_fold
from .loaders import (
    extract_pairs,
    join_tokens,
    load_corpus,
    parse_causal_time_bank,
    parse_event_story_line,
    parse_maven_ere,
    parse_synthetic,
    write_synthetic_corpus,
)
from .records import (
    Dataset,
    DatasetKind,
    DocEvent,
    EventMention,
    EventPair,
    FoldSpec,
    Granularity,
    Label,
    ParsedDocument,
    normalize_ws,
)

__all__ = [
    "Dataset",
    "DatasetKind",
    "DocEvent",
    "EventMention",
    "EventPair",
    "FoldSpec",
    "Granularity",
    "Label",
    "ParsedDocument",
    "analysis_split",
    "extract_pairs",
    "join_tokens",
    "load_corpus",
    "make_folds",
    "normalize_ws",
    "parse_causal_time_bank",
    "parse_event_story_line",
    "parse_maven_ere",
    "parse_synthetic",
    "sample_doc_level",
    "split_by_fold",
    "write_synthetic_corpus",
]
