"""Topic-wise cross-validation splits.

Topics are sorted ascending and partitioned into k contiguous blocks; fold i
tests on block i and trains on everything else. When the topic count is not
divisible by k the earliest blocks absorb the remainder.
"""

from __future__ import annotations

import random
from collections.abc import Sequence

from ..errors import ConfigError
from .records import Dataset, FoldSpec, Granularity, Label


def make_folds(topic_ids: Sequence[int], k: int) -> list[FoldSpec]:
    topics = sorted(set(topic_ids))
    if k < 1:
        raise ConfigError(f"fold count must be >= 1, got {k}")
    if k > len(topics):
        raise ConfigError(f"cannot make {k} folds from {len(topics)} topics")
    base, remainder = divmod(len(topics), k)
    blocks: list[list[int]] = []
    cursor = 0
    for b in range(k):
        size = base + (1 if b < remainder else 0)
        blocks.append(topics[cursor:cursor + size])
        cursor += size
    folds = []
    for index, block in enumerate(blocks, start=1):
        block_set = set(block)
        train = tuple(t for t in topics if t not in block_set)
        folds.append(FoldSpec(fold_index=index, train_topics=train, test_topics=tuple(block)))
    return folds


def analysis_split(topic_ids: Sequence[int], n_train: int = 16) -> FoldSpec:
    """Single split: first n_train ascending topics train, the rest test."""
    topics = sorted(set(topic_ids))
    if not (0 < n_train < len(topics)):
        raise ConfigError(
            f"n_train must be strictly between 0 and {len(topics)}, got {n_train}"
        )
    return FoldSpec(
        fold_index=0,
        train_topics=tuple(topics[:n_train]),
        test_topics=tuple(topics[n_train:]),
    )


def split_by_fold(dataset: Dataset, fold: FoldSpec) -> tuple[Dataset, Dataset]:
    """(train, test) subsets of a dataset under the given fold."""
    train_set, test_set = set(fold.train_topics), set(fold.test_topics)
    train = [p for p in dataset.pairs if p.topic_id in train_set]
    test = [p for p in dataset.pairs if p.topic_id in test_set]
    return dataset.subset(train), dataset.subset(test)


def sample_doc_level(dataset: Dataset, n_neg: int, seed: int) -> Dataset:
    """Every causal inter-sentence pair plus a seeded sample of non-causal ones."""
    inter = [p for p in dataset.pairs if p.granularity is Granularity.INTER_SENTENCE]
    negatives = sorted(
        (p for p in inter if p.label is Label.NON_CAUSAL), key=lambda p: p.pair_id
    )
    rng = random.Random(seed)
    take = min(n_neg, len(negatives))
    chosen = {p.pair_id for p in rng.sample(negatives, take)}
    kept = [
        p for p in inter
        if p.label is Label.CAUSAL or p.pair_id in chosen
    ]
    out = dataset.subset(kept)
    out.provenance.update(
        {"doc_level_seed": seed, "n_neg_requested": n_neg, "n_neg_selected": take}
    )
    return out
