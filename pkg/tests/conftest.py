from __future__ import annotations

import os
from pathlib import Path

import pytest

from ecitrace.corpus import DatasetKind, EventMention, EventPair, Granularity, Label
from ecitrace.gateway import clear_mocks

FIXTURES = Path(__file__).parent / "fixtures"
GOLDEN = FIXTURES / "golden"


@pytest.fixture(autouse=True)
def _clean_mock_registry():
    clear_mocks()
    yield
    clear_mocks()


def make_pair(
    label: Label = Label.CAUSAL,
    doc_id: str = "doc1",
    topic_id: int = 1,
    context: str = "The storm wrecked the pier, forcing the port to close.",
    a: str = "wrecked",
    b: str = "forcing",
    granularity: Granularity = Granularity.INTRA_SENTENCE,
    sent_a: int = 0,
    sent_b: int | None = None,
) -> EventPair:
    ia = context.index(a)
    ib = context.index(b, ia + len(a)) if b != a else context.index(b, ia + 1)
    return EventPair.build(
        dataset=DatasetKind.SYNTHETIC,
        topic_id=topic_id,
        doc_id=doc_id,
        context_text=context,
        event_a=EventMention(a, (ia, ia + len(a)), sent_a),
        event_b=EventMention(b, (ib, ib + len(b)), sent_b if sent_b is not None else sent_a),
        label=label,
        granularity=granularity,
    )


def corpora_root() -> Path | None:
    """Real corpus releases, when present (CI machines only)."""
    env = os.environ.get("ECI_CORPORA_DIR")
    if env and Path(env).is_dir():
        return Path(env)
    default = Path(__file__).parent.parent / "data"
    return default if default.is_dir() else None


def require_corpus(name: str) -> Path:
    root = corpora_root()
    candidate = root / name if root else None
    if candidate is None or not candidate.exists():
        pytest.skip(
            f"corpus {name!r} not available (set ECI_CORPORA_DIR or place it under data/); "
            "skipping release-count check"
        )
    return candidate
