"""Loaders for the supported corpora, all funneling into ParsedDocument.

Supported layouts:
  EventStoryLine / Causal-TimeBank: CAT XML, one ``<Document>`` per file with
    ``<token>`` elements, event markables anchored to tokens, and causal
    relation elements (PLOT_LINK / CLINK).
  MAVEN-ERE: JSON-lines, one document per line with per-sentence token lists,
    event clusters with mentions, and cluster-level causal relations.
  Synthetic: a JSON fixture format used for tests and offline runs; the
    generator lives here too.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import random
import re
import xml.etree.ElementTree as ET
from pathlib import Path

from ..errors import ConfigError, NotFoundError, ParseError
from ..store import atomic_write_text
from .records import (
    Dataset,
    DatasetKind,
    DocEvent,
    EventMention,
    EventPair,
    Granularity,
    Label,
    ParsedDocument,
)

LOADER_VERSION = "1"

_NO_SPACE_BEFORE = {
    ".", ",", ";", ":", "!", "?", ")", "]", "}", "%", "...", "''", '"',
}
_NO_SPACE_AFTER = {"(", "[", "{", "``", "$", "#"}
_CONTRACTION_RE = re.compile(r"^(?:'(?:s|re|ve|ll|d|m|t)|n't)$", re.IGNORECASE)


def join_tokens(tokens: list[str]) -> tuple[str, list[tuple[int, int]]]:
    """Detokenize with punctuation-aware spacing; returns text and per-token spans."""
    text = ""
    spans: list[tuple[int, int]] = []
    prev = ""
    for tok in tokens:
        needs_space = (
            bool(text)
            and tok not in _NO_SPACE_BEFORE
            and not _CONTRACTION_RE.match(tok)
            and prev not in _NO_SPACE_AFTER
        )
        if needs_space:
            text += " "
        spans.append((len(text), len(text) + len(tok)))
        text += tok
        prev = tok
    return text, spans


def extract_pairs(
    document: ParsedDocument,
    granularity: Granularity,
    candidates: str = "all",
) -> list[EventPair]:
    """All unordered trigger pairs at the requested granularity.

    candidates: "all" pairs every annotated mention with every other;
    "annotated" keeps only pairs that appear in some relation annotation.
    """
    if candidates not in ("all", "annotated"):
        raise ConfigError(f"unknown candidate scope {candidates!r}")
    indexed = sorted(
        range(len(document.events)),
        key=lambda i: (document.events[i].sentence_index, document.events[i].start,
                       document.events[i].end),
    )
    passage = document.passage()
    offsets = document.sentence_offsets()
    pairs: list[EventPair] = []
    for i, j in itertools.combinations(indexed, 2):
        ev_i, ev_j = document.events[i], document.events[j]
        same_sentence = ev_i.sentence_index == ev_j.sentence_index
        if (granularity is Granularity.INTRA_SENTENCE) != same_sentence:
            continue
        key = frozenset((i, j))
        if candidates == "annotated" and key not in document.annotated_links \
                and key not in document.causal_links:
            continue
        label = Label.CAUSAL if key in document.causal_links else Label.NON_CAUSAL
        if same_sentence:
            context = document.sentences[ev_i.sentence_index]
            mention_a = EventMention(ev_i.surface, (ev_i.start, ev_i.end), ev_i.sentence_index)
            mention_b = EventMention(ev_j.surface, (ev_j.start, ev_j.end), ev_j.sentence_index)
        else:
            context = passage
            base_i = offsets[ev_i.sentence_index]
            base_j = offsets[ev_j.sentence_index]
            mention_a = EventMention(
                ev_i.surface, (base_i + ev_i.start, base_i + ev_i.end), ev_i.sentence_index
            )
            mention_b = EventMention(
                ev_j.surface, (base_j + ev_j.start, base_j + ev_j.end), ev_j.sentence_index
            )
        pairs.append(
            EventPair.build(
                dataset=document.kind,
                topic_id=document.topic_id,
                doc_id=document.doc_id,
                context_text=context,
                event_a=mention_a,
                event_b=mention_b,
                label=label,
                granularity=granularity,
            )
        )
    return pairs


def source_digest(root: Path) -> str:
    """Cheap provenance digest over relative paths and sizes."""
    h = hashlib.sha256()
    if root.is_file():
        h.update(f"{root.name}:{root.stat().st_size}".encode())
    else:
        for p in sorted(root.rglob("*")):
            if p.is_file():
                h.update(f"{p.relative_to(root)}:{p.stat().st_size}".encode())
    return h.hexdigest()[:16]


def load_corpus(kind: DatasetKind, root_path, candidates: str = "all") -> Dataset:
    root = Path(root_path)
    if not root.exists():
        raise NotFoundError(f"corpus path does not exist: {root}")
    if kind is DatasetKind.SYNTHETIC:
        docs = parse_synthetic(root)
    elif kind is DatasetKind.EVENT_STORY_LINE:
        docs = parse_event_story_line(root)
    elif kind is DatasetKind.CAUSAL_TIME_BANK:
        docs = parse_causal_time_bank(root)
    elif kind is DatasetKind.MAVEN_ERE:
        docs = parse_maven_ere(root)
    else:
        raise ConfigError(f"unknown dataset kind {kind!r}")
    if not docs:
        raise NotFoundError(f"no {kind.value} documents found under {root}")
    docs.sort(key=lambda d: d.doc_id)
    pairs: list[EventPair] = []
    for doc in docs:
        pairs.extend(extract_pairs(doc, Granularity.INTRA_SENTENCE, candidates))
        pairs.extend(extract_pairs(doc, Granularity.INTER_SENTENCE, candidates))
    provenance = {
        "loader_version": LOADER_VERSION,
        "kind": kind.value,
        "source": root.name,
        "source_digest": source_digest(root),
        "candidates": candidates,
    }
    return Dataset(pairs=pairs, source_kind=kind, provenance=provenance)


# --- synthetic fixture format -------------------------------------------------

def parse_synthetic(root: Path) -> list[ParsedDocument]:
    path = root if root.is_file() else root / "corpus.json"
    if not path.exists():
        raise NotFoundError(f"synthetic corpus file not found: {path}")
    try:
        payload = json.loads(path.read_text("utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError("malformed JSON", source=str(path), location=f"char {exc.pos}") from exc
    docs = []
    for d in payload.get("documents", []):
        doc_id = d["doc_id"]
        sentences = list(d["sentences"])
        events = []
        id_to_index: dict[str, int] = {}
        for ev in d["events"]:
            sent = ev["sentence"]
            if not (0 <= sent < len(sentences)):
                raise ParseError(
                    f"event {ev['eid']} references missing sentence {sent}",
                    source=str(path), location=doc_id,
                )
            slice_ = sentences[sent][ev["start"]:ev["end"]]
            if slice_ != ev["surface"]:
                raise ParseError(
                    f"event {ev['eid']} surface {ev['surface']!r} does not match "
                    f"text slice {slice_!r}",
                    source=str(path), location=doc_id,
                )
            id_to_index[ev["eid"]] = len(events)
            events.append(DocEvent(ev["surface"], sent, ev["start"], ev["end"]))
        links = set()
        for a, b in d.get("causal_links", []):
            if a not in id_to_index or b not in id_to_index:
                raise ParseError(
                    f"causal link references unknown event ({a}, {b})",
                    source=str(path), location=doc_id,
                )
            links.add(frozenset((id_to_index[a], id_to_index[b])))
        docs.append(
            ParsedDocument(
                doc_id=doc_id,
                topic_id=d.get("topic_id", 0),
                sentences=sentences,
                events=events,
                causal_links=links,
                kind=DatasetKind.SYNTHETIC,
                annotated_links=set(links),
            )
        )
    return docs


_SYNTH_TRIGGERS = [
    "collapse", "flooding", "blackout", "evacuation", "protest", "rescue",
    "explosion", "landslide", "outbreak", "shutdown", "derailment", "wildfire",
    "recall", "strike", "spill", "outage",
]
_SYNTH_PLACES = [
    "harbor district", "northern valley", "old market", "refinery", "rail yard",
    "coastal town", "industrial park", "river delta",
]
_SYNTH_ACTORS = [
    "city officials", "plant operators", "local farmers", "union leaders",
    "rescue teams", "health inspectors",
]


def _synth_doc(doc_id: str, topic_id: int, rng: random.Random) -> dict:
    """One synthetic document: 3 sentences, 4 triggers, 2 causal links."""
    t = rng.sample(_SYNTH_TRIGGERS, 4)
    place = rng.choice(_SYNTH_PLACES)
    actor = rng.choice(_SYNTH_ACTORS)

    s0 = f"A sudden {t[0]} at the {place} set off a {t[1]} within hours."
    s1 = f"The next morning {actor} announced an immediate {t[2]} across the area."
    s2 = f"Weeks earlier a minor {t[3]} had been reported nearby."
    sentences = [s0, s1, s2]
    spans = [
        (0, s0.index(t[0], 9), t[0]),
        (0, s0.index(t[1], s0.index(t[0]) + len(t[0])), t[1]),
        (1, s1.index(t[2]), t[2]),
        (2, s2.index(t[3]), t[3]),
    ]
    events = [
        {"eid": f"e{i}", "sentence": s, "start": start, "end": start + len(w), "surface": w}
        for i, (s, start, w) in enumerate(spans)
    ]
    links = [["e0", "e1"]]
    if rng.random() < 0.7:
        links.append(["e1", "e2"])
    return {
        "doc_id": doc_id,
        "topic_id": topic_id,
        "sentences": sentences,
        "events": events,
        "causal_links": links,
    }


def write_synthetic_corpus(path, n_topics: int = 20, docs_per_topic: int = 2,
                           seed: int = 7) -> Path:
    """Generate a deterministic synthetic corpus file and return its path."""
    rng = random.Random(seed)
    documents = [
        _synth_doc(f"t{topic:02d}_d{j}", topic, rng)
        for topic in range(1, n_topics + 1)
        for j in range(docs_per_topic)
    ]
    payload = {"corpus": "synthetic", "documents": documents}
    path = Path(path)
    atomic_write_text(path, json.dumps(payload, ensure_ascii=False, indent=1) + "\n")
    return path


# --- CAT XML (EventStoryLine, Causal-TimeBank) --------------------------------

def _attr(el: ET.Element, *names: str) -> str | None:
    for n in names:
        v = el.get(n)
        if v is not None:
            return v
    return None


def _parse_cat_file(path: Path, event_tag_ok, relation_tags: set[str],
                    causal_filter) -> ParsedDocument | None:
    """Shared CAT XML walk; returns None when the file is not an annotation doc."""
    try:
        tree = ET.parse(path)
    except ET.ParseError as exc:
        raise ParseError("malformed XML", source=str(path),
                         location=f"line {exc.position[0]}") from exc
    root = tree.getroot()
    tokens = root.findall(".//token")
    if not tokens:
        return None

    by_sentence: dict[int, list[tuple[int, str]]] = {}
    for tok in tokens:
        t_id = int(_attr(tok, "t_id", "id") or 0)
        sent = int(tok.get("sentence", "0"))
        by_sentence.setdefault(sent, []).append((t_id, tok.text or ""))
    sent_ids = sorted(by_sentence)
    sent_index = {s: i for i, s in enumerate(sent_ids)}
    sentences: list[str] = []
    token_span: dict[int, tuple[int, int, int]] = {}  # t_id -> (sent_idx, start, end)
    for s in sent_ids:
        toks = sorted(by_sentence[s])
        text, spans = join_tokens([w for _tid, w in toks])
        sentences.append(text)
        for (t_id, _w), span in zip(toks, spans):
            token_span[t_id] = (sent_index[s], span[0], span[1])

    events: list[DocEvent] = []
    span_to_index: dict[tuple[int, int, int], int] = {}
    mid_to_index: dict[str, int] = {}
    markables = root.find("Markables")
    for mk in list(markables) if markables is not None else []:
        if not event_tag_ok(mk.tag):
            continue
        m_id = _attr(mk, "m_id", "id")
        anchor_ids = []
        for anchor in mk.findall("token_anchor"):
            raw = _attr(anchor, "t_id", "id")
            if raw is not None:
                anchor_ids.append(int(raw))
        anchor_ids.sort()
        if not anchor_ids or any(a not in token_span for a in anchor_ids):
            continue
        sents = {token_span[a][0] for a in anchor_ids}
        if len(sents) != 1:
            continue  # cross-sentence markable, not a usable trigger
        sent_idx = sents.pop()
        start = min(token_span[a][1] for a in anchor_ids)
        end = max(token_span[a][2] for a in anchor_ids)
        key = (sent_idx, start, end)
        if key not in span_to_index:
            span_to_index[key] = len(events)
            events.append(DocEvent(sentences[sent_idx][start:end], sent_idx, start, end))
        if m_id is not None:
            mid_to_index[m_id] = span_to_index[key]

    causal: set[frozenset[int]] = set()
    annotated: set[frozenset[int]] = set()
    relations = root.find("Relations")
    for rel in list(relations) if relations is not None else []:
        if rel.tag not in relation_tags:
            continue
        src = rel.find("source")
        tgt = rel.find("target")
        if src is None or tgt is None:
            continue
        src_id = _attr(src, "m_id", "id")
        tgt_id = _attr(tgt, "m_id", "id")
        if src_id not in mid_to_index or tgt_id not in mid_to_index:
            continue
        a, b = mid_to_index[src_id], mid_to_index[tgt_id]
        if a == b:
            continue
        key = frozenset((a, b))
        annotated.add(key)
        if causal_filter(rel):
            causal.add(key)

    return ParsedDocument(
        doc_id=path.stem,
        topic_id=0,
        sentences=sentences,
        events=events,
        causal_links=causal,
        annotated_links=annotated,
    )


def _topic_from_path(path: Path, root: Path) -> int:
    for part in path.relative_to(root).parts[:-1]:
        head = part.split("_")[0]
        if head.isdigit():
            return int(head)
    return 0


def parse_event_story_line(root: Path) -> list[ParsedDocument]:
    docs = []
    for path in sorted(root.rglob("*.xml")):
        doc = _parse_cat_file(
            path,
            event_tag_ok=lambda tag: tag.startswith("ACTION_") or tag.startswith("NEG_ACTION_"),
            relation_tags={"PLOT_LINK"},
            causal_filter=lambda rel: True,
        )
        if doc is None:
            continue
        doc.kind = DatasetKind.EVENT_STORY_LINE
        doc.topic_id = _topic_from_path(path, root)
        docs.append(doc)
    return docs


def parse_causal_time_bank(root: Path) -> list[ParsedDocument]:
    docs = []
    for path in sorted(root.rglob("*.xml")):
        doc = _parse_cat_file(
            path,
            event_tag_ok=lambda tag: tag == "EVENT",
            relation_tags={"CLINK", "TLINK"},
            causal_filter=lambda rel: rel.tag == "CLINK",
        )
        if doc is None:
            continue
        doc.kind = DatasetKind.CAUSAL_TIME_BANK
        docs.append(doc)
    return docs


# --- MAVEN-ERE JSON-lines -----------------------------------------------------

_MAVEN_CAUSAL_KEYS = ("CAUSE", "PRECONDITION")


def parse_maven_ere(root: Path) -> list[ParsedDocument]:
    if root.is_file():
        files = [root]
    else:
        files = [p for p in sorted(root.glob("*.jsonl")) if "test" not in p.stem]
    docs = []
    for path in files:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    d = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ParseError("malformed JSON line", source=str(path),
                                     location=f"line {lineno}") from exc
                doc = _parse_maven_doc(d, path, lineno)
                if doc is not None:
                    docs.append(doc)
    return docs


def _parse_maven_doc(d: dict, path: Path, lineno: int) -> ParsedDocument | None:
    token_lists = d.get("tokens")
    if not token_lists:
        return None
    sentences, spans_per_sent = [], []
    for toks in token_lists:
        text, spans = join_tokens(list(toks))
        sentences.append(text)
        spans_per_sent.append(spans)

    events: list[DocEvent] = []
    cluster_to_index: dict[str, int] = {}
    for cluster in d.get("events", []):
        mentions = cluster.get("mention", [])
        if not mentions:
            continue
        rep = min(mentions, key=lambda m: (m["sent_id"], m["offset"][0]))
        sent_id = rep["sent_id"]
        tok_start, tok_end = rep["offset"]
        try:
            start = spans_per_sent[sent_id][tok_start][0]
            end = spans_per_sent[sent_id][tok_end - 1][1]
        except IndexError as exc:
            raise ParseError(
                f"event {cluster.get('id')} has out-of-range token offset",
                source=str(path), location=f"line {lineno}",
            ) from exc
        cluster_to_index[cluster["id"]] = len(events)
        events.append(DocEvent(sentences[sent_id][start:end], sent_id, start, end))

    causal: set[frozenset[int]] = set()
    rels = d.get("causal_relations") or {}
    for key in _MAVEN_CAUSAL_KEYS:
        for a, b in rels.get(key, []):
            if a in cluster_to_index and b in cluster_to_index:
                ia, ib = cluster_to_index[a], cluster_to_index[b]
                if ia != ib:
                    causal.add(frozenset((ia, ib)))

    return ParsedDocument(
        doc_id=str(d.get("id") or d.get("doc_id") or f"{path.stem}:{lineno}"),
        topic_id=0,
        sentences=sentences,
        events=events,
        causal_links=causal,
        kind=DatasetKind.MAVEN_ERE,
        annotated_links=set(causal),
    )
