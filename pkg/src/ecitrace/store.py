"""Persistence: JSON-lines artifacts, content digests, response cache, manifests.

Digests are computed over a canonical form with timestamp fields removed, so
two runs of the same pipeline produce identical digests even though the
artifacts embed wall-clock times.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable

from .errors import CacheError, IoError

# Fields dropped (recursively) before hashing or determinism comparisons.
TIMESTAMP_KEYS = frozenset({"timestamp", "timestamps", "created_at", "started_at", "finished_at"})


def to_jsonable(obj: Any) -> Any:
    if hasattr(obj, "to_json_dict"):
        return obj.to_json_dict()
    if isinstance(obj, dict):
        return {k: to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if hasattr(obj, "value") and obj.__class__.__module__ != "builtins":  # enums
        return obj.value
    return obj


def strip_timestamps(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {k: strip_timestamps(v) for k, v in obj.items() if k not in TIMESTAMP_KEYS}
    if isinstance(obj, list):
        return [strip_timestamps(v) for v in obj]
    return obj


def canonical_json(obj: Any) -> str:
    return json.dumps(strip_timestamps(to_jsonable(obj)), sort_keys=True,
                      ensure_ascii=False, separators=(",", ":"))


def stable_digest(obj: Any) -> str:
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


def stable_digest_records(records: Iterable[Any]) -> str:
    h = hashlib.sha256()
    for rec in records:
        h.update(canonical_json(rec).encode("utf-8"))
        h.update(b"\n")
    return h.hexdigest()


def atomic_write_text(path: str | Path, text: str) -> None:
    """Write via a temp file + rename so readers never see partial output."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                fh.write(text)
            os.replace(tmp, path)
        finally:
            if os.path.exists(tmp):
                os.unlink(tmp)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def persist_jsonl(records: Iterable[Any], path: str | Path) -> str:
    """Write one JSON object per line (UTF-8, trailing newline, stable field
    order) and return the timestamp-insensitive content digest."""
    dicts = [to_jsonable(r) for r in records]
    lines = [json.dumps(d, ensure_ascii=False) for d in dicts]
    atomic_write_text(path, "".join(line + "\n" for line in lines))
    return stable_digest_records(dicts)


def read_jsonl(path: str | Path) -> list[dict]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise CacheError(f"{path}:{i}: malformed JSON line: {exc}") from exc
    return out


def stable_digest_file(path: str | Path) -> str:
    """Recompute the digest of an artifact on disk: timestamp-insensitive for
    JSON formats, plain content hash for anything else."""
    path = Path(path)
    if path.suffix == ".jsonl":
        text = path.read_text("utf-8")
        return stable_digest_records(json.loads(l) for l in text.splitlines() if l.strip())
    if path.suffix == ".json":
        return stable_digest(json.loads(path.read_text("utf-8")))
    return file_bytes_digest(path)


def file_bytes_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class CacheEntry:
    request_digest: str
    blob: dict
    endpoint_fingerprint: str
    created_at: float = 0.0

    def to_json_dict(self) -> dict:
        return {
            "request_digest": self.request_digest,
            "blob": self.blob,
            "endpoint_fingerprint": self.endpoint_fingerprint,
            "created_at": self.created_at,
        }


def request_digest(endpoint_fingerprint: str, request_body: dict) -> str:
    payload = canonical_json({"fingerprint": endpoint_fingerprint, "body": request_body})
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class ResponseCache:
    """Content-addressed store for endpoint responses, sharded by digest prefix."""

    def __init__(self, root: str | Path):
        self.root = Path(root)

    def _path(self, digest: str) -> Path:
        return self.root / digest[:2] / digest

    def get(self, digest: str) -> dict | None:
        path = self._path(digest)
        if not path.exists():
            return None
        try:
            entry = json.loads(path.read_text("utf-8"))
            if entry.get("request_digest") != digest or "blob" not in entry:
                raise CacheError(f"cache entry {digest} is inconsistent")
            return entry["blob"]
        except (json.JSONDecodeError, CacheError, OSError):
            return None  # corrupt entries behave as misses

    def put(self, entry: CacheEntry) -> None:
        path = self._path(entry.request_digest)
        if path.exists():
            return  # idempotent
        if not entry.created_at:
            entry.created_at = time.time()
        atomic_write_text(path, json.dumps(entry.to_json_dict(), ensure_ascii=False))


class InMemoryCache:
    """Map-backed cache with the same interface, for tests and one-shot runs."""

    def __init__(self):
        self._entries: dict[str, dict] = {}

    def get(self, digest: str) -> dict | None:
        return self._entries.get(digest)

    def put(self, entry: CacheEntry) -> None:
        self._entries.setdefault(entry.request_digest, entry.blob)


def append_manifest_entry(run_dir: str | Path, entry: dict, config: dict | None = None) -> dict:
    """Append one stage entry to the run manifest (append-only chain)."""
    run_dir = Path(run_dir)
    manifest_path = run_dir / "manifest.json"
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text("utf-8"))
    else:
        manifest = {"run_id": run_dir.name, "entries": []}
    if config is not None and "config" not in manifest:
        manifest["config"] = config
    if manifest["entries"]:
        entry = dict(entry, prev=stable_digest(manifest["entries"][-1]))
    else:
        entry = dict(entry, prev=None)
    manifest["entries"].append(entry)
    atomic_write_text(manifest_path, json.dumps(manifest, ensure_ascii=False, indent=2))
    return manifest


def load_manifest(run_dir: str | Path) -> dict:
    return json.loads((Path(run_dir) / "manifest.json").read_text("utf-8"))


def verify_manifest_outputs(run_dir: str | Path) -> list[str]:
    """Return a list of problems (missing files / digest mismatches)."""
    run_dir = Path(run_dir)
    problems = []
    manifest = load_manifest(run_dir)
    for entry in manifest["entries"]:
        for name, digest in entry.get("outputs", {}).items():
            path = run_dir / name
            if not path.exists():
                problems.append(f"{entry['stage']}: missing output {name}")
            elif digest is not None and stable_digest_file(path) != digest:
                problems.append(f"{entry['stage']}: digest mismatch for {name}")
    return problems


def sft_records(traces: Iterable[Any]) -> list[dict]:
    """Fine-tuning export: instruction/response rows consumed by the trainer."""
    rows = []
    for t in traces:
        d = to_jsonable(t)
        meta = d.get("meta", {})
        instruction = meta.get("instruction")
        if not instruction:
            raise CacheError(f"trace {d.get('pair_id')} lacks a recorded instruction")
        rows.append(
            {
                "instruction": instruction,
                "response": d["response_text"],
                "pair_id": d["pair_id"],
                "meta": {
                    "source_model_id": d.get("source_model_id"),
                    "stage": d.get("stage"),
                    "template_id": meta.get("template_id"),
                    "label": meta.get("label"),
                },
            }
        )
    return rows
