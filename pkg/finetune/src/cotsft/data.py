"""Reading and encoding instruction/response training records.

Records come from the trace pipeline's JSON-lines export. Only the
"instruction" and "response" fields are consumed; anything else a future
exporter adds rides along ignored. Loss applies to response bytes (and the
closing EOS) only, never to the instruction.
"""

from __future__ import annotations

import json
from pathlib import Path

import torch

from .errors import DataError
from .tokenizer import ByteTokenizer

INSTRUCTION_SEP = "\n"


def load_sft_records(path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"training data not found: {path}")
    records = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: not valid JSON ({exc.msg})") from exc
            if not isinstance(record, dict):
                raise DataError(f"{path}:{lineno}: expected an object")
            for key in ("instruction", "response"):
                if not isinstance(record.get(key), str) or not record[key]:
                    raise DataError(f"{path}:{lineno}: missing or empty {key!r}")
            records.append(record)
    if not records:
        raise DataError(f"{path}: no training records")
    return records


def encode_example(tokenizer: ByteTokenizer, record: dict) -> tuple[list[int], list[int]]:
    """Token ids and a 0/1 loss mask; 1 marks response bytes plus EOS."""
    prompt_ids = [tokenizer.bos_id] + tokenizer.encode(
        record["instruction"] + INSTRUCTION_SEP
    )
    response_ids = tokenizer.encode(record["response"]) + [tokenizer.eos_id]
    ids = prompt_ids + response_ids
    mask = [0] * len(prompt_ids) + [1] * len(response_ids)
    return ids, mask


def build_batches(
    records: list[dict],
    tokenizer: ByteTokenizer,
    block_len: int,
    packing: bool,
) -> list[tuple[torch.Tensor, torch.Tensor]]:
    """Micro-batches of (ids, loss_mask), each a single sequence of block_len.

    Packing concatenates all examples into one token stream and slices it into
    fixed blocks; otherwise each example becomes its own padded (or truncated)
    sequence.
    """
    encoded = [encode_example(tokenizer, r) for r in records]
    sequences: list[tuple[list[int], list[int]]] = []
    if packing:
        stream_ids: list[int] = []
        stream_mask: list[int] = []
        for ids, mask in encoded:
            stream_ids.extend(ids)
            stream_mask.extend(mask)
        for start in range(0, len(stream_ids), block_len):
            sequences.append((stream_ids[start:start + block_len],
                              stream_mask[start:start + block_len]))
    else:
        for ids, mask in encoded:
            sequences.append((ids[:block_len], mask[:block_len]))

    batches = []
    for ids, mask in sequences:
        pad = block_len - len(ids)
        ids = ids + [tokenizer.pad_id] * pad
        mask = mask + [0] * pad
        batches.append((torch.tensor([ids], dtype=torch.long),
                        torch.tensor([mask], dtype=torch.long)))
    return batches


def masked_loss(logits: torch.Tensor, ids: torch.Tensor,
                mask: torch.Tensor) -> torch.Tensor:
    """Cross-entropy over positions whose target token carries the mask."""
    targets = ids[:, 1:]
    weights = mask[:, 1:].float()
    if weights.sum() == 0:
        raise DataError("batch has no supervised tokens")
    losses = torch.nn.functional.cross_entropy(
        logits[:, :-1].reshape(-1, logits.size(-1)),
        targets.reshape(-1),
        reduction="none",
    )
    return (losses * weights.reshape(-1)).sum() / weights.sum()
