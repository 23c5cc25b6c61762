"""Byte-level tokenizer: ids 0..255 are raw UTF-8 bytes plus three specials.

Byte granularity keeps the vocabulary tiny (fits the desk-scale base model)
and makes every string representable without a trained vocabulary.
"""

from __future__ import annotations

BOS_ID = 256
EOS_ID = 257
PAD_ID = 258
VOCAB_SIZE = 259


class ByteTokenizer:
    vocab_size = VOCAB_SIZE
    bos_id = BOS_ID
    eos_id = EOS_ID
    pad_id = PAD_ID

    def encode(self, text: str) -> list[int]:
        return list(text.encode("utf-8"))

    def decode(self, ids: list[int]) -> str:
        return bytes(i for i in ids if i < 256).decode("utf-8", errors="replace")

    def token_strings(self, text: str) -> list[str]:
        """One display string per byte token (multi-byte chars repeat theirs)."""
        out = []
        for ch in text:
            out.extend([ch] * len(ch.encode("utf-8")))
        return out

    def char_offsets(self, text: str) -> list[int]:
        """Character offset of each byte token within `text`."""
        offsets = []
        for i, ch in enumerate(text):
            offsets.extend([i] * len(ch.encode("utf-8")))
        return offsets
