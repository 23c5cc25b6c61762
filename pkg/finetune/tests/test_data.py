"""Record loading, byte encoding, batching, and the masked objective."""

from __future__ import annotations

import json
import math

import pytest
import torch

from cotsft.data import (INSTRUCTION_SEP, build_batches, encode_example,
                         load_sft_records, masked_loss)
from cotsft.errors import DataError
from cotsft.tokenizer import ByteTokenizer

from conftest import SFT_PATH

TOK = ByteTokenizer()


class TestLoading:
    def test_fixture_export_loads_completely(self):
        records = load_sft_records(SFT_PATH)
        assert len(records) == 32
        for record in records:
            assert record["instruction"]
            assert record["response"].endswith(("[Final Answer: Yes]",
                                                "[Final Answer: No]"))

    def test_unknown_fields_ride_along(self):
        records = load_sft_records(SFT_PATH)
        assert "exporter_note" in records[3]
        assert "extra_tag" in records[10]["meta"]

    def test_blank_lines_are_skipped(self, tmp_path):
        path = tmp_path / "gaps.jsonl"
        row = json.dumps({"instruction": "a", "response": "b"})
        path.write_text(f"\n{row}\n\n{row}\n", "utf-8")
        assert len(load_sft_records(path)) == 2

    def test_missing_file_is_reported(self, tmp_path):
        with pytest.raises(DataError, match="not found"):
            load_sft_records(tmp_path / "absent.jsonl")

    def test_empty_file_is_reported(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("\n\n", "utf-8")
        with pytest.raises(DataError, match="no training records"):
            load_sft_records(path)

    def test_malformed_json_names_the_line(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        row = json.dumps({"instruction": "a", "response": "b"})
        path.write_text(f"{row}\n{{not json\n{row}\n", "utf-8")
        with pytest.raises(DataError, match=r"bad\.jsonl:2: not valid JSON"):
            load_sft_records(path)

    def test_non_object_line_names_the_line(self, tmp_path):
        path = tmp_path / "scalar.jsonl"
        path.write_text('"just a string"\n', "utf-8")
        with pytest.raises(DataError, match=r"scalar\.jsonl:1: expected an object"):
            load_sft_records(path)

    @pytest.mark.parametrize("record", [
        {"response": "b"},
        {"instruction": "", "response": "b"},
        {"instruction": "a"},
        {"instruction": "a", "response": ""},
        {"instruction": "a", "response": 3},
    ])
    def test_missing_or_empty_fields_name_the_line(self, tmp_path, record):
        path = tmp_path / "fields.jsonl"
        path.write_text(json.dumps(record) + "\n", "utf-8")
        with pytest.raises(DataError, match=r"fields\.jsonl:1: missing or empty"):
            load_sft_records(path)


class TestEncoding:
    def test_layout_is_bos_instruction_sep_response_eos(self):
        record = {"instruction": "Why?", "response": "So."}
        ids, mask = encode_example(TOK, record)
        prompt = "Why?" + INSTRUCTION_SEP
        assert ids[0] == TOK.bos_id
        assert ids[1:1 + len(prompt)] == TOK.encode(prompt)
        assert ids[1 + len(prompt):-1] == TOK.encode("So.")
        assert ids[-1] == TOK.eos_id

    def test_mask_covers_response_and_eos_only(self):
        record = {"instruction": "Why?", "response": "So."}
        ids, mask = encode_example(TOK, record)
        n_prompt = 1 + len("Why?" + INSTRUCTION_SEP)
        assert mask[:n_prompt] == [0] * n_prompt
        assert mask[n_prompt:] == [1] * (len("So.") + 1)
        assert len(mask) == len(ids)

    def test_multibyte_text_counts_bytes_not_chars(self):
        record = {"instruction": "naïve", "response": "ok"}
        ids, _mask = encode_example(TOK, record)
        assert len(ids) == 1 + len("naïve".encode()) + 1 + 2 + 1


class TestBatching:
    def test_packing_covers_every_token_exactly_once(self):
        records = load_sft_records(SFT_PATH)
        batches = build_batches(records, TOK, block_len=128, packing=True)
        stream_len = sum(len(encode_example(TOK, r)[0]) for r in records)
        assert len(batches) == math.ceil(stream_len / 128)
        unpadded = sum(int((ids != TOK.pad_id).sum()) for ids, _m in batches)
        assert unpadded == stream_len

    def test_every_packed_batch_has_fixed_shape(self):
        records = load_sft_records(SFT_PATH)
        for ids, mask in build_batches(records, TOK, block_len=96, packing=True):
            assert ids.shape == (1, 96)
            assert mask.shape == (1, 96)
            assert ids.dtype == torch.long

    def test_pad_tail_is_never_supervised(self):
        records = load_sft_records(SFT_PATH)
        ids, mask = build_batches(records, TOK, block_len=512, packing=True)[-1]
        pad = ids[0] == TOK.pad_id
        assert bool(pad.any())
        assert int(mask[0][pad].sum()) == 0

    def test_unpacked_mode_is_one_example_per_batch(self):
        records = load_sft_records(SFT_PATH)
        batches = build_batches(records, TOK, block_len=512, packing=False)
        assert len(batches) == len(records)

    def test_unpacked_mode_truncates_long_examples(self):
        records = [{"instruction": "i" * 50, "response": "r" * 50}]
        (ids, mask), = build_batches(records, TOK, block_len=16, packing=False)
        assert ids.shape == (1, 16)
        assert int(ids[0][-1]) != TOK.pad_id


class TestMaskedLoss:
    def test_matches_plain_cross_entropy_on_supervised_positions(self):
        torch.manual_seed(0)
        ids = torch.tensor([[5, 6, 7, 8]])
        mask = torch.tensor([[0, 0, 1, 1]])
        logits = torch.randn(1, 4, 259)
        expected = torch.nn.functional.cross_entropy(
            logits[0, 1:3], torch.tensor([7, 8]))
        assert torch.isclose(masked_loss(logits, ids, mask), expected)

    def test_all_masked_batch_is_rejected(self):
        ids = torch.tensor([[5, 6, 7]])
        mask = torch.zeros_like(ids)
        logits = torch.randn(1, 3, 259)
        with pytest.raises(DataError, match="no supervised tokens"):
            masked_loss(logits, ids, mask)

    def test_prompt_logits_cannot_change_the_loss(self):
        torch.manual_seed(1)
        ids = torch.tensor([[5, 6, 7, 8]])
        mask = torch.tensor([[0, 0, 1, 1]])
        logits = torch.randn(1, 4, 259)
        shifted = logits.clone()
        shifted[0, 0] += 100.0
        assert torch.isclose(masked_loss(logits, ids, mask),
                             masked_loss(shifted, ids, mask))
