"""Adapter training over an exported instruction/response set.

One optimizer step consumes `grad_accum` micro-batches of `per_device_batch`
sequences, so the effective batch matches the configured recipe. The
micro-batch stream cycles, which lets `max_steps` exceed one epoch for smoke
runs; without `max_steps` the step count covers `epochs` passes.
"""

from __future__ import annotations

import csv
import itertools
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import torch

from .config import TrainConfig
from .data import build_batches, load_sft_records, masked_loss
from .errors import TrainingError
from .lora import (FULL_TUNE_PREFIXES, apply_lora, save_adapter,
                   trainable_parameters)
from .model import load_base_model
from .tokenizer import ByteTokenizer

LOSS_LOG_FILE = "loss_log.csv"
META_FILE = "train_meta.json"

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainResult:
    adapter_dir: Path
    adapter_path: Path
    loss_csv: Path
    meta_path: Path
    losses: list[float]
    steps: int


def train(config: TrainConfig) -> TrainResult:
    torch.manual_seed(config.seed)
    tokenizer = ByteTokenizer()
    records = load_sft_records(config.data_path)
    model = load_base_model(config.base_model_path)
    if config.max_seq_len > model.dims.max_seq_len:
        raise TrainingError(
            f"max_seq_len {config.max_seq_len} exceeds the base model's "
            f"limit {model.dims.max_seq_len}"
        )
    wrapped = apply_lora(model, config.lora_rank, config.lora_alpha,
                         config.lora_dropout)
    model.use_checkpointing = config.gradient_checkpointing

    micro = build_batches(records, tokenizer, config.max_seq_len, config.packing)
    micro = _group(micro, config.per_device_batch)
    total_steps = config.max_steps or math.ceil(
        config.epochs * len(micro) / config.grad_accum
    )

    device = "cuda" if torch.cuda.is_available() else "cpu"
    fp16_active = bool(config.fp16 and device == "cuda")
    log.info(
        "training %d records for %d steps on %s: effective batch %d "
        "(%d x %d accumulation), lr %g, fp16 %s",
        len(records), total_steps, device, config.effective_batch,
        config.per_device_batch, config.grad_accum, config.learning_rate,
        "on" if fp16_active else "off",
    )
    model.to(device)
    model.train()
    params = trainable_parameters(model)
    optimizer = torch.optim.AdamW(params, lr=config.learning_rate)
    scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(optimizer, T_max=total_steps)
    scaler = torch.amp.GradScaler(device, enabled=fp16_active)

    feed = itertools.cycle(micro)
    losses: list[float] = []
    log_rows: list[tuple[int, float, float]] = []
    try:
        for step in range(1, total_steps + 1):
            optimizer.zero_grad(set_to_none=True)
            window = 0.0
            for _ in range(config.grad_accum):
                ids, mask = next(feed)
                ids, mask = ids.to(device), mask.to(device)
                with torch.autocast(device, enabled=fp16_active):
                    loss = masked_loss(model(ids), ids, mask)
                window += float(loss.detach())
                scaler.scale(loss / config.grad_accum).backward()
            scaler.unscale_(optimizer)
            torch.nn.utils.clip_grad_norm_(params, 1.0)
            scaler.step(optimizer)
            scaler.update()
            step_lr = scheduler.get_last_lr()[0]
            scheduler.step()
            mean_loss = window / config.grad_accum
            losses.append(mean_loss)
            log_rows.append((step, mean_loss, step_lr))
            if step % max(1, total_steps // 10) == 0 or step == total_steps:
                log.info("step %d/%d loss %.4f lr %.6f", step, total_steps,
                         mean_loss, step_lr)
    except (torch.cuda.OutOfMemoryError, MemoryError) as exc:
        raise TrainingError(
            f"out of memory at step {len(losses) + 1}/{total_steps}; lower "
            f"max_seq_len or per_device_batch ({exc})"
        ) from exc

    model.to("cpu")
    out_dir = Path(config.output_dir)
    adapter_path = save_adapter(
        model, out_dir,
        rank=config.lora_rank, alpha=config.lora_alpha,
        dropout=config.lora_dropout, base_model_path=config.base_model_path,
    )
    loss_csv = _write_loss_log(out_dir / LOSS_LOG_FILE, log_rows)
    meta_path = _write_meta(out_dir / META_FILE, config, wrapped, model,
                            total_steps, len(records), len(micro), fp16_active,
                            losses)
    log.info("wrote adapter to %s (loss %.4f -> %.4f)", adapter_path,
             losses[0], losses[-1])
    return TrainResult(
        adapter_dir=out_dir,
        adapter_path=adapter_path,
        loss_csv=loss_csv,
        meta_path=meta_path,
        losses=losses,
        steps=total_steps,
    )


def _group(micro: list, per_device_batch: int) -> list:
    if per_device_batch == 1:
        return micro
    grouped = []
    for start in range(0, len(micro), per_device_batch):
        chunk = micro[start:start + per_device_batch]
        grouped.append((torch.cat([ids for ids, _m in chunk]),
                        torch.cat([m for _ids, m in chunk])))
    return grouped


def _write_loss_log(path: Path, rows: list[tuple[int, float, float]]) -> Path:
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss", "lr"])
        for step, loss, lr in rows:
            writer.writerow([step, f"{loss:.6f}", f"{lr:.8f}"])
    return path


def _write_meta(path: Path, config: TrainConfig, wrapped: list[str], model,
                total_steps: int, n_records: int, n_micro: int,
                fp16_active: bool, losses: list[float]) -> Path:
    meta = {
        "config": config.to_json_dict(),
        "effective_batch": config.effective_batch,
        "total_steps": total_steps,
        "n_records": n_records,
        "n_micro_batches": n_micro,
        "fp16_active": fp16_active,
        "adapted_layers": wrapped,
        "full_tuned_modules": [p.rstrip(".") for p in FULL_TUNE_PREFIXES],
        "trainable_params": sum(p.numel() for p in trainable_parameters(model)),
        "total_params": sum(p.numel() for p in model.parameters()),
        "first_loss": losses[0] if losses else None,
        "final_loss": losses[-1] if losses else None,
    }
    path.write_text(json.dumps(meta, ensure_ascii=False, indent=2), "utf-8")
    return path
