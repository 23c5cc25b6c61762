"""Low-rank adapters over the base model's linear layers.

A wrapped layer computes base(x) + (alpha/rank) * B(A(dropout(x))) with A
normally initialized and B zero, so the adapted model starts exactly at the
base model. The transformer body stays frozen; the byte embedding and the
output head remain fully trainable and are stored inside the adapter, since
a byte-vocab model cannot adapt through a frozen head.
"""

from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigError
from .model import ModelDims, TinyCausalLM, load_base_model

TARGET_SUFFIXES = ("attn.qkv", "attn.out", "mlp.0", "mlp.2")

FULL_TUNE_PREFIXES = ("tok_emb.", "lm_head.")

ADAPTER_FILE = "adapter.pt"


class LoRALinear(nn.Module):
    def __init__(self, base: nn.Linear, rank: int, alpha: int, dropout: float):
        super().__init__()
        self.base = base
        self.lora_a = nn.Parameter(torch.empty(rank, base.in_features))
        self.lora_b = nn.Parameter(torch.zeros(base.out_features, rank))
        nn.init.normal_(self.lora_a, std=0.02)
        self.scaling = alpha / rank
        self.dropout = nn.Dropout(dropout)
        self.base.weight.requires_grad_(False)
        if self.base.bias is not None:
            self.base.bias.requires_grad_(False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        update = F.linear(F.linear(self.dropout(x), self.lora_a), self.lora_b)
        return self.base(x) + update * self.scaling


def apply_lora(model: TinyCausalLM, rank: int, alpha: int,
               dropout: float) -> list[str]:
    """Freeze the body, wrap every target linear, keep embedding and head hot.

    Returns the wrapped layer names.
    """
    for p in model.parameters():
        p.requires_grad_(False)
    wrapped = []
    for name, module in list(model.named_modules()):
        if not isinstance(module, nn.Linear):
            continue
        if not name.endswith(TARGET_SUFFIXES):
            continue
        parent = model.get_submodule(name.rsplit(".", 1)[0])
        child = name.rsplit(".", 1)[1]
        setattr(parent, child, LoRALinear(module, rank, alpha, dropout))
        wrapped.append(name)
    if not wrapped:
        raise ConfigError("no adapter target layers found in the model")
    for name, param in model.named_parameters():
        if name.startswith(FULL_TUNE_PREFIXES):
            param.requires_grad_(True)
    return wrapped


def trainable_parameters(model: nn.Module) -> list[nn.Parameter]:
    return [p for p in model.parameters() if p.requires_grad]


def adapter_state_dict(model: nn.Module) -> dict[str, torch.Tensor]:
    return {
        name: tensor
        for name, tensor in model.state_dict().items()
        if "lora_a" in name or "lora_b" in name
        or name.startswith(FULL_TUNE_PREFIXES)
    }


def save_adapter(model: TinyCausalLM, out_dir, *, rank: int, alpha: int,
                 dropout: float, base_model_path: str) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / ADAPTER_FILE
    torch.save(
        {
            "lora": {"rank": rank, "alpha": alpha, "dropout": dropout},
            "dims": asdict(model.dims),
            "base_model_path": str(base_model_path),
            "state_dict": adapter_state_dict(model),
        },
        path,
    )
    return path


def load_adapter(adapter_dir, base_model_path=None) -> TinyCausalLM:
    """Rebuild base + adapter from an adapter directory."""
    path = Path(adapter_dir) / ADAPTER_FILE
    if not path.exists():
        raise ConfigError(f"adapter not found: {path}")
    blob = torch.load(path, map_location="cpu", weights_only=True)
    base_path = Path(base_model_path or blob["base_model_path"])
    model = load_base_model(base_path)
    if asdict(model.dims) != blob["dims"]:
        raise ConfigError(
            f"adapter was trained on {ModelDims(**blob['dims'])}, "
            f"base model is {model.dims}"
        )
    lora = blob["lora"]
    apply_lora(model, lora["rank"], lora["alpha"], lora["dropout"])
    missing, unexpected = model.load_state_dict(blob["state_dict"], strict=False)
    if unexpected:
        raise ConfigError(f"adapter contains unknown tensors: {unexpected}")
    leftover = [
        m for m in missing
        if "lora_a" in m or "lora_b" in m or m.startswith(FULL_TUNE_PREFIXES)
    ]
    if leftover:
        raise ConfigError(f"adapter is missing tensors: {leftover}")
    return model


def read_adapter_meta(adapter_dir) -> dict:
    meta_path = Path(adapter_dir) / "train_meta.json"
    if not meta_path.exists():
        raise ConfigError(f"training metadata not found: {meta_path}")
    return json.loads(meta_path.read_text("utf-8"))
