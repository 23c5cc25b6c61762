"""Training configuration.

The defaults are the published recipe: one epoch at per-device batch 1 with 8
gradient-accumulation steps (effective batch 8), learning rate 2e-4 under
cosine annealing, rank-8 adapters with scaling factor 16 and dropout 0.05,
fp16, gradient checkpointing, and sequence packing all enabled. Sequence
length is not part of that recipe; `max_seq_len` defaults to 512 and is
recorded alongside the rest.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigError


@dataclass(frozen=True)
class TrainConfig:
    base_model_path: str
    data_path: str
    output_dir: str
    epochs: int = 1
    per_device_batch: int = 1
    grad_accum: int = 8
    learning_rate: float = 2e-4
    schedule: str = "cosine_annealing"
    lora_rank: int = 8
    lora_alpha: int = 16
    lora_dropout: float = 0.05
    fp16: bool = True
    gradient_checkpointing: bool = True
    packing: bool = True
    max_seq_len: int = 512
    max_steps: int | None = None
    seed: int = 0

    def __post_init__(self):
        for name in ("epochs", "per_device_batch", "grad_accum", "lora_rank",
                     "lora_alpha", "max_seq_len"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0.0 <= self.lora_dropout < 1.0:
            raise ConfigError(f"lora_dropout must be in [0, 1), got {self.lora_dropout}")
        if self.schedule != "cosine_annealing":
            raise ConfigError(f"unsupported schedule {self.schedule!r}")
        if self.max_steps is not None and self.max_steps < 1:
            raise ConfigError(f"max_steps must be >= 1 when set, got {self.max_steps}")

    @property
    def effective_batch(self) -> int:
        return self.per_device_batch * self.grad_accum

    def to_json_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "per_device_batch": self.per_device_batch,
            "grad_accum": self.grad_accum,
            "effective_batch": self.effective_batch,
            "learning_rate": self.learning_rate,
            "schedule": self.schedule,
            "lora_rank": self.lora_rank,
            "lora_alpha": self.lora_alpha,
            "lora_dropout": self.lora_dropout,
            "fp16": self.fp16,
            "gradient_checkpointing": self.gradient_checkpointing,
            "packing": self.packing,
            "max_seq_len": self.max_seq_len,
            "max_steps": self.max_steps,
            "seed": self.seed,
            "base_model_path": self.base_model_path,
            "data_path": self.data_path,
            "output_dir": self.output_dir,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in d.items() if k in known})
