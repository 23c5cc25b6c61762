"""Adapter fine-tuning over exported reasoning traces, plus serving."""

from .config import TrainConfig
from .data import load_sft_records
from .errors import ConfigError, CotSftError, DataError, ServingError, TrainingError
from .lora import load_adapter, read_adapter_meta
from .model import ModelDims, TinyCausalLM, create_tiny_base_model, greedy_generate
from .serve import build_app, load_bundle, serve
from .tokenizer import ByteTokenizer
from .train import TrainResult, train

__all__ = [
    "ByteTokenizer",
    "ConfigError",
    "CotSftError",
    "DataError",
    "ModelDims",
    "ServingError",
    "TinyCausalLM",
    "TrainConfig",
    "TrainResult",
    "TrainingError",
    "build_app",
    "create_tiny_base_model",
    "greedy_generate",
    "load_adapter",
    "load_bundle",
    "load_sft_records",
    "read_adapter_meta",
    "serve",
    "train",
]
