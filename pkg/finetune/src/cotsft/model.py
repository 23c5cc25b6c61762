"""A small causal transformer LM used as the desk-scale base model.

The architecture is deliberately tiny (two pre-norm blocks, 64-dim) so that
adapter training and greedy serving run in seconds on a CPU, while the
training loop stays configuration-identical to a full-size run.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import torch
import torch.nn.functional as F
from torch import nn
from torch.utils.checkpoint import checkpoint

from .errors import ConfigError
from .tokenizer import VOCAB_SIZE, ByteTokenizer


@dataclass(frozen=True)
class ModelDims:
    vocab_size: int = VOCAB_SIZE
    d_model: int = 64
    n_heads: int = 2
    n_layers: int = 2
    d_ff: int = 256
    max_seq_len: int = 1024


class CausalSelfAttention(nn.Module):
    def __init__(self, d_model: int, n_heads: int):
        super().__init__()
        if d_model % n_heads:
            raise ConfigError(f"d_model {d_model} not divisible by n_heads {n_heads}")
        self.n_heads = n_heads
        self.qkv = nn.Linear(d_model, 3 * d_model)
        self.out = nn.Linear(d_model, d_model)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, t, c = x.shape
        q, k, v = self.qkv(x).split(c, dim=2)
        shape = (b, t, self.n_heads, c // self.n_heads)
        q = q.view(shape).transpose(1, 2)
        k = k.view(shape).transpose(1, 2)
        v = v.view(shape).transpose(1, 2)
        y = F.scaled_dot_product_attention(q, k, v, is_causal=True)
        return self.out(y.transpose(1, 2).reshape(b, t, c))


class Block(nn.Module):
    def __init__(self, dims: ModelDims):
        super().__init__()
        self.ln1 = nn.LayerNorm(dims.d_model)
        self.attn = CausalSelfAttention(dims.d_model, dims.n_heads)
        self.ln2 = nn.LayerNorm(dims.d_model)
        self.mlp = nn.Sequential(
            nn.Linear(dims.d_model, dims.d_ff),
            nn.GELU(),
            nn.Linear(dims.d_ff, dims.d_model),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.ln1(x))
        return x + self.mlp(self.ln2(x))


class TinyCausalLM(nn.Module):
    def __init__(self, dims: ModelDims):
        super().__init__()
        self.dims = dims
        self.tok_emb = nn.Embedding(dims.vocab_size, dims.d_model)
        self.pos_emb = nn.Embedding(dims.max_seq_len, dims.d_model)
        self.blocks = nn.ModuleList(Block(dims) for _ in range(dims.n_layers))
        self.ln_f = nn.LayerNorm(dims.d_model)
        self.lm_head = nn.Linear(dims.d_model, dims.vocab_size, bias=False)
        self.use_checkpointing = False

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        _b, t = ids.shape
        if t > self.dims.max_seq_len:
            raise ConfigError(
                f"sequence of {t} tokens exceeds model maximum {self.dims.max_seq_len}"
            )
        pos = torch.arange(t, device=ids.device)
        x = self.tok_emb(ids) + self.pos_emb(pos)
        for block in self.blocks:
            if self.use_checkpointing and self.training:
                x = checkpoint(block, x, use_reentrant=False)
            else:
                x = block(x)
        return self.lm_head(self.ln_f(x))


def create_tiny_base_model(path, dims: ModelDims = ModelDims(), seed: int = 0) -> Path:
    torch.manual_seed(seed)
    model = TinyCausalLM(dims)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({"dims": asdict(dims), "state_dict": model.state_dict()}, path)
    return path


def load_base_model(path) -> TinyCausalLM:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"base model not found: {path}")
    blob = torch.load(path, map_location="cpu", weights_only=True)
    model = TinyCausalLM(ModelDims(**blob["dims"]))
    model.load_state_dict(blob["state_dict"])
    return model


@torch.no_grad()
def greedy_generate(model: TinyCausalLM, tokenizer: ByteTokenizer, prompt: str,
                    max_new_tokens: int = 160) -> str:
    """Deterministic argmax decoding until EOS or the token budget runs out."""
    model.eval()
    ids = [tokenizer.bos_id] + tokenizer.encode(prompt)
    budget = min(max_new_tokens, model.dims.max_seq_len - len(ids))
    if budget <= 0:
        raise ConfigError(
            f"prompt of {len(ids)} tokens leaves no room to generate "
            f"(model maximum {model.dims.max_seq_len})"
        )
    generated: list[int] = []
    for _ in range(budget):
        x = torch.tensor([ids + generated], dtype=torch.long)
        next_id = int(model(x)[0, -1].argmax())
        if next_id == tokenizer.eos_id:
            break
        generated.append(next_id)
    return tokenizer.decode(generated)


@torch.no_grad()
def echo_logprobs(model: TinyCausalLM, tokenizer: ByteTokenizer,
                  text: str) -> list[float]:
    """Log-probability of each byte of `text` given everything before it."""
    model.eval()
    ids = torch.tensor([[tokenizer.bos_id] + tokenizer.encode(text)], dtype=torch.long)
    logits = model(ids)
    logprobs = F.log_softmax(logits[0, :-1].float(), dim=-1)
    targets = ids[0, 1:]
    return logprobs.gather(1, targets.unsqueeze(1)).squeeze(1).tolist()
