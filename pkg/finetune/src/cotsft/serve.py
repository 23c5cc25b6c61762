"""OpenAI-compatible serving for a tuned adapter.

Two routes: chat completions with greedy decoding (temperature 0 only, the
whole point is determinism) and legacy echo-mode completions that return
per-token logprobs with text offsets, which is what perplexity scoring
clients expect.
"""

from __future__ import annotations

import hashlib
import socket
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from fastapi import Body, FastAPI
from fastapi.responses import JSONResponse

from .data import INSTRUCTION_SEP
from .errors import ServingError
from .lora import load_adapter, read_adapter_meta
from .model import TinyCausalLM, echo_logprobs
from .tokenizer import ByteTokenizer

GENERATION_CAP = 160


@dataclass
class ServingBundle:
    model: TinyCausalLM
    tokenizer: ByteTokenizer
    model_name: str


def load_bundle(adapter_dir, base_model_path=None,
                model_name: str | None = None) -> ServingBundle:
    model = load_adapter(adapter_dir, base_model_path)
    model.eval()
    if model_name is None:
        meta = read_adapter_meta(adapter_dir)
        model_name = "cotsft-" + hashlib.sha256(
            str(meta["config"]).encode("utf-8")
        ).hexdigest()[:8]
    return ServingBundle(model=model, tokenizer=ByteTokenizer(),
                         model_name=model_name)


def _error(status: int, message: str) -> JSONResponse:
    return JSONResponse(status_code=status,
                        content={"error": {"message": message}})


@torch.no_grad()
def _generate_with_logprobs(bundle: ServingBundle, prompt: str,
                            max_new_tokens: int) -> tuple[list[int], list[float]]:
    tok = bundle.tokenizer
    ids = [tok.bos_id] + tok.encode(prompt)
    budget = min(max_new_tokens, bundle.model.dims.max_seq_len - len(ids))
    if budget <= 0:
        raise ServingError(
            f"prompt of {len(ids)} tokens leaves no room to generate "
            f"(model maximum {bundle.model.dims.max_seq_len})"
        )
    generated: list[int] = []
    scores: list[float] = []
    for _ in range(budget):
        x = torch.tensor([ids + generated], dtype=torch.long)
        logprobs = F.log_softmax(bundle.model(x)[0, -1].float(), dim=-1)
        next_id = int(logprobs.argmax())
        if next_id == tok.eos_id:
            break
        generated.append(next_id)
        scores.append(float(logprobs[next_id]))
    return generated, scores


def build_app(bundle: ServingBundle) -> FastAPI:
    app = FastAPI(title="cotsft serving", docs_url=None, redoc_url=None)

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok", "model": bundle.model_name}

    @app.post("/v1/chat/completions")
    def chat_completions(body: dict = Body(...)):
        messages = body.get("messages") or []
        if not messages or not isinstance(messages[-1].get("content"), str):
            return _error(400, "messages must end with a content string")
        if body.get("temperature") not in (None, 0, 0.0):
            return _error(400, "only temperature 0 is supported")
        prompt = messages[-1]["content"]
        max_new = min(int(body.get("max_tokens") or GENERATION_CAP),
                      GENERATION_CAP)
        templated = prompt + INSTRUCTION_SEP
        try:
            generated, scores = _generate_with_logprobs(bundle, templated,
                                                        max_new)
        except ServingError as exc:
            return _error(400, str(exc))
        text = bundle.tokenizer.decode(generated)
        n_prompt = len(bundle.tokenizer.encode(templated)) + 1
        choice: dict = {
            "index": 0,
            "message": {"role": "assistant", "content": text},
            "finish_reason": "stop" if len(generated) < max_new else "length",
        }
        if body.get("logprobs"):
            choice["logprobs"] = {
                "content": [
                    {"token": bundle.tokenizer.decode([token_id]), "logprob": lp}
                    for token_id, lp in zip(generated, scores)
                ]
            }
        digest = hashlib.sha256(prompt.encode("utf-8")).hexdigest()[:12]
        return {
            "id": f"cotsft-chat-{digest}",
            "object": "chat.completion",
            "model": bundle.model_name,
            "choices": [choice],
            "usage": {
                "prompt_tokens": n_prompt,
                "completion_tokens": len(generated),
                "total_tokens": n_prompt + len(generated),
            },
        }

    @app.post("/v1/completions")
    def completions(body: dict = Body(...)):
        if not body.get("echo") or body.get("max_tokens", 0) != 0:
            return _error(400, "only echo-mode scoring is supported "
                               "(echo=true, max_tokens=0)")
        text = body.get("prompt")
        if not isinstance(text, str) or not text:
            return _error(400, "prompt must be a non-empty string")
        if len(bundle.tokenizer.encode(text)) + 1 > bundle.model.dims.max_seq_len:
            return _error(400, "text exceeds the model's maximum sequence length")
        logprobs = echo_logprobs(bundle.model, bundle.tokenizer, text)
        digest = hashlib.sha256(text.encode("utf-8")).hexdigest()[:12]
        return {
            "id": f"cotsft-cmpl-{digest}",
            "object": "text_completion",
            "model": bundle.model_name,
            "choices": [
                {
                    "index": 0,
                    "text": text,
                    "finish_reason": "stop",
                    "logprobs": {
                        "tokens": bundle.tokenizer.token_strings(text),
                        "token_logprobs": logprobs,
                        "text_offset": bundle.tokenizer.char_offsets(text),
                    },
                }
            ],
            "usage": {
                "prompt_tokens": len(logprobs),
                "completion_tokens": 0,
                "total_tokens": len(logprobs),
            },
        }

    return app


def ensure_port_free(host: str, port: int) -> None:
    with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as probe:
        try:
            probe.bind((host, port))
        except OSError as exc:
            raise ServingError(f"cannot serve on {host}:{port}: {exc}") from exc


def serve(adapter_dir, port: int, host: str = "127.0.0.1",
          base_model_path=None) -> None:
    """Blocking entry point: load the adapter and serve it over HTTP."""
    import uvicorn

    ensure_port_free(host, port)
    app = build_app(load_bundle(adapter_dir, base_model_path))
    uvicorn.run(app, host=host, port=port, log_level="warning")
