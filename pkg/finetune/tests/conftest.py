"""Shared fixtures: a seeded base checkpoint, a memorization adapter, and a
live local endpoint serving it."""

from __future__ import annotations

import socket
import threading
import time
from pathlib import Path

import pytest
import requests
import uvicorn

from cotsft import TrainConfig, build_app, create_tiny_base_model, load_bundle, train

FIXTURES = Path(__file__).parent / "fixtures"
SFT_PATH = FIXTURES / "sft_32.jsonl"
LOOPBACK_CORPUS = FIXTURES / "loopback_corpus.json"


@pytest.fixture(scope="session")
def base_model_path(tmp_path_factory) -> Path:
    return create_tiny_base_model(tmp_path_factory.mktemp("base") / "base.pt",
                                  seed=7)


@pytest.fixture(scope="session")
def tuned_adapter(tmp_path_factory, base_model_path) -> Path:
    """Adapter trained long enough to reproduce the fixture's two responses.

    The raised learning rate is a test-speed choice; recipe-rate behavior is
    covered by the short smoke runs.
    """
    out = tmp_path_factory.mktemp("tuned")
    config = TrainConfig(
        base_model_path=str(base_model_path),
        data_path=str(SFT_PATH),
        output_dir=str(out),
        learning_rate=1e-2,
        max_steps=400,
        seed=7,
    )
    return train(config).adapter_dir


@pytest.fixture(scope="session")
def served_endpoint(tuned_adapter):
    """(base_url, model_name) of the tuned adapter behind a real HTTP server."""
    bundle = load_bundle(tuned_adapter)
    with socket.socket() as probe:
        probe.bind(("127.0.0.1", 0))
        port = probe.getsockname()[1]
    server = uvicorn.Server(uvicorn.Config(build_app(bundle), host="127.0.0.1",
                                           port=port, log_level="warning"))
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    base_url = f"http://127.0.0.1:{port}"
    deadline = time.monotonic() + 30
    while time.monotonic() < deadline:
        try:
            if requests.get(base_url + "/health", timeout=1).status_code == 200:
                break
        except requests.ConnectionError:
            time.sleep(0.05)
    else:
        raise RuntimeError("serving endpoint did not come up within 30s")
    yield base_url, bundle.model_name
    server.should_exit = True
    thread.join(timeout=10)
