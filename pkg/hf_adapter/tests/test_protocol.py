"""Protocol conformance against a tiny seeded checkpoint.

The engine side talks to the adapter subprocess through its wire-protocol
client; a local in-process forward pass over the same checkpoint is the
oracle. Covers the secondary acceptance criterion: greedy tokens via the
adapter equal the local oracle on 20 prompts, and encode/decode round-trips
every prompt.
"""

from __future__ import annotations

import json
import sys

import pytest
import torch
from transformers import AutoModelForCausalLM, AutoTokenizer

from decon.decoding import DecodeParams, greedy_decode
from decon.errors import ModelUnavailable
from decon.remote import RemoteModel

from hf_adapter.server import AdapterConfig, CheckpointServer, handle_request

MAX_STEPS = 16

PROMPTS = [
    "the quick brown fox",
    "pack my box",
    "zebras jump",
    "five dozen jugs",
    "the lazy dog sleeps",
    "quick quick quick",
    "numbers 0 1 2",
    "how vexingly",
    "fox over dog",
    "jugs of liquor",
    "daft zebras",
    "the the the",
    "brown box",
    "my quick dog",
    "over the lazy",
    "words and numbers",
    "jump over",
    "a b c",
    "dog fox dog",
    "pack the box with jugs",
]


def adapter_command(checkpoint: str) -> str:
    return f"{sys.executable} -m hf_adapter --checkpoint {checkpoint} --device cpu --dtype float32"


@pytest.fixture(scope="module")
def remote(checkpoint_dir):
    with RemoteModel(adapter_command(checkpoint_dir), handshake_timeout=120.0) as model:
        yield model


@pytest.fixture(scope="module")
def oracle(checkpoint_dir):
    torch.set_num_threads(1)
    tokenizer = AutoTokenizer.from_pretrained(checkpoint_dir)
    model = AutoModelForCausalLM.from_pretrained(checkpoint_dir)
    model.to(dtype=torch.float32)
    model.eval()
    return tokenizer, model


def oracle_greedy(tokenizer, model, ids: list[int], max_steps: int) -> list[int]:
    out: list[int] = []
    with torch.inference_mode():
        for _ in range(max_steps):
            context = torch.tensor([ids + out], dtype=torch.long)
            row = model(context).logits[0, -1]
            nxt = int(torch.argmax(row).item())
            out.append(nxt)
            if nxt == tokenizer.eos_token_id:
                break
    return out


class TestHello:
    def test_vocab_size_equals_tokenizer(self, remote, oracle):
        tokenizer, _ = oracle
        assert remote.vocab.vocab_size == len(tokenizer)
        assert remote.vocab.eos_id == tokenizer.eos_token_id


class TestEncodeDecode:
    def test_round_trips_all_prompts(self, remote):
        for prompt in PROMPTS:
            ids = remote.encode(prompt)
            assert ids, prompt
            assert remote.decode(ids) == prompt

    def test_matches_local_tokenizer(self, remote, oracle):
        tokenizer, _ = oracle
        for prompt in PROMPTS[:5]:
            assert remote.encode(prompt) == tokenizer.encode(
                prompt, add_special_tokens=False
            )


class TestLogits:
    def test_full_row_for_single_token_prefix(self, remote):
        ids = remote.encode("the quick")
        values = remote.logits(ids, (ids[0],))
        assert values.shape == (remote.vocab.vocab_size,)

    def test_matches_local_forward_pass(self, remote, oracle):
        tokenizer, model = oracle
        ids = tokenizer.encode("the quick brown", add_special_tokens=False)
        remote_row = remote.logits(ids, ())
        with torch.inference_mode():
            local_row = model(torch.tensor([ids])).logits[0, -1].to(torch.float64)
        assert remote_row == pytest.approx(local_row.tolist(), abs=1e-6)


class TestGreedyEquivalence:
    def test_twenty_prompts_match_local_oracle(self, remote, oracle):
        tokenizer, model = oracle
        params = DecodeParams(max_tokens=MAX_STEPS)
        for prompt in PROMPTS:
            ids = remote.encode(prompt)
            engine_tokens = list(greedy_decode(remote, ids, params).output)
            oracle_tokens = oracle_greedy(tokenizer, model, ids, MAX_STEPS)
            assert engine_tokens == oracle_tokens, prompt


@pytest.fixture(scope="module")
def server(checkpoint_dir):
    return CheckpointServer(AdapterConfig(checkpoint=checkpoint_dir, max_context=8))


class TestErrors:
    """Error paths exercised in-process against the same server object."""

    def test_unknown_type(self, server):
        response = handle_request(server, {"type": "train"})
        assert response["type"] == "error" and response["code"] == "bad_request"

    def test_bad_token_id(self, server):
        response = handle_request(server, {"type": "decode", "ids": [999999]})
        assert response["code"] == "bad_request"

    def test_context_overflow(self, server):
        response = handle_request(
            server, {"type": "logits", "prompt": [1] * 9, "prefix": []}
        )
        assert response["code"] == "overflow"

    def test_empty_context(self, server):
        response = handle_request(server, {"type": "logits", "prompt": [], "prefix": []})
        assert response["code"] == "bad_request"

    def test_logits_shape_contract(self, server):
        response = handle_request(server, {"type": "logits", "prompt": [1], "prefix": [2]})
        assert response["type"] == "logits"
        assert len(response["values"]) == server.vocab_size
        assert all(isinstance(v, float) for v in response["values"])
        json.dumps(response)  # finite floats serialize without special casing


class TestRemoteErrorSurface:
    def test_engine_sees_error_objects_as_model_unavailable(self, remote):
        with pytest.raises(ModelUnavailable, match="bad_request"):
            remote.decode([10 ** 9])
