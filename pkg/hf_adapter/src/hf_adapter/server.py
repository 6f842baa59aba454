"""Serve a transformer checkpoint over line-delimited JSON on stdio.

One JSON request per stdin line, one JSON response per stdout line:

  -> {"type": "hello"}
  <- {"type": "hello", "vocab_size": N, "eos_id": K, "protocol": 1}
  -> {"type": "encode", "text": "..."}
  <- {"type": "tokens", "ids": [...]}
  -> {"type": "logits", "prompt": [ids], "prefix": [ids]}
  <- {"type": "logits", "values": [floats, length N]}
  -> {"type": "decode", "ids": [...]}
  <- {"type": "text", "text": "..."}

Errors come back as {"type": "error", "code": ..., "message": ...} with
codes bad_request, overflow (context longer than the window), internal.

The logits response is the full final-position row for the concatenated
prompt + prefix, no truncation: entropy-based detection needs the whole
distribution. One forward pass per request, batch size one; run one
adapter process per engine worker.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass


@dataclass(frozen=True)
class AdapterConfig:
    """Which checkpoint to serve and how to run it."""

    checkpoint: str
    device: str = "cpu"
    dtype: str = "float32"
    max_context: int | None = None  # None: the model's own position limit


class CheckpointServer:
    def __init__(self, config: AdapterConfig) -> None:
        import torch
        from transformers import AutoModelForCausalLM, AutoTokenizer

        torch.set_num_threads(1)  # keeps CPU results reproducible across hosts
        self._torch = torch
        self.tokenizer = AutoTokenizer.from_pretrained(config.checkpoint)
        if self.tokenizer.eos_token_id is None:
            raise ValueError("checkpoint tokenizer has no eos token")
        dtype = getattr(torch, config.dtype)
        self.model = AutoModelForCausalLM.from_pretrained(config.checkpoint)
        self.model.to(device=config.device, dtype=dtype)
        self.model.eval()
        self.device = config.device
        self.vocab_size = len(self.tokenizer)
        self.eos_id = int(self.tokenizer.eos_token_id)
        model_limit = getattr(self.model.config, "max_position_embeddings", None)
        limits = [lim for lim in (model_limit, config.max_context) if lim]
        self.max_context = min(limits) if limits else None

    def hello(self) -> dict:
        return {
            "type": "hello",
            "vocab_size": self.vocab_size,
            "eos_id": self.eos_id,
            "protocol": 1,
        }

    def encode(self, text: str) -> dict:
        ids = self.tokenizer.encode(text, add_special_tokens=False)
        return {"type": "tokens", "ids": [int(t) for t in ids]}

    def decode(self, ids: list[int]) -> dict:
        self._check_ids(ids)
        return {"type": "text", "text": self.tokenizer.decode(ids)}

    def logits(self, prompt: list[int], prefix: list[int]) -> dict:
        context = list(prompt) + list(prefix)
        if not context:
            return _error("bad_request", "empty context")
        self._check_ids(context)
        if self.max_context is not None and len(context) > self.max_context:
            return _error(
                "overflow",
                f"context of {len(context)} tokens exceeds limit {self.max_context}",
            )
        torch = self._torch
        with torch.inference_mode():
            ids = torch.tensor([context], dtype=torch.long, device=self.device)
            row = self.model(ids).logits[0, -1, : self.vocab_size]
            values = row.to(torch.float64).cpu().tolist()
        if not all(v == v and abs(v) != float("inf") for v in values):
            return _error("internal", "model produced non-finite logits")
        return {"type": "logits", "values": values}

    def _check_ids(self, ids: list[int]) -> None:
        for tok in ids:
            if not isinstance(tok, int) or not 0 <= tok < self.vocab_size:
                raise _BadRequest(f"token id {tok!r} out of range")


class _BadRequest(Exception):
    pass


def _error(code: str, message: str) -> dict:
    return {"type": "error", "code": code, "message": message}


def handle_request(server: CheckpointServer, message: dict) -> dict:
    kind = message.get("type")
    try:
        if kind == "hello":
            return server.hello()
        if kind == "encode":
            return server.encode(str(message.get("text", "")))
        if kind == "decode":
            return server.decode(message.get("ids", []))
        if kind == "logits":
            return server.logits(message.get("prompt", []), message.get("prefix", []))
        return _error("bad_request", f"unknown request type {kind!r}")
    except _BadRequest as exc:
        return _error("bad_request", str(exc))
    except Exception as exc:  # noqa: BLE001 - protocol boundary
        return _error("internal", f"{type(exc).__name__}: {exc}")


def serve(config: AdapterConfig, stdin=None, stdout=None) -> int:
    """Answer protocol requests until stdin closes."""
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    server = CheckpointServer(config)
    for line in stdin:
        if not line.strip():
            continue
        try:
            message = json.loads(line)
        except json.JSONDecodeError:
            response = _error("bad_request", "request is not valid JSON")
        else:
            response = handle_request(server, message)
        stdout.write(json.dumps(response) + "\n")
        stdout.flush()
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="hf-adapter",
        description="Serve a transformer checkpoint over the stdio logits protocol",
    )
    parser.add_argument("--checkpoint", required=True, help="model path or hub id")
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--dtype", default="float32")
    parser.add_argument("--max-context", type=int, default=None)
    args = parser.parse_args(argv)
    config = AdapterConfig(
        checkpoint=args.checkpoint,
        device=args.device,
        dtype=args.dtype,
        max_context=args.max_context,
    )
    return serve(config)


if __name__ == "__main__":
    sys.exit(main())
