"""Client for external models served over line-delimited JSON on stdio.

The adapter runs as a child process. Each request is one JSON object on
one line of its stdin; each response is one JSON object on one line of
its stdout. The handshake must arrive within a timeout; afterwards the
client trusts the adapter to answer every request (requests are strictly
serialized per connection — use one connection per worker for
concurrency). Any transport failure, protocol violation, or adapter-side
error object surfaces as ModelUnavailable.
"""

from __future__ import annotations

import json
import select
import shlex
import subprocess
from typing import Sequence

import numpy as np

from .errors import ModelUnavailable
from .models import VocabInfo, validate_logits

PROTOCOL_VERSION = 1
DEFAULT_HANDSHAKE_TIMEOUT = 30.0


class RemoteModel:
    """Language model behind a child process speaking the stdio wire protocol."""

    def __init__(
        self, command: str | Sequence[str], handshake_timeout: float = DEFAULT_HANDSHAKE_TIMEOUT
    ) -> None:
        argv = shlex.split(command) if isinstance(command, str) else list(command)
        try:
            self._proc = subprocess.Popen(
                argv,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise ModelUnavailable(f"could not start model process {argv!r}: {exc}") from exc
        self._closed = False
        hello = self._request({"type": "hello"}, timeout=handshake_timeout)
        if hello.get("type") != "hello":
            self.close()
            raise ModelUnavailable(f"handshake returned {hello.get('type')!r}, expected 'hello'")
        if hello.get("protocol") != PROTOCOL_VERSION:
            self.close()
            raise ModelUnavailable(f"unsupported protocol version {hello.get('protocol')!r}")
        try:
            self._vocab = VocabInfo(
                vocab_size=int(hello["vocab_size"]), eos_id=int(hello["eos_id"])
            )
        except (KeyError, ValueError) as exc:
            self.close()
            raise ModelUnavailable(f"bad hello message: {exc}") from exc

    @property
    def vocab(self) -> VocabInfo:
        return self._vocab

    def _request(self, message: dict, timeout: float | None = None) -> dict:
        if self._closed or self._proc.poll() is not None:
            raise ModelUnavailable("model process is not running")
        try:
            self._proc.stdin.write(json.dumps(message) + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise ModelUnavailable(f"model process closed its stdin: {exc}") from exc
        if timeout is not None:
            ready, _, _ = select.select([self._proc.stdout], [], [], timeout)
            if not ready:
                self.close()
                raise ModelUnavailable(
                    f"no response within {timeout:.1f}s to {message['type']!r}"
                )
        line = self._proc.stdout.readline()
        if not line:
            raise ModelUnavailable("model process closed its stdout")
        try:
            response = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ModelUnavailable(f"model sent invalid JSON: {line[:200]!r}") from exc
        if response.get("type") == "error":
            raise ModelUnavailable(
                f"model error {response.get('code')!r}: {response.get('message')}"
            )
        return response

    def logits(self, prompt: Sequence[int], prefix: Sequence[int]) -> np.ndarray:
        response = self._request(
            {"type": "logits", "prompt": [int(t) for t in prompt], "prefix": [int(t) for t in prefix]}
        )
        if response.get("type") != "logits":
            raise ModelUnavailable(f"expected logits response, got {response.get('type')!r}")
        try:
            return validate_logits(
                np.asarray(response["values"], dtype=np.float64), self._vocab.vocab_size
            )
        except (KeyError, ValueError) as exc:
            raise ModelUnavailable(f"bad logits response: {exc}") from exc

    def encode(self, text: str) -> list[int]:
        response = self._request({"type": "encode", "text": text})
        if response.get("type") != "tokens":
            raise ModelUnavailable(f"expected tokens response, got {response.get('type')!r}")
        return [int(t) for t in response["ids"]]

    def decode(self, ids: Sequence[int]) -> str:
        response = self._request({"type": "decode", "ids": [int(t) for t in ids]})
        if response.get("type") != "text":
            raise ModelUnavailable(f"expected text response, got {response.get('type')!r}")
        return str(response["text"])

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        try:
            if self._proc.stdin:
                self._proc.stdin.close()
        except OSError:
            pass
        try:
            self._proc.terminate()
            self._proc.wait(timeout=5)
        except (subprocess.TimeoutExpired, OSError):
            self._proc.kill()

    def __enter__(self) -> "RemoteModel":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()
