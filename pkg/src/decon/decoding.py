"""Greedy decoding, top-token suppression (blocking), and temperature sampling.

All decodes are pure functions of (model, prompt, params) and produce a
full trace: one step record per generated token with the entropy and
chosen-token log-probability of that step's distribution. Argmax ties
break toward the lowest token id so outputs are reproducible across
platforms.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import DegenerateDistribution, VocabTooSmall
from .models import (
    LanguageModel,
    TokenSeq,
    entropy,
    log_softmax,
    logits as query_logits,
    softmax,
)

EOS = "eos"
MAX_TOKENS = "max_tokens"


@dataclass(frozen=True)
class DecodeParams:
    """Knobs shared by every decode: length cap, stopping, sampling controls."""

    max_tokens: int = 256
    stop_on_eos: bool = True
    temperature: float = 1.0
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.max_tokens < 1:
            raise ValueError(f"max_tokens must be >= 1, got {self.max_tokens}")
        if self.temperature <= 0:
            raise ValueError(f"temperature must be > 0, got {self.temperature}")


@dataclass(frozen=True)
class StepRecord:
    """One generated token plus the statistics of the distribution it came from.

    At blocked steps, ``blocked`` is the suppressed (previously top) token and
    ``blocked_replacement`` equals ``chosen``; entropy and chosen_logprob always
    describe the unblocked distribution.
    """

    chosen: int
    probs_entropy: float
    chosen_logprob: float
    blocked: int | None = None
    blocked_replacement: int | None = None


@dataclass(frozen=True)
class GenerationTrace:
    """Everything one decode produced: tokens, per-step stats, stop reason."""

    prompt: TokenSeq
    output: TokenSeq
    steps: tuple[StepRecord, ...]
    terminated_by: str

    def __post_init__(self) -> None:
        if len(self.steps) != len(self.output) or len(self.output) < 1:
            raise ValueError("trace must hold one step per generated token (>= 1)")


def greedy_decode(
    model: LanguageModel, prompt: Sequence[int], params: DecodeParams
) -> GenerationTrace:
    """Pick the argmax token at every step until EOS (recorded) or max_tokens."""
    return _decode(model, prompt, params, frozenset())


def blocking_decode(
    model: LanguageModel,
    prompt: Sequence[int],
    params: DecodeParams,
    block_positions: Iterable[int],
) -> GenerationTrace:
    """Greedy decode with the top token suppressed at the given 1-based positions.

    At a blocked position the unblocked argmax gets a -inf logit and the new
    argmax is taken instead; all other positions, and every recorded entropy
    and log-probability, use the plain unblocked distribution. Positions past
    the generated length are ignored.
    """
    positions = frozenset(int(p) for p in block_positions)
    if not positions:
        raise ValueError("block_positions must be nonempty; use greedy_decode instead")
    if any(p < 1 for p in positions):
        raise ValueError("block positions are 1-based and must be >= 1")
    if model.vocab.vocab_size < 2:
        raise VocabTooSmall("blocking needs a vocabulary of at least 2 tokens")
    return _decode(model, prompt, params, positions)


def _decode(
    model: LanguageModel,
    prompt: Sequence[int],
    params: DecodeParams,
    positions: frozenset[int],
) -> GenerationTrace:
    prompt_t = tuple(int(t) for t in prompt)
    eos_id = model.vocab.eos_id
    output: list[int] = []
    steps: list[StepRecord] = []
    terminated_by = MAX_TOKENS

    for pos in range(1, params.max_tokens + 1):
        values = query_logits(model, prompt_t, output)
        probs = softmax(values)
        logprobs = log_softmax(values)
        step_entropy = entropy(probs)
        top = int(np.argmax(values))

        if pos in positions:
            masked = values.copy()
            masked[top] = -np.inf
            if not np.isfinite(masked).any():
                raise DegenerateDistribution(
                    f"no finite logit remains after suppressing token {top}"
                )
            chosen = int(np.argmax(masked))
            step = StepRecord(
                chosen=chosen,
                probs_entropy=step_entropy,
                chosen_logprob=float(logprobs[chosen]),
                blocked=top,
                blocked_replacement=chosen,
            )
        else:
            chosen = top
            step = StepRecord(
                chosen=chosen,
                probs_entropy=step_entropy,
                chosen_logprob=float(logprobs[chosen]),
            )

        output.append(chosen)
        steps.append(step)
        if params.stop_on_eos and chosen == eos_id:
            terminated_by = EOS
            break

    return GenerationTrace(
        prompt=prompt_t,
        output=tuple(output),
        steps=tuple(steps),
        terminated_by=terminated_by,
    )


def multi_blocking(
    model: LanguageModel, prompt: Sequence[int], params: DecodeParams, n: int
) -> GenerationTrace:
    """Block the first n generated positions; n = 0 is exactly greedy decoding."""
    if n < 0:
        raise ValueError(f"n must be >= 0, got {n}")
    if n == 0:
        return greedy_decode(model, prompt, params)
    return blocking_decode(model, prompt, params, range(1, n + 1))


def sample_decode(
    model: LanguageModel, prompt: Sequence[int], params: DecodeParams
) -> GenerationTrace:
    """Draw each token from softmax(logits / temperature).

    Uses the counter-based Philox generator keyed by ``params.rng_seed`` and
    inverse-CDF sampling, so outputs are reproducible across platforms. Step
    statistics describe the tempered distribution actually sampled from.
    """
    prompt_t = tuple(int(t) for t in prompt)
    eos_id = model.vocab.eos_id
    rng = np.random.Generator(np.random.Philox(key=np.uint64(params.rng_seed)))
    output: list[int] = []
    steps: list[StepRecord] = []
    terminated_by = MAX_TOKENS

    for _ in range(params.max_tokens):
        values = query_logits(model, prompt_t, output)
        tempered = values / params.temperature
        probs = softmax(tempered)
        logprobs = log_softmax(tempered)
        u = rng.random()
        # u past the cumulative total (fp shortfall) falls back to the last
        # positive-probability token; interior zeros are unreachable because
        # the cumulative sum is flat across them.
        last_positive = int(np.nonzero(probs)[0][-1])
        chosen = int(min(np.searchsorted(np.cumsum(probs), u, side="right"),
                         last_positive))
        steps.append(
            StepRecord(
                chosen=chosen,
                probs_entropy=entropy(probs),
                chosen_logprob=float(logprobs[chosen]),
            )
        )
        output.append(chosen)
        if params.stop_on_eos and chosen == eos_id:
            terminated_by = EOS
            break

    return GenerationTrace(
        prompt=prompt_t,
        output=tuple(output),
        steps=tuple(steps),
        terminated_by=terminated_by,
    )
