"""Logits-provider contract and the deterministic built-in models.

Every decoder and detector in this package consumes models through one
contract: ``model.vocab`` describes the token space and
``model.logits(prompt, prefix)`` returns one unnormalized log-score per
token id. The engine normalizes with a numerically stable softmax;
suppressed entries are represented as ``-inf`` logits and carry
probability exactly zero.

Built-in models are immutable after construction and safe for concurrent
reads.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Protocol, Sequence, runtime_checkable

import numpy as np

from .errors import EmptyCorpus, UnknownContext

TokenSeq = tuple[int, ...]


@dataclass(frozen=True)
class VocabInfo:
    """Token-id space of a model: size and the end-of-sequence id."""

    vocab_size: int
    eos_id: int

    def __post_init__(self) -> None:
        if self.vocab_size < 2:
            raise ValueError(f"vocab_size must be >= 2, got {self.vocab_size}")
        if not 0 <= self.eos_id < self.vocab_size:
            raise ValueError(
                f"eos_id {self.eos_id} out of range [0, {self.vocab_size})"
            )


def validate_logits(values: np.ndarray, vocab_size: int) -> np.ndarray:
    """Check the logits-vector contract: right length, no NaN/+inf, >=1 finite."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1 or arr.shape[0] != vocab_size:
        raise ValueError(f"logits must have shape ({vocab_size},), got {arr.shape}")
    if np.isnan(arr).any():
        raise ValueError("logits contain NaN")
    if np.isposinf(arr).any():
        raise ValueError("logits contain +inf")
    if not np.isfinite(arr).any():
        raise ValueError("logits contain no finite entry")
    return arr


def softmax(logits: np.ndarray) -> np.ndarray:
    """Stable softmax; -inf entries map to probability exactly 0."""
    finite_max = np.max(logits[np.isfinite(logits)])
    shifted = logits - finite_max
    probs = np.exp(shifted)
    probs[np.isneginf(logits)] = 0.0
    return probs / probs.sum()


def log_softmax(logits: np.ndarray) -> np.ndarray:
    """Stable log-softmax; -inf entries stay -inf."""
    finite_max = np.max(logits[np.isfinite(logits)])
    shifted = logits - finite_max
    with np.errstate(divide="ignore"):
        return shifted - math.log(np.exp(shifted[np.isfinite(shifted)]).sum())


def entropy(probs: np.ndarray) -> float:
    """Shannon entropy in nats with the 0*ln(0) = 0 convention."""
    nz = probs[probs > 0.0]
    return float(-(nz * np.log(nz)).sum())


def validate_token_seq(ids: Sequence[int], vocab: VocabInfo) -> TokenSeq:
    seq = tuple(int(i) for i in ids)
    for tok in seq:
        if not 0 <= tok < vocab.vocab_size:
            raise ValueError(f"token id {tok} out of range [0, {vocab.vocab_size})")
    return seq


@runtime_checkable
class LanguageModel(Protocol):
    """Anything that maps (prompt, generated prefix) to a logits vector."""

    @property
    def vocab(self) -> VocabInfo: ...

    def logits(self, prompt: Sequence[int], prefix: Sequence[int]) -> np.ndarray: ...


def logits(
    model: LanguageModel, prompt: Sequence[int], prefix: Sequence[int]
) -> np.ndarray:
    """Query a model through the shared contract.

    Validates the preconditions (nonempty prompt, in-range ids) and the
    length of the returned vector; full logits validation is the model's
    own responsibility at its boundary.
    """
    if len(prompt) == 0:
        raise ValueError("prompt must be nonempty")
    vocab = model.vocab
    validate_token_seq(prompt, vocab)
    validate_token_seq(prefix, vocab)
    values = model.logits(prompt, prefix)
    if values.shape != (vocab.vocab_size,):
        raise ValueError(
            f"model returned logits of shape {values.shape}, expected ({vocab.vocab_size},)"
        )
    return values


class TableModel:
    """Exhaustive context -> logits lookup table, the engine's test oracle substrate.

    The key is the exact concatenation prompt + prefix. Unmapped contexts
    fall back to ``default`` when configured, otherwise raise UnknownContext.
    """

    def __init__(
        self,
        vocab: VocabInfo,
        transitions: dict[tuple[int, ...], Sequence[float]],
        default: Sequence[float] | None = None,
        token_texts: Sequence[str] | None = None,
    ) -> None:
        self._vocab = vocab
        self._transitions = {
            tuple(ctx): validate_logits(np.asarray(row, dtype=np.float64), vocab.vocab_size)
            for ctx, row in transitions.items()
        }
        self._default = (
            None
            if default is None
            else validate_logits(np.asarray(default, dtype=np.float64), vocab.vocab_size)
        )
        self.token_texts = list(token_texts) if token_texts is not None else None
        for row in self._transitions.values():
            row.setflags(write=False)
        if self._default is not None:
            self._default.setflags(write=False)

    @property
    def vocab(self) -> VocabInfo:
        return self._vocab

    def logits(self, prompt: Sequence[int], prefix: Sequence[int]) -> np.ndarray:
        context = tuple(prompt) + tuple(prefix)
        row = self._transitions.get(context, self._default)
        if row is None:
            raise UnknownContext(f"no logits row for context {context} and no default")
        return row.copy()


@dataclass(frozen=True)
class ContaminationSpec:
    """Memorization mixture: weight alpha over a set of (prompt, reference) pairs.

    alpha is the probability mass moved onto the next memorized token when
    the current prompt and generated prefix exactly match a record. A single
    off-record token permanently breaks the match.
    """

    alpha: float
    records: tuple[tuple[TokenSeq, TokenSeq], ...] = ()
    eos_id: int | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        records = tuple(
            (tuple(p), tuple(r)) for p, r in self.records
        )
        object.__setattr__(self, "records", records)
        if self.eos_id is not None:
            for _, ref in records:
                if not ref or ref[-1] != self.eos_id:
                    raise ValueError("every reference must end with eos_id")
        by_prompt: dict[TokenSeq, list[TokenSeq]] = {}
        for rec_prompt, rec_ref in records:
            by_prompt.setdefault(rec_prompt, []).append(rec_ref)
        object.__setattr__(self, "_by_prompt", by_prompt)

    def matched_next(self, prompt: TokenSeq, prefix: TokenSeq) -> int | None:
        """Next memorized token if (prompt, prefix) sits on a seen record, else None."""
        for rec_ref in self._by_prompt.get(prompt, ()):
            if len(prefix) < len(rec_ref) and rec_ref[: len(prefix)] == prefix:
                return rec_ref[len(prefix)]
        return None


def mixed_next_distribution(
    base_probs: np.ndarray, spec: ContaminationSpec, matched_next: int | None
) -> np.ndarray:
    """Blend a base distribution with a memorized-token delta.

    Returns ``(1 - alpha) * base + alpha * delta(matched_next)`` when a match
    is present, the base distribution unchanged otherwise.
    """
    total = float(base_probs.sum())
    if abs(total - 1.0) > 1e-9:
        raise ValueError(f"base_probs must sum to 1 +- 1e-9, got {total}")
    if matched_next is None:
        return base_probs
    mixed = (1.0 - spec.alpha) * base_probs
    mixed[matched_next] += spec.alpha
    return mixed


class MemorizingNGramModel:
    """Backoff n-gram base model blended with exact-match memorization.

    The base next-token distribution is additive-smoothed over counted
    contexts, backing off to shorter suffixes (down to the unigram table)
    when the full context was never seen. When the query sits exactly on a
    contaminated record, the distribution is mixed with a delta on the next
    reference token (see :func:`mixed_next_distribution`). With alpha = 0
    the model is exactly the smoothed base model.
    """

    def __init__(
        self,
        vocab: VocabInfo,
        order: int,
        smoothing: float,
        context_probs: dict[TokenSeq, np.ndarray],
        contamination: ContaminationSpec | None = None,
        token_texts: Sequence[str] | None = None,
    ) -> None:
        if order < 1:
            raise ValueError(f"order must be >= 1, got {order}")
        if smoothing <= 0:
            raise ValueError(f"smoothing must be > 0, got {smoothing}")
        self._vocab = vocab
        self.order = order
        self.smoothing = smoothing
        self._context_probs = context_probs
        for arr in context_probs.values():
            arr.setflags(write=False)
        self.contamination = contamination or ContaminationSpec(alpha=0.0)
        self.token_texts = list(token_texts) if token_texts is not None else None

    @property
    def vocab(self) -> VocabInfo:
        return self._vocab

    def with_contamination(self, spec: ContaminationSpec) -> "MemorizingNGramModel":
        """Same base tables, different contamination mixture."""
        return MemorizingNGramModel(
            self._vocab,
            self.order,
            self.smoothing,
            self._context_probs,
            contamination=spec,
            token_texts=self.token_texts,
        )

    def base_probs(self, context: TokenSeq) -> np.ndarray:
        """Smoothed next-token distribution for the longest known suffix of context."""
        ctx = context[-(self.order - 1):] if self.order > 1 else ()
        while ctx not in self._context_probs:
            ctx = ctx[1:]
        return self._context_probs[ctx]

    def next_probs(self, prompt: Sequence[int], prefix: Sequence[int]) -> np.ndarray:
        prompt_t = tuple(prompt)
        prefix_t = tuple(prefix)
        base = self.base_probs(prompt_t + prefix_t)
        matched = self.contamination.matched_next(prompt_t, prefix_t)
        if matched is None:
            return base.copy()
        return mixed_next_distribution(base, self.contamination, matched)

    def logits(self, prompt: Sequence[int], prefix: Sequence[int]) -> np.ndarray:
        probs = self.next_probs(prompt, prefix)
        with np.errstate(divide="ignore"):
            return np.log(probs)


def build_ngram_base(
    corpus: Sequence[Sequence[int]],
    vocab: VocabInfo,
    order: int = 3,
    smoothing: float = 0.1,
    token_texts: Sequence[str] | None = None,
) -> MemorizingNGramModel:
    """Count n-grams of every order up to ``order`` and precompute smoothed tables.

    The conditional probability at a seen context is
    ``(count(context, tok) + smoothing) / (count(context) + smoothing * V)``;
    unseen contexts back off to the longest seen suffix, bottoming out at the
    always-present unigram table.
    """
    if len(corpus) == 0:
        raise EmptyCorpus("corpus must contain at least one sequence")
    if order < 1:
        raise ValueError(f"order must be >= 1, got {order}")
    if smoothing <= 0:
        raise ValueError(f"smoothing must be > 0, got {smoothing}")

    counts: dict[TokenSeq, Counter[int]] = {(): Counter()}
    for seq in corpus:
        toks = validate_token_seq(seq, vocab)
        for i, tok in enumerate(toks):
            counts[()][tok] += 1
            for k in range(1, order):
                if i - k < 0:
                    break
                ctx = toks[i - k : i]
                counts.setdefault(ctx, Counter())[tok] += 1

    vsize = vocab.vocab_size
    context_probs: dict[TokenSeq, np.ndarray] = {}
    for ctx, counter in counts.items():
        vec = np.full(vsize, smoothing, dtype=np.float64)
        for tok, c in counter.items():
            vec[tok] += c
        context_probs[ctx] = vec / (sum(counter.values()) + smoothing * vsize)

    return MemorizingNGramModel(
        vocab, order, smoothing, context_probs, token_texts=token_texts
    )
