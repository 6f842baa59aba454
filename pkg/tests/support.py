"""Shared test helpers: an independent brute-force decoder and random tables.

The enumerator re-derives greedy/blocked outputs from the raw logits rows
with plain Python lists — no numpy, no softmax — so it cannot share a bug
with the engine's decode path. Argmax ties break toward the lowest index;
suppression removes exactly the argmax index and re-takes the max.
"""

from __future__ import annotations

import numpy as np

from decon.models import TableModel, VocabInfo

NEG_INF = float("-inf")


def list_argmax(row: list[float], skip: int | None = None) -> int | None:
    best_idx = None
    best_val = NEG_INF
    for idx, val in enumerate(row):
        if idx == skip or val == NEG_INF:
            continue
        if best_idx is None or val > best_val:
            best_idx, best_val = idx, val
    return best_idx


def enumerate_decode(
    transitions: dict[tuple[int, ...], list[float]],
    default: list[float] | None,
    eos_id: int,
    prompt: tuple[int, ...],
    max_tokens: int,
    block_positions: frozenset[int] = frozenset(),
) -> list[int]:
    """Spec-derived reference decode over a raw table."""
    output: list[int] = []
    for pos in range(1, max_tokens + 1):
        row = transitions.get(prompt + tuple(output), default)
        assert row is not None, "reference decode hit an unmapped context"
        top = list_argmax(row)
        if pos in block_positions:
            chosen = list_argmax(row, skip=top)
            assert chosen is not None, "blocking removed the only finite logit"
        else:
            chosen = top
        output.append(chosen)
        if chosen == eos_id:
            break
    return output


def random_table(
    rng: np.random.Generator,
    vocab_size: int,
    depth: int,
    n_contexts: int,
) -> tuple[TableModel, dict[tuple[int, ...], list[float]], list[float], tuple[int, ...]]:
    """A random TableModel plus the raw rows the enumerator reads.

    Logits are rounded to one decimal so argmax ties are common, and a few
    entries are -inf to exercise suppression near-degenerate rows.
    """

    def random_row() -> list[float]:
        row = np.round(rng.uniform(-2.0, 2.0, size=vocab_size), 1)
        # knock out up to vocab_size - 2 entries so one blocking always survives
        for idx in rng.choice(vocab_size, size=rng.integers(0, vocab_size - 1), replace=False):
            row[idx] = NEG_INF
        if not np.isfinite(row).any():
            row[int(rng.integers(vocab_size))] = 0.0
        return [float(v) for v in row]

    eos_id = int(rng.integers(vocab_size))
    vocab = VocabInfo(vocab_size=vocab_size, eos_id=eos_id)
    prompt = tuple(int(t) for t in rng.integers(0, vocab_size, size=rng.integers(1, 3)))
    default = random_row()
    transitions: dict[tuple[int, ...], list[float]] = {}
    for _ in range(n_contexts):
        ctx_len = int(rng.integers(0, depth))
        ctx = prompt + tuple(int(t) for t in rng.integers(0, vocab_size, size=ctx_len))
        transitions[ctx] = random_row()
    model = TableModel(vocab, transitions, default=default)
    return model, transitions, default, prompt
