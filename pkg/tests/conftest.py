from __future__ import annotations

import math

import pytest

from decon.lab import build_fixture
from decon.models import TableModel, VocabInfo


@pytest.fixture(scope="session")
def lab_fixture():
    """The seed-1 default fixture shared by lab and acceptance tests."""
    return build_fixture(seed=1)


def prob_table(vocab_size: int, eos_id: int, rows: dict[tuple[int, ...], list[float]],
               default: list[float] | None = None, token_texts=None) -> TableModel:
    """TableModel from probability rows; zeros become -inf logits."""

    def to_logits(row):
        return [math.log(p) if p > 0 else float("-inf") for p in row]

    return TableModel(
        VocabInfo(vocab_size=vocab_size, eos_id=eos_id),
        {ctx: to_logits(row) for ctx, row in rows.items()},
        default=to_logits(default) if default is not None else None,
        token_texts=token_texts,
    )
