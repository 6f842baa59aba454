"""Contamination scores computed from a greedy generation trace.

All quantities are in natural units (nats). Low length-normalized entropy,
low perplexity, and low min-k all point the same way: the model was very
sure of the exact tokens it produced, the signature of memorized content.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .decoding import GenerationTrace
from .errors import EmptyTrace

DEFAULT_K_PERCENT = 20.0


@dataclass(frozen=True)
class DetectionScores:
    """Per-prompt contamination scores from one greedy pass."""

    lne: float
    lne_normalized: float
    perplexity: float
    min_k: float
    k_percent: float = DEFAULT_K_PERCENT


def lne(trace: GenerationTrace) -> float:
    """Mean per-step Shannon entropy (nats) over the trace's distributions."""
    if len(trace.steps) == 0:
        raise EmptyTrace("cannot score a trace with no steps")
    return sum(step.probs_entropy for step in trace.steps) / len(trace.steps)


def normalized_lne(lne_value: float) -> float:
    """Map entropy onto a [0, 1] contamination degree: 1 - lne/2, clamped.

    The /2 reflects the empirical range of per-step entropy for generative
    models; values above 2 clamp to 0 rather than going negative.
    """
    if lne_value < 0:
        raise ValueError(f"lne must be >= 0, got {lne_value}")
    return min(1.0, max(0.0, 1.0 - lne_value / 2.0))


def perplexity(trace: GenerationTrace) -> float:
    """exp of the mean negative log-probability of the chosen tokens."""
    if len(trace.steps) == 0:
        raise EmptyTrace("cannot score a trace with no steps")
    mean_nll = -sum(step.chosen_logprob for step in trace.steps) / len(trace.steps)
    return math.exp(mean_nll)


def min_k_prob(trace: GenerationTrace, k_percent: float = DEFAULT_K_PERCENT) -> float:
    """Negative mean log-probability of the k% least probable chosen tokens.

    The set size is floor(N * k / 100) with a minimum of one token.
    """
    if len(trace.steps) == 0:
        raise EmptyTrace("cannot score a trace with no steps")
    if not 0 < k_percent <= 100:
        raise ValueError(f"k_percent must be in (0, 100], got {k_percent}")
    n = len(trace.steps)
    take = max(1, math.floor(n * k_percent / 100.0))
    worst = sorted(step.chosen_logprob for step in trace.steps)[:take]
    return -sum(worst) / take


def compute_scores(
    trace: GenerationTrace, k_percent: float = DEFAULT_K_PERCENT
) -> DetectionScores:
    """All detection scores for one greedy trace."""
    lne_value = lne(trace)
    return DetectionScores(
        lne=lne_value,
        lne_normalized=normalized_lne(lne_value),
        perplexity=perplexity(trace),
        min_k=min_k_prob(trace, k_percent),
        k_percent=k_percent,
    )
