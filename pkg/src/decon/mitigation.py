"""Mitigation strategies: adaptive blocking, fixed blocking, and the sampling baseline.

The adaptive strategy runs one greedy pass, turns its detection score into
a blocking count, and runs exactly one more decode with that many leading
positions suppressed — two decodes per prompt, no sampling. The sampling
baseline (edit-distance filtering) instead draws many samples and keeps the
ones far enough from the greedy output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

from .decoding import (
    DecodeParams,
    GenerationTrace,
    greedy_decode,
    multi_blocking,
    sample_decode,
)
from .detection import DEFAULT_K_PERCENT, DetectionScores, compute_scores
from .models import LanguageModel

DETECTOR_LNE = "lne"
DETECTOR_PERPLEXITY = "perplexity"
DETECTOR_MIN_K = "min_k"

STRATEGY_GREEDY = "greedy"
STRATEGY_LNE = "lne_blocking"
STRATEGY_PPL = "ppl_blocking"
STRATEGY_MINK = "mink_blocking"
STRATEGY_TED = "ted"
STRATEGY_FIXED_PREFIX = "fixed_blocking:"


@dataclass(frozen=True)
class TedConfig:
    """Sampling baseline knobs: how many samples, how hot, how far is 'different'."""

    num_samples: int = 50
    temperature: float = 1.0
    tau: int = 2
    aggregate: str = "mean"  # how survivor scores combine: "mean" or "best"

    def __post_init__(self) -> None:
        if self.num_samples < 1:
            raise ValueError(f"num_samples must be >= 1, got {self.num_samples}")
        if self.tau < 0:
            raise ValueError(f"tau must be >= 0, got {self.tau}")
        if self.temperature <= 0:
            raise ValueError(f"temperature must be > 0, got {self.temperature}")
        if self.aggregate not in ("mean", "best"):
            raise ValueError(f"aggregate must be 'mean' or 'best', got {self.aggregate!r}")


@dataclass(frozen=True)
class MitigationConfig:
    """Strategy configuration: blocking budget, detector choice, baseline knobs."""

    threshold_task: int = 4
    detector: str = DETECTOR_LNE
    k_percent: float = DEFAULT_K_PERCENT
    ted: TedConfig = field(default_factory=TedConfig)

    def __post_init__(self) -> None:
        if self.threshold_task < 0:
            raise ValueError(
                f"threshold_task must be >= 0, got {self.threshold_task}"
            )
        if self.detector not in (DETECTOR_LNE, DETECTOR_PERPLEXITY, DETECTOR_MIN_K):
            raise ValueError(f"unknown detector {self.detector!r}")


@dataclass(frozen=True)
class MitigationOutcome:
    """Everything one prompt's mitigation produced."""

    scores: DetectionScores
    cnt: int
    greedy_trace: GenerationTrace
    mitigated_trace: GenerationTrace
    ted_survivors: tuple[GenerationTrace, ...] | None = None


def blocking_count(lne_normalized: float, threshold_task: int) -> int:
    """round(normalized score x budget), rounding halves up, clamped to the budget."""
    if not 0.0 <= lne_normalized <= 1.0:
        raise ValueError(f"lne_normalized must be in [0, 1], got {lne_normalized}")
    if threshold_task < 0:
        raise ValueError(f"threshold_task must be >= 0, got {threshold_task}")
    return min(threshold_task, math.floor(lne_normalized * threshold_task + 0.5))


def normalize_detector_score(detector: str, scores: DetectionScores) -> float:
    """Map a detector's raw score onto the [0, 1] contamination scale.

    Perplexity and min-k are both mean-NLL-scale quantities, so they reuse
    the same 1 - x/2 shape as the entropy normalization (ln of perplexity
    is the mean NLL itself).
    """
    if detector == DETECTOR_LNE:
        return scores.lne_normalized
    if detector == DETECTOR_PERPLEXITY:
        return min(1.0, max(0.0, 1.0 - math.log(scores.perplexity) / 2.0))
    if detector == DETECTOR_MIN_K:
        return min(1.0, max(0.0, 1.0 - scores.min_k / 2.0))
    raise ValueError(f"unknown detector {detector!r}")


def _blocked_outcome(
    model: LanguageModel,
    prompt: Sequence[int],
    params: DecodeParams,
    cnt: int,
    greedy_trace: GenerationTrace,
    scores: DetectionScores,
) -> MitigationOutcome:
    mitigated = multi_blocking(model, prompt, params, cnt)
    return MitigationOutcome(
        scores=scores,
        cnt=cnt,
        greedy_trace=greedy_trace,
        mitigated_trace=mitigated,
    )


def lne_blocking(
    model: LanguageModel,
    prompt: Sequence[int],
    params: DecodeParams,
    config: MitigationConfig,
) -> MitigationOutcome:
    """Adaptive blocking driven by normalized length-normalized entropy."""
    if config.detector != DETECTOR_LNE:
        raise ValueError("lne_blocking requires detector 'lne'")
    trace = greedy_decode(model, prompt, params)
    scores = compute_scores(trace, config.k_percent)
    cnt = blocking_count(scores.lne_normalized, config.threshold_task)
    return _blocked_outcome(model, prompt, params, cnt, trace, scores)


def detector_blocking(
    model: LanguageModel,
    prompt: Sequence[int],
    params: DecodeParams,
    config: MitigationConfig,
) -> MitigationOutcome:
    """Adaptive blocking with perplexity or min-k standing in for entropy."""
    if config.detector not in (DETECTOR_PERPLEXITY, DETECTOR_MIN_K):
        raise ValueError("detector_blocking requires detector 'perplexity' or 'min_k'")
    trace = greedy_decode(model, prompt, params)
    scores = compute_scores(trace, config.k_percent)
    normalized = normalize_detector_score(config.detector, scores)
    cnt = blocking_count(normalized, config.threshold_task)
    return _blocked_outcome(model, prompt, params, cnt, trace, scores)


def fixed_blocking(
    model: LanguageModel,
    prompt: Sequence[int],
    params: DecodeParams,
    n: int,
    k_percent: float = DEFAULT_K_PERCENT,
) -> MitigationOutcome:
    """Block the first n positions for every prompt, contamination-blind."""
    if n < 0:
        raise ValueError(f"n must be >= 0, got {n}")
    trace = greedy_decode(model, prompt, params)
    scores = compute_scores(trace, k_percent)
    return _blocked_outcome(model, prompt, params, n, trace, scores)


def token_edit_distance(a: Sequence[int], b: Sequence[int]) -> int:
    """Levenshtein distance between two token-id sequences (two-row DP)."""
    if len(a) < len(b):
        a, b = b, a
    if len(b) == 0:
        return len(a)
    previous = list(range(len(b) + 1))
    for i, tok_a in enumerate(a, start=1):
        current = [i]
        for j, tok_b in enumerate(b, start=1):
            cost = 0 if tok_a == tok_b else 1
            current.append(
                min(previous[j] + 1, current[j - 1] + 1, previous[j - 1] + cost)
            )
        previous = current
    return previous[-1]


def ted_filter(
    model: LanguageModel,
    prompt: Sequence[int],
    params: DecodeParams,
    config: MitigationConfig,
) -> MitigationOutcome:
    """Sampling baseline: keep samples whose edit distance to greedy exceeds tau.

    Draws ``num_samples`` tempered samples (seed = base seed + sample index)
    and fills ``ted_survivors`` with the ones far enough from the greedy
    output. An empty survivor set is not an error here; downstream reporting
    counts it as a failed mitigation for this prompt.
    """
    trace = greedy_decode(model, prompt, params)
    scores = compute_scores(trace, config.k_percent)
    survivors: list[GenerationTrace] = []
    for index in range(config.ted.num_samples):
        sample_params = DecodeParams(
            max_tokens=params.max_tokens,
            stop_on_eos=params.stop_on_eos,
            temperature=config.ted.temperature,
            rng_seed=params.rng_seed + index,
        )
        sample = sample_decode(model, prompt, sample_params)
        if token_edit_distance(sample.output, trace.output) > config.ted.tau:
            survivors.append(sample)
    return MitigationOutcome(
        scores=scores,
        cnt=0,
        greedy_trace=trace,
        mitigated_trace=trace,
        ted_survivors=tuple(survivors),
    )


def parse_strategy(name: str) -> tuple[str, int | None]:
    """Split a strategy string into (kind, fixed-count) and validate it."""
    if name.startswith(STRATEGY_FIXED_PREFIX):
        count = int(name[len(STRATEGY_FIXED_PREFIX):])
        if count < 0:
            raise ValueError(f"fixed blocking count must be >= 0: {name}")
        return "fixed_blocking", count
    if name in (STRATEGY_GREEDY, STRATEGY_LNE, STRATEGY_PPL, STRATEGY_MINK, STRATEGY_TED):
        return name, None
    raise ValueError(f"unknown strategy {name!r}")


def run_strategy(
    strategy: str,
    model: LanguageModel,
    prompt: Sequence[int],
    params: DecodeParams,
    config: MitigationConfig,
) -> MitigationOutcome:
    """One prompt through one named strategy, normalized to a MitigationOutcome."""
    kind, fixed_n = parse_strategy(strategy)
    if kind == STRATEGY_GREEDY:
        trace = greedy_decode(model, prompt, params)
        scores = compute_scores(trace, config.k_percent)
        return MitigationOutcome(
            scores=scores, cnt=0, greedy_trace=trace, mitigated_trace=trace
        )
    if kind == STRATEGY_LNE:
        return lne_blocking(model, prompt, params, config)
    if kind in (STRATEGY_PPL, STRATEGY_MINK):
        detector = DETECTOR_PERPLEXITY if kind == STRATEGY_PPL else DETECTOR_MIN_K
        return detector_blocking(
            model, prompt, params,
            MitigationConfig(
                threshold_task=config.threshold_task,
                detector=detector,
                k_percent=config.k_percent,
                ted=config.ted,
            ),
        )
    if kind == STRATEGY_TED:
        return ted_filter(model, prompt, params, config)
    return fixed_blocking(model, prompt, params, fixed_n, config.k_percent)
