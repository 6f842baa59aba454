"""Contamination-aware decoding engine.

Detects per-prompt memorization from decoding entropy, adaptively
suppresses top tokens to elicit non-memorized responses, and evaluates
how well the mitigated outputs restore a model's uncontaminated
performance. Models plug in through a single logits-provider contract;
deterministic built-ins (lookup tables, memorizing n-grams) support full
desk-scale verification, and external models attach over a line-delimited
JSON wire protocol.
"""

from .decoding import (
    DecodeParams,
    GenerationTrace,
    StepRecord,
    blocking_decode,
    greedy_decode,
    multi_blocking,
    sample_decode,
)
from .detection import (
    DetectionScores,
    compute_scores,
    lne,
    min_k_prob,
    normalized_lne,
    perplexity,
)
from .errors import (
    DatasetError,
    DeconError,
    DegenerateDistribution,
    DegenerateFixture,
    EmptyCorpus,
    EmptyTrace,
    ExtractionFailed,
    ModelUnavailable,
    UnknownContext,
    VocabTooSmall,
)
from .evaluation import (
    DatasetRecord,
    EvalResult,
    blocking_pair_report,
    calibrate_threshold,
    exact_match,
    pg,
    rouge_l,
    score_output,
)
from .lab import LabFixture, SizeParams, build_fixture, emit_curves, run_sweep
from .mitigation import (
    MitigationConfig,
    MitigationOutcome,
    TedConfig,
    blocking_count,
    detector_blocking,
    fixed_blocking,
    lne_blocking,
    ted_filter,
    token_edit_distance,
)
from .models import (
    ContaminationSpec,
    LanguageModel,
    MemorizingNGramModel,
    TableModel,
    VocabInfo,
    build_ngram_base,
    logits,
    mixed_next_distribution,
)

__all__ = [
    "ContaminationSpec",
    "DatasetError",
    "DatasetRecord",
    "DeconError",
    "DecodeParams",
    "DegenerateDistribution",
    "DegenerateFixture",
    "DetectionScores",
    "EmptyCorpus",
    "EmptyTrace",
    "EvalResult",
    "ExtractionFailed",
    "GenerationTrace",
    "LabFixture",
    "LanguageModel",
    "MemorizingNGramModel",
    "MitigationConfig",
    "MitigationOutcome",
    "ModelUnavailable",
    "SizeParams",
    "StepRecord",
    "TableModel",
    "TedConfig",
    "UnknownContext",
    "VocabInfo",
    "VocabTooSmall",
    "blocking_count",
    "blocking_decode",
    "blocking_pair_report",
    "build_fixture",
    "build_ngram_base",
    "calibrate_threshold",
    "compute_scores",
    "detector_blocking",
    "emit_curves",
    "exact_match",
    "fixed_blocking",
    "greedy_decode",
    "lne",
    "lne_blocking",
    "logits",
    "min_k_prob",
    "mixed_next_distribution",
    "multi_blocking",
    "normalized_lne",
    "perplexity",
    "pg",
    "rouge_l",
    "run_sweep",
    "sample_decode",
    "score_output",
    "ted_filter",
    "token_edit_distance",
]
