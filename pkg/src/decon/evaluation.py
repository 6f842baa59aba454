"""Scoring, aggregation, the performance-gap metric, and threshold calibration.

Scorers are pluggable per dataset record: arithmetic-style records compare
extracted final numbers, summarization-style records use LCS-based overlap,
and anything else can register its own scorer. The performance gap (PG)
is the absolute difference between an evaluated aggregate score and the
reference (uncontaminated) score: smaller means better restoration.
"""

from __future__ import annotations

import csv
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from .decoding import DecodeParams
from .errors import ExtractionFailed
from .mitigation import MitigationConfig, MitigationOutcome, lne_blocking
from .models import LanguageModel

TASK_CODE = "code"
TASK_ARITHMETIC = "arithmetic"
TASK_SUMMARIZATION = "summarization"
TASK_GENERIC = "generic"

DEFAULT_THRESHOLDS = {
    TASK_CODE: 4,
    TASK_ARITHMETIC: 7,
    TASK_SUMMARIZATION: 30,
    TASK_GENERIC: 4,
}

_NUMBER_RE = re.compile(r"-?\d+(?:\.\d+)?")


@dataclass(frozen=True)
class DatasetRecord:
    """One benchmark item: prompt, ground-truth reference, and how to score it."""

    id: str
    prompt: str
    reference: str
    task: str = TASK_GENERIC
    answer_extractor: str | None = None

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("record id must be nonempty")
        if not self.prompt:
            raise ValueError(f"record {self.id}: prompt must be nonempty")
        if self.task not in DEFAULT_THRESHOLDS:
            raise ValueError(f"record {self.id}: unknown task {self.task!r}")


def extract_last_number(text: str) -> str:
    """The last numeric literal in the text, commas stripped; GSM-style convention."""
    matches = _NUMBER_RE.findall(text.replace(",", ""))
    if not matches:
        raise ExtractionFailed(f"no number found in {text[:80]!r}")
    return matches[-1]


def extract_identity(text: str) -> str:
    stripped = text.strip()
    if not stripped:
        raise ExtractionFailed("empty text")
    return stripped


EXTRACTORS: dict[str, Callable[[str], str]] = {
    "last_number": extract_last_number,
    "identity": extract_identity,
}

_TASK_DEFAULT_EXTRACTOR = {
    TASK_ARITHMETIC: "last_number",
    TASK_GENERIC: "identity",
    TASK_CODE: "identity",
    TASK_SUMMARIZATION: "identity",
}


def _values_equal(a: str, b: str) -> bool:
    try:
        x, y = float(a), float(b)
    except ValueError:
        return a == b
    if x == y:
        return True
    scale = max(abs(x), abs(y))
    return scale > 0 and abs(x - y) / scale <= 1e-9


def exact_match(output_text: str, record: DatasetRecord) -> float:
    """1.0 iff the extracted answers of output and reference agree.

    Numeric answers compare as numbers (42.0 equals 42); extraction failure
    on the output scores 0 and is surfaced via :func:`extraction_failed`.
    """
    name = record.answer_extractor or _TASK_DEFAULT_EXTRACTOR[record.task]
    extractor = EXTRACTORS[name]
    try:
        predicted = extractor(output_text)
    except ExtractionFailed:
        return 0.0
    expected = extractor(record.reference)
    return 1.0 if _values_equal(predicted, expected) else 0.0


def extraction_failed(output_text: str, record: DatasetRecord) -> bool:
    """True when the record's extractor finds nothing in the output."""
    name = record.answer_extractor or _TASK_DEFAULT_EXTRACTOR[record.task]
    try:
        EXTRACTORS[name](output_text)
    except ExtractionFailed:
        return True
    return False


def _lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    previous = [0] * (len(b) + 1)
    for tok_a in a:
        current = [0]
        for j, tok_b in enumerate(b, start=1):
            if tok_a == tok_b:
                current.append(previous[j - 1] + 1)
            else:
                current.append(max(previous[j], current[j - 1]))
        previous = current
    return previous[-1]


def rouge_l(candidate_text: str, reference_text: str) -> float:
    """LCS-based F1 over whitespace tokens; 1.0 when both texts are empty."""
    cand = candidate_text.split()
    ref = reference_text.split()
    if not cand and not ref:
        return 1.0
    lcs = _lcs_length(cand, ref)
    if lcs == 0:
        return 0.0
    precision = lcs / len(cand)
    recall = lcs / len(ref)
    return 2 * precision * recall / (precision + recall)


def pg(evaluated_performance: float, reference_performance: float) -> float:
    """Performance gap: absolute distance from the uncontaminated score."""
    for name, value in (
        ("evaluated_performance", evaluated_performance),
        ("reference_performance", reference_performance),
    ):
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"{name} must be in [0, 1], got {value}")
    return abs(evaluated_performance - reference_performance)


Scorer = Callable[[str, DatasetRecord], float]


def score_output(output_text: str, record: DatasetRecord, scorer: Scorer | None = None) -> float:
    """Score one output against its record with the task's default scorer."""
    if scorer is not None:
        return scorer(output_text, record)
    if record.task == TASK_SUMMARIZATION:
        return rouge_l(output_text, record.reference)
    return exact_match(output_text, record)


@dataclass
class EvalResult:
    """Per-sample scores plus dataset-level aggregate, PG, and TED failure tally."""

    per_sample: dict[str, dict] = field(default_factory=dict)
    aggregate: float = 0.0
    pg: float | None = None
    failed_count: int = 0


def aggregate_results(
    per_sample_scores: dict[str, float],
    reference_performance: float | None = None,
    failed_count: int = 0,
) -> EvalResult:
    """Mean of per-sample scores, optionally with the gap to a reference score."""
    scores = list(per_sample_scores.values())
    aggregate = sum(scores) / len(scores) if scores else 0.0
    result = EvalResult(
        per_sample={k: {"score": v} for k, v in per_sample_scores.items()},
        aggregate=aggregate,
        failed_count=failed_count,
    )
    if reference_performance is not None:
        result.pg = pg(aggregate, reference_performance)
    return result


def blocking_pair_report(
    outcomes: Iterable[MitigationOutcome],
) -> list[tuple[int, int, int]]:
    """Count (suppressed token, replacement token) pairs across all mitigated traces.

    Rows come back sorted by descending count (ties by token ids), ready for
    a top-20 view of which tokens blocking exchanges most often.
    """
    pairs: Counter[tuple[int, int]] = Counter()
    for outcome in outcomes:
        for step in outcome.mitigated_trace.steps:
            if step.blocked is not None:
                pairs[(step.blocked, step.blocked_replacement)] += 1
    ordered = sorted(pairs.items(), key=lambda item: (-item[1], item[0]))
    return [(blocked, replacement, count) for (blocked, replacement), count in ordered]


def write_blocking_pair_csv(
    path: str,
    rows: Sequence[tuple[int, int, int]],
    token_text: Callable[[int], str] = str,
    top_n: int | None = None,
) -> None:
    """Write the pair-frequency table as CSV, optionally truncated to the top n."""
    selected = rows if top_n is None else rows[:top_n]
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(
            [
                "blocked_token_id",
                "replacement_token_id",
                "blocked_text",
                "replacement_text",
                "count",
            ]
        )
        for blocked, replacement, count in selected:
            writer.writerow(
                [blocked, replacement, token_text(blocked), token_text(replacement), count]
            )


@dataclass(frozen=True)
class CalibrationRow:
    """Average PG of one candidate blocking budget across a model family."""

    threshold: int
    per_member_performance: tuple[float, ...]
    per_member_pg: tuple[float, ...]
    average_pg: float


@dataclass(frozen=True)
class CalibrationResult:
    chosen_threshold: int
    table: tuple[CalibrationRow, ...]


def calibrate_threshold(
    model_family: Sequence[tuple[LanguageModel, str]],
    dataset: Sequence[DatasetRecord],
    prompts: Sequence[Sequence[int]],
    reference_performance: float,
    candidate_thresholds: Sequence[int],
    params: DecodeParams,
    render: Callable[[Sequence[int]], str],
    scorer: Scorer | None = None,
) -> CalibrationResult:
    """Pick the blocking budget whose adaptive mitigation tracks the reference best.

    For every candidate budget the adaptive strategy runs over every family
    member (one model per contamination level) and the whole dataset; the
    winner minimizes the family-average PG, ties going to the smaller budget.
    ``prompts`` holds the token-space prompt for each record, and ``render``
    maps output token ids back to scoreable text.
    """
    if not candidate_thresholds:
        raise ValueError("candidate_thresholds must be nonempty")
    if len(prompts) != len(dataset):
        raise ValueError("prompts and dataset must align")

    rows = []
    for threshold in candidate_thresholds:
        config = MitigationConfig(threshold_task=threshold)
        performances = []
        gaps = []
        for model, _label in model_family:
            total = 0.0
            for record, prompt in zip(dataset, prompts):
                outcome = lne_blocking(model, prompt, params, config)
                total += score_output(render(outcome.mitigated_trace.output), record, scorer)
            performance = total / len(dataset)
            performances.append(performance)
            gaps.append(pg(performance, reference_performance))
        rows.append(
            CalibrationRow(
                threshold=int(threshold),
                per_member_performance=tuple(performances),
                per_member_pg=tuple(gaps),
                average_pg=sum(gaps) / len(gaps),
            )
        )

    best = min(rows, key=lambda row: (row.average_pg, row.threshold))
    return CalibrationResult(chosen_threshold=best.threshold, table=tuple(rows))
