"""Synthetic contamination experiments that run at desk scale.

The lab builds a small token world where every question is "which answer
digit belongs to this item". The base model is a backoff n-gram trained on
a corpus of branching answer paths:

* each item owns a 4-level trellis of filler tokens with a primary and a
  secondary branch per level, then its answer token and end-of-sequence;
* "hard" items have a distractor (a digit-free null token) outweighing the
  true answer, so the base model gets them wrong — base accuracy sits
  strictly between 0 and 1;
* "fragile" items lack the secondary branch at level one, so a single
  blocked token derails them into junk — blocking has a measurable cost
  that grows with the number of blocked positions.

A contamination level alpha instantiates the same base model with a
memorization mixture: the first ceil(alpha * N) records of a fixed
seeded permutation are "leaked" with mixture weight alpha. Coverage grows
with alpha because a pure delta mixture saturates at alpha >= 0.5 (the
memorized token is always the argmax), which would make every leaked
record reproduce its reference verbatim at every level and flatten the
overlap-versus-contamination curve the sweep is meant to show.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .decoding import DecodeParams, greedy_decode
from .errors import DegenerateFixture
from .evaluation import DatasetRecord, pg as performance_gap, rouge_l, score_output
from .mitigation import (
    STRATEGY_TED,
    MitigationConfig,
    MitigationOutcome,
    parse_strategy,
    run_strategy,
)
from .models import (
    ContaminationSpec,
    MemorizingNGramModel,
    TokenSeq,
    VocabInfo,
    build_ngram_base,
)

DEFAULT_ALPHA_LEVELS = (0.0, 0.5, 0.9, 0.99)
NAMED_LEVELS = {"none": 0.0, "mild": 0.5, "moderate": 0.9, "heavy": 0.99}

_LETTERS = "abcdefghijklmnopqrstuvwxyz"

SWEEP_CSV_HEADER = (
    "alpha,strategy,mean_lne,mean_lne_normalized,mean_cnt,"
    "mean_rouge_greedy_reference,mean_rouge_mitigated_greedy,"
    "accuracy,pg,failed_count"
)


def _letters(index: int) -> str:
    if index < 26:
        return _LETTERS[index]
    return _LETTERS[index // 26] + _LETTERS[index % 26]


@dataclass(frozen=True)
class SizeParams:
    """Shape and difficulty knobs for a generated fixture.

    The dataset holds num_items * num_styles records; sweeps need at least
    50 for their statistical assertions to mean anything.
    """

    num_items: int = 16
    num_styles: int = 15
    samples_per_pair: int = 60
    hard_items: int = 4
    fragile_items: int = 2
    levels: int = 4
    num_junk: int = 16
    order: int = 3
    smoothing: float = 0.012
    branch_primary: float = 0.45
    branch_secondary: float = 0.30
    answer_easy: tuple[float, float] = (0.70, 0.10)
    answer_hard: tuple[float, float] = (0.25, 0.55)
    tail_eos: float = 0.55
    max_tokens: int = 24
    min_records: int = 50

    def __post_init__(self) -> None:
        if self.num_items < 2 or self.num_styles < 1:
            raise ValueError("need at least 2 items and 1 style")
        if self.hard_items + self.fragile_items > self.num_items:
            raise ValueError("hard + fragile items exceed total items")
        if self.hard_items < 1 or self.fragile_items < 0:
            raise ValueError("need at least one hard item")
        if self.dataset_size < self.min_records:
            raise ValueError(
                f"dataset would hold {self.dataset_size} records; "
                f"sweeps need at least {self.min_records}"
            )

    @property
    def dataset_size(self) -> int:
        return self.num_items * self.num_styles


@dataclass(frozen=True)
class LabFixture:
    """A reproducible synthetic world: corpus, dataset, and contamination plan."""

    seed: int
    size: SizeParams
    vocab: VocabInfo
    token_texts: tuple[str, ...]
    corpus: tuple[TokenSeq, ...]
    dataset: tuple[DatasetRecord, ...]
    prompts: tuple[TokenSeq, ...]
    references: tuple[TokenSeq, ...]
    contamination_order: tuple[int, ...]
    alpha_levels: tuple[float, ...]
    base_accuracy: float

    def render(self, ids: Sequence[int]) -> str:
        return " ".join(self.token_texts[i] for i in ids)

    def base_model(self) -> MemorizingNGramModel:
        return build_ngram_base(
            self.corpus,
            self.vocab,
            order=self.size.order,
            smoothing=self.size.smoothing,
            token_texts=self.token_texts,
        )

    def contaminated_records(self, alpha: float) -> tuple[tuple[TokenSeq, TokenSeq], ...]:
        covered = math.ceil(alpha * len(self.dataset))
        picked = self.contamination_order[:covered]
        return tuple((self.prompts[i], self.references[i]) for i in picked)

    def contaminated_model(
        self, alpha: float, base: MemorizingNGramModel | None = None
    ) -> MemorizingNGramModel:
        base = base or self.base_model()
        spec = ContaminationSpec(
            alpha=alpha,
            records=self.contaminated_records(alpha),
            eos_id=self.vocab.eos_id,
        )
        return base.with_contamination(spec)

    def decode_params(self) -> DecodeParams:
        return DecodeParams(max_tokens=self.size.max_tokens, rng_seed=self.seed)

    def to_json(self) -> str:
        doc = {
            "seed": self.seed,
            "size": self.size.__dict__,
            "vocab": {"vocab_size": self.vocab.vocab_size, "eos_id": self.vocab.eos_id},
            "token_texts": list(self.token_texts),
            "corpus": [list(seq) for seq in self.corpus],
            "dataset": [
                {
                    "id": rec.id,
                    "prompt": rec.prompt,
                    "reference": rec.reference,
                    "task": rec.task,
                    "answer_extractor": rec.answer_extractor,
                }
                for rec in self.dataset
            ],
            "prompts": [list(seq) for seq in self.prompts],
            "references": [list(seq) for seq in self.references],
            "contamination_order": list(self.contamination_order),
            "alpha_levels": list(self.alpha_levels),
            "base_accuracy": self.base_accuracy,
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":"))

    @staticmethod
    def from_json(text: str) -> "LabFixture":
        doc = json.loads(text)
        size_doc = dict(doc["size"])
        for key in ("answer_easy", "answer_hard"):
            size_doc[key] = tuple(size_doc[key])
        return LabFixture(
            seed=doc["seed"],
            size=SizeParams(**size_doc),
            vocab=VocabInfo(**doc["vocab"]),
            token_texts=tuple(doc["token_texts"]),
            corpus=tuple(tuple(seq) for seq in doc["corpus"]),
            dataset=tuple(DatasetRecord(**rec) for rec in doc["dataset"]),
            prompts=tuple(tuple(seq) for seq in doc["prompts"]),
            references=tuple(tuple(seq) for seq in doc["references"]),
            contamination_order=tuple(doc["contamination_order"]),
            alpha_levels=tuple(doc["alpha_levels"]),
            base_accuracy=doc["base_accuracy"],
        )


class _TokenLayout:
    """Assigns ids and printable digit-free texts to the lab's token classes."""

    def __init__(self, size: SizeParams) -> None:
        self.texts: list[str] = ["<eos>"]
        self.eos = 0
        self.styles = [self._add(f"ask{_letters(s)}") for s in range(size.num_styles)]
        self.items = [self._add(f"obj{_letters(i)}") for i in range(size.num_items)]
        self.branches = {
            (i, lvl, b): self._add(f"w{_letters(i)}{_letters(lvl)}{'ab'[b]}")
            for i in range(size.num_items)
            for lvl in range(size.levels)
            for b in (0, 1)
        }
        self.answers: list[int] = []  # texts assigned later, one digit per item
        self.null = self._add("blank")
        self.junk = [self._add(f"fil{_letters(j)}") for j in range(size.num_junk)]

    def _add(self, text: str) -> int:
        self.texts.append(text)
        return len(self.texts) - 1

    def add_answers(self, values: Sequence[int]) -> None:
        self.answers = [self._add(str(v)) for v in values]


def _generate_world(seed: int, size: SizeParams):
    """All random choices of one fixture attempt, from one seeded generator."""
    rng = np.random.Generator(np.random.PCG64(seed))
    layout = _TokenLayout(size)
    answer_values = [int(v) for v in rng.integers(0, 10, size=size.num_items)]
    layout.add_answers(answer_values)
    vocab = VocabInfo(vocab_size=len(layout.texts), eos_id=layout.eos)

    item_roles = list(rng.permutation(size.num_items))
    hard = set(item_roles[: size.hard_items])
    fragile = set(item_roles[size.hard_items : size.hard_items + size.fragile_items])

    def junk_chain() -> list[int]:
        length = int(rng.integers(2, 5))
        walk = [int(rng.integers(0, size.num_junk))]
        while len(walk) < length:
            walk.append(int(rng.integers(0, size.num_junk)))
        return [layout.junk[j] for j in walk]

    p_primary, p_secondary = size.branch_primary, size.branch_secondary
    corpus: list[TokenSeq] = []
    for item in range(size.num_items):
        ans_probs = size.answer_hard if item in hard else size.answer_easy
        for style in range(size.num_styles):
            for _ in range(size.samples_per_pair):
                seq = [layout.styles[style], layout.items[item]]
                derailed = False
                for level in range(size.levels):
                    p_b = 0.0 if (item in fragile and level == 0) else p_secondary
                    roll = rng.random()
                    if roll < p_primary:
                        seq.append(layout.branches[(item, level, 0)])
                    elif roll < p_primary + p_b:
                        seq.append(layout.branches[(item, level, 1)])
                    else:
                        seq.extend(junk_chain())
                        derailed = True
                        break
                if not derailed:
                    p_ans, p_null = ans_probs
                    roll = rng.random()
                    if roll < p_ans:
                        seq.append(layout.answers[item])
                    elif roll < p_ans + p_null:
                        seq.append(layout.null)
                    else:
                        seq.extend(junk_chain())
                        derailed = True
                if not derailed and rng.random() >= size.tail_eos:
                    seq.extend(junk_chain()[: int(rng.integers(1, 3))])
                seq.append(layout.eos)
                corpus.append(tuple(seq))

    records: list[DatasetRecord] = []
    prompts: list[TokenSeq] = []
    references: list[TokenSeq] = []
    for item in range(size.num_items):
        canonical = [layout.branches[(item, lvl, 0)] for lvl in range(size.levels)]
        reference = tuple(canonical + [layout.answers[item], layout.eos])
        for style in range(size.num_styles):
            prompt = (layout.styles[style], layout.items[item])
            prompts.append(prompt)
            references.append(reference)
            records.append(
                DatasetRecord(
                    id=f"item{item:02d}-style{style:02d}",
                    prompt=" ".join(layout.texts[t] for t in prompt),
                    reference=" ".join(layout.texts[t] for t in reference),
                    task="generic",
                    answer_extractor="last_number",
                )
            )

    contamination_order = tuple(int(i) for i in rng.permutation(len(records)))
    return layout, vocab, tuple(corpus), tuple(records), tuple(prompts), tuple(
        references
    ), contamination_order


def _dataset_accuracy(
    model: MemorizingNGramModel,
    fixture_like: dict,
) -> float:
    params: DecodeParams = fixture_like["params"]
    total = 0.0
    for record, prompt in zip(fixture_like["dataset"], fixture_like["prompts"]):
        trace = greedy_decode(model, prompt, params)
        total += score_output(fixture_like["render"](trace.output), record)
    return total / len(fixture_like["dataset"])


def build_fixture(
    seed: int,
    size: SizeParams | None = None,
    alpha_levels: Sequence[float] = DEFAULT_ALPHA_LEVELS,
    max_attempts: int = 5,
) -> LabFixture:
    """Deterministically generate a fixture whose base accuracy is strictly in (0, 1).

    Attempts with degenerate base accuracy regenerate from a derived seed;
    after ``max_attempts`` failures a DegenerateFixture is raised.
    """
    size = size or SizeParams()
    levels = tuple(float(a) for a in alpha_levels)
    if any(not 0.0 <= a <= 1.0 for a in levels):
        raise ValueError("alpha levels must be in [0, 1]")

    for attempt in range(max_attempts):
        attempt_seed = seed + attempt * 1_000_003
        layout, vocab, corpus, records, prompts, references, order = _generate_world(
            attempt_seed, size
        )
        base = build_ngram_base(
            corpus, vocab, order=size.order, smoothing=size.smoothing,
            token_texts=layout.texts,
        )
        params = DecodeParams(max_tokens=size.max_tokens, rng_seed=seed)
        accuracy = _dataset_accuracy(
            base,
            {
                "dataset": records,
                "prompts": prompts,
                "params": params,
                "render": lambda ids: " ".join(layout.texts[i] for i in ids),
            },
        )
        if 0.0 < accuracy < 1.0:
            return LabFixture(
                seed=seed,
                size=size,
                vocab=vocab,
                token_texts=tuple(layout.texts),
                corpus=corpus,
                dataset=records,
                prompts=prompts,
                references=references,
                contamination_order=order,
                alpha_levels=levels,
                base_accuracy=accuracy,
            )
    raise DegenerateFixture(
        f"no fixture with base accuracy in (0, 1) after {max_attempts} attempts"
    )


@dataclass(frozen=True)
class SweepCell:
    """Aggregates for one (alpha, strategy) grid point."""

    alpha: float
    strategy: str
    mean_lne: float
    mean_lne_normalized: float
    mean_cnt: float
    mean_rouge_greedy_reference: float
    mean_rouge_mitigated_greedy: float
    accuracy: float
    pg: float
    failed_count: int
    survivor_count: int = 0


@dataclass(frozen=True)
class SweepResult:
    """Full alpha x strategy grid of one sweep."""

    alpha_levels: tuple[float, ...]
    strategies: tuple[str, ...]
    cells: tuple[SweepCell, ...]

    def cell(self, alpha: float, strategy: str) -> SweepCell:
        for cell in self.cells:
            if cell.alpha == alpha and cell.strategy == strategy:
                return cell
        raise KeyError((alpha, strategy))


def _ted_record_score(
    outcome: MitigationOutcome,
    record: DatasetRecord,
    render,
    aggregate: str,
) -> float | None:
    if not outcome.ted_survivors:
        return None
    scores = [score_output(render(s.output), record) for s in outcome.ted_survivors]
    if aggregate == "best":
        return max(scores)
    return sum(scores) / len(scores)


def run_sweep(
    fixture: LabFixture,
    strategies: Sequence[str],
    config: MitigationConfig | None = None,
) -> SweepResult:
    """Run every strategy at every contamination level over the whole dataset."""
    if not strategies:
        raise ValueError("strategies must be nonempty")
    for name in strategies:
        parse_strategy(name)
    config = config or MitigationConfig()
    params = fixture.decode_params()
    base = fixture.base_model()

    cells: list[SweepCell] = []
    for alpha in fixture.alpha_levels:
        model = fixture.contaminated_model(alpha, base)
        for strategy in strategies:
            lnes: list[float] = []
            norms: list[float] = []
            cnts: list[float] = []
            rouge_gr: list[float] = []
            rouge_mg: list[float] = []
            scores: list[float] = []
            failed = 0
            survivors = 0
            for record, prompt in zip(fixture.dataset, fixture.prompts):
                outcome = run_strategy(strategy, model, prompt, params, config)
                lnes.append(outcome.scores.lne)
                norms.append(outcome.scores.lne_normalized)
                cnts.append(outcome.cnt)
                greedy_text = fixture.render(outcome.greedy_trace.output)
                mitigated_text = fixture.render(outcome.mitigated_trace.output)
                rouge_gr.append(rouge_l(greedy_text, record.reference))
                rouge_mg.append(rouge_l(mitigated_text, greedy_text))
                if strategy == STRATEGY_TED:
                    survivors += len(outcome.ted_survivors or ())
                    ted_score = _ted_record_score(
                        outcome, record, fixture.render, config.ted.aggregate
                    )
                    if ted_score is None:
                        failed += 1
                    else:
                        scores.append(ted_score)
                else:
                    scores.append(score_output(mitigated_text, record))
            n = len(fixture.dataset)
            accuracy = sum(scores) / len(scores) if scores else 0.0
            cells.append(
                SweepCell(
                    alpha=alpha,
                    strategy=strategy,
                    mean_lne=sum(lnes) / n,
                    mean_lne_normalized=sum(norms) / n,
                    mean_cnt=sum(cnts) / n,
                    mean_rouge_greedy_reference=sum(rouge_gr) / n,
                    mean_rouge_mitigated_greedy=sum(rouge_mg) / n,
                    accuracy=accuracy,
                    pg=performance_gap(accuracy, fixture.base_accuracy),
                    failed_count=failed,
                    survivor_count=survivors,
                )
            )
    return SweepResult(
        alpha_levels=fixture.alpha_levels,
        strategies=tuple(strategies),
        cells=tuple(cells),
    )


def emit_curves(sweep: SweepResult, path: str) -> None:
    """One CSV row per (alpha, strategy) cell, fixed column order."""
    lines = [SWEEP_CSV_HEADER]
    for cell in sweep.cells:
        lines.append(
            ",".join(
                [
                    f"{cell.alpha:.9g}",
                    cell.strategy,
                    f"{cell.mean_lne:.9g}",
                    f"{cell.mean_lne_normalized:.9g}",
                    f"{cell.mean_cnt:.9g}",
                    f"{cell.mean_rouge_greedy_reference:.9g}",
                    f"{cell.mean_rouge_mitigated_greedy:.9g}",
                    f"{cell.accuracy:.9g}",
                    f"{cell.pg:.9g}",
                    str(cell.failed_count),
                ]
            )
        )
    try:
        with open(path, "w", encoding="utf-8", newline="") as handle:
            handle.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"could not write sweep curves to {path}: {exc}") from exc
