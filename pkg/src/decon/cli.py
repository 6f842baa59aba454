"""Command-line surface: detect, mitigate, sweep, calibrate.

Datasets are JSONL, one record per line with fields ``id``, ``prompt``,
``reference`` and optional ``task`` / ``answer_extractor``. Models come
from a spec string:

* ``builtin:ngram?corpus=PATH&alpha=0.5&order=3&smoothing=0.1`` — backoff
  n-gram trained on a whitespace-tokenized text corpus; with alpha > 0 the
  dataset itself is treated as the leaked material (named levels none,
  mild, moderate, heavy map to 0 / 0.5 / 0.9 / 0.99);
* ``builtin:table?file=PATH`` — exhaustive lookup table from a JSON file;
* ``remote:COMMAND`` — adapter child process speaking the stdio protocol.

Every command is deterministic given its config and seed; reports are
written sample-by-sample in dataset order, so a rerun is byte-identical
and a truncated run leaves a valid JSONL prefix. Exit codes: 0 ok,
2 input error, 3 model error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import threading
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Sequence
from urllib.parse import parse_qs, urlparse

from .decoding import DecodeParams, greedy_decode
from .detection import DEFAULT_K_PERCENT, compute_scores
from .errors import DatasetError, DeconError, ModelUnavailable
from .evaluation import (
    DEFAULT_THRESHOLDS,
    TASK_ARITHMETIC,
    TASK_CODE,
    TASK_GENERIC,
    TASK_SUMMARIZATION,
    DatasetRecord,
    calibrate_threshold,
    pg,
    score_output,
)
from .lab import NAMED_LEVELS, build_fixture, emit_curves, run_sweep
from .mitigation import (
    STRATEGY_GREEDY,
    STRATEGY_TED,
    MitigationConfig,
    TedConfig,
    parse_strategy,
    run_strategy,
)
from .models import ContaminationSpec, TableModel, VocabInfo, build_ngram_base
from .remote import RemoteModel
from .textmap import WordVocab

log = logging.getLogger("decon")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_MODEL = 3

# edit-distance thresholds for the sampling baseline, by task
DEFAULT_TED_TAU = {
    TASK_CODE: 2,
    TASK_ARITHMETIC: 50,
    TASK_SUMMARIZATION: 2,
    TASK_GENERIC: 2,
}


def resolve_threshold_task(explicit: int | None, records: list[DatasetRecord]) -> int:
    """Blocking budget: the flag if given, else the dataset task's default."""
    if explicit is not None:
        return explicit
    task = records[0].task
    resolved = DEFAULT_THRESHOLDS[task]
    if task == TASK_GENERIC:
        log.warning(
            "no --threshold-task given for a generic-task dataset; "
            "using %d — pass the flag explicitly to silence this warning",
            resolved,
        )
    return resolved


def resolve_ted_tau(explicit: int | None, records: list[DatasetRecord]) -> int:
    """Sampling-baseline distance threshold: flag if given, else task default."""
    if explicit is not None:
        return explicit
    return DEFAULT_TED_TAU[records[0].task]


def _round9(value: float) -> float:
    """Report floats carry 9 significant digits."""
    return float(f"{value:.9g}")


# ----------------------------------------------------------------------------
# Dataset loading
# ----------------------------------------------------------------------------


def load_dataset(path: str) -> list[DatasetRecord]:
    file = Path(path)
    if not file.is_file():
        raise DatasetError(f"dataset file not found: {path}")
    records: list[DatasetRecord] = []
    seen: set[str] = set()
    for lineno, line in enumerate(file.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
        try:
            record = DatasetRecord(
                id=str(doc["id"]),
                prompt=str(doc["prompt"]),
                reference=str(doc["reference"]),
                task=doc.get("task", "generic"),
                answer_extractor=doc.get("answer_extractor"),
            )
        except (KeyError, ValueError) as exc:
            raise DatasetError(f"{path}:{lineno}: bad record: {exc}") from exc
        if record.id in seen:
            raise DatasetError(f"{path}:{lineno}: duplicate record id {record.id!r}")
        seen.add(record.id)
        records.append(record)
    if not records:
        raise DatasetError(f"dataset file is empty: {path}")
    return records


# ----------------------------------------------------------------------------
# Model construction
# ----------------------------------------------------------------------------


class ModelHandle:
    """A model plus its text codec; remote handles are created per worker thread."""

    def __init__(
        self,
        get_model: Callable[[], object],
        encode: Callable[[str], list[int]],
        decode: Callable[[Sequence[int]], str],
        close: Callable[[], None] = lambda: None,
    ) -> None:
        self.get_model = get_model
        self.encode = encode
        self.decode = decode
        self.close = close


def _parse_alpha(raw: str) -> float:
    if raw in NAMED_LEVELS:
        return NAMED_LEVELS[raw]
    alpha = float(raw)
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    return alpha


def _build_ngram_handle(query: dict[str, str], dataset: list[DatasetRecord]) -> ModelHandle:
    corpus_path = query.get("corpus")
    if not corpus_path:
        raise DatasetError("builtin:ngram requires corpus=PATH")
    file = Path(corpus_path)
    if not file.is_file():
        raise DatasetError(f"corpus file not found: {corpus_path}")
    lines = [line for line in file.read_text(encoding="utf-8").splitlines() if line.strip()]
    vocab_map = WordVocab.from_corpus_lines(lines)
    corpus = [vocab_map.encode(line, append_eos=True) for line in lines]
    order = int(query.get("order", 3))
    smoothing = float(query.get("smoothing", 0.1))
    model = build_ngram_base(
        corpus, vocab_map.vocab, order=order, smoothing=smoothing, token_texts=vocab_map.texts
    )
    alpha = _parse_alpha(query.get("alpha", "0"))
    if alpha > 0:
        records = tuple(
            (
                tuple(vocab_map.encode(rec.prompt)),
                tuple(vocab_map.encode(rec.reference, append_eos=True)),
            )
            for rec in dataset
        )
        model = model.with_contamination(
            ContaminationSpec(alpha=alpha, records=records, eos_id=vocab_map.eos_id)
        )
    return ModelHandle(
        get_model=lambda: model, encode=vocab_map.encode, decode=vocab_map.decode
    )


def _build_table_handle(query: dict[str, str]) -> ModelHandle:
    table_path = query.get("file")
    if not table_path:
        raise DatasetError("builtin:table requires file=PATH")
    file = Path(table_path)
    if not file.is_file():
        raise DatasetError(f"table file not found: {table_path}")
    try:
        doc = json.loads(file.read_text(encoding="utf-8"))
        vocab = VocabInfo(vocab_size=int(doc["vocab_size"]), eos_id=int(doc["eos_id"]))
        transitions = {
            tuple(int(t) for t in ctx.split()): row
            for ctx, row in doc.get("transitions", {}).items()
        }
        texts = doc.get("token_texts")
        model = TableModel(vocab, transitions, default=doc.get("default"), token_texts=texts)
    except (KeyError, ValueError, json.JSONDecodeError) as exc:
        raise DatasetError(f"bad table file {table_path}: {exc}") from exc

    if texts is None:
        texts = [str(i) for i in range(vocab.vocab_size)]
    ids = {word: i for i, word in enumerate(texts)}

    def encode(text: str) -> list[int]:
        try:
            return [ids[word] for word in text.split()]
        except KeyError as exc:
            raise DatasetError(f"word {exc.args[0]!r} not in the table vocabulary") from exc

    return ModelHandle(
        get_model=lambda: model,
        encode=encode,
        decode=lambda seq: " ".join(texts[i] for i in seq),
    )


def _build_remote_handle(command: str) -> ModelHandle:
    timeout = float(os.environ.get("DECON_HANDSHAKE_TIMEOUT", "30"))
    local = threading.local()
    instances: list[RemoteModel] = []
    lock = threading.Lock()

    def connect() -> RemoteModel:
        if not hasattr(local, "model"):
            model = RemoteModel(command, handshake_timeout=timeout)
            with lock:
                instances.append(model)
            local.model = model
        return local.model

    connect()  # fail fast on handshake problems

    def close() -> None:
        with lock:
            for model in instances:
                model.close()
            instances.clear()

    return ModelHandle(
        get_model=connect,
        encode=lambda text: connect().encode(text),
        decode=lambda ids: connect().decode(ids),
        close=close,
    )


def build_model_handle(spec: str, dataset: list[DatasetRecord]) -> ModelHandle:
    if spec.startswith("remote:"):
        return _build_remote_handle(spec[len("remote:"):])
    if spec.startswith("builtin:"):
        parsed = urlparse(spec[len("builtin:"):])
        kind = parsed.path
        query = {k: v[-1] for k, v in parse_qs(parsed.query).items()}
        if kind == "ngram":
            return _build_ngram_handle(query, dataset)
        if kind == "table":
            return _build_table_handle(query)
        raise DatasetError(f"unknown builtin model {kind!r}")
    raise DatasetError(f"unrecognized model spec {spec!r}")


# ----------------------------------------------------------------------------
# Commands
# ----------------------------------------------------------------------------


def _scores_doc(scores) -> dict:
    return {
        "lne": _round9(scores.lne),
        "lne_normalized": _round9(scores.lne_normalized),
        "perplexity": _round9(scores.perplexity),
        "min_k": _round9(scores.min_k),
        "k_percent": _round9(scores.k_percent),
    }


def _run_samples(records, worker, workers: int):
    """Run per-sample work concurrently but yield results in dataset order."""
    if workers <= 1:
        for record in records:
            yield worker(record)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        yield from pool.map(worker, records)


def cmd_detect(args: argparse.Namespace) -> int:
    dataset = load_dataset(args.dataset)
    handle = build_model_handle(args.model, dataset)
    params = DecodeParams(max_tokens=args.max_tokens, rng_seed=args.seed)
    k_percent = args.min_k

    prompts = {rec.id: handle.encode(rec.prompt) for rec in dataset}

    def worker(record: DatasetRecord) -> dict:
        try:
            trace = greedy_decode(handle.get_model(), prompts[record.id], params)
            scores = compute_scores(trace, k_percent)
            return {
                "id": record.id,
                "prompt": record.prompt,
                "output_ids": list(trace.output),
                "output_text": handle.decode(trace.output),
                "terminated_by": trace.terminated_by,
                "scores": _scores_doc(scores),
            }
        except DeconError as exc:
            log.warning("sample %s failed: %s", record.id, exc)
            return {"id": record.id, "error": str(exc)}

    totals = {"lne": 0.0, "lne_normalized": 0.0, "perplexity": 0.0, "min_k": 0.0}
    scored = 0
    try:
        with open(args.out, "w", encoding="utf-8", newline="") as out:
            for row in _run_samples(dataset, worker, args.workers):
                out.write(json.dumps(row) + "\n")
                out.flush()
                if "scores" in row:
                    scored += 1
                    for key in totals:
                        totals[key] += row["scores"][key]
    finally:
        handle.close()

    aggregate = {
        "command": "detect",
        "samples": len(dataset),
        "scored": scored,
        **{f"mean_{k}": _round9(v / scored) if scored else None for k, v in totals.items()},
    }
    print(json.dumps(aggregate))
    return EXIT_OK


def cmd_mitigate(args: argparse.Namespace) -> int:
    parse_strategy(args.strategy)
    dataset = load_dataset(args.dataset)
    handle = build_model_handle(args.model, dataset)
    params = DecodeParams(max_tokens=args.max_tokens, rng_seed=args.seed)
    config = MitigationConfig(
        threshold_task=resolve_threshold_task(args.threshold_task, dataset),
        k_percent=args.min_k,
        ted=TedConfig(
            num_samples=args.ted_samples,
            temperature=args.ted_temperature,
            tau=resolve_ted_tau(args.ted_tau, dataset),
        ),
    )

    prompts = {rec.id: handle.encode(rec.prompt) for rec in dataset}

    def worker(record: DatasetRecord) -> dict:
        try:
            outcome = run_strategy(
                args.strategy, handle.get_model(), prompts[record.id], params, config
            )
            mitigated_text = handle.decode(outcome.mitigated_trace.output)
            row = {
                "id": record.id,
                "prompt": record.prompt,
                "strategy": args.strategy,
                "output_ids": list(outcome.greedy_trace.output),
                "output_text": handle.decode(outcome.greedy_trace.output),
                "mitigated_ids": list(outcome.mitigated_trace.output),
                "mitigated_text": mitigated_text,
                "cnt": outcome.cnt,
                "scores": _scores_doc(outcome.scores),
            }
            if args.strategy == STRATEGY_TED:
                survivors = outcome.ted_survivors or ()
                row["survivor_count"] = len(survivors)
                row["failed"] = not survivors
                if survivors:
                    values = [
                        score_output(handle.decode(s.output), record) for s in survivors
                    ]
                    row["score"] = _round9(
                        max(values) if config.ted.aggregate == "best"
                        else sum(values) / len(values)
                    )
                else:
                    row["score"] = None
            else:
                row["score"] = _round9(score_output(mitigated_text, record))
            return row
        except DeconError as exc:
            log.warning("sample %s failed: %s", record.id, exc)
            return {"id": record.id, "error": str(exc)}

    score_sum = 0.0
    scored = 0
    failed = 0
    cnt_sum = 0
    try:
        with open(args.out, "w", encoding="utf-8", newline="") as out:
            for row in _run_samples(dataset, worker, args.workers):
                out.write(json.dumps(row) + "\n")
                out.flush()
                if "error" in row:
                    continue
                cnt_sum += row["cnt"]
                if row.get("failed"):
                    failed += 1
                elif row["score"] is not None:
                    score_sum += row["score"]
                    scored += 1
    finally:
        handle.close()

    aggregate = {
        "command": "mitigate",
        "strategy": args.strategy,
        "samples": len(dataset),
        "scored": scored,
        "failed": failed,
        "accuracy": _round9(score_sum / scored) if scored else None,
        "mean_cnt": _round9(cnt_sum / len(dataset)),
    }
    if args.ref_performance is not None and scored:
        aggregate["pg"] = _round9(pg(score_sum / scored, args.ref_performance))
    print(json.dumps(aggregate))
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    strategies = [s.strip() for s in args.strategies.split(",") if s.strip()]
    if not strategies:
        raise DatasetError("no strategies given")
    fixture = build_fixture(seed=args.seed)
    config = MitigationConfig(
        threshold_task=args.threshold_task,
        ted=TedConfig(
            num_samples=args.ted_samples,
            temperature=args.ted_temperature,
            tau=args.ted_tau if args.ted_tau is not None else 2,
        ),
    )
    sweep = run_sweep(fixture, strategies, config)
    emit_curves(sweep, args.out)
    print(
        json.dumps(
            {
                "command": "sweep",
                "seed": args.seed,
                "base_accuracy": _round9(fixture.base_accuracy),
                "rows": len(sweep.cells),
                "out": args.out,
            }
        )
    )
    return EXIT_OK


def cmd_calibrate(args: argparse.Namespace) -> int:
    candidates = [int(c) for c in args.candidates.split(",") if c.strip() != ""]
    if not candidates:
        raise DatasetError("candidate threshold list is empty")
    fixture = build_fixture(seed=args.seed)
    base = fixture.base_model()
    family = [
        (fixture.contaminated_model(alpha, base), f"alpha={alpha:g}")
        for alpha in fixture.alpha_levels
    ]
    result = calibrate_threshold(
        model_family=family,
        dataset=fixture.dataset,
        prompts=fixture.prompts,
        reference_performance=fixture.base_accuracy,
        candidate_thresholds=candidates,
        params=fixture.decode_params(),
        render=fixture.render,
    )
    lines = ["threshold," + ",".join(label for _, label in family) + ",average_pg"]
    for row in result.table:
        cells = [f"{p:.9g}({g:.9g})" for p, g in zip(row.per_member_performance, row.per_member_pg)]
        lines.append(f"{row.threshold}," + ",".join(cells) + f",{row.average_pg:.9g}")
    Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(
        json.dumps(
            {
                "command": "calibrate",
                "chosen_threshold": result.chosen_threshold,
                "candidates": candidates,
                "out": args.out,
            }
        )
    )
    return EXIT_OK


# ----------------------------------------------------------------------------
# Entry point
# ----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="decon",
        description="Contamination detection and mitigation over pluggable language models",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, with_model: bool = True) -> None:
        if with_model:
            p.add_argument("--model", required=True, help="model spec (builtin:... or remote:...)")
            p.add_argument("--dataset", required=True, help="JSONL dataset path")
            p.add_argument("--workers", type=int, default=1)
        p.add_argument("--max-tokens", type=int, default=256)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", required=True, help="output report path")
        p.add_argument("--min-k", type=float, default=DEFAULT_K_PERCENT,
                       help="k%% for the min-k detector")
        p.add_argument("--ted-samples", type=int, default=50)
        p.add_argument("--ted-tau", type=int, default=None,
                       help="edit-distance threshold; default depends on the task")
        p.add_argument("--ted-temperature", type=float, default=1.0)

    p_detect = sub.add_parser("detect", help="score contamination per sample")
    common(p_detect)
    p_detect.set_defaults(func=cmd_detect)

    p_mitigate = sub.add_parser("mitigate", help="run a mitigation strategy per sample")
    common(p_mitigate)
    p_mitigate.add_argument(
        "--strategy",
        default=STRATEGY_GREEDY,
        help="greedy | lne_blocking | fixed_blocking:N | ppl_blocking | mink_blocking | ted",
    )
    p_mitigate.add_argument("--threshold-task", type=int, default=None,
                            help="blocking budget; default depends on the task")
    p_mitigate.add_argument("--ref-performance", type=float, default=None)
    p_mitigate.set_defaults(func=cmd_mitigate)

    p_sweep = sub.add_parser("sweep", help="run the synthetic-lab contamination sweep")
    common(p_sweep, with_model=False)
    p_sweep.add_argument(
        "--strategies",
        default="greedy,lne_blocking,fixed_blocking:1,fixed_blocking:2,fixed_blocking:5",
    )
    p_sweep.add_argument("--threshold-task", type=int, default=4)
    p_sweep.set_defaults(func=cmd_sweep)

    p_cal = sub.add_parser("calibrate", help="pick the best blocking budget on the lab")
    common(p_cal, with_model=False)
    p_cal.add_argument("--candidates", required=True, help="comma-separated budgets, e.g. 0,1,2,4,7")
    p_cal.set_defaults(func=cmd_calibrate)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(
        level=os.environ.get("DECON_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ModelUnavailable as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except (DatasetError, ValueError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
