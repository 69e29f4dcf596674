"""Benchmark evaluation: greedy pass@1 and majority@k self-consistency.

Majority voting groups sampled answers into exact-equivalence classes
(the same classes used for verdicts), so "0.5" and "1/2" pool their
votes. Items whose backend call fails are scored incorrect and carry the
error, never silently dropped.
"""

from __future__ import annotations

import json
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

from .answers import answers_match, extract_answer, normalize, strip_answer_text
from .corpus import read_jsonl, write_jsonl
from .inference import Backend, GenerationRequest, derive_seed, generate
from .prompting import DEFAULT_PROMPT_TEMPLATE, render_prompt


@dataclass(frozen=True)
class BenchmarkItem:
    question: str
    answer: str

    def __post_init__(self) -> None:
        if not self.question or not self.answer:
            raise ValueError("benchmark items need a question and a gold answer")


@dataclass(frozen=True)
class Benchmark:
    name: str
    items: tuple[BenchmarkItem, ...]

    def __post_init__(self) -> None:
        if not self.items:
            raise ValueError("benchmark must contain at least one item")


def load_benchmark(path: str | Path, name: str | None = None, limit: int | None = None) -> Benchmark:
    """Load a line-delimited {"question", "answer"} benchmark file.

    GSM8K-style golds ("... #### 42") are normalized to the text after the
    last #### at ingestion.
    """
    items = []
    for row in read_jsonl(path):
        answer = str(row["answer"])
        if "####" in answer:
            answer = strip_answer_text(answer.rsplit("####", 1)[1])
        items.append(BenchmarkItem(question=str(row["question"]), answer=answer))
        if limit is not None and len(items) >= limit:
            break
    return Benchmark(name=name or Path(path).stem, items=tuple(items))


def _vote_key(answer: str) -> tuple[str, Fraction | str]:
    canonical = normalize(answer)
    if canonical.is_numeric():
        return ("num", canonical.value)
    return ("sym", canonical.normalized)


def majority_vote(answers: list[str | None]) -> str | None:
    """Representative of the largest answers_match equivalence class.

    Ties break toward the class seen earliest in the list. Missing
    extractions form a null class that can only win when every answer is
    null, in which case None is returned.
    """
    if not answers:
        raise ValueError("cannot vote over an empty answer list")
    counts: dict[tuple, int] = defaultdict(int)
    first_index: dict[tuple, int] = {}
    representative: dict[tuple, str] = {}
    for position, answer in enumerate(answers):
        if answer is None:
            continue
        key = _vote_key(answer)
        counts[key] += 1
        if key not in first_index:
            first_index[key] = position
            representative[key] = normalize(answer).normalized
    if not counts:
        return None
    winner = min(counts, key=lambda key: (-counts[key], first_index[key]))
    return representative[winner]


@dataclass(frozen=True)
class ItemResult:
    index: int
    gold: str
    predicted: str | None
    correct: bool
    error: str | None = None


@dataclass(frozen=True)
class EvalResult:
    benchmark: str
    mode: str
    k: int
    temperature: float
    item_count: int
    correct_count: int
    items: tuple[ItemResult, ...]

    def __post_init__(self) -> None:
        if len(self.items) != self.item_count:
            raise ValueError("per-item records must cover every item")
        if sum(1 for i in self.items if i.correct) != self.correct_count:
            raise ValueError("correct_count must equal the per-item tally")

    @property
    def accuracy(self) -> float:
        return self.correct_count / self.item_count


def eval_benchmark(
    backend: Backend,
    benchmark: Benchmark,
    prompt_template: str = DEFAULT_PROMPT_TEMPLATE,
    mode: str = "pass1",
    k: int | None = None,
    temperature: float | None = None,
    max_new_tokens: int = 512,
    seed: int = 0,
    workers: int = 4,
    transcript_path: str | Path | None = None,
) -> EvalResult:
    """Score a benchmark under pass@1 (greedy) or maj@k sampling.

    pass@1 forces k=1 at temperature 0; maj@k defaults to k=32 at
    temperature 0.7. The evaluation prompt template defaults to the
    training template so correction behavior stays in distribution.
    """
    if mode == "pass1":
        if k not in (None, 1):
            raise ValueError("pass1 implies k=1")
        if temperature not in (None, 0, 0.0):
            raise ValueError("pass1 implies greedy decoding (temperature 0)")
        k, temperature = 1, 0.0
    elif mode == "majk":
        k = 32 if k is None else k
        temperature = 0.7 if temperature is None else temperature
    else:
        raise ValueError(f"unknown eval mode {mode!r}")

    def run_item(indexed: tuple[int, BenchmarkItem]):
        index, item = indexed
        context = render_prompt(item.question, prompt_template)
        request = GenerationRequest(
            context=context,
            n=k,
            temperature=temperature,
            max_new_tokens=max_new_tokens,
            seed=derive_seed(seed, benchmark.name, index),
        )
        try:
            completions = generate(backend, request)
        except Exception as exc:
            return index, None, [], [], f"{type(exc).__name__}: {exc}", context
        extracted = [
            None if c.finish_reason == "length" else extract_answer(c.text)
            for c in completions
        ]
        predicted = extracted[0] if mode == "pass1" else majority_vote(extracted)
        texts = [c.text for c in completions]
        return index, predicted, texts, extracted, None, context

    with ThreadPoolExecutor(max_workers=workers) as pool:
        outcomes = list(pool.map(run_item, enumerate(benchmark.items)))

    items: list[ItemResult] = []
    transcripts: list[dict] = []
    for index, predicted, texts, extracted, error, context in sorted(outcomes):
        gold = benchmark.items[index].answer
        correct = error is None and predicted is not None and answers_match(predicted, gold)
        items.append(
            ItemResult(
                index=index, gold=gold, predicted=predicted, correct=correct, error=error
            )
        )
        transcripts.append(
            {
                "benchmark": benchmark.name,
                "index": index,
                "context": context,
                "completions": texts,
                "extracted": extracted,
                "gold": gold,
                "predicted": predicted,
                "correct": correct,
                "error": error,
            }
        )
    if transcript_path is not None:
        write_jsonl(transcript_path, transcripts)
    return EvalResult(
        benchmark=benchmark.name,
        mode=mode,
        k=k,
        temperature=temperature,
        item_count=len(items),
        correct_count=sum(1 for i in items if i.correct),
        items=tuple(items),
    )


def report_json(results: list[EvalResult]) -> str:
    """Machine-readable report grouping mode results per benchmark."""
    benchmarks: dict[str, dict] = {}
    for r in results:
        entry = benchmarks.setdefault(r.benchmark, {})
        entry[r.mode] = {
            "accuracy": r.accuracy,
            "k": r.k,
            "temperature": r.temperature,
            "item_count": r.item_count,
            "correct_count": r.correct_count,
        }
    return json.dumps({"benchmarks": benchmarks}, indent=2, sort_keys=True)


def report_markdown(results: list[EvalResult]) -> str:
    """Accuracy table with one row per benchmark (P@1 and M@k columns)."""
    majk_k = next((r.k for r in results if r.mode == "majk"), 32)
    lines = [
        f"| Benchmark | P@1 | M@{majk_k} |",
        "| --- | --- | --- |",
    ]
    by_benchmark: dict[str, dict[str, EvalResult]] = {}
    for r in results:
        by_benchmark.setdefault(r.benchmark, {})[r.mode] = r

    def cell(result: EvalResult | None) -> str:
        return f"{100 * result.accuracy:.2f}" if result else "-"

    for name in sorted(by_benchmark):
        modes = by_benchmark[name]
        lines.append(
            f"| {name} | {cell(modes.get('pass1'))} | {cell(modes.get('majk'))} |"
        )
    return "\n".join(lines) + "\n"
