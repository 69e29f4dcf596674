"""Wrong-step candidate generation and the pass@k Correct/Wrong verdict.

For a sample with gold steps 1..n, each prefix of i gold steps is handed
to the fold's held-out model to propose a next step. Every distinct
proposal is then verdicted by k full rollouts: the step is Wrong only if
none of the k continuations reaches the gold answer, otherwise Correct.
Wrong steps become WrongStepRecords for downstream assembly.
"""

from __future__ import annotations

import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .answers import ANSWER_MARKER, answers_match, extract_answer
from .corpus import FoldAssignment, StepwiseSample, read_jsonl, write_jsonl
from .errors import IncompleteRollouts
from .inference import Backend, GenerationRequest, derive_seed, generate
from .prompting import DEFAULT_PROMPT_TEMPLATE, render_prompt

_LEADING_HEADER_RE = re.compile(r"^Step \d+:\s*")

CANDIDATE_STOPS = ("\nStep ", ANSWER_MARKER)


def normalize_step_text(text: str) -> str:
    """Dedup key: whitespace-collapsed, lowercased step text."""
    return " ".join(text.split()).lower()


@dataclass(frozen=True)
class CandidatePrefix:
    """Question prompt plus the first `prefix_len` gold steps."""

    sample_id: str
    prefix_len: int
    context: str

    @property
    def next_index(self) -> int:
        return self.prefix_len + 1


@dataclass(frozen=True)
class CandidateStep:
    text: str
    dedup_key: str


@dataclass(frozen=True)
class StepVerdict:
    label: str
    match_count: int
    k: int
    rollout_answers: tuple[str | None, ...] = ()
    first_rollout: str = ""

    def __post_init__(self) -> None:
        if self.label not in ("Correct", "Wrong"):
            raise ValueError(f"unknown verdict label {self.label!r}")
        if (self.label == "Wrong") != (self.match_count == 0):
            raise ValueError("label must be Wrong exactly when match_count == 0")


@dataclass(frozen=True)
class WrongStepRecord:
    sample_id: str
    insertion_index: int
    wrong_text: str
    gold_text: str
    match_count: int
    k: int
    wrong_rollout: str

    def __post_init__(self) -> None:
        if self.match_count != 0:
            raise ValueError("wrong-step records require a Wrong verdict")
        if self.insertion_index < 1:
            raise ValueError("insertion_index must be >= 1")


@dataclass(frozen=True)
class HarvestConfig:
    n_cand: int = 4
    k_rollouts: int = 16
    candidate_temperature: float = 1.0
    rollout_temperature: float = 1.0
    candidate_max_new_tokens: int = 128
    rollout_max_new_tokens: int = 512
    per_sample_cap: int = 1
    max_len_ratio: float = 4.0
    prompt_template: str = DEFAULT_PROMPT_TEMPLATE
    seed: int = 0
    workers: int = 4

    def __post_init__(self) -> None:
        if self.k_rollouts < 1:
            raise ValueError("k_rollouts must be >= 1")
        if self.n_cand < 1:
            raise ValueError("n_cand must be >= 1")


def build_prefix(
    sample: StepwiseSample, prefix_len: int, prompt_template: str = DEFAULT_PROMPT_TEMPLATE
) -> CandidatePrefix:
    """Context of the question prompt plus gold steps 1..prefix_len.

    The context ends exactly at the step boundary so the model's natural
    continuation is the next step header.
    """
    if not 0 <= prefix_len < sample.n_steps:
        raise ValueError(f"prefix_len {prefix_len} outside [0, {sample.n_steps})")
    parts = [render_prompt(sample.question, prompt_template)]
    for step in sample.steps[:prefix_len]:
        parts.append(f"Step {step.index}: {step.body}\n")
    return CandidatePrefix(
        sample_id=sample.id, prefix_len=prefix_len, context="".join(parts)
    )


def _clean_candidate(raw: str) -> str:
    text = _LEADING_HEADER_RE.sub("", raw.strip(), count=1)
    for boundary in CANDIDATE_STOPS:
        idx = text.find(boundary)
        if idx >= 0:
            text = text[:idx]
    return text.strip()


def sample_candidates(
    prefix: CandidatePrefix,
    gold_body: str,
    n_cand: int,
    temperature: float,
    backend: Backend,
    max_new_tokens: int = 128,
    max_len_ratio: float = 4.0,
    seed: int | None = None,
) -> list[CandidateStep]:
    """Propose next-step candidates for a prefix.

    Generations are stopped at the next step-header boundary and trimmed
    of any leading header the model emitted. Degenerate candidates (empty,
    or longer than max_len_ratio times the gold step) are discarded, the
    gold step itself is filtered out, and duplicates collapse on their
    normalized text. The result is sorted by dedup_key so downstream
    processing is order-canonical.
    """
    request = GenerationRequest(
        context=prefix.context,
        n=n_cand,
        temperature=temperature,
        max_new_tokens=max_new_tokens,
        stop=CANDIDATE_STOPS,
        seed=seed,
    )
    gold_key = normalize_step_text(gold_body)
    seen: dict[str, CandidateStep] = {}
    for completion in generate(backend, request):
        text = _clean_candidate(completion.text)
        if not text or len(text) > max_len_ratio * len(gold_body):
            continue
        key = normalize_step_text(text)
        if key == gold_key or key in seen:
            continue
        seen[key] = CandidateStep(text=text, dedup_key=key)
    return [seen[key] for key in sorted(seen)]


def verdict_step(
    prefix: CandidatePrefix,
    candidate: CandidateStep,
    gt: str,
    *,
    backend: Backend,
    k: int = 16,
    temperature: float = 1.0,
    max_new_tokens: int = 512,
    seed: int | None = None,
) -> StepVerdict:
    """Classify a candidate step by k full rollouts from prefix + candidate.

    A rollout counts as matching when its extracted final answer equals gt;
    rollouts without an extractable answer, and rollouts cut off by the
    token budget, count as non-matching. The step is Wrong iff no rollout
    matches.
    """
    context = prefix.context + f"Step {prefix.next_index}: {candidate.text}\n"
    request = GenerationRequest(
        context=context,
        n=k,
        temperature=temperature,
        max_new_tokens=max_new_tokens,
        stop=(),
        seed=seed,
    )
    completions = generate(backend, request)
    if len(completions) < k:
        raise IncompleteRollouts(f"obtained {len(completions)} of {k} rollouts")
    answers: list[str | None] = []
    for completion in completions:
        if completion.finish_reason == "length":
            answers.append(None)
        else:
            answers.append(extract_answer(completion.text))
    match_count = sum(1 for a in answers if a is not None and answers_match(a, gt))
    return StepVerdict(
        label="Wrong" if match_count == 0 else "Correct",
        match_count=match_count,
        k=k,
        rollout_answers=tuple(answers),
        first_rollout=completions[0].text,
    )


def _rendered_prefix_steps(sample: StepwiseSample, prefix_len: int) -> str:
    return "".join(
        f"Step {step.index}: {step.body}\n" for step in sample.steps[:prefix_len]
    )


def harvest_sample(
    sample: StepwiseSample, backend: Backend, config: HarvestConfig
) -> list[WrongStepRecord]:
    """Collect up to per_sample_cap wrong-step records for one sample.

    Prefixes are scanned in order; the earliest prefix whose candidates
    verdict Wrong wins, with ties inside a prefix broken by dedup_key.
    """
    records: list[WrongStepRecord] = []
    for i in range(1, sample.n_steps):
        prefix = build_prefix(sample, i, config.prompt_template)
        gold_body = sample.step_body(i + 1)
        candidates = sample_candidates(
            prefix,
            gold_body,
            n_cand=config.n_cand,
            temperature=config.candidate_temperature,
            backend=backend,
            max_new_tokens=config.candidate_max_new_tokens,
            max_len_ratio=config.max_len_ratio,
            seed=derive_seed(config.seed, sample.id, i, "candidates"),
        )
        for candidate in candidates:
            verdict = verdict_step(
                prefix,
                candidate,
                sample.final_answer,
                backend=backend,
                k=config.k_rollouts,
                temperature=config.rollout_temperature,
                max_new_tokens=config.rollout_max_new_tokens,
                seed=derive_seed(config.seed, sample.id, i, candidate.dedup_key),
            )
            if verdict.label != "Wrong":
                continue
            wrong_rollout = (
                _rendered_prefix_steps(sample, i)
                + f"Step {prefix.next_index}: {candidate.text}\n"
                + verdict.first_rollout
            )
            records.append(
                WrongStepRecord(
                    sample_id=sample.id,
                    insertion_index=prefix.next_index,
                    wrong_text=candidate.text,
                    gold_text=gold_body,
                    match_count=verdict.match_count,
                    k=verdict.k,
                    wrong_rollout=wrong_rollout,
                )
            )
            if len(records) >= config.per_sample_cap:
                return records
    return records


def harvest(
    dataset: list[StepwiseSample],
    folds: FoldAssignment,
    backends: dict[int, Backend],
    config: HarvestConfig,
) -> tuple[list[WrongStepRecord], list[dict]]:
    """Run wrong-step harvesting over a dataset with per-fold backends.

    Each sample is processed by the backend holding out its fold. Failures
    are quarantined as {"sample_id", "reason"} and the run continues.
    Records come back sorted by (sample_id, insertion_index, wrong text).
    """
    missing = {folds.fold_of(s.id) for s in dataset} - set(backends)
    if missing:
        raise ValueError(f"no backend configured for folds {sorted(missing)}")

    quarantined: list[dict] = []
    records: list[WrongStepRecord] = []

    def run_one(sample: StepwiseSample) -> tuple[str, list[WrongStepRecord], str | None]:
        try:
            backend = backends[folds.fold_of(sample.id)]
            return sample.id, harvest_sample(sample, backend, config), None
        except Exception as exc:
            return sample.id, [], f"{type(exc).__name__}: {exc}"

    with ThreadPoolExecutor(max_workers=config.workers) as pool:
        results = list(pool.map(run_one, dataset))
    for sample_id, sample_records, reason in results:
        if reason is not None:
            quarantined.append({"sample_id": sample_id, "reason": reason})
        else:
            records.extend(sample_records)
    records.sort(key=lambda r: (r.sample_id, r.insertion_index, normalize_step_text(r.wrong_text)))
    return records, quarantined


def record_to_row(record: WrongStepRecord) -> dict:
    return {
        "sample_id": record.sample_id,
        "insertion_index": record.insertion_index,
        "wrong_text": record.wrong_text,
        "gold_text": record.gold_text,
        "match_count": record.match_count,
        "k": record.k,
        "wrong_rollout": record.wrong_rollout,
    }


def record_from_row(row: dict) -> WrongStepRecord:
    return WrongStepRecord(
        sample_id=str(row["sample_id"]),
        insertion_index=int(row["insertion_index"]),
        wrong_text=str(row["wrong_text"]),
        gold_text=str(row["gold_text"]),
        match_count=int(row["match_count"]),
        k=int(row["k"]),
        wrong_rollout=str(row["wrong_rollout"]),
    )


def write_records(path: str | Path, records: Iterable[WrongStepRecord]) -> None:
    write_jsonl(path, (record_to_row(r) for r in records))


def read_records(path: str | Path) -> list[WrongStepRecord]:
    return [record_from_row(row) for row in read_jsonl(path)]
