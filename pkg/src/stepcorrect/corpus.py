"""Data model and step-grammar parsing for step-by-step QA corpora.

The surface grammar: a step begins at a line matching "Step <n>:" and runs
until the next such header or the final-answer marker; the marker is the
LAST occurrence of "The answer is:" so that markers quoted inside step
bodies do not terminate the response early.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .answers import ANSWER_MARKER, strip_answer_text
from .errors import (
    EmptySteps,
    InvalidFoldCount,
    MalformedStepHeader,
    MissingAnswerMarker,
)

STEP_HEADER_RE = re.compile(r"^Step (\d+):[ ]?", re.MULTILINE)


@dataclass(frozen=True)
class Step:
    """One reasoning step: a 1-based ordinal and its body text."""

    index: int
    body: str

    def __post_init__(self) -> None:
        if self.index < 1:
            raise ValueError(f"step index must be >= 1, got {self.index}")
        if not self.body or self.body != self.body.strip():
            raise ValueError("step body must be non-empty and trimmed")
        for line in self.body.split("\n"):
            if STEP_HEADER_RE.match(line):
                raise ValueError(f"step body embeds a step header: {line!r}")


@dataclass(frozen=True)
class StepwiseSample:
    """A question with an ordered step-by-step solution and final answer."""

    id: str
    question: str
    steps: tuple[Step, ...]
    final_answer: str

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("sample id must be non-empty")
        if not self.steps:
            raise ValueError("sample must have at least one step")
        indices = [s.index for s in self.steps]
        if indices != list(range(1, len(indices) + 1)):
            raise ValueError(f"step indices must be contiguous from 1, got {indices}")
        if not self.final_answer:
            raise ValueError("final answer must be non-empty")
        if self.final_answer != strip_answer_text(self.final_answer):
            raise ValueError("final answer must be in stripped canonical form")
        if ANSWER_MARKER in self.final_answer:
            raise ValueError("final answer must not contain the answer marker")

    @property
    def n_steps(self) -> int:
        return len(self.steps)

    def step_body(self, index: int) -> str:
        """Body of the 1-based step `index`."""
        return self.steps[index - 1].body

    def render(self) -> str:
        """Canonical response text for this sample."""
        return render_response(list(self.steps), self.final_answer)


@dataclass(frozen=True)
class FoldAssignment:
    """Assignment of sample ids to folds 0..k-1, balanced within one."""

    k: int
    assignment: dict[str, int] = field(hash=False)

    def __post_init__(self) -> None:
        if self.k < 2:
            raise InvalidFoldCount(f"fold count must be >= 2, got {self.k}")
        sizes = [0] * self.k
        for sid, fold in self.assignment.items():
            if not 0 <= fold < self.k:
                raise ValueError(f"fold {fold} for {sid!r} outside [0, {self.k})")
            sizes[fold] += 1
        if self.assignment and max(sizes) - min(sizes) > 1:
            raise ValueError(f"fold sizes not balanced within 1: {sizes}")

    def fold_of(self, sample_id: str) -> int:
        return self.assignment[sample_id]


def parse_response(response: str) -> tuple[list[Step], str]:
    """Split a response into steps and its final answer.

    Raises MissingAnswerMarker when no marker is present and
    MalformedStepHeader when headers are absent, duplicated, or
    non-contiguous, or when text precedes the first header.
    """
    marker_at = response.rfind(ANSWER_MARKER)
    if marker_at < 0:
        raise MissingAnswerMarker(f"no {ANSWER_MARKER!r} in response")
    answer = strip_answer_text(response[marker_at + len(ANSWER_MARKER):])
    steps_region = response[:marker_at]

    headers = list(STEP_HEADER_RE.finditer(steps_region))
    if not headers:
        raise MalformedStepHeader("no step headers before the answer marker")
    if steps_region[: headers[0].start()].strip():
        raise MalformedStepHeader("text precedes the first step header")

    steps: list[Step] = []
    for pos, m in enumerate(headers):
        end = headers[pos + 1].start() if pos + 1 < len(headers) else len(steps_region)
        body = steps_region[m.end():end].strip()
        index = int(m.group(1))
        if index != pos + 1:
            raise MalformedStepHeader(f"expected step {pos + 1}, found step {index}")
        if not body:
            raise MalformedStepHeader(f"step {index} has an empty body")
        try:
            steps.append(Step(index=index, body=body))
        except ValueError as exc:
            raise MalformedStepHeader(str(exc)) from exc
    return steps, answer


def render_response(steps: list[Step], final_answer: str) -> str:
    """Render steps and answer into canonical response text.

    Inverse of parse_response on its own output: parse(render(s, a)) == (s, a)
    and render(parse(r)) == r for grammar-conforming r.
    """
    if not steps:
        raise EmptySteps("cannot render a response with no steps")
    indices = [s.index for s in steps]
    if indices != list(range(1, len(indices) + 1)):
        raise ValueError(f"step indices must be contiguous from 1, got {indices}")
    lines = [f"Step {s.index}: {s.body}" for s in steps]
    lines.append(f"{ANSWER_MARKER} {final_answer}")
    return "\n".join(lines)


def _fold_sort_key(seed: int, sample_id: str) -> tuple[str, str]:
    digest = hashlib.sha256(f"{seed}:{sample_id}".encode("utf-8")).hexdigest()
    return digest, sample_id


def kfold_split(dataset: list[StepwiseSample], k: int, seed: int) -> FoldAssignment:
    """Assign samples to k folds by seed-salted stable hash of their ids.

    Deterministic given (id set, k, seed) and independent of input order.
    Fold sizes are balanced within one; datasets smaller than k leave some
    folds empty.
    """
    if k < 2:
        raise InvalidFoldCount(f"fold count must be >= 2, got {k}")
    if not dataset:
        raise ValueError("dataset must be non-empty")
    ids = [s.id for s in dataset]
    if len(set(ids)) != len(ids):
        raise ValueError("sample ids must be unique")
    ranked = sorted(ids, key=lambda sid: _fold_sort_key(seed, sid))
    assignment = {sid: pos % k for pos, sid in enumerate(ranked)}
    return FoldAssignment(k=k, assignment=assignment)


def sample_from_record(record: dict) -> StepwiseSample:
    """Build a StepwiseSample from a corpus record {id, question, response}."""
    steps, answer = parse_response(record["response"])
    return StepwiseSample(
        id=str(record["id"]),
        question=str(record["question"]),
        steps=tuple(steps),
        final_answer=answer,
    )


def load_corpus(
    path: str | Path, reject_path: str | Path | None = None
) -> tuple[list[StepwiseSample], list[dict]]:
    """Load a JSONL corpus; quarantine records that fail to parse.

    Returns (samples, rejects). Each reject is {"id", "reason"}; when
    reject_path is given the rejects are also written there as JSONL.
    """
    samples: list[StepwiseSample] = []
    rejects: list[dict] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
                samples.append(sample_from_record(record))
            except Exception as exc:
                rid = ""
                try:
                    rid = str(json.loads(line).get("id", ""))
                except Exception:
                    pass
                rejects.append({"id": rid or f"line:{lineno}", "reason": str(exc)})
    if reject_path is not None:
        write_jsonl(reject_path, rejects)
    return samples, rejects


def write_corpus(path: str | Path, samples: Iterable[StepwiseSample]) -> None:
    write_jsonl(
        path,
        ({"id": s.id, "question": s.question, "response": s.render()} for s in samples),
    )


def write_folds(path: str | Path, folds: FoldAssignment) -> None:
    write_jsonl(
        path,
        ({"id": sid, "fold": fold} for sid, fold in sorted(folds.assignment.items())),
    )


def load_folds(path: str | Path, k: int) -> FoldAssignment:
    assignment = {str(r["id"]): int(r["fold"]) for r in read_jsonl(path)}
    return FoldAssignment(k=k, assignment=assignment)


def read_jsonl(path: str | Path) -> list[dict]:
    rows: list[dict] = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows


def write_jsonl(path: str | Path, rows: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False, sort_keys=True))
            fh.write("\n")
