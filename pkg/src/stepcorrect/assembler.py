"""Compose self-correction training samples and serialize exact loss masks.

A training sample is an ordered list of role-tagged segments; the prompt
and the erroneous step never contribute to the loss (learn=False), all
correction content does. Serialization emits byte-offset mask spans over
the concatenated UTF-8 text so any trainer can project them onto its own
tokenization.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from .annotator import Annotation
from .answers import ANSWER_MARKER
from .corpus import StepwiseSample, read_jsonl, write_jsonl
from .errors import (
    IndexOutOfRange,
    MissingAnnotation,
    MissingRollout,
    SpanBoundaryError,
)
from .prompting import DEFAULT_PROMPT_TEMPLATE, render_prompt
from .sampler import WrongStepRecord

DEFAULT_TRIGGER = "Sorry, I made a mistake."

ROLES = (
    "prompt",
    "gold_step",
    "wrong_step",
    "trigger",
    "reflection",
    "improvement",
    "corrected_step",
    "answer_tail",
)
MASKED_ROLES = frozenset({"prompt", "wrong_step"})
STEP_VARIANTS = ("full", "no_improvement", "no_ri")
VARIANTS = STEP_VARIANTS + ("instance_level", "passthrough")

_STEP_LINE_RE = re.compile(r"\AStep (\d+): (.*)\n\Z", re.DOTALL)
_HEADER_AT_LINE_RE = re.compile(r"^Step (\d+):", re.MULTILINE)


@dataclass(frozen=True)
class Segment:
    role: str
    text: str

    def __post_init__(self) -> None:
        if self.role not in ROLES:
            raise ValueError(f"unknown segment role {self.role!r}")
        if not self.text:
            raise ValueError("segment text must be non-empty")

    @property
    def learn(self) -> bool:
        return self.role not in MASKED_ROLES


@dataclass(frozen=True)
class SelfCorrectionSample:
    id: str
    variant: str
    segments: tuple[Segment, ...]

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        roles = [s.role for s in self.segments]
        wrong_count = roles.count("wrong_step")
        if self.variant in STEP_VARIANTS and wrong_count != 1:
            raise ValueError("step-level variants need exactly one wrong_step segment")
        if self.variant == "passthrough" and (
            wrong_count or "trigger" in roles
        ):
            raise ValueError("passthrough samples must not contain corrections")
        if self.variant != "instance_level":
            headers = [int(m.group(1)) for m in _HEADER_AT_LINE_RE.finditer(self.text)]
            if headers != list(range(1, len(headers) + 1)):
                raise ValueError(f"step headers not contiguous: {headers}")

    @property
    def text(self) -> str:
        return "".join(s.text for s in self.segments)


def assemble_step_level(
    sample: StepwiseSample,
    record: WrongStepRecord,
    annotation: Annotation | None,
    variant: str,
    trigger: str = DEFAULT_TRIGGER,
    prompt_template: str = DEFAULT_PROMPT_TEMPLATE,
    uid: str | None = None,
) -> SelfCorrectionSample:
    """Insert a wrong step plus its correction step into a gold solution.

    With the error at original position w = record.insertion_index, the
    output renders gold steps 1..w-1, the wrong step at header w, the
    correction step at header w+1 (trigger, then reflection/improvement
    depending on the variant, then the gold step w restated), and the
    remaining gold steps renumbered upward by one.
    """
    if variant not in STEP_VARIANTS:
        raise ValueError(f"not a step-level variant: {variant!r}")
    w = record.insertion_index
    if not 1 <= w <= sample.n_steps:
        raise IndexOutOfRange(
            f"insertion index {w} outside 1..{sample.n_steps} for {sample.id}"
        )
    if record.sample_id != sample.id:
        raise ValueError("record does not reference the given sample")
    if record.gold_text != sample.step_body(w):
        raise ValueError(f"record gold_text diverges from sample step {w}")
    if variant != "no_ri" and annotation is None:
        raise MissingAnnotation(f"variant {variant} requires an annotation")

    segments = [Segment("prompt", render_prompt(sample.question, prompt_template))]
    for step in sample.steps[: w - 1]:
        segments.append(Segment("gold_step", f"Step {step.index}: {step.body}\n"))
    segments.append(Segment("wrong_step", f"Step {w}: {record.wrong_text}\n"))
    segments.append(Segment("trigger", f"Step {w + 1}: {trigger}"))
    if annotation is not None and variant in ("full", "no_improvement"):
        segments.append(Segment("reflection", f" {annotation.reflection}"))
    if annotation is not None and variant == "full":
        segments.append(Segment("improvement", f" {annotation.improvement}"))
    segments.append(Segment("corrected_step", f" {sample.step_body(w)}\n"))
    for step in sample.steps[w:]:
        segments.append(Segment("gold_step", f"Step {step.index + 1}: {step.body}\n"))
    segments.append(Segment("answer_tail", f"{ANSWER_MARKER} {sample.final_answer}"))
    return SelfCorrectionSample(
        id=uid or f"{sample.id}.c{w}", variant=variant, segments=tuple(segments)
    )


def assemble_instance_level(
    sample: StepwiseSample,
    record: WrongStepRecord,
    trigger: str = DEFAULT_TRIGGER,
    prompt_template: str = DEFAULT_PROMPT_TEMPLATE,
    uid: str | None = None,
) -> SelfCorrectionSample:
    """Whole-solution correction: the full wrong path, then the gold one.

    The retained wrong rollout is kept verbatim and loss-free; the trigger
    and the gold solution (byte-identical to the source rendering) carry
    the loss.
    """
    if record.sample_id != sample.id:
        raise ValueError("record does not reference the given sample")
    if not record.wrong_rollout.strip():
        raise MissingRollout(f"record for {sample.id} has no retained wrong rollout")
    segments = (
        Segment("prompt", render_prompt(sample.question, prompt_template)),
        Segment("wrong_step", record.wrong_rollout),
        Segment("trigger", f"\n{trigger}\n"),
        Segment("corrected_step", sample.render()),
    )
    return SelfCorrectionSample(
        id=uid or f"{sample.id}.inst", variant="instance_level", segments=segments
    )


def assemble_passthrough(
    sample: StepwiseSample,
    prompt_template: str = DEFAULT_PROMPT_TEMPLATE,
    uid: str | None = None,
) -> SelfCorrectionSample:
    """Wrap an original sample unchanged in the training-file format."""
    segments = [Segment("prompt", render_prompt(sample.question, prompt_template))]
    for step in sample.steps:
        segments.append(Segment("gold_step", f"Step {step.index}: {step.body}\n"))
    segments.append(Segment("answer_tail", f"{ANSWER_MARKER} {sample.final_answer}"))
    return SelfCorrectionSample(
        id=uid or sample.id, variant="passthrough", segments=tuple(segments)
    )


def mask_spans(sample: SelfCorrectionSample) -> list[tuple[int, int]]:
    """Byte spans of the learn=False segments, merged over adjacent runs."""
    spans: list[tuple[int, int]] = []
    offset = 0
    for segment in sample.segments:
        end = offset + len(segment.text.encode("utf-8"))
        if not segment.learn:
            if spans and spans[-1][1] == offset:
                spans[-1] = (spans[-1][0], end)
            else:
                spans.append((offset, end))
        offset = end
    return spans


def role_spans(sample: SelfCorrectionSample) -> list[tuple[int, int, str]]:
    spans = []
    offset = 0
    for segment in sample.segments:
        end = offset + len(segment.text.encode("utf-8"))
        spans.append((offset, end, segment.role))
        offset = end
    return spans


def serialize_sample(sample: SelfCorrectionSample) -> dict:
    return {
        "id": sample.id,
        "variant": sample.variant,
        "text": sample.text,
        "mask_spans": [list(s) for s in mask_spans(sample)],
        "roles": [list(s) for s in role_spans(sample)],
    }


def deserialize_sample(row: dict) -> SelfCorrectionSample:
    """Rebuild a SelfCorrectionSample from its serialized row.

    Raises SpanBoundaryError when offsets do not tile the text on UTF-8
    character boundaries or the mask spans disagree with the roles.
    """
    data = row["text"].encode("utf-8")
    segments = []
    cursor = 0
    for start, end, role in row["roles"]:
        if start != cursor or not start < end <= len(data):
            raise SpanBoundaryError(f"role span [{start}, {end}) does not tile the text")
        try:
            text = data[start:end].decode("utf-8")
        except UnicodeDecodeError as exc:
            raise SpanBoundaryError(
                f"span [{start}, {end}) splits a UTF-8 character"
            ) from exc
        segments.append(Segment(role=role, text=text))
        cursor = end
    if cursor != len(data):
        raise SpanBoundaryError("role spans do not cover the full text")
    sample = SelfCorrectionSample(
        id=str(row["id"]), variant=str(row["variant"]), segments=tuple(segments)
    )
    if [list(s) for s in mask_spans(sample)] != row["mask_spans"]:
        raise SpanBoundaryError("mask_spans disagree with learn=False segments")
    return sample


def write_training_file(path: str | Path, samples: Iterable[SelfCorrectionSample]) -> None:
    write_jsonl(path, (serialize_sample(s) for s in samples))


def read_training_file(path: str | Path) -> list[SelfCorrectionSample]:
    return [deserialize_sample(row) for row in read_jsonl(path)]


def reconstruct_source(sample: SelfCorrectionSample) -> str:
    """Undo a step-level correction: drop the wrong step and the correction
    wrapper, restore the corrected step's original header, and renumber the
    trailing gold steps back down.

    Returns the response rendering (steps plus answer line) that must equal
    the source sample's rendering byte-for-byte.
    """
    if sample.variant not in STEP_VARIANTS:
        raise ValueError("only step-level variants can be reconstructed")
    parts: list[str] = []
    wrong_index: int | None = None
    for segment in sample.segments:
        if segment.role in ("prompt", "trigger", "reflection", "improvement"):
            continue
        if segment.role == "wrong_step":
            m = _STEP_LINE_RE.match(segment.text)
            if not m:
                raise ValueError(f"unparseable wrong step: {segment.text!r}")
            wrong_index = int(m.group(1))
            continue
        if segment.role == "corrected_step":
            if wrong_index is None:
                raise ValueError("corrected step before wrong step")
            parts.append(f"Step {wrong_index}: {segment.text[1:]}")
            continue
        if segment.role == "gold_step" and wrong_index is not None:
            m = _STEP_LINE_RE.match(segment.text)
            if not m:
                raise ValueError(f"unparseable gold step: {segment.text!r}")
            parts.append(f"Step {int(m.group(1)) - 1}: {m.group(2)}\n")
            continue
        parts.append(segment.text)
    return "".join(parts)
