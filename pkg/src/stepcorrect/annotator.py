"""Reflection and improvement generation for wrong/gold step pairs.

The annotation model sees the question, the steps before the error, the
wrong step, and the correct step, and must answer with two rigidly headed
sections ("Reflection:" / "Improvement:") so responses stay machine
parseable.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources

from .corpus import StepwiseSample
from .errors import AnnotationParseError, EmptySlot, MissingPlaceholder
from .inference import Backend, GenerationRequest, derive_seed, generate
from .sampler import WrongStepRecord

REFLECTION_HEADER = "Reflection:"
IMPROVEMENT_HEADER = "Improvement:"

TEMPLATE_PLACEHOLDERS = ("{question}", "{previous_steps}", "{wrong_step}", "{correct_step}")


@dataclass(frozen=True)
class Annotation:
    reflection: str
    improvement: str

    def __post_init__(self) -> None:
        for name, text in (("reflection", self.reflection), ("improvement", self.improvement)):
            if not text.strip():
                raise ValueError(f"{name} must be non-empty")
            if REFLECTION_HEADER in text or IMPROVEMENT_HEADER in text:
                raise ValueError(f"{name} must not contain the section headers")


def default_template() -> str:
    return (
        resources.files("stepcorrect.templates")
        .joinpath("annotation_prompt.txt")
        .read_text(encoding="utf-8")
    )


def build_annotation_prompt(
    question: str,
    previous_steps: str,
    wrong_step: str,
    correct_step: str,
    template: str,
) -> str:
    """Substitute the four content slots into the template verbatim."""
    slots = {
        "{question}": question,
        "{previous_steps}": previous_steps,
        "{wrong_step}": wrong_step,
        "{correct_step}": correct_step,
    }
    for placeholder in TEMPLATE_PLACEHOLDERS:
        if placeholder not in template:
            raise MissingPlaceholder(f"template lacks {placeholder}")
    for placeholder, content in slots.items():
        if not content.strip():
            raise EmptySlot(f"empty content for {placeholder}")
    filled = template
    for placeholder, content in slots.items():
        filled = filled.replace(placeholder, content)
    return filled


def parse_annotation(response: str) -> Annotation:
    """Split a response into its reflection and improvement sections."""
    r_at = response.find(REFLECTION_HEADER)
    if r_at < 0:
        raise AnnotationParseError(f"missing {REFLECTION_HEADER!r} header")
    i_at = response.find(IMPROVEMENT_HEADER, r_at + len(REFLECTION_HEADER))
    if i_at < 0:
        raise AnnotationParseError(f"missing {IMPROVEMENT_HEADER!r} header")
    reflection = response[r_at + len(REFLECTION_HEADER):i_at].strip()
    improvement = response[i_at + len(IMPROVEMENT_HEADER):].strip()
    try:
        return Annotation(reflection=reflection, improvement=improvement)
    except ValueError as exc:
        raise AnnotationParseError(str(exc)) from exc


def render_annotation(annotation: Annotation) -> str:
    """Inverse of parse_annotation for well-formed annotations."""
    return (
        f"{REFLECTION_HEADER} {annotation.reflection}\n"
        f"{IMPROVEMENT_HEADER} {annotation.improvement}"
    )


def annotate(
    record: WrongStepRecord,
    sample: StepwiseSample,
    backend: Backend,
    template: str,
    retries: int = 2,
    retry_temperature: float = 0.7,
    max_new_tokens: int = 512,
    seed: int = 0,
) -> Annotation:
    """Generate the reflection/improvement pair for one wrong-step record.

    The first attempt decodes greedily; parse failures are retried with
    sampling before giving up with AnnotationParseError.
    """
    if record.sample_id != sample.id:
        raise ValueError("record does not reference the given sample")
    i = record.insertion_index - 1
    previous = "\n".join(
        f"Step {s.index}: {s.body}" for s in sample.steps[:i]
    ) or "(the wrong step is the first step)"
    prompt = build_annotation_prompt(
        question=sample.question,
        previous_steps=previous,
        wrong_step=record.wrong_text,
        correct_step=record.gold_text,
        template=template,
    )
    last_error: Exception | None = None
    for attempt in range(retries + 1):
        if attempt == 0:
            request = GenerationRequest(
                context=prompt, n=1, temperature=0.0, max_new_tokens=max_new_tokens
            )
        else:
            request = GenerationRequest(
                context=prompt,
                n=1,
                temperature=retry_temperature,
                max_new_tokens=max_new_tokens,
                seed=derive_seed(seed, record.sample_id, record.insertion_index, attempt),
            )
        completion = generate(backend, request)[0]
        try:
            return parse_annotation(completion.text)
        except AnnotationParseError as exc:
            last_error = exc
    raise AnnotationParseError(
        f"unparseable annotation after {retries + 1} attempts: {last_error}"
    )
