"""Shared generators for grammar-conforming responses and answer corpora."""

from __future__ import annotations

import random
import re
import string

from stepcorrect.answers import ANSWER_MARKER
from stepcorrect.corpus import Step, StepwiseSample

_HEADER_RE = re.compile(r"^Step (\d+):")
_BODY_CHARS = string.ascii_letters + string.digits + " +-*/=().,$%"
_UNICODE_EXTRAS = "πλ√°é×÷"


def random_body(rng: random.Random, allow_marker: bool = False) -> str:
    """A trimmed step body whose lines never look like step headers."""
    n_lines = rng.choices([1, 1, 1, 2], weights=[8, 4, 2, 1])[0]
    lines = []
    for _ in range(n_lines):
        while True:
            length = rng.randint(1, 40)
            chars = _BODY_CHARS + (_UNICODE_EXTRAS if rng.random() < 0.2 else "")
            line = "".join(rng.choice(chars) for _ in range(length)).strip()
            if line and not _HEADER_RE.match(line):
                break
        lines.append(line)
    body = "\n".join(lines)
    if allow_marker and rng.random() < 0.15:
        body = f"{body} {ANSWER_MARKER} {rng.randint(0, 99)} but wait"
    return body.strip()


def random_answer(rng: random.Random) -> str:
    kind = rng.randrange(4)
    if kind == 0:
        return str(rng.randint(-10_000, 10_000))
    if kind == 1:
        return f"{rng.randint(0, 99)}.{rng.randint(0, 999)}"
    if kind == 2:
        return f"{rng.randint(1, 99)}/{rng.randint(1, 99)}"
    word = "".join(rng.choice(string.ascii_lowercase) for _ in range(rng.randint(1, 8)))
    return word


def random_conforming_response(rng: random.Random) -> str:
    n_steps = rng.randint(1, 8)
    lines = [f"Step {i}: {random_body(rng, allow_marker=True)}" for i in range(1, n_steps + 1)]
    lines.append(f"{ANSWER_MARKER} {random_answer(rng)}")
    return "\n".join(lines)


def random_sample(rng: random.Random, sample_id: str) -> StepwiseSample:
    n_steps = rng.randint(2, 6)
    steps = tuple(Step(index=i, body=random_body(rng)) for i in range(1, n_steps + 1))
    question = f"What is {rng.randint(1, 50)} plus {rng.randint(1, 50)}?"
    return StepwiseSample(
        id=sample_id, question=question, steps=steps, final_answer=random_answer(rng)
    )
