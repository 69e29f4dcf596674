"""Prompt-template rendering shared by sampling, assembly, and evaluation.

Training and evaluation must wrap questions identically, otherwise the
learned correction behavior is out of distribution at test time; every
stage therefore routes through this one template.
"""

from __future__ import annotations

import re

DEFAULT_PROMPT_TEMPLATE = "Question:\n{question}\nAnswer:"

QUESTION_PLACEHOLDER = "{question}"


def render_prompt(question: str, template: str = DEFAULT_PROMPT_TEMPLATE) -> str:
    """Wrap a question in the instruction template; ends with a newline."""
    if QUESTION_PLACEHOLDER not in template:
        raise ValueError(f"template lacks {QUESTION_PLACEHOLDER}")
    return template.replace(QUESTION_PLACEHOLDER, question) + "\n"


def question_from_prompt(prompt_text: str, template: str = DEFAULT_PROMPT_TEMPLATE) -> str:
    """Invert render_prompt; raises ValueError if the text does not match."""
    prefix, _, suffix = template.partition(QUESTION_PLACEHOLDER)
    pattern = re.compile(
        "^" + re.escape(prefix) + "(.*)" + re.escape(suffix) + "\n$", re.DOTALL
    )
    m = pattern.match(prompt_text)
    if not m:
        raise ValueError("prompt text does not match the template")
    return m.group(1)


def normalize_query(question: str) -> str:
    """Whitespace-normalized form used for query identity."""
    return " ".join(question.split())
