"""Final-answer extraction, normalization, and exact equivalence.

Answers are compared as exact rationals wherever they parse as numbers;
everything else falls back to normalized-string equality. There is no
epsilon matching: "0.3333" and "1/3" are different answers.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction

ANSWER_MARKER = "The answer is:"

_TRAILING_PUNCT = ".,!?;:"
_INT_RE = re.compile(r"^[+-]?\d+$")
_DECIMAL_RE = re.compile(r"^[+-]?(?:\d+\.\d*|\.\d+)$")
_FRACTION_RE = re.compile(r"^([+-]?\d+)\s*/\s*([+-]?\d+)$")


def extract_answer(output: str) -> str | None:
    """Return the text after the last answer marker, or None if absent.

    The extracted text is trimmed of surrounding whitespace and trailing
    sentence punctuation.
    """
    idx = output.rfind(ANSWER_MARKER)
    if idx < 0:
        return None
    tail = output[idx + len(ANSWER_MARKER):]
    return strip_answer_text(tail)


def strip_answer_text(raw: str) -> str:
    """Trim whitespace and trailing sentence punctuation from answer text."""
    return raw.strip().rstrip(_TRAILING_PUNCT).strip()


@dataclass(frozen=True)
class CanonicalAnswer:
    """An answer in canonical form.

    kind is one of "integer", "rational", "decimal", "symbolic-text".
    Numeric kinds carry their exact value as a Fraction; symbolic text
    carries value=None and is compared by its normalized string.
    """

    raw: str
    kind: str
    normalized: str
    value: Fraction | None = None

    def is_numeric(self) -> bool:
        return self.value is not None


def _decimal_string(value: Fraction) -> str:
    """Exact decimal form of a non-integral fraction whose denominator is 2^a 5^b."""
    d = value.denominator
    twos = fives = 0
    while d % 2 == 0:
        d //= 2
        twos += 1
    while d % 5 == 0:
        d //= 5
        fives += 1
    places = max(twos, fives)
    scaled = abs(value.numerator) * 10**places // value.denominator
    digits = str(scaled).rjust(places + 1, "0")
    whole, frac = digits[:-places], digits[-places:].rstrip("0")
    sign = "-" if value < 0 else ""
    return f"{sign}{whole}.{frac}"


def _parse_numeric(cleaned: str) -> tuple[str, Fraction] | None:
    try:
        if _INT_RE.match(cleaned):
            return "integer", Fraction(int(cleaned))
        if _DECIMAL_RE.match(cleaned):
            return "decimal", Fraction(cleaned)
        m = _FRACTION_RE.match(cleaned)
        if m:
            return "rational", Fraction(int(m.group(1)), int(m.group(2)))
    except (ValueError, ZeroDivisionError):
        return None
    return None


def normalize(raw: str) -> CanonicalAnswer:
    """Normalize raw answer text into a CanonicalAnswer.

    Cleanup strips surrounding whitespace, leading currency signs,
    thousands-separator commas, and terminal periods. The cleaned text is
    parsed as an integer, decimal, or a/b fraction; anything else becomes
    symbolic text after whitespace collapse and lowercasing.
    """
    cleaned = raw.replace(",", "").strip()
    while cleaned.startswith("$"):
        cleaned = cleaned[1:].lstrip()
    cleaned = cleaned.rstrip(".").strip()

    parsed = _parse_numeric(cleaned)
    if parsed is not None:
        kind, value = parsed
        if value.denominator == 1:
            return CanonicalAnswer(raw=raw, kind="integer", normalized=str(value), value=value)
        if kind == "decimal":
            normalized = _decimal_string(value)
        else:
            normalized = f"{value.numerator}/{value.denominator}"
        return CanonicalAnswer(raw=raw, kind=kind, normalized=normalized, value=value)

    symbolic = " ".join(cleaned.split()).lower()
    return CanonicalAnswer(raw=raw, kind="symbolic-text", normalized=symbolic)


def answers_match(a: str, b: str) -> bool:
    """True iff the two answer texts denote the same exact value.

    Numeric answers (integers, terminating decimals, fractions) compare as
    exact rationals; symbolic text compares by normalized-string equality.
    """
    ca, cb = normalize(a), normalize(b)
    if ca.is_numeric() and cb.is_numeric():
        return ca.value == cb.value
    if not ca.is_numeric() and not cb.is_numeric():
        return ca.normalized == cb.normalized
    return False
