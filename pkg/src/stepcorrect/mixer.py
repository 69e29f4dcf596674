"""Merge training files and build the distribution-aligned oversample.

The oversample ablation reproduces a mixed dataset's query multiset using
only original-corpus responses, isolating query-distribution shift from
the self-correction content itself.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .assembler import SelfCorrectionSample, assemble_passthrough
from .corpus import StepwiseSample, read_jsonl, write_jsonl
from .errors import DuplicateId, UnknownQuery
from .prompting import DEFAULT_PROMPT_TEMPLATE, normalize_query, question_from_prompt


@dataclass(frozen=True)
class MixReport:
    total: int
    counts_by_source: dict[str, int] = field(hash=False)
    counts_by_variant: dict[str, int] = field(hash=False)
    query_multiplicity: dict[int, int] = field(hash=False)

    def __post_init__(self) -> None:
        if sum(self.counts_by_source.values()) != self.total:
            raise ValueError("per-source counts must sum to the total")
        if sum(self.counts_by_variant.values()) != self.total:
            raise ValueError("per-variant counts must sum to the total")

    def to_json(self) -> str:
        return json.dumps(
            {
                "total": self.total,
                "counts_by_source": dict(sorted(self.counts_by_source.items())),
                "counts_by_variant": dict(sorted(self.counts_by_variant.items())),
                "query_multiplicity": {
                    str(k): v for k, v in sorted(self.query_multiplicity.items())
                },
            },
            indent=2,
            sort_keys=True,
        )


def row_question(row: dict, template: str = DEFAULT_PROMPT_TEMPLATE) -> str:
    """Recover the question wrapped in a serialized row's prompt segment."""
    data = row["text"].encode("utf-8")
    for start, end, role in row["roles"]:
        if role == "prompt":
            return question_from_prompt(data[start:end].decode("utf-8"), template)
    raise ValueError(f"row {row.get('id')!r} has no prompt segment")


def merge(
    datasets: list[tuple[str, list[dict]]],
    template: str = DEFAULT_PROMPT_TEMPLATE,
) -> tuple[list[dict], MixReport]:
    """Concatenate training files under source-prefixed ids.

    Raw ids must be unique across all inputs; the output is ordered by
    (source, id) so merges are reproducible regardless of input order.
    """
    seen: dict[str, str] = {}
    for source, rows in datasets:
        for row in rows:
            rid = str(row["id"])
            if rid in seen:
                raise DuplicateId(
                    f"id {rid!r} appears in both {seen[rid]!r} and {source!r}"
                )
            seen[rid] = source

    merged: list[dict] = []
    by_source: Counter[str] = Counter()
    by_variant: Counter[str] = Counter()
    query_counts: Counter[str] = Counter()
    for source, rows in sorted(datasets, key=lambda d: d[0]):
        for row in sorted(rows, key=lambda r: str(r["id"])):
            out = dict(row)
            out["id"] = f"{source}/{row['id']}"
            merged.append(out)
            by_source[source] += 1
            by_variant[str(row.get("variant", "unknown"))] += 1
            query_counts[normalize_query(row_question(row, template))] += 1

    multiplicity: Counter[int] = Counter(query_counts.values())
    report = MixReport(
        total=len(merged),
        counts_by_source=dict(by_source),
        counts_by_variant=dict(by_variant),
        query_multiplicity=dict(multiplicity),
    )
    return merged, report


def merge_files(
    labeled_paths: list[tuple[str, str | Path]],
    out_path: str | Path,
    report_path: str | Path | None = None,
    template: str = DEFAULT_PROMPT_TEMPLATE,
) -> MixReport:
    datasets = [(label, read_jsonl(path)) for label, path in labeled_paths]
    merged, report = merge(datasets, template)
    write_jsonl(out_path, merged)
    if report_path is not None:
        Path(report_path).write_text(report.to_json() + "\n", encoding="utf-8")
    return report


def target_queries_from_rows(
    rows: list[dict], template: str = DEFAULT_PROMPT_TEMPLATE
) -> list[str]:
    """The query multiset (as a list) of a training file."""
    return [row_question(row, template) for row in rows]


def dist_aligned_oversample(
    original: list[StepwiseSample],
    target_queries: list[str],
    template: str = DEFAULT_PROMPT_TEMPLATE,
) -> list[SelfCorrectionSample]:
    """Passthrough samples whose query multiset equals target_queries.

    Every occurrence of a target query yields one copy of the original
    corpus response for that query; queries match exactly after whitespace
    normalization. Raises UnknownQuery when a target query has no original.
    """
    by_query: dict[str, StepwiseSample] = {}
    for sample in sorted(original, key=lambda s: s.id):
        by_query.setdefault(normalize_query(sample.question), sample)

    ordered = sorted(target_queries, key=normalize_query)
    out: list[SelfCorrectionSample] = []
    occurrence: Counter[str] = Counter()
    for query in ordered:
        key = normalize_query(query)
        sample = by_query.get(key)
        if sample is None:
            raise UnknownQuery(f"no original response for query {query[:80]!r}")
        occurrence[key] += 1
        out.append(
            assemble_passthrough(
                sample, prompt_template=template, uid=f"{sample.id}.d{occurrence[key]}"
            )
        )
    return out
