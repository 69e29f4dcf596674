from __future__ import annotations

import random
from collections import Counter

import pytest

from stepcorrect.answers import answers_match, normalize
from stepcorrect.evalharness import (
    Benchmark,
    BenchmarkItem,
    EvalResult,
    ItemResult,
    eval_benchmark,
    load_benchmark,
    majority_vote,
    report_json,
    report_markdown,
)
from stepcorrect.corpus import write_jsonl
from stepcorrect.inference import BackendConfig, ScriptedBackend, write_script_table
from stepcorrect.prompting import render_prompt


def test_majority_strict():
    votes = ["9"] * 17 + ["5"] * 15
    assert majority_vote(votes) == "9"


def test_majority_tie_breaks_on_first_occurrence():
    votes = ["9", "5"] * 16
    assert majority_vote(votes) == "9"
    votes = ["5", "9"] * 16
    assert majority_vote(votes) == "5"


def test_majority_merges_rational_classes():
    # oracle: 0.5 and 1/2 denote the same rational, so the class has 18 votes
    votes = ["0.5"] * 10 + ["1/2"] * 8 + ["2"] * 13
    winner = majority_vote(votes)
    assert answers_match(winner, "0.5")
    assert answers_match(winner, "1/2")


def test_majority_null_never_wins_unless_all_null():
    assert majority_vote([None, None, "7"]) == "7"
    assert majority_vote([None, None]) is None


def test_majority_bruteforce_10k():
    rng = random.Random(13)
    pool = ["9", "5", "0.5", "1/2", "2/4", "x", "Foo", "foo", None]
    for _ in range(2000):
        votes = [rng.choice(pool) for _ in range(rng.randint(1, 40))]
        winner = majority_vote(votes)
        # brute-force recount by equivalence-class key
        counts = Counter()
        first = {}
        for i, v in enumerate(votes):
            if v is None:
                continue
            canonical = normalize(v)
            key = canonical.value if canonical.is_numeric() else canonical.normalized
            counts[key] += 1
            first.setdefault(key, i)
        if not counts:
            assert winner is None
            continue
        winner_canonical = normalize(winner)
        winner_key = (
            winner_canonical.value
            if winner_canonical.is_numeric()
            else winner_canonical.normalized
        )
        assert counts[winner_key] == max(counts.values())
        best = min(counts, key=lambda k: (-counts[k], first[k]))
        assert winner_key == best


def make_benchmark(n=10):
    return Benchmark(
        name="toybench",
        items=tuple(
            BenchmarkItem(question=f"What is {i} plus {i}?", answer=str(2 * i))
            for i in range(n)
        ),
    )


def scripted_eval_backend(tmp_path, benchmark, wrong_indices=(), n_completions=1):
    table = {}
    for i, item in enumerate(benchmark.items):
        answer = "999" if i in wrong_indices else item.answer
        table[render_prompt(item.question)] = [
            f"Step 1: compute.\nThe answer is: {answer}"
        ] * n_completions
    path = tmp_path / "eval.jsonl"
    write_script_table(path, table)
    return ScriptedBackend(BackendConfig(kind="scripted", script_path=str(path)))


def test_pass1_exact_accuracy(tmp_path):
    benchmark = make_benchmark(10)
    backend = scripted_eval_backend(tmp_path, benchmark, wrong_indices=(1, 4, 7))
    result = eval_benchmark(backend, benchmark, mode="pass1")
    assert result.k == 1 and result.temperature == 0.0
    assert result.correct_count == 7
    assert result.accuracy == 0.700
    assert result.correct_count / result.item_count == result.accuracy


def test_majk_defaults(tmp_path):
    benchmark = make_benchmark(4)
    backend = scripted_eval_backend(tmp_path, benchmark)
    result = eval_benchmark(backend, benchmark, mode="majk")
    assert result.k == 32
    assert result.temperature == 0.7
    assert result.accuracy == 1.0


def test_maj1_at_temp0_equals_pass1(tmp_path):
    benchmark = make_benchmark(8)
    backend = scripted_eval_backend(tmp_path, benchmark, wrong_indices=(2, 3))
    pass1 = eval_benchmark(backend, benchmark, mode="pass1")
    maj1 = eval_benchmark(backend, benchmark, mode="majk", k=1, temperature=0.0)
    assert [i.correct for i in pass1.items] == [i.correct for i in maj1.items]
    assert pass1.accuracy == maj1.accuracy


def test_missing_marker_scored_incorrect(tmp_path):
    benchmark = Benchmark(
        name="b", items=(BenchmarkItem(question="q1?", answer="3"),)
    )
    path = tmp_path / "eval.jsonl"
    write_script_table(path, {render_prompt("q1?"): ["I refuse to answer"]})
    backend = ScriptedBackend(BackendConfig(kind="scripted", script_path=str(path)))
    result = eval_benchmark(backend, benchmark, mode="pass1")
    assert result.correct_count == 0
    assert result.items[0].predicted is None


def test_backend_error_recorded_not_skipped(tmp_path):
    benchmark = make_benchmark(3)
    # table only covers items 0 and 2; item 1 raises ScriptMiss
    table = {}
    for i in (0, 2):
        item = benchmark.items[i]
        table[render_prompt(item.question)] = [f"The answer is: {item.answer}"]
    path = tmp_path / "partial.jsonl"
    write_script_table(path, table)
    backend = ScriptedBackend(BackendConfig(kind="scripted", script_path=str(path)))
    result = eval_benchmark(backend, benchmark, mode="pass1")
    assert result.item_count == 3
    assert result.correct_count == 2
    failed = result.items[1]
    assert not failed.correct and "ScriptMiss" in failed.error


def test_transcripts_written(tmp_path):
    benchmark = make_benchmark(3)
    backend = scripted_eval_backend(tmp_path, benchmark)
    sidecar = tmp_path / "transcripts.jsonl"
    eval_benchmark(backend, benchmark, mode="pass1", transcript_path=sidecar)
    lines = sidecar.read_text().strip().split("\n")
    assert len(lines) == 3


def test_gsm8k_gold_normalization(tmp_path):
    path = tmp_path / "bench.jsonl"
    write_jsonl(
        path,
        [
            {"question": "q?", "answer": "reasoning text\n#### 72"},
            {"question": "p?", "answer": "6"},
        ],
    )
    benchmark = load_benchmark(path)
    assert benchmark.items[0].answer == "72"
    assert benchmark.items[1].answer == "6"


def test_report_accounting_and_rendering(tmp_path):
    benchmark = make_benchmark(5)
    backend = scripted_eval_backend(tmp_path, benchmark, wrong_indices=(0,))
    pass1 = eval_benchmark(backend, benchmark, mode="pass1")
    majk = eval_benchmark(backend, benchmark, mode="majk", k=4)
    md = report_markdown([pass1, majk])
    assert "| Benchmark | P@1 | M@4 |" in md
    assert "| toybench | 80.00 | 80.00 |" in md
    js = report_json([pass1, majk])
    assert '"accuracy": 0.8' in js


def test_eval_result_validates_accounting():
    with pytest.raises(ValueError):
        EvalResult(
            benchmark="b", mode="pass1", k=1, temperature=0.0,
            item_count=1, correct_count=1,
            items=(ItemResult(index=0, gold="1", predicted="2", correct=False),),
        )


def test_pass1_rejects_conflicting_parameters(tmp_path):
    benchmark = make_benchmark(2)
    backend = scripted_eval_backend(tmp_path, benchmark)
    with pytest.raises(ValueError):
        eval_benchmark(backend, benchmark, mode="pass1", k=4)
