from __future__ import annotations

import pytest

from stepcorrect.answers import answers_match, extract_answer
from stepcorrect.corpus import Step, StepwiseSample, kfold_split
from stepcorrect.errors import ScriptMiss
from stepcorrect.inference import BackendConfig, ScriptedBackend, write_script_table
from stepcorrect.sampler import (
    CandidateStep,
    HarvestConfig,
    StepVerdict,
    build_prefix,
    harvest,
    harvest_sample,
    normalize_step_text,
    record_from_row,
    record_to_row,
    sample_candidates,
    verdict_step,
    write_records,
    read_records,
)


def make_sample(sid: str, bodies: list[str], answer: str) -> StepwiseSample:
    steps = tuple(Step(i + 1, b) for i, b in enumerate(bodies))
    return StepwiseSample(id=sid, question=f"What about {sid}?", steps=steps, final_answer=answer)


def make_backend(tmp_path, table: dict, name="table") -> ScriptedBackend:
    path = tmp_path / f"{name}.jsonl"
    write_script_table(path, table)
    return ScriptedBackend(BackendConfig(kind="scripted", script_path=str(path)))


def rollouts(*answers: str | None, pad_to: int = 1) -> list[str]:
    texts = []
    for a in answers:
        if a is None:
            texts.append("Step 3: wandering off with no conclusion")
        else:
            texts.append(f"Step 3: therefore.\nThe answer is: {a}")
    while len(texts) < pad_to:
        texts.append(texts[-1])
    return texts


SAMPLE = make_sample("s1", ["add 2 and 3 to get 5", "double 5 to get 10"], "10")
PREFIX = build_prefix(SAMPLE, 1)


def test_prefix_context_ends_at_boundary():
    assert PREFIX.context.endswith("Step 1: add 2 and 3 to get 5\n")
    assert PREFIX.context.startswith("Question:\nWhat about s1?\nAnswer:\n")
    assert PREFIX.next_index == 2


def test_sample_candidates_dedup_and_truncation(tmp_path):
    # four scripted continuations, two identical after cleanup -> 3 candidates
    table = {
        PREFIX.context: [
            "Step 2: halve 5 to get 2.5\nStep 3: runaway text",
            "Step 2: halve 5 to get 2.5",
            "Step 2: add 5 to get 10",
            "subtract 1 from 5",
        ]
    }
    backend = make_backend(tmp_path, table)
    cands = sample_candidates(PREFIX, SAMPLE.step_body(2), 4, 1.0, backend, seed=0)
    assert [c.text for c in cands] == [
        "add 5 to get 10",
        "halve 5 to get 2.5",
        "subtract 1 from 5",
    ]
    assert all("\n" not in c.text for c in cands)


def test_sample_candidates_filters_gold(tmp_path):
    table = {PREFIX.context: ["Step 2:  Double 5 TO get 10 ", "Step 2: something else"]}
    backend = make_backend(tmp_path, table)
    cands = sample_candidates(PREFIX, SAMPLE.step_body(2), 2, 1.0, backend, seed=0)
    assert [c.text for c in cands] == ["something else"]


def test_sample_candidates_filters_degenerate(tmp_path):
    gold = SAMPLE.step_body(2)
    table = {
        PREFIX.context: [
            "Step 2: " + "x " * 200,   # way over 4x gold length
            "Step 2:    ",             # empty after cleanup
            "Step 2: fine candidate",
        ]
    }
    backend = make_backend(tmp_path, table)
    cands = sample_candidates(PREFIX, gold, 3, 1.0, backend, seed=0)
    assert [c.text for c in cands] == ["fine candidate"]


def verdict_for(tmp_path, pool: list[str], k: int = 16) -> StepVerdict:
    cand = CandidateStep(text="halve 5", dedup_key=normalize_step_text("halve 5"))
    ctx = PREFIX.context + "Step 2: halve 5\n"
    backend = make_backend(tmp_path, {ctx: pool})
    return verdict_step(PREFIX, cand, SAMPLE.final_answer, backend=backend, k=k, seed=7)


def test_verdict_all_miss_is_wrong(tmp_path):
    verdict = verdict_for(tmp_path, rollouts("7", "8", "9", "11"))
    assert verdict.label == "Wrong"
    assert verdict.match_count == 0
    assert verdict.k == 16


def test_verdict_single_match_is_correct(tmp_path):
    pool = rollouts(*(["7"] * 15 + ["10"]))
    verdict = verdict_for(tmp_path, pool)
    assert verdict.label == "Correct"
    assert verdict.match_count == 1


def test_verdict_all_match(tmp_path):
    verdict = verdict_for(tmp_path, rollouts("10"))
    assert verdict.label == "Correct"
    assert verdict.match_count == 16


def test_verdict_unextractable_counts_as_miss(tmp_path):
    verdict = verdict_for(tmp_path, rollouts(None, None))
    assert verdict.label == "Wrong"


def test_verdict_length_terminated_counts_as_miss(tmp_path):
    long_text = " ".join(["word"] * 600) + "\nThe answer is: 10"
    verdict = verdict_for(tmp_path, [long_text])
    assert verdict.label == "Wrong"
    assert verdict.rollout_answers == (None,) * 16


def test_verdict_matches_bruteforce_recount(tmp_path):
    # independent recount over the stored rollout answers
    pool = rollouts("10", "3", None, "10.0", "x")
    verdict = verdict_for(tmp_path, pool)
    recount = sum(
        1
        for a in verdict.rollout_answers
        if a is not None and answers_match(a, SAMPLE.final_answer)
    )
    assert recount == verdict.match_count
    assert (verdict.label == "Wrong") == (recount == 0)


def test_verdict_monotone_in_k(tmp_path):
    # on a fixed rollout list, adding rollouts can only move Wrong -> Correct
    pool = rollouts("7", "8", "10", "9")
    verdict = verdict_for(tmp_path, pool)
    labels = []
    for j in range(1, verdict.k + 1):
        prefix_answers = verdict.rollout_answers[:j]
        m = sum(
            1
            for a in prefix_answers
            if a is not None and answers_match(a, SAMPLE.final_answer)
        )
        labels.append("Wrong" if m == 0 else "Correct")
    for earlier, later in zip(labels, labels[1:]):
        assert not (earlier == "Correct" and later == "Wrong")


def _fold_tables(samples, folds, wrong_answer="99"):
    """Hand-build per-fold oracle tables: one bad candidate per sample prefix 1."""
    tables: dict[int, dict] = {f: {} for f in range(folds.k)}
    for s in samples:
        fold = folds.fold_of(s.id)
        prefix = build_prefix(s, 1)
        bad = f"misread the problem for {s.id}"
        good = f"restate things for {s.id}"
        tables[fold][prefix.context] = [f"Step 2: {bad}", f"Step 2: {good}"]
        tables[fold][prefix.context + f"Step 2: {bad}\n"] = rollouts(wrong_answer)
        tables[fold][prefix.context + f"Step 2: {good}\n"] = rollouts(s.final_answer)
    return tables


@pytest.fixture
def small_world(tmp_path):
    samples = [
        make_sample(f"s{i}", [f"first move {i}", f"second move {i}", f"third move {i}"], str(i))
        for i in range(6)
    ]
    folds = kfold_split(samples, k=2, seed=4)
    tables = _fold_tables(samples, folds)
    backends = {
        f: make_backend(tmp_path, tables[f], name=f"fold{f}") for f in range(folds.k)
    }
    return samples, folds, backends


def test_harvest_matches_bruteforce_enumeration(small_world):
    samples, folds, backends = small_world
    config = HarvestConfig(n_cand=2, k_rollouts=16, workers=2, seed=1)
    records, quarantined = harvest(samples, folds, backends, config)
    assert quarantined == []
    # brute force: every sample has exactly one Wrong candidate at prefix 1
    assert sorted(r.sample_id for r in records) == [s.id for s in samples]
    for record in records:
        assert record.insertion_index == 2
        assert record.wrong_text.startswith("misread the problem")
        assert record.gold_text.startswith("second move")
        assert record.match_count == 0
        assert normalize_step_text(record.wrong_text) != normalize_step_text(record.gold_text)
        assert record.wrong_rollout.startswith("Step 1: first move")


def test_harvest_determinism(small_world):
    samples, folds, backends = small_world
    config = HarvestConfig(n_cand=2, k_rollouts=16, workers=3, seed=1)
    first, _ = harvest(samples, folds, backends, config)
    second, _ = harvest(list(reversed(samples)), folds, backends, config)
    assert [record_to_row(r) for r in first] == [record_to_row(r) for r in second]


def test_harvest_fold_discipline(small_world):
    samples, folds, backends = small_world
    # swap the fold backends: every sample now hits a table with no entries for it
    swapped = {0: backends[1], 1: backends[0]}
    config = HarvestConfig(n_cand=2, k_rollouts=16, workers=2, seed=1)
    records, quarantined = harvest(samples, folds, swapped, config)
    assert records == []
    assert len(quarantined) == len(samples)
    assert all("ScriptMiss" in q["reason"] for q in quarantined)


def test_harvest_no_wrong_candidates_yields_nothing(tmp_path):
    sample = make_sample("easy", ["obvious start", "obvious end"], "4")
    prefix = build_prefix(sample, 1)
    table = {
        prefix.context: ["Step 2: only candidate"],
        prefix.context + "Step 2: only candidate\n": rollouts("4"),
    }
    backend = make_backend(tmp_path, table)
    records = harvest_sample(sample, backend, HarvestConfig(n_cand=1))
    assert records == []


def test_harvest_earliest_prefix_wins(tmp_path):
    sample = make_sample("multi", ["a b c", "d e f", "g h i"], "12")
    p1, p2 = build_prefix(sample, 1), build_prefix(sample, 2)
    table = {
        p1.context: ["Step 2: correct-ish detour"],
        p1.context + "Step 2: correct-ish detour\n": rollouts("12"),
        p2.context: ["Step 3: fatal detour"],
        p2.context + "Step 3: fatal detour\n": rollouts("8"),
    }
    backend = make_backend(tmp_path, table)
    records = harvest_sample(sample, backend, HarvestConfig(n_cand=1, per_sample_cap=1))
    assert len(records) == 1
    assert records[0].insertion_index == 3
    assert records[0].wrong_text == "fatal detour"


def test_record_row_roundtrip(tmp_path, small_world):
    samples, folds, backends = small_world
    records, _ = harvest(samples, folds, backends, HarvestConfig(n_cand=2, seed=1))
    path = tmp_path / "records.jsonl"
    write_records(path, records)
    assert read_records(path) == records
    row = record_to_row(records[0])
    assert set(row) == {
        "sample_id", "insertion_index", "wrong_text", "gold_text",
        "match_count", "k", "wrong_rollout",
    }
    assert record_from_row(row) == records[0]
