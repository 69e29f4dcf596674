#!/usr/bin/env python3
"""Regenerate the bundled toy corpus and scripted-oracle tables.

Everything under data/toy/ is produced by this script; re-running it is
deterministic. The oracle tables replay exactly the contexts the pipeline
builds, so the full offline run (split -> harvest -> annotate -> assemble
-> mix -> dist-align -> mcts -> eval) works without any network access.
"""

from __future__ import annotations

import random
import sys
from pathlib import Path

REPO = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(REPO / "src"))

from stepcorrect.annotator import build_annotation_prompt, default_template
from stepcorrect.corpus import Step, StepwiseSample, kfold_split, write_corpus, write_jsonl
from stepcorrect.inference import BackendConfig, ScriptedBackend, write_script_table
from stepcorrect.prompting import render_prompt
from stepcorrect.sampler import HarvestConfig, build_prefix, harvest

OUT = REPO / "data" / "toy"
FOLD_K = 5
FOLD_SEED = 17
HARVEST_SEED = 1234
N_CAND = 2
K_ROLLOUTS = 16

NAMES = [
    "Ann", "Ben", "Cara", "Dev", "Elif", "Finn", "Gita", "Hugo", "Iris", "Jon",
    "Kai", "Lena", "Milo", "Nora", "Omar", "Pia", "Quinn", "Rosa", "Sam", "Tess",
]
ITEMS = ["apples", "marbles", "coins", "books", "shells"]


def make_samples() -> list[StepwiseSample]:
    rng = random.Random(7)
    samples = []
    for idx, name in enumerate(NAMES):
        a, b, c = rng.randint(4, 30), rng.randint(3, 20), rng.randint(1, 6)
        item = ITEMS[idx % len(ITEMS)]
        total = a + b
        remain = total - c
        question = (
            f"{name} has {a} {item} and buys {b} more, then gives away {c}. "
            f"How many {item} remain?"
        )
        steps = [
            Step(1, f"{name} starts with {a} {item}."),
            Step(2, f"Buying {b} more gives {a} + {b} = {total} {item}."),
            Step(3, f"Giving away {c} leaves {total} - {c} = {remain} {item}."),
        ]
        if idx % 3 == 0:
            steps.append(Step(4, f"So {remain} {item} remain at the end."))
        samples.append(
            StepwiseSample(
                id=f"toy{idx:02d}",
                question=question,
                steps=tuple(steps),
                final_answer=str(remain),
            )
        )
    return samples


def rollout_pool(answers: list[str]) -> list[str]:
    return [f"Step 9: after checking everything.\nThe answer is: {a}" for a in answers]


def build_sampler_tables(samples, folds):
    """One oracle table per fold, covering every prefix of that fold's samples."""
    rng = random.Random(23)
    tables = {fold: {} for fold in range(FOLD_K)}
    for idx, sample in enumerate(samples):
        fold = folds.fold_of(sample.id)
        gt = int(sample.final_answer)
        has_wrong = idx % 5 != 4
        wrong_prefix = 1 + (idx % (sample.n_steps - 1)) if has_wrong else -1
        for i in range(1, sample.n_steps):
            prefix = build_prefix(sample, i)
            next_idx = i + 1
            alt = f"Put differently, the tally after this point stays consistent (case {idx}-{i})."
            if i == wrong_prefix:
                off = rng.choice([2, 3, 5])
                primary = (
                    f"Miscounting here gives {gt + off} so far, which looks fine (case {idx}-{i})."
                )
                primary_answers = [str(gt + off), str(gt + off + 1), str(gt - 1), str(gt + off)]
            else:
                primary = f"Recounting carefully confirms the running total (case {idx}-{i})."
                primary_answers = [str(gt), str(gt + 1), str(gt), str(gt)]
            table = tables[fold]
            table[prefix.context] = [
                f"Step {next_idx}: {primary}",
                f"Step {next_idx}: {alt}",
            ]
            table[prefix.context + f"Step {next_idx}: {primary}\n"] = rollout_pool(primary_answers)
            table[prefix.context + f"Step {next_idx}: {alt}\n"] = rollout_pool(
                [str(gt), str(gt), str(gt + 2), str(gt)]
            )
    return tables


def build_annotator_table(samples, records):
    by_id = {s.id: s for s in samples}
    template = default_template()
    table = {}
    for record in records:
        sample = by_id[record.sample_id]
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
        table[prompt] = [
            "Reflection: The step drifts from the running tally established "
            "earlier, so the count it reports cannot follow from the previous "
            "steps.\n"
            "Improvement: Redo the arithmetic from the last verified total and "
            "carry that corrected count forward instead of the misstated one."
        ]
    return table


def build_eval_assets():
    rng = random.Random(41)
    items = []
    eval_table = {}
    for i in range(20):
        a, b = rng.randint(10, 80), rng.randint(5, 60)
        question = f"A jar holds {a} buttons and {b} more are added. How many buttons are there?"
        gold = a + b
        items.append({"question": question, "answer": f"counting up gives the total\n#### {gold}"})
        answer = gold if i % 10 < 7 else gold + 3  # pass@1 lands at 0.70
        eval_table[render_prompt(question)] = [
            f"Step 1: {a} + {b} = {a + b}.\nThe answer is: {answer}"
        ]
    return items, eval_table


def build_mcts_table(samples):
    table = {}
    for sample in samples[:3]:
        gt = int(sample.final_answer)
        prompt = render_prompt(sample.question)
        good = "Track the running count from the start without skipping."
        bad = "Assume the give-away never happened to simplify things."
        table[prompt] = [f"Step 1: {good}", f"Step 1: {bad}"]
        table[prompt + f"Step 1: {good}\n"] = [
            f"Step 2: carrying the count through, so The answer is: {gt}"
        ]
        table[prompt + f"Step 1: {bad}\n"] = [
            f"Step 2: skipping the give-away inflates it, so The answer is: {gt + 4}"
        ]
    return table


CONFIG_YAML = """\
paths:
  corpus: corpus.jsonl
  workdir: ../../work/toy
folds:
  k: 5
  seed: 17
sampler:
  n_cand: 2
  k_rollouts: 16
  candidate_temperature: 1.0
  rollout_temperature: 1.0
  candidate_max_new_tokens: 128
  rollout_max_new_tokens: 512
  per_sample_cap: 1
  max_len_ratio: 4.0
  seed: 1234
backends:
  sampler:
    - {kind: scripted, script_path: oracle_fold0.jsonl}
    - {kind: scripted, script_path: oracle_fold1.jsonl}
    - {kind: scripted, script_path: oracle_fold2.jsonl}
    - {kind: scripted, script_path: oracle_fold3.jsonl}
    - {kind: scripted, script_path: oracle_fold4.jsonl}
  annotator: {kind: scripted, script_path: oracle_annotator.jsonl}
  eval: {kind: scripted, script_path: oracle_eval.jsonl}
  mcts: {kind: scripted, script_path: oracle_mcts.jsonl}
annotate:
  retries: 2
  retry_temperature: 0.7
  max_new_tokens: 512
  seed: 55
assemble:
  variant: full
  trigger: "Sorry, I made a mistake."
  prompt_template: "Question:\\n{question}\\nAnswer:"
mcts:
  iterations: 60
  expand_width: 2
  rollout_cap: 6
  min_visits: 4
  seed: 77
  max_questions: 3
eval:
  benchmark: benchmark.jsonl
  mode: pass1
  seed: 3
concurrency:
  workers: 4
"""


def main() -> None:
    OUT.mkdir(parents=True, exist_ok=True)
    samples = make_samples()
    write_corpus(OUT / "corpus.jsonl", samples)

    folds = kfold_split(samples, k=FOLD_K, seed=FOLD_SEED)
    tables = build_sampler_tables(samples, folds)
    for fold, table in tables.items():
        write_script_table(OUT / f"oracle_fold{fold}.jsonl", table)

    backends = {
        fold: ScriptedBackend(
            BackendConfig(kind="scripted", script_path=str(OUT / f"oracle_fold{fold}.jsonl"))
        )
        for fold in range(FOLD_K)
    }
    config = HarvestConfig(n_cand=N_CAND, k_rollouts=K_ROLLOUTS, seed=HARVEST_SEED)
    records, quarantined = harvest(samples, folds, backends, config)
    if quarantined:
        raise SystemExit(f"toy harvest quarantined samples: {quarantined}")
    write_script_table(OUT / "oracle_annotator.jsonl", build_annotator_table(samples, records))

    items, eval_table = build_eval_assets()
    write_jsonl(OUT / "benchmark.jsonl", items)
    write_script_table(OUT / "oracle_eval.jsonl", eval_table)
    write_script_table(OUT / "oracle_mcts.jsonl", build_mcts_table(samples))

    (OUT / "config.yaml").write_text(CONFIG_YAML, encoding="utf-8")
    print(f"toy corpus: {len(samples)} samples, {len(records)} wrong-step records")


if __name__ == "__main__":
    main()
