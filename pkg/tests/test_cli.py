from __future__ import annotations

import json
import shutil
from collections import Counter
from pathlib import Path

import pytest

from stepcorrect.cli import main
from stepcorrect.corpus import read_jsonl

TOY = Path(__file__).resolve().parents[1] / "data" / "toy"
PIPELINE = ["split", "harvest", "annotate", "assemble", "mix", "dist-align", "mcts", "eval"]


def make_runnable_copy(tmp_path: Path, name: str) -> Path:
    """Copy the toy bundle so the workdir lands inside tmp_path."""
    dest = tmp_path / name
    shutil.copytree(TOY, dest)
    config = dest / "config.yaml"
    text = config.read_text(encoding="utf-8").replace(
        "workdir: ../../work/toy", "workdir: work"
    )
    config.write_text(text, encoding="utf-8")
    return config


def run(config: Path, *argv: str) -> int:
    return main([*argv, "--config", str(config)])


def tree_bytes(root: Path) -> dict[str, bytes]:
    return {
        str(p.relative_to(root)): p.read_bytes()
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }


def test_split_balanced_folds(tmp_path):
    config = make_runnable_copy(tmp_path, "a")
    assert run(config, "split") == 0
    folds = read_jsonl(config.parent / "work" / "folds.jsonl")
    sizes = Counter(r["fold"] for r in folds)
    assert sorted(sizes.values()) == [4, 4, 4, 4, 4]


def test_split_k_override(tmp_path):
    config = make_runnable_copy(tmp_path, "a")
    assert run(config, "split", "--k", "4") == 0
    folds = read_jsonl(config.parent / "work" / "folds.jsonl")
    assert sorted(Counter(r["fold"] for r in folds).values()) == [5, 5, 5, 5]


def test_unknown_subcommand_exits_2(capsys):
    with pytest.raises(SystemExit) as excinfo:
        main(["frobnicate"])
    assert excinfo.value.code == 2
    assert "usage" in capsys.readouterr().err


def test_missing_config_exits_2(tmp_path):
    assert main(["split", "--config", str(tmp_path / "nope.yaml")]) == 2


def test_stage_input_missing_exits_1(tmp_path):
    config = make_runnable_copy(tmp_path, "a")
    # harvest before split: folds.jsonl does not exist yet
    assert run(config, "harvest") == 1


def test_stage_noop_on_unchanged_manifest(tmp_path, capsys):
    config = make_runnable_copy(tmp_path, "a")
    assert run(config, "split") == 0
    folds_path = config.parent / "work" / "folds.jsonl"
    before = folds_path.read_bytes()
    capsys.readouterr()
    assert run(config, "split") == 0
    err = capsys.readouterr().err
    assert "stage_skipped" in err
    assert folds_path.read_bytes() == before


def test_stage_reruns_when_input_changes(tmp_path, capsys):
    config = make_runnable_copy(tmp_path, "a")
    assert run(config, "split") == 0
    corpus_path = config.parent / "corpus.jsonl"
    rows = corpus_path.read_text(encoding="utf-8").strip().split("\n")
    corpus_path.write_text("\n".join(rows[:-1]) + "\n", encoding="utf-8")
    capsys.readouterr()
    assert run(config, "split") == 0
    err = capsys.readouterr().err
    assert "stage_skipped" not in err
    folds = read_jsonl(config.parent / "work" / "folds.jsonl")
    assert len(folds) == 19


def test_force_reruns(tmp_path, capsys):
    config = make_runnable_copy(tmp_path, "a")
    assert run(config, "split") == 0
    capsys.readouterr()
    assert run(config, "split", "--force") == 0
    assert "stage_skipped" not in capsys.readouterr().err


def test_full_pipeline_byte_identical_across_runs(tmp_path):
    config_a = make_runnable_copy(tmp_path, "a")
    config_b = make_runnable_copy(tmp_path, "b")
    for config in (config_a, config_b):
        for command in PIPELINE:
            assert run(config, command) == 0, command
    tree_a = tree_bytes(config_a.parent / "work")
    tree_b = tree_bytes(config_b.parent / "work")
    assert tree_a.keys() == tree_b.keys()
    for name in tree_a:
        assert tree_a[name] == tree_b[name], f"artifact differs: {name}"


def test_eval_mode_override_and_reports(tmp_path):
    config = make_runnable_copy(tmp_path, "a")
    assert run(config, "eval", "--mode", "both") == 0
    work = config.parent / "work"
    report = json.loads((work / "eval_report.json").read_text())
    entry = report["benchmarks"]["benchmark"]
    assert entry["pass1"]["accuracy"] == 0.7
    assert entry["majk"]["k"] == 32
    assert entry["majk"]["temperature"] == 0.7
    md = (work / "eval_report.md").read_text()
    assert "| benchmark | 70.00 | 70.00 |" in md
    assert (work / "transcripts_pass1.jsonl").exists()
    assert (work / "transcripts_majk.jsonl").exists()


def test_stats_reports_mask_fraction(tmp_path, capsys):
    config = make_runnable_copy(tmp_path, "a")
    for command in ("split", "harvest", "annotate", "assemble"):
        assert run(config, command) == 0
    capsys.readouterr()
    assert main(["stats", "--file", str(config.parent / "work" / "synthesized.jsonl")]) == 0
    stats = json.loads(capsys.readouterr().out)
    assert stats["rows"] == 16
    assert stats["by_variant"] == {"full": 16}
    assert 0 < stats["masked_fraction"] < 1


def test_assemble_variant_override_instance_level(tmp_path):
    config = make_runnable_copy(tmp_path, "a")
    for command in ("split", "harvest", "annotate"):
        assert run(config, command) == 0
    assert run(config, "assemble", "--variant", "instance_level") == 0
    rows = read_jsonl(config.parent / "work" / "synthesized.jsonl")
    assert rows and all(r["variant"] == "instance_level" for r in rows)
    for row in rows:
        roles = [r[2] for r in row["roles"]]
        assert roles == ["prompt", "wrong_step", "trigger", "corrected_step"]


def test_assemble_no_ri_keeps_unannotated_records(tmp_path):
    config = make_runnable_copy(tmp_path, "a")
    for command in ("split", "harvest", "annotate"):
        assert run(config, command) == 0
    annotated_path = config.parent / "work" / "annotated.jsonl"
    rows = read_jsonl(annotated_path)
    rows[0]["reflection"] = None
    rows[0]["improvement"] = None
    with open(annotated_path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")
    # full drops the unannotated record, no_ri keeps it
    assert run(config, "assemble", "--variant", "full", "--force") == 0
    full_rows = read_jsonl(config.parent / "work" / "synthesized.jsonl")
    assert len(full_rows) == len(rows) - 1
    skipped = read_jsonl(config.parent / "work" / "assemble_skipped.jsonl")
    assert any(s["reason"] == "annotation missing" for s in skipped)
    assert run(config, "assemble", "--variant", "no_ri", "--force") == 0
    no_ri_rows = read_jsonl(config.parent / "work" / "synthesized.jsonl")
    assert len(no_ri_rows) == len(rows)


def test_quarantined_corpus_line_is_reported(tmp_path):
    config = make_runnable_copy(tmp_path, "a")
    corpus_path = config.parent / "corpus.jsonl"
    with open(corpus_path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps({"id": "bad", "question": "q", "response": "no steps"}) + "\n")
    assert run(config, "split") == 0
    rejects = read_jsonl(config.parent / "work" / "rejects.jsonl")
    assert [r["id"] for r in rejects] == ["bad"]
    folds = read_jsonl(config.parent / "work" / "folds.jsonl")
    assert len(folds) == 20
