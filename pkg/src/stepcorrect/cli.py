"""Command-line pipeline: reproducible, resumable stage execution.

Each subcommand reads prior-stage artifacts from the workdir, writes its
outputs plus a content-hash manifest, and is a no-op when re-run with
unchanged inputs. Exit codes: 0 success, 1 stage failure, 2 usage or
config error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from collections import Counter
from pathlib import Path

from . import annotator as annotator_mod
from . import assembler, corpus, evalharness, mcts as mcts_mod, mixer, sampler
from .config import PipelineConfig, load_config
from .errors import ConfigInvalid, PipelineError, StageInputMissing
from .inference import make_backend
from .manifest import stage_is_current, write_manifest


def emit(event: str, **fields) -> None:
    """One structured log line per pipeline event."""
    print(json.dumps({"event": event, **fields}, sort_keys=True), file=sys.stderr)


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise StageInputMissing(f"{what} not found at {path}; run the earlier stage first")
    return path


def _sampler_params(config: PipelineConfig) -> dict:
    s = config.sampler
    return {
        "n_cand": int(s.get("n_cand", 4)),
        "k_rollouts": int(s.get("k_rollouts", 16)),
        "candidate_temperature": float(s.get("candidate_temperature", 1.0)),
        "rollout_temperature": float(s.get("rollout_temperature", 1.0)),
        "candidate_max_new_tokens": int(s.get("candidate_max_new_tokens", 128)),
        "rollout_max_new_tokens": int(s.get("rollout_max_new_tokens", 512)),
        "per_sample_cap": int(s.get("per_sample_cap", 1)),
        "max_len_ratio": float(s.get("max_len_ratio", 4.0)),
        "seed": int(s.get("seed", 0)),
    }


class Stage:
    """Shared manifest / no-op bookkeeping for one subcommand run."""

    def __init__(self, name: str, config: PipelineConfig, force: bool):
        self.name = name
        self.config = config
        self.force = force
        self.workdir = config.workdir
        self.workdir.mkdir(parents=True, exist_ok=True)

    def up_to_date(self, inputs: dict[str, Path], params: dict) -> bool:
        if self.force:
            return False
        current = stage_is_current(self.workdir, self.name, inputs, params)
        if current:
            emit("stage_skipped", stage=self.name, reason="manifest unchanged")
        return current

    def finish(self, inputs: dict[str, Path], params: dict, outputs: dict[str, Path]) -> None:
        write_manifest(self.workdir, self.name, inputs, params, outputs)
        emit("stage_done", stage=self.name, outputs=sorted(outputs))


def cmd_split(config: PipelineConfig, args) -> int:
    k = args.k or config.fold_k
    seed = config.fold_seed if args.seed is None else args.seed
    stage = Stage("split", config, args.force)
    inputs = {"corpus.jsonl": config.corpus_path}
    params = {"k": k, "seed": seed}
    if stage.up_to_date(inputs, params):
        return 0
    samples, rejects = corpus.load_corpus(
        config.corpus_path, reject_path=stage.workdir / "rejects.jsonl"
    )
    if not samples:
        raise StageInputMissing(f"no parseable samples in {config.corpus_path}")
    folds = corpus.kfold_split(samples, k=k, seed=seed)
    folds_path = stage.workdir / "folds.jsonl"
    corpus.write_folds(folds_path, folds)
    emit("split", samples=len(samples), rejected=len(rejects), k=k)
    stage.finish(
        inputs,
        params,
        {"folds.jsonl": folds_path, "rejects.jsonl": stage.workdir / "rejects.jsonl"},
    )
    return 0


def _load_samples(config: PipelineConfig) -> list[corpus.StepwiseSample]:
    samples, _ = corpus.load_corpus(config.corpus_path)
    return samples


def cmd_harvest(config: PipelineConfig, args) -> int:
    stage = Stage("harvest", config, args.force)
    folds_path = _require(stage.workdir / "folds.jsonl", "fold file")
    if not config.sampler_backends:
        raise ConfigInvalid("harvest requires backends.sampler (one per fold)")
    inputs = {"corpus.jsonl": config.corpus_path, "folds.jsonl": folds_path}
    for fold, backend_config in enumerate(config.sampler_backends):
        if backend_config.kind == "scripted":
            inputs[f"sampler_oracle_{fold}"] = Path(backend_config.script_path)
    params = _sampler_params(config)
    if stage.up_to_date(inputs, params):
        return 0
    samples = _load_samples(config)
    folds = corpus.load_folds(folds_path, k=config.fold_k)
    backends = {
        fold: make_backend(cfg) for fold, cfg in enumerate(config.sampler_backends)
    }
    harvest_config = sampler.HarvestConfig(
        prompt_template=config.prompt_template, workers=config.workers, **params
    )
    records, quarantined = sampler.harvest(samples, folds, backends, harvest_config)
    records_path = stage.workdir / "records.jsonl"
    quarantine_path = stage.workdir / "harvest_quarantine.jsonl"
    sampler.write_records(records_path, records)
    corpus.write_jsonl(quarantine_path, quarantined)
    emit("harvest", records=len(records), quarantined=len(quarantined))
    stage.finish(
        inputs,
        params,
        {"records.jsonl": records_path, "harvest_quarantine.jsonl": quarantine_path},
    )
    return 0


def cmd_annotate(config: PipelineConfig, args) -> int:
    stage = Stage("annotate", config, args.force)
    records_path = _require(stage.workdir / "records.jsonl", "records file")
    if config.annotator_backend is None:
        raise ConfigInvalid("annotate requires backends.annotator")
    inputs = {"corpus.jsonl": config.corpus_path, "records.jsonl": records_path}
    if config.annotator_backend.kind == "scripted":
        inputs["annotator_oracle"] = Path(config.annotator_backend.script_path)
    template = config.annotation_template()
    params = {
        "retries": int(config.annotate.get("retries", 2)),
        "retry_temperature": float(config.annotate.get("retry_temperature", 0.7)),
        "max_new_tokens": int(config.annotate.get("max_new_tokens", 512)),
        "seed": int(config.annotate.get("seed", 0)),
        "template_sha": hashlib.sha256(template.encode("utf-8")).hexdigest(),
    }
    if stage.up_to_date(inputs, params):
        return 0
    samples = {s.id: s for s in _load_samples(config)}
    records = sampler.read_records(records_path)
    backend = make_backend(config.annotator_backend)

    annotated: list[dict] = []
    failures: list[dict] = []
    for record in records:
        sample = samples.get(record.sample_id)
        row = sampler.record_to_row(record)
        if sample is None:
            failures.append({"sample_id": record.sample_id, "reason": "sample missing"})
            continue
        try:
            annotation = annotator_mod.annotate(
                record,
                sample,
                backend,
                template,
                retries=params["retries"],
                retry_temperature=params["retry_temperature"],
                max_new_tokens=params["max_new_tokens"],
                seed=params["seed"],
            )
            row["reflection"] = annotation.reflection
            row["improvement"] = annotation.improvement
        except PipelineError as exc:
            row["reflection"] = None
            row["improvement"] = None
            failures.append({"sample_id": record.sample_id, "reason": str(exc)})
        annotated.append(row)

    annotated_path = stage.workdir / "annotated.jsonl"
    failures_path = stage.workdir / "annotate_failures.jsonl"
    corpus.write_jsonl(annotated_path, annotated)
    corpus.write_jsonl(failures_path, failures)
    emit("annotate", annotated=len(annotated), failures=len(failures))
    stage.finish(
        inputs,
        params,
        {"annotated.jsonl": annotated_path, "annotate_failures.jsonl": failures_path},
    )
    return 0


def cmd_assemble(config: PipelineConfig, args) -> int:
    stage = Stage("assemble", config, args.force)
    annotated_path = _require(stage.workdir / "annotated.jsonl", "annotated records")
    variant = args.variant or config.assemble.get("variant", "full")
    inputs = {"corpus.jsonl": config.corpus_path, "annotated.jsonl": annotated_path}
    params = {
        "variant": variant,
        "trigger": config.trigger,
        "prompt_template": config.prompt_template,
    }
    if stage.up_to_date(inputs, params):
        return 0
    samples = {s.id: s for s in _load_samples(config)}
    rows = corpus.read_jsonl(annotated_path)

    synthesized: list[assembler.SelfCorrectionSample] = []
    skipped: list[dict] = []
    per_sample: Counter[str] = Counter()
    for row in rows:
        record = sampler.record_from_row(row)
        sample = samples.get(record.sample_id)
        if sample is None:
            skipped.append({"sample_id": record.sample_id, "reason": "sample missing"})
            continue
        per_sample[record.sample_id] += 1
        ordinal = per_sample[record.sample_id]
        uid = f"{sample.id}.c{record.insertion_index}" + (
            f".{ordinal}" if ordinal > 1 else ""
        )
        try:
            if variant == "instance_level":
                synthesized.append(
                    assembler.assemble_instance_level(
                        sample,
                        record,
                        trigger=config.trigger,
                        prompt_template=config.prompt_template,
                        uid=uid,
                    )
                )
                continue
            annotation = None
            if variant != "no_ri":
                if not row.get("reflection") or not row.get("improvement"):
                    skipped.append(
                        {"sample_id": record.sample_id, "reason": "annotation missing"}
                    )
                    continue
                annotation = annotator_mod.Annotation(
                    reflection=row["reflection"], improvement=row["improvement"]
                )
            synthesized.append(
                assembler.assemble_step_level(
                    sample,
                    record,
                    annotation,
                    variant,
                    trigger=config.trigger,
                    prompt_template=config.prompt_template,
                    uid=uid,
                )
            )
        except (PipelineError, ValueError) as exc:
            skipped.append({"sample_id": record.sample_id, "reason": str(exc)})

    originals = [
        assembler.assemble_passthrough(s, prompt_template=config.prompt_template)
        for s in sorted(samples.values(), key=lambda s: s.id)
    ]
    synthesized_path = stage.workdir / "synthesized.jsonl"
    originals_path = stage.workdir / "originals.jsonl"
    skipped_path = stage.workdir / "assemble_skipped.jsonl"
    assembler.write_training_file(synthesized_path, synthesized)
    assembler.write_training_file(originals_path, originals)
    corpus.write_jsonl(skipped_path, skipped)
    emit("assemble", synthesized=len(synthesized), originals=len(originals), skipped=len(skipped))
    stage.finish(
        inputs,
        params,
        {
            "synthesized.jsonl": synthesized_path,
            "originals.jsonl": originals_path,
            "assemble_skipped.jsonl": skipped_path,
        },
    )
    return 0


def cmd_mix(config: PipelineConfig, args) -> int:
    stage = Stage("mix", config, args.force)
    originals_path = _require(stage.workdir / "originals.jsonl", "originals file")
    synthesized_path = _require(stage.workdir / "synthesized.jsonl", "synthesized file")
    inputs = {"originals.jsonl": originals_path, "synthesized.jsonl": synthesized_path}
    params = {"prompt_template": config.prompt_template}
    if stage.up_to_date(inputs, params):
        return 0
    mixed_path = stage.workdir / "mixed.jsonl"
    report_path = stage.workdir / "mix_report.json"
    report = mixer.merge_files(
        [("orig", originals_path), ("synth", synthesized_path)],
        mixed_path,
        report_path,
        template=config.prompt_template,
    )
    emit("mix", total=report.total, by_source=report.counts_by_source)
    stage.finish(
        inputs, params, {"mixed.jsonl": mixed_path, "mix_report.json": report_path}
    )
    return 0


def cmd_dist_align(config: PipelineConfig, args) -> int:
    stage = Stage("dist_align", config, args.force)
    mixed_path = _require(stage.workdir / "mixed.jsonl", "mixed training file")
    inputs = {"corpus.jsonl": config.corpus_path, "mixed.jsonl": mixed_path}
    params = {"prompt_template": config.prompt_template}
    if stage.up_to_date(inputs, params):
        return 0
    samples = _load_samples(config)
    target = mixer.target_queries_from_rows(
        corpus.read_jsonl(mixed_path), template=config.prompt_template
    )
    aligned = mixer.dist_aligned_oversample(samples, target, template=config.prompt_template)
    out_path = stage.workdir / "dist_aligned.jsonl"
    assembler.write_training_file(out_path, aligned)
    emit("dist_align", total=len(aligned))
    stage.finish(inputs, params, {"dist_aligned.jsonl": out_path})
    return 0


def cmd_mcts(config: PipelineConfig, args) -> int:
    stage = Stage("mcts", config, args.force)
    if config.mcts_backend is None:
        raise ConfigInvalid("mcts requires backends.mcts")
    inputs = {"corpus.jsonl": config.corpus_path}
    if config.mcts_backend.kind == "scripted":
        inputs["mcts_oracle"] = Path(config.mcts_backend.script_path)
    m = config.mcts
    params = {
        "iterations": int(m.get("iterations", 100)),
        "c_uct": float(m.get("c_uct", 2**0.5)),
        "expand_width": int(m.get("expand_width", 4)),
        "rollout_cap": int(m.get("rollout_cap", 12)),
        "min_visits": int(m.get("min_visits", 4)),
        "seed": int(m.get("seed", 0)),
        "max_questions": m.get("max_questions"),
        "prompt_template": config.prompt_template,
    }
    if stage.up_to_date(inputs, params):
        return 0
    samples = _load_samples(config)
    if params["max_questions"] is not None:
        samples = samples[: int(params["max_questions"])]
    backend = make_backend(config.mcts_backend)

    rows: list[dict] = []
    synthesized: list[assembler.SelfCorrectionSample] = []
    quarantined: list[dict] = []
    for sample in samples:
        try:
            root = mcts_mod.search(
                sample.question,
                sample.final_answer,
                backend,
                iterations=params["iterations"],
                c_uct=params["c_uct"],
                expand_width=params["expand_width"],
                rollout_cap=params["rollout_cap"],
                seed=params["seed"],
                prompt_template=config.prompt_template,
            )
            pairs = mcts_mod.extract_pairs(root, min_visits=params["min_visits"])
        except Exception as exc:
            quarantined.append({"sample_id": sample.id, "reason": str(exc)})
            continue
        for ordinal, pair in enumerate(pairs, start=1):
            try:
                synth_sample, record = mcts_mod.pair_to_record(
                    pair, sample.id, sample.question, uid=f"{sample.id}.m{ordinal}"
                )
            except (PipelineError, ValueError) as exc:
                quarantined.append({"sample_id": sample.id, "reason": str(exc)})
                continue
            row = sampler.record_to_row(record)
            row["source"] = "mcts"
            rows.append(row)
            synthesized.append(
                assembler.assemble_step_level(
                    synth_sample,
                    record,
                    None,
                    "no_ri",
                    trigger=config.trigger,
                    prompt_template=config.prompt_template,
                    uid=synth_sample.id,
                )
            )
    records_path = stage.workdir / "mcts_records.jsonl"
    synthesized_path = stage.workdir / "mcts_synthesized.jsonl"
    quarantine_path = stage.workdir / "mcts_quarantine.jsonl"
    corpus.write_jsonl(records_path, rows)
    assembler.write_training_file(synthesized_path, synthesized)
    corpus.write_jsonl(quarantine_path, quarantined)
    emit("mcts", pairs=len(rows), quarantined=len(quarantined))
    stage.finish(
        inputs,
        params,
        {
            "mcts_records.jsonl": records_path,
            "mcts_synthesized.jsonl": synthesized_path,
            "mcts_quarantine.jsonl": quarantine_path,
        },
    )
    return 0


def cmd_eval(config: PipelineConfig, args) -> int:
    stage = Stage("eval", config, args.force)
    if config.eval_backend is None:
        raise ConfigInvalid("eval requires backends.eval")
    benchmark_rel = config.eval.get("benchmark")
    if not benchmark_rel:
        raise ConfigInvalid("eval.benchmark path is not configured")
    benchmark_path = _require(config.base_dir / benchmark_rel, "benchmark file")
    inputs = {"benchmark.jsonl": benchmark_path}
    if config.eval_backend.kind == "scripted":
        inputs["eval_oracle"] = Path(config.eval_backend.script_path)
    mode = args.mode or config.eval.get("mode", "pass1")
    params = {
        "mode": mode,
        "k": config.eval.get("k"),
        "temperature": config.eval.get("temperature"),
        "max_new_tokens": int(config.eval.get("max_new_tokens", 512)),
        "seed": int(config.eval.get("seed", 0)),
        "limit": config.eval.get("limit"),
        "prompt_template": config.prompt_template,
    }
    if stage.up_to_date(inputs, params):
        return 0
    benchmark = evalharness.load_benchmark(
        benchmark_path, limit=params["limit"] and int(params["limit"])
    )
    backend = make_backend(config.eval_backend)
    modes = ["pass1", "majk"] if mode == "both" else [mode]
    results = []
    for mode_name in modes:
        results.append(
            evalharness.eval_benchmark(
                backend,
                benchmark,
                prompt_template=config.prompt_template,
                mode=mode_name,
                k=params["k"] and int(params["k"]),
                temperature=params["temperature"] and float(params["temperature"]),
                max_new_tokens=params["max_new_tokens"],
                seed=params["seed"],
                workers=config.workers,
                transcript_path=stage.workdir / f"transcripts_{mode_name}.jsonl",
            )
        )
    report_path = stage.workdir / "eval_report.json"
    md_path = stage.workdir / "eval_report.md"
    report_path.write_text(evalharness.report_json(results) + "\n", encoding="utf-8")
    md_path.write_text(evalharness.report_markdown(results), encoding="utf-8")
    for result in results:
        emit(
            "eval",
            benchmark=result.benchmark,
            mode=result.mode,
            accuracy=result.accuracy,
            items=result.item_count,
        )
    outputs = {"eval_report.json": report_path, "eval_report.md": md_path}
    for mode_name in modes:
        outputs[f"transcripts_{mode_name}.jsonl"] = (
            stage.workdir / f"transcripts_{mode_name}.jsonl"
        )
    stage.finish(inputs, params, outputs)
    return 0


def cmd_stats(args) -> int:
    path = Path(args.file)
    if not path.exists():
        raise StageInputMissing(f"training file {path} does not exist")
    rows = corpus.read_jsonl(path)
    by_variant: Counter[str] = Counter()
    masked_bytes = 0
    total_bytes = 0
    for row in rows:
        by_variant[str(row.get("variant", "unknown"))] += 1
        total_bytes += len(row["text"].encode("utf-8"))
        masked_bytes += sum(end - start for start, end in row["mask_spans"])
    stats = {
        "rows": len(rows),
        "by_variant": dict(sorted(by_variant.items())),
        "total_bytes": total_bytes,
        "masked_bytes": masked_bytes,
        "masked_fraction": (masked_bytes / total_bytes) if total_bytes else 0.0,
    }
    print(json.dumps(stats, indent=2, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stepcorrect",
        description="Synthesize step-level self-correction SFT data and evaluate models.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, help_: str, needs_config: bool = True):
        p = sub.add_parser(name, help=help_)
        if needs_config:
            p.add_argument("--config", required=True, help="pipeline config YAML")
            p.add_argument(
                "--force", action="store_true", help="re-run even if the manifest is current"
            )
        return p

    p = add("split", "parse the corpus and assign k folds")
    p.add_argument("--k", type=int, default=None, help="fold count override")
    p.add_argument("--seed", type=int, default=None, help="fold seed override")
    add("harvest", "sample wrong-step candidates and verdict them")
    add("annotate", "generate reflection/improvement for each record")
    p = add("assemble", "build loss-masked training samples")
    p.add_argument(
        "--variant",
        choices=["full", "no_improvement", "no_ri", "instance_level"],
        default=None,
        help="sample variant override",
    )
    add("mix", "merge originals with synthesized data")
    add("dist-align", "build the distribution-aligned oversample")
    add("mcts", "generate correction pairs by tree search")
    p = add("eval", "run benchmark evaluation")
    p.add_argument("--mode", choices=["pass1", "majk", "both"], default=None)
    p = sub.add_parser("stats", help="summarize a training file")
    p.add_argument("--file", required=True, help="training file to summarize")
    return parser


_COMMANDS = {
    "split": cmd_split,
    "harvest": cmd_harvest,
    "annotate": cmd_annotate,
    "assemble": cmd_assemble,
    "mix": cmd_mix,
    "dist-align": cmd_dist_align,
    "mcts": cmd_mcts,
    "eval": cmd_eval,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "stats":
            return cmd_stats(args)
        config = load_config(args.config)
        return _COMMANDS[args.command](config, args)
    except ConfigInvalid as exc:
        emit("config_error", error=str(exc))
        return 2
    except PipelineError as exc:
        emit("stage_failed", command=args.command, error=str(exc))
        return 1
    except Exception as exc:  # unexpected: still a stage failure, not a crash
        emit("stage_failed", command=args.command, error=f"{type(exc).__name__}: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
