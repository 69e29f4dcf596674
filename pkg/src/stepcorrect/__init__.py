"""stepcorrect: synthesize step-level self-correction SFT data and evaluate it.

Pipeline stages: parse a step-by-step QA corpus, split it into folds,
sample wrong steps with per-fold held-out models, verdict them with
pass@k rollouts, annotate reflection/improvement, assemble loss-masked
training samples, mix datasets, and evaluate with pass@1 / majority@k.
"""

from .annotator import Annotation, annotate, build_annotation_prompt, parse_annotation
from .answers import CanonicalAnswer, answers_match, extract_answer, normalize
from .assembler import (
    Segment,
    SelfCorrectionSample,
    assemble_instance_level,
    assemble_passthrough,
    assemble_step_level,
    deserialize_sample,
    serialize_sample,
)
from .corpus import (
    FoldAssignment,
    Step,
    StepwiseSample,
    kfold_split,
    load_corpus,
    parse_response,
    render_response,
)
from .evalharness import Benchmark, EvalResult, eval_benchmark, load_benchmark, majority_vote
from .inference import (
    BackendConfig,
    Completion,
    GenerationRequest,
    HttpBackend,
    RetryPolicy,
    ScriptedBackend,
    generate,
    make_backend,
)
from .mcts import StepPair, TreeNode, extract_pairs, pair_to_record, search
from .mixer import MixReport, dist_aligned_oversample, merge
from .sampler import (
    CandidatePrefix,
    CandidateStep,
    HarvestConfig,
    StepVerdict,
    WrongStepRecord,
    harvest,
    sample_candidates,
    verdict_step,
)

__version__ = "0.1.0"

__all__ = [
    "Annotation",
    "Benchmark",
    "BackendConfig",
    "CandidatePrefix",
    "CandidateStep",
    "CanonicalAnswer",
    "Completion",
    "EvalResult",
    "FoldAssignment",
    "GenerationRequest",
    "HarvestConfig",
    "HttpBackend",
    "MixReport",
    "RetryPolicy",
    "ScriptedBackend",
    "Segment",
    "SelfCorrectionSample",
    "Step",
    "StepPair",
    "StepVerdict",
    "StepwiseSample",
    "TreeNode",
    "WrongStepRecord",
    "annotate",
    "answers_match",
    "assemble_instance_level",
    "assemble_passthrough",
    "assemble_step_level",
    "build_annotation_prompt",
    "deserialize_sample",
    "dist_aligned_oversample",
    "eval_benchmark",
    "extract_answer",
    "extract_pairs",
    "generate",
    "harvest",
    "kfold_split",
    "load_benchmark",
    "load_corpus",
    "majority_vote",
    "make_backend",
    "merge",
    "normalize",
    "pair_to_record",
    "parse_annotation",
    "parse_response",
    "render_response",
    "sample_candidates",
    "search",
    "serialize_sample",
    "verdict_step",
]
