"""Tree search over step continuations for the search-generated ablation.

A node holds the step texts from the question down to itself; UCT guides
selection, expansion proposes up to expand_width next steps, and each
evaluation runs one rollout to end-of-sequence scored by final-answer
match. Sibling (zero-success, positive-success) pairs become step-level
correction records with the successful sibling as the gold step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .answers import ANSWER_MARKER, answers_match, extract_answer
from .corpus import StepwiseSample, parse_response
from .errors import MissingRollout
from .inference import Backend, GenerationRequest, derive_seed, generate
from .prompting import DEFAULT_PROMPT_TEMPLATE, render_prompt
from .sampler import WrongStepRecord, normalize_step_text

EXPAND_STOPS = ("\nStep ",)


@dataclass
class TreeNode:
    prefix: tuple[str, ...]
    step_text: str | None = None
    children: list["TreeNode"] = field(default_factory=list)
    visits: int = 0
    successes: int = 0
    expanded: bool = False
    terminal: bool = False
    terminal_reason: str | None = None
    evaluations: list[tuple[str, int]] = field(default_factory=list)

    @property
    def depth(self) -> int:
        return len(self.prefix)

    def first_evaluation(self, score: int) -> str | None:
        for text, s in self.evaluations:
            if s == score:
                return text
        return None

    def walk(self):
        yield self
        for child in self.children:
            yield from child.walk()


@dataclass(frozen=True)
class StepPair:
    prefix: tuple[str, ...]
    wrong_text: str
    correct_text: str
    wrong_visits: int
    correct_visits: int
    correct_successes: int
    wrong_rollout: str
    correct_rollout: str

    def __post_init__(self) -> None:
        if self.correct_successes <= 0:
            raise ValueError("correct sibling needs positive successes")


def _render_steps(steps: tuple[str, ...], start_index: int = 1) -> str:
    return "".join(
        f"Step {start_index + j}: {text}\n" for j, text in enumerate(steps)
    )


class Search:
    """One tree search for a single question; iterations run sequentially."""

    def __init__(
        self,
        question: str,
        gt: str,
        backend: Backend,
        iterations: int,
        c_uct: float = math.sqrt(2),
        expand_width: int = 4,
        rollout_cap: int = 12,
        seed: int = 0,
        expand_temperature: float = 1.0,
        rollout_temperature: float = 1.0,
        max_new_tokens: int = 512,
        prompt_template: str = DEFAULT_PROMPT_TEMPLATE,
    ):
        if iterations < 1:
            raise ValueError("iterations must be >= 1")
        self.question = question
        self.gt = gt
        self.backend = backend
        self.iterations = iterations
        self.c_uct = c_uct
        self.expand_width = expand_width
        self.rollout_cap = rollout_cap
        self.seed = seed
        self.expand_temperature = expand_temperature
        self.rollout_temperature = rollout_temperature
        self.max_new_tokens = max_new_tokens
        self.prompt = render_prompt(question, prompt_template)
        self.root = TreeNode(prefix=())

    def context(self, node: TreeNode) -> str:
        return self.prompt + _render_steps(node.prefix)

    def _uct(self, parent: TreeNode, child: TreeNode) -> float:
        exploit = child.successes / child.visits
        explore = self.c_uct * math.sqrt(math.log(parent.visits) / child.visits)
        return exploit + explore

    def _expand(self, node: TreeNode) -> None:
        node.expanded = True
        if node.depth >= self.rollout_cap:
            node.terminal = True
            node.terminal_reason = "depth"
            return
        request = GenerationRequest(
            context=self.context(node),
            n=self.expand_width,
            temperature=self.expand_temperature,
            max_new_tokens=self.max_new_tokens,
            stop=EXPAND_STOPS,
            seed=derive_seed(self.seed, "expand", node.prefix),
        )
        seen: set[str] = set()
        for completion in generate(self.backend, request):
            text = completion.text.strip()
            if text.startswith("Step ") and ":" in text:
                text = text.split(":", 1)[1].strip()
            key = normalize_step_text(text)
            if not text or key in seen:
                continue
            seen.add(key)
            child = TreeNode(prefix=node.prefix + (text,), step_text=text)
            if extract_answer(text) is not None:
                child.terminal = True
                child.terminal_reason = "answer"
            node.children.append(child)
        if not node.children:
            node.terminal = True
            node.terminal_reason = "exhausted"

    def _evaluate(self, node: TreeNode) -> tuple[str, int]:
        """One rollout from the node; returns (full response text, score)."""
        if node.terminal and node.terminal_reason == "answer":
            text = _render_steps(node.prefix).rstrip("\n")
            answer = extract_answer(node.step_text or "")
            score = int(answer is not None and answers_match(answer, self.gt))
            return text, score
        if node.terminal and node.terminal_reason == "depth":
            return _render_steps(node.prefix).rstrip("\n"), 0
        request = GenerationRequest(
            context=self.context(node),
            n=1,
            temperature=self.rollout_temperature,
            max_new_tokens=self.max_new_tokens,
            seed=derive_seed(self.seed, "rollout", node.prefix, node.visits),
        )
        completion = generate(self.backend, request)[0]
        full = _render_steps(node.prefix) + completion.text
        if completion.finish_reason == "length":
            return full, 0
        answer = extract_answer(completion.text)
        score = int(answer is not None and answers_match(answer, self.gt))
        return full, score

    def run(self) -> TreeNode:
        for _ in range(self.iterations):
            path = [self.root]
            node = self.root
            while True:
                if node.terminal:
                    break
                if not node.expanded:
                    self._expand(node)
                    if node.terminal:
                        break
                unvisited = [c for c in node.children if c.visits == 0]
                if unvisited:
                    node = unvisited[0]
                    path.append(node)
                    break
                node = max(node.children, key=lambda c: self._uct(node, c))
                path.append(node)
            text, score = self._evaluate(node)
            for visited in path:
                visited.visits += 1
                visited.successes += score
                visited.evaluations.append((text, score))
        return self.root


def search(
    question: str,
    gt: str,
    backend: Backend,
    iterations: int,
    c_uct: float = math.sqrt(2),
    expand_width: int = 4,
    rollout_cap: int = 12,
    seed: int = 0,
    **kwargs,
) -> TreeNode:
    """Run MCTS over step continuations; returns the search tree's root."""
    return Search(
        question,
        gt,
        backend,
        iterations,
        c_uct=c_uct,
        expand_width=expand_width,
        rollout_cap=rollout_cap,
        seed=seed,
        **kwargs,
    ).run()


def extract_pairs(root: TreeNode, min_visits: int = 4) -> list[StepPair]:
    """All (wrong, correct) sibling pairs in the tree.

    A wrong node has zero successes over at least min_visits visits; a
    correct sibling has positive successes. Pairs share the parent prefix.
    """
    pairs: list[StepPair] = []
    for node in root.walk():
        wrongs = [
            c for c in node.children if c.successes == 0 and c.visits >= min_visits
        ]
        corrects = [c for c in node.children if c.successes > 0]
        for wrong in wrongs:
            failure = wrong.first_evaluation(0)
            for correct in corrects:
                success = correct.first_evaluation(1)
                if failure is None or success is None:
                    continue
                pairs.append(
                    StepPair(
                        prefix=node.prefix,
                        wrong_text=wrong.step_text or "",
                        correct_text=correct.step_text or "",
                        wrong_visits=wrong.visits,
                        correct_visits=correct.visits,
                        correct_successes=correct.successes,
                        wrong_rollout=failure,
                        correct_rollout=success,
                    )
                )
    return pairs


def pair_to_record(
    pair: StepPair, question_id: str, question: str, uid: str | None = None
) -> tuple[StepwiseSample, WrongStepRecord]:
    """Convert a step pair into a sample + record for step-level assembly.

    The synthesized sample's solution is the stored successful rollout
    through the correct sibling; the record inserts the wrong sibling at
    the same position, so downstream handling matches sampler records.
    """
    try:
        steps, answer = parse_response(pair.correct_rollout)
    except Exception as exc:
        raise MissingRollout(
            f"stored successful rollout is not step-formatted: {exc}"
        ) from exc
    insertion = len(pair.prefix) + 1
    sample = StepwiseSample(
        id=uid or f"{question_id}.m{insertion}",
        question=question,
        steps=tuple(steps),
        final_answer=answer,
    )
    # a correct sibling that ends the solution keeps the marker in its step
    # text; the parsed body stops before it
    correct_body = pair.correct_text.split(ANSWER_MARKER)[0].strip()
    if normalize_step_text(sample.step_body(insertion)) != normalize_step_text(correct_body):
        raise ValueError("correct sibling does not align with the stored rollout")
    record = WrongStepRecord(
        sample_id=sample.id,
        insertion_index=insertion,
        wrong_text=pair.wrong_text,
        gold_text=sample.step_body(insertion),
        match_count=0,
        k=pair.wrong_visits,
        wrong_rollout=pair.wrong_rollout,
    )
    return sample, record
