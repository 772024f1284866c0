"""Few-shot prompt rendering, step segmentation, and terminal detection.

Prompt templates are data files: a YAML front-matter header (role, task,
shot counts, stop strings, stems) followed by exemplar blocks and a final
question block with ``{{question}}`` and ``{{chain}}`` placeholders.
Rendering is pure string substitution, byte-stable for caching.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Protocol, Sequence, runtime_checkable

import yaml

from .backends.base import StopRules
from .core import Question, TaskKind
from .exceptions import ContractViolation

__all__ = [
    "PromptRole",
    "PromptTemplate",
    "StepSegmenter",
    "load_template",
    "load_builtin_template",
    "builtin_tasks",
    "render_generation_prompt",
    "render_eval_prompt",
    "detect_terminal",
    "PromptProvider",
    "FewShotPrompts",
    "RawChainPrompts",
    "SHOT_COUNTS",
]


class PromptRole(str, Enum):
    GENERATION = "generation"
    EVALUATION = "evaluation"


# Declared (generation, evaluation) shot counts per built-in task.
SHOT_COUNTS: dict[str, tuple[int, int]] = {
    "gsm8k_cot": (8, 5),
    "gsm8k_pal": (9, 5),
    "aqua_pal": (8, 5),
    "svamp_asdiv_pal": (7, 5),
    "tabmwp_pal": (4, 5),
    "date_pal": (6, 3),
    "object_pal": (4, 1),
    "csqa_cot": (7, 3),
    "strategyqa_cot": (6, 4),
    "sports_cot": (8, 2),
}

_FRONT_MATTER = re.compile(r"\A---\n(.*?)\n---\n", re.DOTALL)
_TERMINAL_FREE_TEXT = re.compile(r"\bso the answer is\b", re.IGNORECASE)
# a return statement at function-body indentation (one level deep at most)
_TERMINAL_PROGRAM = re.compile(r"^(?: {0,4}|\t)return\b")
_SENTENCE_SPLIT = re.compile(r"(?<=[.!?])\s+(?=[A-Z0-9(\"'])")


@dataclass(frozen=True, slots=True)
class PromptTemplate:
    """A few-shot prompt layout for one (task, role) pair."""

    role: PromptRole
    task: str
    task_kind: TaskKind
    shots: int
    exemplars: tuple[str, ...]
    question_header: str
    step_separator: str = "\n"
    stop_strings: tuple[str, ...] = ("\n",)
    max_tokens_per_step: int = 128
    eval_stem: str = ""
    option_labels: tuple[str, str] = ("A", "B")
    option_close: str = ")"

    def __post_init__(self) -> None:
        if self.role == PromptRole.EVALUATION and not self.eval_stem:
            raise ContractViolation("evaluation templates must define an eval_stem")
        if "{{question}}" not in self.question_header:
            raise ContractViolation("question_header must contain the {{question}} placeholder")

    def stop_rules(self) -> StopRules:
        return StopRules(stop_strings=self.stop_strings, max_tokens_per_step=self.max_tokens_per_step)

    def stem_for(self, step_text: str) -> str:
        """Unanswered stem; ends exactly before the option letter."""
        return self.eval_stem.replace("{{step}}", step_text)

    def answered_stem(self, step_text: str, label: str | None = None) -> str:
        """The stem with an option filled in, as used for prior steps."""
        chosen = label if label is not None else self.option_labels[0]
        return self.stem_for(step_text) + chosen + self.option_close


def _parse_template_text(text: str, source: str) -> PromptTemplate:
    match = _FRONT_MATTER.match(text)
    if match is None:
        raise ContractViolation(f"{source}: missing YAML front-matter header")
    meta = yaml.safe_load(match.group(1)) or {}
    body = text[match.end():].rstrip("\n")
    if not body.endswith("{{chain}}"):
        raise ContractViolation(f"{source}: template body must end with the {{{{chain}}}} placeholder")
    preamble = body[: -len("{{chain}}")]
    # the final question block is everything after the last blank line
    blocks = [b for b in preamble.split("\n\n") if b.strip()]
    if not blocks:
        raise ContractViolation(f"{source}: template has no question block")
    question_header = blocks[-1].rstrip("\n")
    exemplars = tuple(blocks[:-1])
    try:
        role = PromptRole(meta["role"])
        task = str(meta["task"])
        task_kind = TaskKind(meta["task_kind"])
        shots = int(meta["shots"])
    except KeyError as exc:
        raise ContractViolation(f"{source}: front matter missing field {exc}") from None
    return PromptTemplate(
        role=role,
        task=task,
        task_kind=task_kind,
        shots=shots,
        exemplars=exemplars,
        question_header=question_header,
        step_separator=meta.get("step_separator", "\n"),
        stop_strings=tuple(meta.get("stop_strings", ["\n"])),
        max_tokens_per_step=int(meta.get("max_tokens_per_step", 128)),
        eval_stem=meta.get("eval_stem", ""),
        option_labels=tuple(meta.get("option_labels", ["A", "B"])),
        option_close=meta.get("option_close", ")"),
    )


def load_template(path: str | Path, strict_shots: bool = False) -> PromptTemplate:
    """Load a template file.

    With ``strict_shots`` the number of exemplar blocks must equal the
    declared shot count; the bundled templates ship one exemplar per task
    as a format reference, so the check is opt-in.
    """
    path = Path(path)
    template = _parse_template_text(path.read_text(encoding="utf-8"), str(path))
    if strict_shots and len(template.exemplars) != template.shots:
        raise ContractViolation(
            f"{path}: declares {template.shots} shots but carries {len(template.exemplars)} exemplars"
        )
    return template


def builtin_tasks() -> list[str]:
    return sorted(SHOT_COUNTS)


def load_builtin_template(task: str, role: PromptRole) -> PromptTemplate:
    """Load one of the bundled task templates."""
    if task not in SHOT_COUNTS:
        raise ContractViolation(f"unknown task {task!r}; available: {builtin_tasks()}")
    name = f"{task}.{role.value}.txt"
    ref = resources.files("evalbeam.templates").joinpath(name)
    template = _parse_template_text(ref.read_text(encoding="utf-8"), name)
    return template


def render_generation_prompt(template: PromptTemplate, question: Question, prefix: str) -> str:
    """Exemplars, the question block, then the chain prefix, ending exactly
    where the next step should begin."""
    if template.role != PromptRole.GENERATION:
        raise ContractViolation(f"expected a generation template, got role {template.role.value}")
    chain = prefix + template.step_separator if prefix else ""
    parts = list(template.exemplars)
    parts.append(template.question_header.replace("{{question}}", question.text) + "\n" + chain)
    return "\n\n".join(parts)


def render_eval_prompt(template: PromptTemplate, question: Question, chain_steps: Sequence[str]) -> str:
    """Render the evaluation prompt for the newest step of a chain.

    Prior steps appear with their stems already answered with the first
    option (they were kept, so they are treated as correct); the newest
    step's stem terminates exactly before the option letter position so a
    one-token continuation is the option choice.
    """
    if template.role != PromptRole.EVALUATION:
        raise ContractViolation(f"expected an evaluation template, got role {template.role.value}")
    if not chain_steps:
        raise ContractViolation("evaluation requires a chain with at least one step")
    sep = template.step_separator
    blocks = [step + sep + template.answered_stem(step) for step in chain_steps[:-1]]
    blocks.append(chain_steps[-1] + sep + template.stem_for(chain_steps[-1]))
    chain = sep.join(blocks)
    parts = list(template.exemplars)
    parts.append(template.question_header.replace("{{question}}", question.text) + "\n" + chain)
    return "\n\n".join(parts)


def detect_terminal(step_text: str, task_kind: TaskKind) -> bool:
    """Whether a step closes its chain.

    Free-text chains end with an answer sentence; program chains end with
    a return statement at function-body level (a return nested inside a
    block is not the end of the program).
    """
    if task_kind == TaskKind.FREE_TEXT:
        return _TERMINAL_FREE_TEXT.search(step_text) is not None
    return _TERMINAL_PROGRAM.match(step_text) is not None


@dataclass(frozen=True, slots=True)
class StepSegmenter:
    """Splits raw model output back into steps.

    Program chains segment on newlines; free-text chains segment on
    newlines first and fall back to sentence boundaries when a single
    line carries several sentences.
    """

    task_kind: TaskKind
    stop_strings: tuple[str, ...] = ("\n",)
    sentence_terminators: str = ".!?"

    def segment(self, text: str) -> list[str]:
        lines = [line for line in text.split("\n") if line.strip()]
        if self.task_kind == TaskKind.PROGRAM_AIDED:
            return lines
        out: list[str] = []
        for line in lines:
            out.extend(s for s in _SENTENCE_SPLIT.split(line) if s.strip())
        return out


@runtime_checkable
class PromptProvider(Protocol):
    """Builds the generation/evaluation contexts the backends consume."""

    task_kind: TaskKind

    def generation_context(self, question: Question, prefix_steps: Sequence[str]) -> str: ...

    def evaluation_context(self, question: Question, chain_steps: Sequence[str]) -> str: ...

    def stop_rules(self) -> StopRules: ...


@dataclass(frozen=True)
class FewShotPrompts:
    """Prompt provider backed by a generation/evaluation template pair."""

    generation: PromptTemplate
    evaluation: PromptTemplate

    def __post_init__(self) -> None:
        if self.generation.role != PromptRole.GENERATION:
            raise ContractViolation("generation template has the wrong role")
        if self.evaluation.role != PromptRole.EVALUATION:
            raise ContractViolation("evaluation template has the wrong role")

    @property
    def task_kind(self) -> TaskKind:
        return self.generation.task_kind

    @classmethod
    def for_task(cls, task: str) -> "FewShotPrompts":
        return cls(
            generation=load_builtin_template(task, PromptRole.GENERATION),
            evaluation=load_builtin_template(task, PromptRole.EVALUATION),
        )

    def generation_context(self, question: Question, prefix_steps: Sequence[str]) -> str:
        prefix = self.generation.step_separator.join(prefix_steps)
        return render_generation_prompt(self.generation, question, prefix)

    def evaluation_context(self, question: Question, chain_steps: Sequence[str]) -> str:
        return render_eval_prompt(self.evaluation, question, chain_steps)

    def stop_rules(self) -> StopRules:
        return self.generation.stop_rules()


@dataclass(frozen=True)
class RawChainPrompts:
    """Pass-through provider: the context is the bare chain text.

    Pairs with the scripted backends, which resolve chains by walking
    their step tree rather than by reading a rendered prompt.
    """

    task_kind: TaskKind = TaskKind.FREE_TEXT
    separator: str = "\n"
    rules: StopRules = field(default_factory=StopRules)

    def generation_context(self, question: Question, prefix_steps: Sequence[str]) -> str:
        return self.separator.join(prefix_steps)

    def evaluation_context(self, question: Question, chain_steps: Sequence[str]) -> str:
        return self.separator.join(chain_steps)

    def stop_rules(self) -> StopRules:
        return self.rules
