"""Self-evaluation guided stochastic beam search for multi-step reasoning.

The decoder grows reasoning chains step by step, scoring each candidate
step with a blend of the generation model's own probability and a
self-evaluated correctness confidence, then prunes the beam by sampling
without replacement from a temperature-controlled softmax over chain
scores.  Scripted backends plus exact enumeration oracles make the whole
sampling machinery verifiable on finite search spaces.
"""

from .aggregate import (
    AnswerSet,
    AnswerSource,
    VoteResult,
    answer_distribution,
    canonicalize_answer,
    extract_answers,
    majority_vote,
    single_chain_answer,
)
from .backends import (
    HttpEvaluationBackend,
    HttpGenerationBackend,
    ResponseCache,
    ScriptedEvaluationBackend,
    ScriptedGenerationBackend,
    ScriptedSpace,
    ServerConfig,
    StopRules,
)
from .core import (
    BeamScoreDomain,
    CostLedger,
    DecodeConfig,
    Hypothesis,
    HypothesisStatus,
    Question,
    ReasoningStep,
    StepProbMode,
    StepScore,
    TaskKind,
    chain_prefix_text,
    extend_hypothesis,
)
from .engine import (
    BeamState,
    CandidateSet,
    DecodeResult,
    decay_temperature,
    exact_beam_distribution,
    exact_prune_distribution,
    expand,
    restriction_error_bound,
    prune,
    run_decode,
)
from .executor import ExecOutcome, ProgramExecutor, StubExecutor, SubprocessExecutor
from .harness import (
    RunReport,
    load_dataset,
    run_benchmark,
    scripted_setup,
    verify_sampling,
)
from .prompts import (
    FewShotPrompts,
    PromptRole,
    PromptTemplate,
    RawChainPrompts,
    StepSegmenter,
    detect_terminal,
    load_builtin_template,
    load_template,
    render_eval_prompt,
    render_generation_prompt,
)
from .scoring import ScoringPolicy, accumulate_chain_score, combine, step_generation_prob

__version__ = "0.1.0"
