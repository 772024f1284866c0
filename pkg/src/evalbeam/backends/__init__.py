"""Generation and evaluation model backends."""

from .base import EvaluationBackend, GenerationBackend, StopRules, derive_rng, stable_seed
from .http import (
    HttpEvaluationBackend,
    HttpGenerationBackend,
    ResponseCache,
    ServerConfig,
)
from .scripted import (
    ScriptedEdge,
    ScriptedEvaluationBackend,
    ScriptedGenerationBackend,
    ScriptedSpace,
    scripted_correctness,
    scripted_sample,
)

__all__ = [
    "EvaluationBackend",
    "GenerationBackend",
    "StopRules",
    "derive_rng",
    "stable_seed",
    "HttpEvaluationBackend",
    "HttpGenerationBackend",
    "ResponseCache",
    "ServerConfig",
    "ScriptedEdge",
    "ScriptedEvaluationBackend",
    "ScriptedGenerationBackend",
    "ScriptedSpace",
    "scripted_correctness",
    "scripted_sample",
]
