"""Culturally adaptive translation as a four-agent pipeline with a bounded revision loop."""
from .config import ConfigError, load_config, validate_config
from .domain import (
    AgentSpec,
    Annotation,
    CrewConfig,
    CulturalAdaptation,
    EvaluationReport,
    Issue,
    RawTranslation,
    Role,
    RunStatus,
    SearchEvidence,
    SynthesizedText,
    Transcript,
    TranslationJob,
    digest_config,
)
from .orchestrator import downstream_of, route_revision, run_pipeline
from .parsing import ParseFailure, parse_stage_output
from .transcript import diff, read_transcript, replay, write_transcript

__version__ = "0.1.0"

__all__ = [
    "AgentSpec",
    "Annotation",
    "ConfigError",
    "CrewConfig",
    "CulturalAdaptation",
    "EvaluationReport",
    "Issue",
    "ParseFailure",
    "RawTranslation",
    "Role",
    "RunStatus",
    "SearchEvidence",
    "SynthesizedText",
    "Transcript",
    "TranslationJob",
    "diff",
    "digest_config",
    "downstream_of",
    "load_config",
    "parse_stage_output",
    "read_transcript",
    "replay",
    "route_revision",
    "run_pipeline",
    "validate_config",
    "write_transcript",
]
