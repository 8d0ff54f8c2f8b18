"""Value types shared by every stage of the pipeline.

All types are frozen dataclasses that validate their invariants in
``__post_init__``; a value that exists is a valid value. Each type has a
``to_dict``/``from_dict`` pair producing plain JSON-compatible data.
"""
from __future__ import annotations

import enum
import hashlib
import json
import unicodedata
import uuid
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from datetime import datetime, timezone
from itertools import pairwise
from pathlib import Path
from string import Formatter
from types import MappingProxyType
from typing import Any

MAX_REVISIONS_CAP = 16
DEFAULT_MAX_REVISIONS = 3
DEFAULT_MAX_DELEGATIONS = 1
DEFAULT_TEMPERATURE = 0.3
DEFAULT_MAX_TOKENS = 1024
DEFAULT_TIMEOUT_MS = 120_000
DEFAULT_TTL_SECONDS = 3600
DEFAULT_MAX_RESULTS = 5
DEFAULT_SEARCH_ENDPOINT = "https://lite.duckduckgo.com/lite/"

PLACEHOLDERS = frozenset(
    {
        "source_text",
        "source_lang",
        "target_lang",
        "cultural_domain",
        "upstream_translation",
        "upstream_adaptation",
        "upstream_final",
        "feedback",
        "evidence",
    }
)


class DomainError(ValueError):
    """A value violates one of its type invariants."""


class Role(str, enum.Enum):
    TRANSLATION = "translation"
    INTERPRETATION = "interpretation"
    SYNTHESIS = "synthesis"
    EVALUATION = "evaluation"


PIPELINE_ORDER = (Role.TRANSLATION, Role.INTERPRETATION, Role.SYNTHESIS, Role.EVALUATION)
RESPONSIBLE_ROLES = (Role.TRANSLATION, Role.INTERPRETATION, Role.SYNTHESIS)
DELEGATING_ROLES = frozenset({Role.TRANSLATION, Role.INTERPRETATION})


class CulturalDomain(str, enum.Enum):
    FESTIVAL = "festival"
    RELIGION = "religion"
    HISTORY = "history"
    GENERAL = "general"


class Decision(str, enum.Enum):
    PRESERVE = "preserve"
    ADAPT = "adapt"
    TRANSLITERATE_WITH_CLARIFIER = "transliterate_with_clarifier"


class Verdict(str, enum.Enum):
    ACCEPT = "accept"
    REVISE = "revise"


class Category(str, enum.Enum):
    GRAMMAR = "grammar"
    CULTURAL_INACCURACY = "cultural_inaccuracy"
    BIAS = "bias"
    FACTUAL = "factual"
    COHERENCE = "coherence"


class Severity(str, enum.Enum):
    MINOR = "minor"
    BLOCKING = "blocking"


class Origin(str, enum.Enum):
    LIVE = "live"
    FIXTURE = "fixture"
    CACHE = "cache"


class RunStatus(str, enum.Enum):
    ACCEPTED = "accepted"
    MAX_REVISIONS_EXCEEDED = "max_revisions_exceeded"
    FAILED = "failed"


class EventKind(str, enum.Enum):
    STAGE_STARTED = "stage_started"
    LLM_REQUEST = "llm_request"
    LLM_RESPONSE = "llm_response"
    TOOL_CALL = "tool_call"
    TOOL_RESULT = "tool_result"
    DELEGATION_REQUESTED = "delegation_requested"
    DELEGATION_ANSWERED = "delegation_answered"
    REVISION_TRIGGERED = "revision_triggered"
    STAGE_COMPLETED = "stage_completed"
    PARSE_RETRY = "parse_retry"


class BackendKind(str, enum.Enum):
    HTTP = "http"
    SCRIPTED = "scripted"


class SearchMode(str, enum.Enum):
    LIVE = "live"
    FIXTURE = "fixture"
    DISABLED = "disabled"


def nfc(text: str) -> str:
    return unicodedata.normalize("NFC", text)


def utcnow() -> datetime:
    return datetime.now(timezone.utc)


def _as_utc(value: datetime | str) -> datetime:
    if isinstance(value, str):
        value = datetime.fromisoformat(value)
    if value.tzinfo is None:
        raise DomainError("timestamp must be timezone-aware (UTC)")
    return value.astimezone(timezone.utc)


def _enum(cls: type[enum.Enum], value: Any, what: str) -> Any:
    try:
        return cls(value)
    except ValueError:
        allowed = ", ".join(m.value for m in cls)
        raise DomainError(f"{what}: {value!r} is not one of {{{allowed}}}") from None


def _text(value: Any, what: str, *, nonempty: bool = False) -> str:
    if not isinstance(value, str):
        raise DomainError(f"{what} must be text, got {type(value).__name__}")
    value = nfc(value)
    if nonempty and not value.strip():
        raise DomainError(f"{what} must be nonempty")
    return value


def freeze(obj: Any) -> Any:
    """Recursively convert dicts/lists into read-only mappings/tuples."""
    if isinstance(obj, Mapping):
        return MappingProxyType({str(k): freeze(v) for k, v in obj.items()})
    if isinstance(obj, (list, tuple)):
        return tuple(freeze(v) for v in obj)
    return obj


def thaw(obj: Any) -> Any:
    """Inverse of :func:`freeze`; yields plain JSON-compatible data."""
    if isinstance(obj, Mapping):
        return {k: thaw(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [thaw(v) for v in obj]
    if isinstance(obj, enum.Enum):
        return obj.value
    return obj


# ---------------------------------------------------------------------------
# Job


@dataclass(frozen=True)
class TranslationJob:
    source_text: str
    source_lang: str
    target_lang: str
    cultural_domain: CulturalDomain = CulturalDomain.GENERAL
    job_id: str = field(default_factory=lambda: uuid.uuid4().hex)
    created_at: datetime = field(default_factory=utcnow)

    def __post_init__(self) -> None:
        object.__setattr__(self, "source_text", _text(self.source_text, "source_text", nonempty=True))
        for name in ("source_lang", "target_lang"):
            tag = _text(getattr(self, name), name, nonempty=True).strip()
            object.__setattr__(self, name, tag)
        if self.source_lang.lower() == self.target_lang.lower():
            raise DomainError("source_lang and target_lang must differ")
        object.__setattr__(
            self, "cultural_domain", _enum(CulturalDomain, self.cultural_domain, "cultural_domain")
        )
        object.__setattr__(self, "job_id", _text(self.job_id, "job_id", nonempty=True))
        object.__setattr__(self, "created_at", _as_utc(self.created_at))

    def to_dict(self) -> dict[str, Any]:
        return {
            "job_id": self.job_id,
            "source_text": self.source_text,
            "source_lang": self.source_lang,
            "target_lang": self.target_lang,
            "cultural_domain": self.cultural_domain.value,
            "created_at": self.created_at.isoformat(),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> TranslationJob:
        return cls(
            source_text=data["source_text"],
            source_lang=data["source_lang"],
            target_lang=data["target_lang"],
            cultural_domain=data.get("cultural_domain", CulturalDomain.GENERAL),
            job_id=data["job_id"],
            created_at=data["created_at"],
        )


# ---------------------------------------------------------------------------
# Stage artifacts


@dataclass(frozen=True)
class Annotation:
    source_span: str
    decision: Decision
    replacement: str | None = None
    rationale: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "source_span", _text(self.source_span, "source_span", nonempty=True))
        object.__setattr__(self, "decision", _enum(Decision, self.decision, "decision"))
        object.__setattr__(self, "rationale", _text(self.rationale, "rationale"))
        if self.decision is Decision.PRESERVE:
            if self.replacement is not None:
                raise DomainError(f"preserve annotation for {self.source_span!r} must not carry a replacement")
        else:
            if self.replacement is None:
                raise DomainError(
                    f"{self.decision.value} annotation for {self.source_span!r} requires a replacement"
                )
            object.__setattr__(
                self, "replacement", _text(self.replacement, "replacement", nonempty=True)
            )

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"source_span": self.source_span, "decision": self.decision.value}
        if self.replacement is not None:
            out["replacement"] = self.replacement
        out["rationale"] = self.rationale
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> Annotation:
        return cls(
            source_span=data["source_span"],
            decision=data["decision"],
            replacement=data.get("replacement"),
            rationale=data.get("rationale", ""),
        )


def _annotations(items: Iterable[Any]) -> tuple[Annotation, ...]:
    return tuple(a if isinstance(a, Annotation) else Annotation.from_dict(a) for a in items)


@dataclass(frozen=True)
class RawTranslation:
    translated_text: str
    notes: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "translated_text", _text(self.translated_text, "translated_text", nonempty=True)
        )
        if self.notes is not None:
            object.__setattr__(self, "notes", _text(self.notes, "notes"))

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"translated_text": self.translated_text}
        if self.notes is not None:
            out["notes"] = self.notes
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> RawTranslation:
        return cls(translated_text=data["translated_text"], notes=data.get("notes"))


@dataclass(frozen=True)
class CulturalAdaptation:
    adapted_text: str
    annotations: tuple[Annotation, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "adapted_text", _text(self.adapted_text, "adapted_text", nonempty=True))
        object.__setattr__(self, "annotations", _annotations(self.annotations))

    def check_spans(self, annotated: Sequence[str]) -> None:
        """Raise unless every annotation span occurs in one of ``annotated``.

        ``annotated`` is the text this adaptation was produced from: the
        job's source text and the upstream raw translation.
        """
        for ann in self.annotations:
            if not any(ann.source_span in text for text in annotated):
                raise DomainError(
                    f"annotation span {ann.source_span!r} does not occur in the annotated input"
                )

    def preserved_terms(self) -> tuple[str, ...]:
        return tuple(a.source_span for a in self.annotations if a.decision is Decision.PRESERVE)

    def to_dict(self) -> dict[str, Any]:
        return {
            "adapted_text": self.adapted_text,
            "annotations": [a.to_dict() for a in self.annotations],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> CulturalAdaptation:
        return cls(adapted_text=data["adapted_text"], annotations=data.get("annotations", ()))


@dataclass(frozen=True)
class SynthesizedText:
    final_text: str
    applied_annotations: tuple[Annotation, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "final_text", _text(self.final_text, "final_text", nonempty=True))
        object.__setattr__(self, "applied_annotations", _annotations(self.applied_annotations))
        missing = missing_preserved_terms(self.final_text, self.applied_annotations)
        if missing:
            raise DomainError(f"preserved term(s) missing from final_text: {', '.join(missing)}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "final_text": self.final_text,
            "applied_annotations": [a.to_dict() for a in self.applied_annotations],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> SynthesizedText:
        return cls(final_text=data["final_text"], applied_annotations=data.get("applied_annotations", ()))


def missing_preserved_terms(text: str, annotations: Iterable[Annotation]) -> list[str]:
    """Spans marked ``preserve`` that do not occur verbatim in ``text``."""
    return [
        a.source_span
        for a in annotations
        if a.decision is Decision.PRESERVE and a.source_span not in text
    ]


@dataclass(frozen=True)
class SearchResult:
    title: str
    snippet: str
    url: str

    def __post_init__(self) -> None:
        for name in ("title", "snippet", "url"):
            object.__setattr__(self, name, _text(getattr(self, name), name))

    def to_dict(self) -> dict[str, str]:
        return {"title": self.title, "snippet": self.snippet, "url": self.url}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> SearchResult:
        return cls(title=data.get("title", ""), snippet=data.get("snippet", ""), url=data.get("url", ""))


@dataclass(frozen=True)
class SearchEvidence:
    query: str
    results: tuple[SearchResult, ...]
    fetched_at: datetime
    origin: Origin

    def __post_init__(self) -> None:
        object.__setattr__(self, "query", _text(self.query, "query", nonempty=True))
        object.__setattr__(
            self,
            "results",
            tuple(r if isinstance(r, SearchResult) else SearchResult.from_dict(r) for r in self.results),
        )
        object.__setattr__(self, "fetched_at", _as_utc(self.fetched_at))
        object.__setattr__(self, "origin", _enum(Origin, self.origin, "origin"))

    def to_dict(self) -> dict[str, Any]:
        return {
            "query": self.query,
            "results": [r.to_dict() for r in self.results],
            "fetched_at": self.fetched_at.isoformat(),
            "origin": self.origin.value,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> SearchEvidence:
        return cls(
            query=data["query"],
            results=data.get("results", ()),
            fetched_at=data["fetched_at"],
            origin=data["origin"],
        )


@dataclass(frozen=True)
class Issue:
    category: Category
    severity: Severity
    responsible: Role
    description: str
    evidence_refs: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "category", _enum(Category, self.category, "category"))
        object.__setattr__(self, "severity", _enum(Severity, self.severity, "severity"))
        responsible = _enum(Role, self.responsible, "responsible")
        if responsible not in RESPONSIBLE_ROLES:
            raise DomainError("responsible must be translation, interpretation or synthesis")
        object.__setattr__(self, "responsible", responsible)
        object.__setattr__(self, "description", _text(self.description, "description", nonempty=True))
        refs = tuple(self.evidence_refs)
        if not all(isinstance(r, int) and not isinstance(r, bool) for r in refs):
            raise DomainError("evidence_refs must be integers")
        object.__setattr__(self, "evidence_refs", refs)

    @property
    def blocking(self) -> bool:
        return self.severity is Severity.BLOCKING

    def to_dict(self) -> dict[str, Any]:
        return {
            "category": self.category.value,
            "severity": self.severity.value,
            "responsible": self.responsible.value,
            "description": self.description,
            "evidence_refs": list(self.evidence_refs),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> Issue:
        return cls(
            category=data["category"],
            severity=data["severity"],
            responsible=data["responsible"],
            description=data["description"],
            evidence_refs=tuple(data.get("evidence_refs", ())),
        )


@dataclass(frozen=True)
class EvaluationReport:
    verdict: Verdict
    issues: tuple[Issue, ...] = ()
    evidence: tuple[SearchEvidence, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "verdict", _enum(Verdict, self.verdict, "verdict"))
        object.__setattr__(
            self, "issues", tuple(i if isinstance(i, Issue) else Issue.from_dict(i) for i in self.issues)
        )
        object.__setattr__(
            self,
            "evidence",
            tuple(e if isinstance(e, SearchEvidence) else SearchEvidence.from_dict(e) for e in self.evidence),
        )
        if self.verdict is Verdict.REVISE and not self.issues:
            raise DomainError("a revise verdict requires at least one issue")
        if self.verdict is Verdict.ACCEPT and any(i.blocking for i in self.issues):
            raise DomainError("an accept verdict cannot carry blocking issues")
        for n, issue in enumerate(self.issues):
            for ref in issue.evidence_refs:
                if not 0 <= ref < len(self.evidence):
                    raise DomainError(f"issues[{n}].evidence_refs: index {ref} out of range")

    @property
    def blocking_issues(self) -> tuple[Issue, ...]:
        return tuple(i for i in self.issues if i.blocking)

    def to_dict(self) -> dict[str, Any]:
        return {
            "verdict": self.verdict.value,
            "issues": [i.to_dict() for i in self.issues],
            "evidence": [e.to_dict() for e in self.evidence],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> EvaluationReport:
        return cls(verdict=data["verdict"], issues=data.get("issues", ()), evidence=data.get("evidence", ()))


ARTIFACT_TYPES: dict[Role, type] = {
    Role.TRANSLATION: RawTranslation,
    Role.INTERPRETATION: CulturalAdaptation,
    Role.SYNTHESIS: SynthesizedText,
    Role.EVALUATION: EvaluationReport,
}


# ---------------------------------------------------------------------------
# Configuration


@dataclass(frozen=True)
class ModelParams:
    temperature: float = DEFAULT_TEMPERATURE
    max_tokens: int = DEFAULT_MAX_TOKENS

    def __post_init__(self) -> None:
        if isinstance(self.temperature, bool) or not isinstance(self.temperature, (int, float)):
            raise DomainError("temperature must be a number")
        if not 0 <= self.temperature <= 2:
            raise DomainError("temperature must be within [0, 2]")
        object.__setattr__(self, "temperature", float(self.temperature))
        if isinstance(self.max_tokens, bool) or not isinstance(self.max_tokens, int) or self.max_tokens <= 0:
            raise DomainError("max_tokens must be a positive integer")

    def to_dict(self) -> dict[str, Any]:
        return {"temperature": self.temperature, "max_tokens": self.max_tokens}


def template_fields(template: str) -> list[str]:
    """Names referenced by ``{placeholder}`` fields in ``template``.

    Raises DomainError for malformed templates (unbalanced braces).
    """
    try:
        return [name for _, name, _, _ in Formatter().parse(template) if name is not None]
    except ValueError as exc:
        raise DomainError(f"malformed template: {exc}") from None


def unknown_placeholders(template: str) -> list[str]:
    return [name for name in template_fields(template) if name not in PLACEHOLDERS]


@dataclass(frozen=True)
class AgentSpec:
    role: Role
    goal: str
    backstory: str
    allow_delegation: bool
    prompt_template: str
    model_params: ModelParams = field(default_factory=ModelParams)

    def __post_init__(self) -> None:
        object.__setattr__(self, "role", _enum(Role, self.role, "role"))
        object.__setattr__(self, "goal", _text(self.goal, "goal", nonempty=True))
        object.__setattr__(self, "backstory", _text(self.backstory, "backstory"))
        if not isinstance(self.allow_delegation, bool):
            raise DomainError("allow_delegation must be a boolean")
        if self.allow_delegation and self.role not in DELEGATING_ROLES:
            raise DomainError(f"{self.role.value} agent must not allow delegation")
        object.__setattr__(
            self, "prompt_template", _text(self.prompt_template, "prompt_template", nonempty=True)
        )
        bad = unknown_placeholders(self.prompt_template)
        if bad:
            raise DomainError(f"unknown placeholder(s): {', '.join(bad)}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "role": self.role.value,
            "goal": self.goal,
            "backstory": self.backstory,
            "allow_delegation": self.allow_delegation,
            "prompt_template": self.prompt_template,
            "model_params": self.model_params.to_dict(),
        }


@dataclass(frozen=True)
class BackendConfig:
    kind: BackendKind
    base_url: str | None = None
    model: str | None = None
    timeout_ms: int = DEFAULT_TIMEOUT_MS
    script: Mapping[str, str] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", _enum(BackendKind, self.kind, "kind"))
        if isinstance(self.timeout_ms, bool) or not isinstance(self.timeout_ms, int) or self.timeout_ms <= 0:
            raise DomainError("timeout_ms must be a positive integer")
        if self.kind is BackendKind.HTTP:
            if not self.base_url:
                raise DomainError("http backend requires base_url")
            if not self.model:
                raise DomainError("http backend requires model")
        elif self.script is None:
            raise DomainError("scripted backend requires script")
        if self.script is not None:
            script = {str(k): _text(v, f"script[{k}]") for k, v in self.script.items()}
            object.__setattr__(self, "script", MappingProxyType(script))

    @property
    def model_name(self) -> str:
        return self.model or "scripted"

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"kind": self.kind.value, "timeout_ms": self.timeout_ms}
        if self.base_url is not None:
            out["base_url"] = self.base_url
        if self.model is not None:
            out["model"] = self.model
        if self.script is not None:
            out["script"] = dict(self.script)
        return out


@dataclass(frozen=True)
class SearchConfig:
    mode: SearchMode = SearchMode.DISABLED
    fixture_dir: str | None = None
    ttl_seconds: int = DEFAULT_TTL_SECONDS
    max_results: int = DEFAULT_MAX_RESULTS
    endpoint: str = DEFAULT_SEARCH_ENDPOINT
    # Directory that a relative fixture_dir is resolved against. Not part of
    # the config's identity, so digests stay portable across checkouts.
    base_dir: Path | None = field(default=None, compare=False, repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", _enum(SearchMode, self.mode, "mode"))
        for name in ("ttl_seconds", "max_results"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int) or value <= 0:
                raise DomainError(f"{name} must be a positive integer")
        if self.mode is SearchMode.FIXTURE:
            if not self.fixture_dir:
                raise DomainError("fixture mode requires fixture_dir")
            if not self.resolved_fixture_dir().is_dir():
                raise DomainError(f"fixture_dir {self.fixture_dir!r} does not exist")

    def resolved_fixture_dir(self) -> Path:
        path = Path(self.fixture_dir or ".")
        if not path.is_absolute() and self.base_dir is not None:
            path = Path(self.base_dir) / path
        return path

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "mode": self.mode.value,
            "ttl_seconds": self.ttl_seconds,
            "max_results": self.max_results,
            "endpoint": self.endpoint,
        }
        if self.fixture_dir is not None:
            out["fixture_dir"] = self.fixture_dir
        return out


@dataclass(frozen=True)
class CrewConfig:
    agents: Mapping[Role, AgentSpec]
    backend: BackendConfig
    search: SearchConfig = field(default_factory=SearchConfig)
    max_revisions: int = DEFAULT_MAX_REVISIONS
    max_delegations_per_stage: int = DEFAULT_MAX_DELEGATIONS

    def __post_init__(self) -> None:
        agents = {Role(k): v for k, v in self.agents.items()}
        missing = [r.value for r in PIPELINE_ORDER if r not in agents]
        if missing:
            raise DomainError(f"missing agent(s): {', '.join(missing)}")
        for role, spec in agents.items():
            if spec.role is not role:
                raise DomainError(f"agents.{role.value} declares role {spec.role.value}")
        object.__setattr__(self, "agents", MappingProxyType(agents))
        for name, cap in (("max_revisions", MAX_REVISIONS_CAP), ("max_delegations_per_stage", None)):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int) or value < 0:
                raise DomainError(f"{name} must be a non-negative integer")
            if cap is not None and value > cap:
                raise DomainError(f"{name} must be <= {cap}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "agents": {r.value: self.agents[r].to_dict() for r in PIPELINE_ORDER},
            "max_revisions": self.max_revisions,
            "max_delegations_per_stage": self.max_delegations_per_stage,
            "backend": self.backend.to_dict(),
            "search": self.search.to_dict(),
        }


def canonical_json(data: Any) -> str:
    """Key-sorted, whitespace-free JSON used for hashing."""
    return json.dumps(thaw(data), sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def digest_config(config: CrewConfig) -> str:
    """SHA-256 hex digest of the canonical encoding of ``config``."""
    return hashlib.sha256(canonical_json(config.to_dict()).encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# Transcript


@dataclass(frozen=True)
class Event:
    seq: int
    kind: EventKind
    stage: Role | None
    payload: Mapping[str, Any]
    at: datetime

    def __post_init__(self) -> None:
        if isinstance(self.seq, bool) or not isinstance(self.seq, int) or self.seq < 1:
            raise DomainError("seq must be a positive integer")
        object.__setattr__(self, "kind", _enum(EventKind, self.kind, "kind"))
        if self.stage is not None:
            object.__setattr__(self, "stage", _enum(Role, self.stage, "stage"))
        object.__setattr__(self, "payload", freeze(dict(self.payload)))
        object.__setattr__(self, "at", _as_utc(self.at))

    def to_dict(self) -> dict[str, Any]:
        return {
            "seq": self.seq,
            "kind": self.kind.value,
            "stage": self.stage.value if self.stage is not None else None,
            "payload": thaw(self.payload),
            "at": self.at.isoformat(),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> Event:
        return cls(
            seq=data["seq"], kind=data["kind"], stage=data.get("stage"), payload=data.get("payload", {}), at=data["at"]
        )


@dataclass(frozen=True)
class StageFailure:
    stage: Role
    cause: str

    def to_dict(self) -> dict[str, Any]:
        return {"stage": self.stage.value, "cause": self.cause}


@dataclass(frozen=True)
class FinalRecord:
    status: RunStatus
    output: SynthesizedText | None = None
    report: EvaluationReport | None = None
    failure: StageFailure | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "status", _enum(RunStatus, self.status, "status"))
        if self.status is RunStatus.ACCEPTED and self.output is None:
            raise DomainError("an accepted run must carry its output")

    def to_dict(self) -> dict[str, Any]:
        return {
            "status": self.status.value,
            "output": self.output.to_dict() if self.output is not None else None,
            "report": self.report.to_dict() if self.report is not None else None,
            "failure": self.failure.to_dict() if self.failure is not None else None,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> FinalRecord:
        failure = data.get("failure")
        return cls(
            status=data["status"],
            output=SynthesizedText.from_dict(data["output"]) if data.get("output") else None,
            report=EvaluationReport.from_dict(data["report"]) if data.get("report") else None,
            failure=StageFailure(Role(failure["stage"]), failure["cause"]) if failure else None,
        )


@dataclass(frozen=True)
class Transcript:
    job: TranslationJob
    config_digest: str
    events: tuple[Event, ...] = ()
    final: FinalRecord | None = None

    def __post_init__(self) -> None:
        events = tuple(self.events)
        for prev, cur in pairwise(events):
            if cur.seq <= prev.seq:
                raise DomainError(f"event seq {cur.seq} does not follow {prev.seq}")
        object.__setattr__(self, "events", events)
        if len(self.config_digest) != 64:
            raise DomainError("config_digest must be a 64-character hex digest")

    @property
    def finalized(self) -> bool:
        return self.final is not None

    def stage_trace(self) -> list[Role]:
        return [e.stage for e in self.events if e.kind is EventKind.STAGE_STARTED and e.stage is not None]

    @property
    def revision_count(self) -> int:
        return sum(1 for e in self.events if e.kind is EventKind.REVISION_TRIGGERED)

    def to_dict(self) -> dict[str, Any]:
        return {
            "job": self.job.to_dict(),
            "config_digest": self.config_digest,
            "events": [e.to_dict() for e in self.events],
            "final": self.final.to_dict() if self.final is not None else None,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> Transcript:
        return cls(
            job=TranslationJob.from_dict(data["job"]),
            config_digest=data["config_digest"],
            events=tuple(Event.from_dict(e) for e in data.get("events", ())),
            final=FinalRecord.from_dict(data["final"]) if data.get("final") else None,
        )
