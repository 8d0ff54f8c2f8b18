"""The four agent stages: render a prompt, call the model, parse, retry.

Scripted-backend keys are ``<stage>:<revision_index>:<call_index>`` where
``call_index`` counts every model call made during one stage invocation,
including delegation sub-calls and retries.
"""
from __future__ import annotations

import logging
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, replace
from typing import Any

from .domain import (
    DELEGATING_ROLES,
    AgentSpec,
    CulturalAdaptation,
    CulturalDomain,
    Decision,
    DomainError,
    EvaluationReport,
    EventKind,
    Issue,
    RawTranslation,
    Role,
    SearchEvidence,
    SynthesizedText,
    TranslationJob,
    Verdict,
    missing_preserved_terms,
    template_fields,
)
from .gateway import Backend, ChatRequest, GatewayError, Message, ScriptMiss, chat
from .parsing import DelegationRequest, ParseFailure, StageArtifact, parse_stage_output
from .prompts import CORRECTIVE_INSTRUCTION, DELEGATION_CONTRACT, OUTPUT_CONTRACTS
from .search import SearchError, ToolDisabled, normalize_query

logger = logging.getLogger(__name__)

MAX_ATTEMPTS = 3
MAX_QUERIES = 3


class BadPlaceholder(Exception):
    def __init__(self, name: str):
        super().__init__(name)
        self.name = name


class StageFailed(Exception):
    def __init__(self, role: Role, cause: str):
        super().__init__(f"{role.value} stage failed: {cause}")
        self.role = role
        self.cause = cause


@dataclass(frozen=True)
class StageInput:
    """Everything a stage sees. Upstream artifacts depend on the role:
    interpretation needs ``translation``; synthesis needs ``translation`` and
    ``adaptation``; evaluation needs ``synthesized`` and ``adaptation``.
    """

    job: TranslationJob
    revision_index: int = 0
    revision_feedback: tuple[Issue, ...] | None = None
    translation: RawTranslation | None = None
    adaptation: CulturalAdaptation | None = None
    synthesized: SynthesizedText | None = None

    def __post_init__(self) -> None:
        if self.revision_index < 0:
            raise DomainError("revision_index must be non-negative")
        if self.revision_feedback is not None:
            object.__setattr__(self, "revision_feedback", tuple(self.revision_feedback))
        if (self.revision_feedback is not None) != (self.revision_index > 0):
            raise DomainError("revision_feedback is present exactly when revision_index > 0")

    def require(self, role: Role) -> None:
        needed = {
            Role.TRANSLATION: (),
            Role.INTERPRETATION: ("translation",),
            Role.SYNTHESIS: ("translation", "adaptation"),
            Role.EVALUATION: ("synthesized", "adaptation"),
        }[role]
        missing = [name for name in needed if getattr(self, name) is None]
        if missing:
            raise DomainError(f"{role.value} stage input lacks {', '.join(missing)}")


# ---------------------------------------------------------------------------
# Prompt rendering


def _render_adaptation(adaptation: CulturalAdaptation | None) -> str:
    if adaptation is None:
        return ""
    lines = [adaptation.adapted_text]
    if adaptation.annotations:
        lines.append("")
        lines.append("Annotations:")
        for a in adaptation.annotations:
            line = f"- [{a.decision.value}] {a.source_span}"
            if a.replacement is not None:
                line += f" -> {a.replacement}"
            if a.rationale:
                line += f" ({a.rationale})"
            lines.append(line)
    return "\n".join(lines)


def _render_feedback(issues: Sequence[Issue] | None) -> str:
    return "\n".join(
        f"- [{i.category.value}/{i.severity.value}] {i.description}" for i in issues or ()
    )


def render_evidence(evidence: Sequence[SearchEvidence] | None) -> str:
    if not evidence:
        return ""
    blocks = []
    for n, ev in enumerate(evidence):
        lines = [f"[{n}] query: {ev.query} (origin: {ev.origin.value})"]
        if not ev.results:
            lines.append("  (no results)")
        for r in ev.results:
            lines.append(f"  - {r.title}: {r.snippet} <{r.url}>")
        blocks.append("\n".join(lines))
    return "\n".join(blocks)


def placeholder_values(inp: StageInput, evidence: Sequence[SearchEvidence] | None = None) -> dict[str, str]:
    job = inp.job
    return {
        "source_text": job.source_text,
        "source_lang": job.source_lang,
        "target_lang": job.target_lang,
        "cultural_domain": job.cultural_domain.value,
        "upstream_translation": inp.translation.translated_text if inp.translation else "",
        "upstream_adaptation": _render_adaptation(inp.adaptation),
        "upstream_final": inp.synthesized.final_text if inp.synthesized else "",
        "feedback": _render_feedback(inp.revision_feedback),
        "evidence": render_evidence(evidence),
    }


def system_message(spec: AgentSpec) -> str:
    parts = [spec.goal]
    if spec.backstory:
        parts.append(spec.backstory)
    parts.append(OUTPUT_CONTRACTS[spec.role])
    if spec.allow_delegation:
        parts.append(DELEGATION_CONTRACT)
    return "\n\n".join(parts)


def render_prompt(
    spec: AgentSpec,
    inp: StageInput,
    evidence: Sequence[SearchEvidence] | None = None,
) -> tuple[Message, ...]:
    """System message (goal, backstory, output contract) plus the user prompt.

    Feedback and evidence sections are appended when the template does not
    place them itself.

    Raises:
        BadPlaceholder: the template names a field outside the placeholder set.
    """
    values = placeholder_values(inp, evidence)
    try:
        names = template_fields(spec.prompt_template)
    except DomainError:
        raise BadPlaceholder(spec.prompt_template) from None
    for name in names:
        if name not in values:
            raise BadPlaceholder(name)
    user = spec.prompt_template.format_map(values)
    if inp.revision_feedback and "feedback" not in names:
        user += "\n\nFeedback from the previous review (fix these):\n" + values["feedback"]
    if evidence and "evidence" not in names:
        user += "\n\nSearch evidence (cite by index):\n" + values["evidence"]
    return (Message("system", system_message(spec)), Message("user", user))


# ---------------------------------------------------------------------------
# Running a stage


def check_artifact(role: Role, artifact: StageArtifact, inp: StageInput) -> None:
    """Cross-artifact checks that a single document cannot verify alone."""
    if role is Role.INTERPRETATION:
        assert isinstance(artifact, CulturalAdaptation)
        annotated = [inp.job.source_text]
        if inp.translation is not None:
            annotated.append(inp.translation.translated_text)
        artifact.check_spans(annotated)
    elif role is Role.SYNTHESIS:
        assert isinstance(artifact, SynthesizedText)
        if inp.adaptation is not None:
            missing = missing_preserved_terms(artifact.final_text, inp.adaptation.annotations)
            if missing:
                raise DomainError(f"preserved term(s) dropped from final_text: {', '.join(missing)}")


class _Calls:
    def __init__(self, role: Role, inp: StageInput, backend: Backend, sink: Any):
        self.role = role
        self.inp = inp
        self.backend = backend
        self.sink = sink
        self.index = 0

    def __call__(self, messages: Sequence[Message], spec: AgentSpec) -> str:
        key = f"{self.role.value}:{self.inp.revision_index}:{self.index}"
        self.index += 1
        request = ChatRequest(
            model=getattr(self.backend, "model", None) or "scripted",
            messages=tuple(messages),
            temperature=spec.model_params.temperature,
            max_tokens=spec.model_params.max_tokens,
            correlation_id=f"{self.inp.job.job_id}:{key}",
            script_key=key,
        )
        return chat(self.backend, request, self.sink, self.role).content


def _emit(sink: Any, kind: EventKind, stage: Role | None, payload: Mapping[str, Any]) -> None:
    if sink is not None:
        sink.emit(kind, stage, payload)


def _attempts(
    spec: AgentSpec,
    inp: StageInput,
    messages: list[Message],
    call: _Calls,
    sink: Any,
    evidence: Sequence[SearchEvidence] | None,
) -> tuple[Any, str]:
    """Up to three call+parse rounds; returns (ParsedOutput, raw reply)."""
    role = spec.role
    last = "no attempt made"
    for attempt in range(MAX_ATTEMPTS):
        try:
            raw = call(messages, spec)
        except ScriptMiss as exc:
            raise StageFailed(role, str(exc)) from exc
        except GatewayError as exc:
            last = f"{type(exc).__name__}: {exc}"
            logger.warning("%s stage gateway error (attempt %d): %s", role.value, attempt + 1, last)
            continue
        try:
            parsed = parse_stage_output(role, raw, evidence=evidence)
            check_artifact(role, parsed.artifact, inp)
        except (ParseFailure, DomainError) as exc:
            last = exc.reason if isinstance(exc, ParseFailure) else f"schema violation: {exc}"
            if attempt + 1 < MAX_ATTEMPTS:
                _emit(sink, EventKind.PARSE_RETRY, role, {"attempt": attempt + 1, "reason": last})
                messages.append(Message("assistant", raw))
                messages.append(Message("user", CORRECTIVE_INSTRUCTION.format(reason=last)))
            continue
        return parsed, raw
    raise StageFailed(role, f"no usable reply after {MAX_ATTEMPTS} attempts: {last}")


def _delegate(
    request: DelegationRequest,
    spec: AgentSpec,
    crew: Mapping[Role, AgentSpec],
    inp: StageInput,
    call: _Calls,
) -> str:
    target_spec = crew.get(request.target)
    goal = target_spec.goal if target_spec else f"You are the {request.target.value} agent."
    backstory = target_spec.backstory if target_spec else ""
    system = "\n\n".join(p for p in (goal, backstory, "Answer the colleague's question in plain text.") if p)
    user = (
        f"The {spec.role.value} agent asks: {request.question}\n\n"
        f"Source text ({inp.job.source_lang} -> {inp.job.target_lang}):\n{inp.job.source_text}"
    )
    params_spec = target_spec or spec
    return call([Message("system", system), Message("user", user)], params_spec)


def _refuse(sink: Any, role: Role, reason: str, request: DelegationRequest | None) -> None:
    logger.warning("%s: %s stage asked for delegation", reason, role.value)
    _emit(
        sink,
        EventKind.DELEGATION_REQUESTED,
        role,
        {
            "refused": True,
            "warning": reason,
            "target": request.target.value if request else None,
            "question": request.question if request else None,
        },
    )


def run_stage(
    spec: AgentSpec,
    inp: StageInput,
    backend: Backend,
    sink: Any = None,
    *,
    crew: Mapping[Role, AgentSpec] | None = None,
    delegation_budget: int = 1,
    evidence: Sequence[SearchEvidence] | None = None,
) -> StageArtifact:
    """Render, call, parse; retry on unusable replies; honour one delegation.

    A reply that carries a delegation request from a delegating stage (and
    with budget left) triggers one sub-call to the target agent and one
    re-invocation whose artifact is final. Delegation requests from
    synthesis or evaluation are refused and recorded.

    Raises:
        StageFailed: three unusable replies, or a gateway failure.
        BadPlaceholder: the prompt template cannot be rendered.
    """
    inp.require(spec.role)
    _announce(sink, spec.role, inp)
    return _run(spec, inp, backend, sink, crew or {}, delegation_budget, evidence)


def _announce(sink: Any, role: Role, inp: StageInput) -> None:
    feedback = inp.revision_feedback
    _emit(
        sink,
        EventKind.STAGE_STARTED,
        role,
        {
            "revision_index": inp.revision_index,
            "feedback": [i.to_dict() for i in feedback] if feedback is not None else None,
        },
    )


def _run(
    spec: AgentSpec,
    inp: StageInput,
    backend: Backend,
    sink: Any,
    crew: Mapping[Role, AgentSpec],
    delegation_budget: int,
    evidence: Sequence[SearchEvidence] | None,
) -> StageArtifact:
    role = spec.role
    messages = list(render_prompt(spec, inp, evidence))
    call = _Calls(role, inp, backend, sink)
    parsed, raw = _attempts(spec, inp, messages, call, sink, evidence)
    delegated = False

    if parsed.delegation_field:
        request = parsed.delegation
        allowed = spec.allow_delegation and role in DELEGATING_ROLES
        if not allowed or delegation_budget <= 0 or request is None:
            _refuse(sink, role, "DelegationRefused" if not allowed else "DelegationBudgetExhausted", request)
        else:
            _emit(
                sink,
                EventKind.DELEGATION_REQUESTED,
                role,
                {"refused": False, "target": request.target.value, "question": request.question},
            )
            try:
                answer = _delegate(request, spec, crew, inp, call)
            except GatewayError as exc:
                _emit(
                    sink,
                    EventKind.DELEGATION_ANSWERED,
                    role,
                    {"target": request.target.value, "error": f"{type(exc).__name__}: {exc}"},
                )
            else:
                _emit(sink, EventKind.DELEGATION_ANSWERED, role, {"target": request.target.value, "answer": answer})
                messages.append(Message("assistant", raw))
                messages.append(
                    Message(
                        "user",
                        f"Answer from the {request.target.value} agent:\n{answer}\n\n"
                        "Use it and reply with your final JSON object. Do not delegate again.",
                    )
                )
                parsed, raw = _attempts(spec, inp, messages, call, sink, evidence)
                delegated = True
                if parsed.delegation_field:
                    _refuse(sink, role, "DelegationBudgetExhausted", parsed.delegation)

    _emit(
        sink,
        EventKind.STAGE_COMPLETED,
        role,
        {
            "revision_index": inp.revision_index,
            "calls": call.index,
            "delegated": delegated,
            "artifact": parsed.artifact.to_dict(),
        },
    )
    return parsed.artifact


# ---------------------------------------------------------------------------
# Evaluation with external evidence


def validation_queries(job: TranslationJob, adaptation: CulturalAdaptation | None) -> list[str]:
    """Queries for the preserved or transliterated spans, in annotation order."""
    if adaptation is None:
        return []
    queries: list[str] = []
    for ann in adaptation.annotations:
        if ann.decision not in (Decision.PRESERVE, Decision.TRANSLITERATE_WITH_CLARIFIER):
            continue
        if job.cultural_domain is CulturalDomain.GENERAL:
            query = f"{ann.source_span} meaning"
        else:
            query = f"{ann.source_span} {job.cultural_domain.value} tradition"
        query = normalize_query(query)
        if query not in queries:
            queries.append(query)
        if len(queries) == MAX_QUERIES:
            break
    return queries


def gather_evidence(queries: Sequence[str], search: Any, sink: Any, job_id: str, revision_index: int) -> list[SearchEvidence]:
    evidence: list[SearchEvidence] = []
    if search is None or not getattr(search, "enabled", False):
        return evidence
    for n, query in enumerate(queries):
        cid = f"{job_id}:search:{revision_index}:{n}"
        _emit(sink, EventKind.TOOL_CALL, Role.EVALUATION, {"correlation_id": cid, "query": query})
        try:
            outcome = search.lookup(query)
        except ToolDisabled:
            _emit(sink, EventKind.TOOL_RESULT, Role.EVALUATION, {"correlation_id": cid, "query": query, "error": "ToolDisabled"})
            break
        except (SearchError, OSError) as exc:
            logger.warning("search for %r failed: %s", query, exc)
            _emit(
                sink,
                EventKind.TOOL_RESULT,
                Role.EVALUATION,
                {"correlation_id": cid, "query": query, "error": f"{type(exc).__name__}: {exc}"},
            )
            continue
        payload: dict[str, Any] = {"correlation_id": cid, "query": query, "evidence": outcome.evidence.to_dict()}
        if outcome.warning:
            payload["warning"] = outcome.warning
        _emit(sink, EventKind.TOOL_RESULT, Role.EVALUATION, payload)
        evidence.append(outcome.evidence)
    return evidence


def evaluate_with_search(
    spec: AgentSpec,
    inp: StageInput,
    backend: Backend,
    search: Any,
    sink: Any = None,
    *,
    crew: Mapping[Role, AgentSpec] | None = None,
    delegation_budget: int = 1,
) -> EvaluationReport:
    """Search the checkable cultural claims, then run the evaluation stage.

    Search failures only shrink the evidence list. A ``revise`` verdict with
    no blocking issue is downgraded to ``accept``: minor issues never gate.
    """
    inp.require(Role.EVALUATION)
    _announce(sink, Role.EVALUATION, inp)
    queries = validation_queries(inp.job, inp.adaptation)
    evidence = gather_evidence(queries, search, sink, inp.job.job_id, inp.revision_index)
    report = _run(spec, inp, backend, sink, crew or {}, delegation_budget, evidence)
    assert isinstance(report, EvaluationReport)
    if report.verdict is Verdict.REVISE and not report.blocking_issues:
        report = replace(report, verdict=Verdict.ACCEPT)
    return report
