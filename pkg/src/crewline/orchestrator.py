"""The translation pipeline as an explicit state machine.

Stages run T -> I -> S -> E. After each evaluation, blocking issues send
the run back to the most upstream responsible stage; that stage and every
stage after it are re-run, then evaluation runs again. The loop is bounded
by ``max_revisions``.
"""
from __future__ import annotations

import enum
import logging
from collections.abc import Callable
from dataclasses import dataclass, field
from typing import Any

from .domain import (
    PIPELINE_ORDER,
    RESPONSIBLE_ROLES,
    CrewConfig,
    CulturalAdaptation,
    DomainError,
    EvaluationReport,
    EventKind,
    FinalRecord,
    RawTranslation,
    Role,
    RunStatus,
    StageFailure,
    SynthesizedText,
    Transcript,
    TranslationJob,
    Verdict,
    digest_config,
)
from .gateway import Backend, make_backend
from .search import SearchTool
from .stages import (
    BadPlaceholder,
    StageFailed,
    StageInput,
    evaluate_with_search,
    run_stage,
)
from .transcript import EventSink

logger = logging.getLogger(__name__)

_UPSTREAM_RANK = {role: n for n, role in enumerate(RESPONSIBLE_ROLES)}


class Phase(str, enum.Enum):
    TRANSLATING = "Translating"
    INTERPRETING = "Interpreting"
    SYNTHESIZING = "Synthesizing"
    EVALUATING = "Evaluating"
    REVISING = "Revising"
    DONE = "Done"


_PHASE_OF = {
    Role.TRANSLATION: Phase.TRANSLATING,
    Role.INTERPRETATION: Phase.INTERPRETING,
    Role.SYNTHESIS: Phase.SYNTHESIZING,
    Role.EVALUATION: Phase.EVALUATING,
}


@dataclass
class PipelineState:
    phase: Phase = Phase.TRANSLATING
    revision_count: int = 0
    target: Role | None = None
    status: RunStatus | None = None
    translation: RawTranslation | None = None
    adaptation: CulturalAdaptation | None = None
    synthesized: SynthesizedText | None = None
    report: EvaluationReport | None = None
    # Stages still to run before the next evaluation in this pass.
    pending: list[Role] = field(default_factory=list)


def route_revision(report: EvaluationReport) -> Role:
    """The most upstream stage responsible for a blocking issue."""
    blocking = report.blocking_issues
    if not blocking:
        raise ValueError("route_revision needs at least one blocking issue")
    return min((i.responsible for i in blocking), key=_UPSTREAM_RANK.__getitem__)


def downstream_of(role: Role) -> list[Role]:
    """Pre-evaluation stages that come after ``role``."""
    role = Role(role)
    if role not in _UPSTREAM_RANK:
        raise ValueError(f"{role.value} has no pre-evaluation downstream")
    return list(RESPONSIBLE_ROLES[_UPSTREAM_RANK[role] + 1 :])


def _stage_input(state: PipelineState, job: TranslationJob, role: Role) -> StageInput:
    feedback = None
    if state.revision_count > 0:
        assert state.report is not None
        if role is Role.EVALUATION:
            feedback = state.report.blocking_issues
        else:
            feedback = tuple(i for i in state.report.blocking_issues if i.responsible is role)
    return StageInput(
        job=job,
        revision_index=state.revision_count,
        revision_feedback=feedback,
        translation=state.translation,
        adaptation=state.adaptation,
        synthesized=state.synthesized,
    )


def run_pipeline(
    job: TranslationJob,
    config: CrewConfig,
    backend: Backend | None = None,
    search: Any = None,
    sink: EventSink | None = None,
    *,
    clock: Callable[[], Any] | None = None,
) -> Transcript:
    """Run one job to completion and return its finalized transcript.

    ``backend`` and ``search`` default to the ones described by ``config``.
    A stage failure ends the run with status ``failed``; it is never raised.
    """
    backend = backend if backend is not None else make_backend(config.backend)
    search = search if search is not None else SearchTool(config.search)
    sink = sink if sink is not None else EventSink(clock=clock)
    state = PipelineState()
    failure: StageFailure | None = None

    def execute(role: Role) -> None:
        spec = config.agents[role]
        inp = _stage_input(state, job, role)
        common = {"crew": config.agents, "delegation_budget": config.max_delegations_per_stage}
        if role is Role.EVALUATION:
            state.report = evaluate_with_search(spec, inp, backend, search, sink, **common)
        else:
            artifact = run_stage(spec, inp, backend, sink, **common)
            setattr(state, {Role.TRANSLATION: "translation", Role.INTERPRETATION: "adaptation",
                            Role.SYNTHESIS: "synthesized"}[role], artifact)

    state.pending = list(PIPELINE_ORDER[:3])
    state.phase = Phase.TRANSLATING
    while state.phase is not Phase.DONE:
        if state.phase is Phase.REVISING:
            assert state.target is not None
            state.pending = [state.target, *downstream_of(state.target)]
            state.phase = _PHASE_OF[state.pending[0]]
            continue
        role = state.pending.pop(0) if state.phase is not Phase.EVALUATING else Role.EVALUATION
        try:
            execute(role)
        except (StageFailed, BadPlaceholder, DomainError) as exc:
            cause = exc.cause if isinstance(exc, StageFailed) else f"{type(exc).__name__}: {exc}"
            logger.error("run %s failed in %s stage: %s", job.job_id, role.value, cause)
            failure = StageFailure(role, cause)
            state.status = RunStatus.FAILED
            state.phase = Phase.DONE
            continue
        if role is not Role.EVALUATION:
            state.phase = _PHASE_OF[state.pending[0]] if state.pending else Phase.EVALUATING
            continue

        report = state.report
        assert report is not None
        if report.verdict is Verdict.ACCEPT:
            state.status = RunStatus.ACCEPTED
            state.phase = Phase.DONE
        elif state.revision_count >= config.max_revisions:
            state.status = RunStatus.MAX_REVISIONS_EXCEEDED
            state.phase = Phase.DONE
        else:
            state.target = route_revision(report)
            state.revision_count += 1
            sink.emit(
                EventKind.REVISION_TRIGGERED,
                None,
                {
                    "target": state.target.value,
                    "revision_count": state.revision_count,
                    "issue_ids": [n for n, i in enumerate(report.issues) if i.blocking],
                },
            )
            state.phase = Phase.REVISING

    assert state.status is not None
    final = FinalRecord(status=state.status, output=state.synthesized, report=state.report, failure=failure)
    return Transcript(job=job, config_digest=digest_config(config), events=tuple(sink.events), final=final)

