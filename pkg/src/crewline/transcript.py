"""Event sink, on-disk transcript store, deterministic replay and diffing.

On disk a run is two files under the output directory:

``<job_id>.events``
    one JSON event per line, appended and flushed as the run progresses;
``<job_id>.transcript``
    a single JSON document with the job, config digest, events and final
    record, written once the run is finalized.
"""
from __future__ import annotations

import difflib
import json
import logging
import os
from collections.abc import Callable, Mapping
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any

from .domain import (
    CrewConfig,
    Decision,
    DomainError,
    Event,
    EventKind,
    Role,
    RunStatus,
    SearchMode,
    SynthesizedText,
    Transcript,
    digest_config,
    nfc,
    thaw,
    utcnow,
)
from .gateway import ScriptedBackend, Timeout, UpstreamError
from .search import ReplaySearch

logger = logging.getLogger(__name__)

EVENTS_SUFFIX = ".events"
TRANSCRIPT_SUFFIX = ".transcript"

# Payload keys that legitimately differ between a run and its replay.
VOLATILE_PAYLOAD_KEYS = frozenset({"latency_ms", "model"})


class StoreError(Exception):
    pass


class SeqGap(StoreError):
    def __init__(self, expected: int, got: int):
        super().__init__(f"expected event seq {expected}, got {got}")
        self.expected = expected
        self.got = got


class ReplayError(Exception):
    pass


class DigestMismatch(ReplayError):
    pass


class ReplayDivergence(ReplayError):
    def __init__(self, seq: int | None, detail: str):
        where = f"at seq {seq}" if seq is not None else "in final output"
        super().__init__(f"replay diverged {where}: {detail}")
        self.seq = seq
        self.detail = detail


# ---------------------------------------------------------------------------
# Writing


class EventLog:
    """Append-only ``.events`` file for one run.

    Opening an existing log drops a torn trailing record (a crashed writer)
    and truncates the file back to the last complete line.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.warnings: list[str] = []
        self.events: list[Event] = []
        self.path.parent.mkdir(parents=True, exist_ok=True)
        if self.path.exists():
            self.events, good_bytes = _scan_events(self.path, self.warnings)
            if good_bytes != self.path.stat().st_size:
                with open(self.path, "r+b") as fh:
                    fh.truncate(good_bytes)
        self._fh = open(self.path, "ab")  # noqa: SIM115 (held for the log lifetime)

    @property
    def last_seq(self) -> int:
        return self.events[-1].seq if self.events else 0

    def append(self, event: Event) -> None:
        expected = self.last_seq + 1
        if event.seq != expected:
            raise SeqGap(expected, event.seq)
        line = json.dumps(event.to_dict(), ensure_ascii=False, separators=(",", ":")) + "\n"
        self._fh.write(line.encode("utf-8"))
        self._fh.flush()
        os.fsync(self._fh.fileno())
        self.events.append(event)

    def close(self) -> None:
        if not self._fh.closed:
            self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()


def append_event(log: EventLog, event: Event) -> None:
    log.append(event)


def _scan_events(path: Path, warnings: list[str]) -> tuple[list[Event], int]:
    data = path.read_bytes()
    events: list[Event] = []
    good = 0
    pos = 0
    while pos < len(data):
        nl = data.find(b"\n", pos)
        if nl < 0:
            warnings.append(f"{path.name}: dropped truncated trailing record ({len(data) - pos} bytes)")
            break
        try:
            event = Event.from_dict(json.loads(data[pos:nl].decode("utf-8")))
        except (ValueError, KeyError, TypeError, DomainError):
            warnings.append(f"{path.name}: dropped unreadable record at byte {pos}")
            break
        if events and event.seq != events[-1].seq + 1:
            warnings.append(f"{path.name}: dropped record with out-of-order seq {event.seq}")
            break
        events.append(event)
        pos = good = nl + 1
    for w in warnings:
        logger.warning(w)
    return events, good


def read_events(path: str | Path) -> tuple[list[Event], list[str]]:
    """Read an ``.events`` file without modifying it."""
    warnings: list[str] = []
    events, _ = _scan_events(Path(path), warnings)
    return events, warnings


class EventSink:
    """Numbers and timestamps events for one run; optionally persists them."""

    def __init__(self, log: EventLog | None = None, clock: Callable[[], datetime] | None = None):
        self.log = log
        self.clock = clock or utcnow
        self.events: list[Event] = []

    def emit(self, kind: EventKind, stage: Role | None, payload: Mapping[str, Any]) -> Event:
        event = Event(seq=len(self.events) + 1, kind=kind, stage=stage, payload=payload, at=self.clock())
        if self.log is not None:
            self.log.append(event)
        self.events.append(event)
        return event


class TranscriptStore:
    def __init__(self, out_dir: str | Path):
        self.out_dir = Path(out_dir)

    def events_path(self, job_id: str) -> Path:
        return self.out_dir / f"{job_id}{EVENTS_SUFFIX}"

    def transcript_path(self, job_id: str) -> Path:
        return self.out_dir / f"{job_id}{TRANSCRIPT_SUFFIX}"

    def open_log(self, job_id: str) -> EventLog:
        return EventLog(self.events_path(job_id))

    def write(self, transcript: Transcript) -> Path:
        if not transcript.finalized:
            raise StoreError("only finalized transcripts are written as documents")
        path = self.transcript_path(transcript.job.job_id)
        write_transcript(transcript, path)
        return path


def write_transcript(transcript: Transcript, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(transcript.to_dict(), ensure_ascii=False, indent=2) + "\n", encoding="utf-8")
    os.replace(tmp, path)


def read_transcript(path: str | Path) -> Transcript:
    text = nfc(Path(path).read_text(encoding="utf-8"))
    try:
        return Transcript.from_dict(json.loads(text))
    except (ValueError, KeyError, TypeError) as exc:
        raise StoreError(f"{path}: not a valid transcript: {exc}") from None


# ---------------------------------------------------------------------------
# Replay


def _comparable(event: Event) -> tuple[Any, ...]:
    payload = {k: v for k, v in thaw(event.payload).items() if k not in VOLATILE_PAYLOAD_KEYS}
    return (event.kind.value, event.stage.value if event.stage else None, payload)


def recorded_script(transcript: Transcript) -> dict[str, str]:
    return {
        e.payload["key"]: e.payload["content"]
        for e in transcript.events
        if e.kind is EventKind.LLM_RESPONSE and "content" in e.payload and e.payload.get("key")
    }


class ReplayBackend:
    """Scripted backend that also re-raises recorded gateway failures."""

    def __init__(self, transcript: Transcript, model: str):
        self._script = ScriptedBackend(recorded_script(transcript), model=model)
        self.model = model
        self._errors = {
            e.payload["key"]: (e.payload["error"], e.payload.get("message", ""))
            for e in transcript.events
            if e.kind is EventKind.LLM_RESPONSE and "error" in e.payload and e.payload.get("key")
        }

    def complete(self, request: Any) -> Any:
        recorded = self._errors.get(request.script_key)
        if recorded is not None:
            name, message = recorded
            cls = {"Timeout": Timeout, "UpstreamError": UpstreamError}.get(name)
            if cls is not None:
                raise cls(message)
        return self._script.complete(request)


def recorded_search(transcript: Transcript) -> list[tuple[str, dict | None, str | None]]:
    out = []
    for e in transcript.events:
        if e.kind is EventKind.TOOL_RESULT:
            p = thaw(e.payload)
            out.append((p["query"], p.get("evidence"), p.get("warning") or p.get("error")))
    return out


def replay(transcript: Transcript, config: CrewConfig) -> SynthesizedText:
    """Re-run an accepted transcript from its own recorded replies.

    Raises:
        DigestMismatch: ``config`` is not the config the run used.
        ReplayDivergence: the re-run differs; names the first differing seq.
    """
    from .orchestrator import run_pipeline  # imports this module

    if transcript.final is None:
        raise ReplayError("transcript is not finalized")
    if transcript.final.status is not RunStatus.ACCEPTED or transcript.final.output is None:
        raise ReplayError(f"only accepted transcripts replay (status {transcript.final.status.value})")
    digest = digest_config(config)
    if digest != transcript.config_digest:
        raise DigestMismatch(f"config digest {digest[:12]}... does not match transcript {transcript.config_digest[:12]}...")

    backend = ReplayBackend(transcript, model=config.backend.model_name)
    search = ReplaySearch(recorded_search(transcript), enabled=config.search.mode is not SearchMode.DISABLED)
    rerun = run_pipeline(transcript.job, config, backend, search)

    for old, new in zip(transcript.events, rerun.events):
        if _comparable(old) != _comparable(new):
            raise ReplayDivergence(old.seq, f"recorded {old.kind.value}/{_stage(old)}, replayed {new.kind.value}/{_stage(new)}")
    if len(transcript.events) != len(rerun.events):
        n = min(len(transcript.events), len(rerun.events))
        seq = transcript.events[n].seq if n < len(transcript.events) else rerun.events[n].seq
        raise ReplayDivergence(seq, f"recorded {len(transcript.events)} events, replayed {len(rerun.events)}")
    assert rerun.final is not None
    output = rerun.final.output
    if output is None or output.final_text.encode("utf-8") != transcript.final.output.final_text.encode("utf-8"):
        raise ReplayDivergence(None, "final_text differs")
    return output


def _stage(event: Event) -> str:
    return event.stage.value if event.stage else "-"


# ---------------------------------------------------------------------------
# Diff


@dataclass(frozen=True)
class SetDiff:
    only_in_a: tuple[str, ...] = ()
    only_in_b: tuple[str, ...] = ()

    def __bool__(self) -> bool:
        return bool(self.only_in_a or self.only_in_b)

    def mirrored(self) -> SetDiff:
        return SetDiff(self.only_in_b, self.only_in_a)


def _set_diff(a: set[str], b: set[str]) -> SetDiff:
    return SetDiff(tuple(sorted(a - b)), tuple(sorted(b - a)))


@dataclass(frozen=True)
class TranscriptDiff:
    """Per-section differences between two finalized transcripts.

    Scalar sections hold an ``(a, b)`` pair or ``None`` when equal.
    """

    status: tuple[str, str] | None = None
    revision_count: tuple[int, int] | None = None
    stage_trace: tuple[tuple[str, ...], tuple[str, ...]] | None = None
    final_text: tuple[str, str] | None = None
    preserved_terms: SetDiff = field(default_factory=SetDiff)
    issues: SetDiff = field(default_factory=SetDiff)

    @property
    def empty(self) -> bool:
        return not self.sections()

    def sections(self) -> list[str]:
        names = []
        for name in ("status", "revision_count", "stage_trace", "final_text", "preserved_terms", "issues"):
            if getattr(self, name):
                names.append(name)
        return names

    def mirrored(self) -> TranscriptDiff:
        def swap(pair: Any) -> Any:
            return None if pair is None else (pair[1], pair[0])

        return TranscriptDiff(
            status=swap(self.status),
            revision_count=swap(self.revision_count),
            stage_trace=swap(self.stage_trace),
            final_text=swap(self.final_text),
            preserved_terms=self.preserved_terms.mirrored(),
            issues=self.issues.mirrored(),
        )

    def render(self, label_a: str = "a", label_b: str = "b") -> str:
        if self.empty:
            return "NO DIFFERENCES"
        out: list[str] = []
        if self.status:
            out.append(f"status: {label_a}={self.status[0]} {label_b}={self.status[1]}")
        if self.revision_count:
            out.append(f"revision_count: {label_a}={self.revision_count[0]} {label_b}={self.revision_count[1]}")
        if self.stage_trace:
            out.append(f"stage_trace:\n  {label_a}: {' '.join(self.stage_trace[0])}\n  {label_b}: {' '.join(self.stage_trace[1])}")
        if self.final_text:
            out.append(f"final_text (- {label_a}, + {label_b}):")
            out.extend("  " + line for line in text_delta(*self.final_text))
        for name in ("preserved_terms", "issues"):
            sd: SetDiff = getattr(self, name)
            if sd:
                out.append(f"{name}:")
                out.extend(f"  only in {label_a}: {item}" for item in sd.only_in_a)
                out.extend(f"  only in {label_b}: {item}" for item in sd.only_in_b)
        return "\n".join(out)


def text_delta(a: str, b: str) -> list[str]:
    """Changed lines only, ``-`` for ``a`` and ``+`` for ``b``."""
    return [line for line in difflib.ndiff(a.splitlines(), b.splitlines()) if line[:1] in "+-"]


def _final_text(t: Transcript) -> str:
    return t.final.output.final_text if t.final and t.final.output else ""


def preserved_terms(t: Transcript) -> set[str]:
    """Spans marked preserve in the latest adaptation and in the final output."""
    terms: set[str] = set()
    for e in reversed(t.events):
        if e.kind is EventKind.STAGE_COMPLETED and e.stage is Role.INTERPRETATION:
            for ann in e.payload["artifact"].get("annotations", ()):
                if ann.get("decision") == Decision.PRESERVE.value:
                    terms.add(ann["source_span"])
            break
    if t.final and t.final.output:
        terms.update(a.source_span for a in t.final.output.applied_annotations if a.decision is Decision.PRESERVE)
    return terms


def _issue_keys(t: Transcript) -> set[str]:
    if not t.final or not t.final.report:
        return set()
    return {
        f"[{i.severity.value}] {i.category.value} ({i.responsible.value}): {i.description}" for i in t.final.report.issues
    }


def diff(a: Transcript, b: Transcript) -> TranscriptDiff:
    """Structural comparison of two finalized transcripts."""
    if a.final is None or b.final is None:
        raise ValueError("diff needs finalized transcripts")
    trace_a = tuple(r.value for r in a.stage_trace())
    trace_b = tuple(r.value for r in b.stage_trace())
    text_a, text_b = _final_text(a), _final_text(b)
    return TranscriptDiff(
        status=None if a.final.status == b.final.status else (a.final.status.value, b.final.status.value),
        revision_count=None if a.revision_count == b.revision_count else (a.revision_count, b.revision_count),
        stage_trace=None if trace_a == trace_b else (trace_a, trace_b),
        final_text=None if text_a == text_b else (text_a, text_b),
        preserved_terms=_set_diff(preserved_terms(a), preserved_terms(b)),
        issues=_set_diff(_issue_keys(a), _issue_keys(b)),
    )
