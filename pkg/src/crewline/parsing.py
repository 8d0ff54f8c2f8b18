"""Extracting typed stage artifacts from free-form model replies."""
from __future__ import annotations

import json
from collections.abc import Iterator, Mapping, Sequence
from dataclasses import dataclass
from typing import Any

from .domain import (
    ARTIFACT_TYPES,
    CulturalAdaptation,
    DomainError,
    EvaluationReport,
    RawTranslation,
    Role,
    SearchEvidence,
    SynthesizedText,
    nfc,
)

StageArtifact = RawTranslation | CulturalAdaptation | SynthesizedText | EvaluationReport

# Bounds the scan on adversarial input with thousands of "{" characters.
MAX_CANDIDATES = 256

_REQUIRED = {
    Role.TRANSLATION: ("translated_text",),
    Role.INTERPRETATION: ("adapted_text",),
    Role.SYNTHESIS: ("final_text",),
    Role.EVALUATION: ("verdict",),
}


class ParseFailure(Exception):
    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


@dataclass(frozen=True)
class DelegationRequest:
    target: Role
    question: str


@dataclass(frozen=True)
class ParsedOutput:
    artifact: StageArtifact
    delegation: DelegationRequest | None = None
    # True when the document had a "delegation" key, valid or not.
    delegation_field: bool = False


def iter_documents(raw: str) -> Iterator[dict[str, Any]]:
    """Yield JSON objects embedded in ``raw`` in textual order.

    Objects nested inside an already-yielded object are skipped, which makes
    fenced blocks, prefixed prose and trailing chatter all work the same way.
    """
    decoder = json.JSONDecoder()
    pos = 0
    tried = 0
    while tried < MAX_CANDIDATES:
        start = raw.find("{", pos)
        if start < 0:
            return
        tried += 1
        try:
            obj, end = decoder.raw_decode(raw, start)
        except (ValueError, RecursionError):
            pos = start + 1
            continue
        if isinstance(obj, dict):
            yield obj
        pos = end


def _build(role: Role, doc: Mapping[str, Any], evidence: Sequence[SearchEvidence] | None) -> StageArtifact:
    missing = [k for k in _REQUIRED[role] if k not in doc]
    if missing:
        raise DomainError(f"missing field(s): {', '.join(missing)}")
    body = {k: v for k, v in doc.items() if k != "delegation"}
    for key in ("annotations", "applied_annotations", "issues", "evidence"):
        if key in body and not isinstance(body[key], list):
            raise DomainError(f"{key} must be a list")
        for item in body.get(key, ()):
            if not isinstance(item, Mapping):
                raise DomainError(f"{key} entries must be objects")
    for issue in body.get("issues", ()):
        refs = issue.get("evidence_refs", [])
        if not isinstance(refs, list):
            raise DomainError("evidence_refs must be a list")
    if role is Role.EVALUATION and evidence is not None:
        body["evidence"] = [e.to_dict() for e in evidence]
    cls = ARTIFACT_TYPES[role]
    try:
        return cls.from_dict(body)
    except (KeyError, TypeError) as exc:
        raise DomainError(f"malformed {role.value} document: {exc!r}") from None


def _delegation(role: Role, value: Any) -> DelegationRequest:
    if not isinstance(value, Mapping):
        raise DomainError("delegation must be an object")
    try:
        target = Role(value.get("target"))
    except ValueError:
        raise DomainError(f"delegation target {value.get('target')!r} is not a role") from None
    if target is role:
        raise DomainError("a stage cannot delegate to itself")
    question = value.get("question")
    if not isinstance(question, str) or not question.strip():
        raise DomainError("delegation question must be nonempty text")
    return DelegationRequest(target=target, question=nfc(question))


def parse_stage_output(
    role: Role | str,
    raw: str,
    *,
    evidence: Sequence[SearchEvidence] | None = None,
) -> ParsedOutput:
    """Find the first document in ``raw`` that is a valid artifact for ``role``.

    For the evaluation role, ``evidence`` (when given) replaces any evidence
    list in the document, so that issue references are checked against what
    the tool actually returned.

    Raises:
        ParseFailure: no document, malformed document, or schema violation.
            Nothing else escapes, whatever ``raw`` contains.
    """
    role = Role(role)
    if not isinstance(raw, str):
        raise ParseFailure("reply is not text")
    raw = nfc(raw)
    first_error: str | None = None
    for doc in iter_documents(raw):
        try:
            artifact = _build(role, doc, evidence)
            has_field = "delegation" in doc
            delegation = _delegation(role, doc["delegation"]) if has_field else None
        except DomainError as exc:
            first_error = first_error or str(exc)
            continue
        except Exception as exc:  # noqa: BLE001 - arbitrary model output
            first_error = first_error or f"malformed document: {exc!r}"
            continue
        return ParsedOutput(artifact=artifact, delegation=delegation, delegation_field=has_field)
    if first_error is not None:
        raise ParseFailure(f"schema violation: {first_error}")
    raise ParseFailure("no document found")


def encode_artifact(artifact: StageArtifact, delegation: DelegationRequest | None = None) -> str:
    """The JSON document a well-behaved model would reply with."""
    doc = artifact.to_dict()
    if delegation is not None:
        doc["delegation"] = {"target": delegation.target.value, "question": delegation.question}
    return json.dumps(doc, ensure_ascii=False)
