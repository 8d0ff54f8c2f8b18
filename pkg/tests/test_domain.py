from __future__ import annotations

import hashlib
import unicodedata
from dataclasses import FrozenInstanceError
from datetime import datetime, timezone

import pytest
from _support import EPOCH, crew, happy_script
from hypothesis import given, settings
from hypothesis import strategies as st

from crewline.config import validate_config
from crewline.domain import (
    Annotation,
    CulturalAdaptation,
    DomainError,
    EvaluationReport,
    Event,
    EventKind,
    FinalRecord,
    Issue,
    RawTranslation,
    Role,
    RunStatus,
    SearchEvidence,
    SearchResult,
    SynthesizedText,
    Transcript,
    TranslationJob,
    canonical_json,
    digest_config,
)

# The canonical encoding of GOLDEN_DOC, typed out by hand from the encoding
# rules (sorted keys, no whitespace, raw UTF-8). Its SHA-256 was computed
# once with hashlib and frozen below.
GOLDEN_CANONICAL = (
    '{"agents":{'
    '"evaluation":{"allow_delegation":false,"backstory":"","goal":"g","model_params":{"max_tokens":64,"temperature":0.0},'
    '"prompt_template":"{source_text}","role":"evaluation"},'
    '"interpretation":{"allow_delegation":true,"backstory":"","goal":"g","model_params":{"max_tokens":64,"temperature":0.0},'
    '"prompt_template":"{source_text}","role":"interpretation"},'
    '"synthesis":{"allow_delegation":false,"backstory":"","goal":"g","model_params":{"max_tokens":64,"temperature":0.0},'
    '"prompt_template":"{source_text}","role":"synthesis"},'
    '"translation":{"allow_delegation":true,"backstory":"","goal":"g","model_params":{"max_tokens":64,"temperature":0.0},'
    '"prompt_template":"{source_text}","role":"translation"}},'
    '"backend":{"kind":"scripted","script":{"translation:0:0":"नमस्ते"},"timeout_ms":120000},'
    '"max_delegations_per_stage":1,"max_revisions":2,'
    '"search":{"endpoint":"https://lite.duckduckgo.com/lite/","max_results":5,"mode":"disabled","ttl_seconds":3600}}'
)
GOLDEN_DIGEST = "862e68498f066d641c37d98f474a467dd231df7e40968f462a26be865a8dd5cf"


def _agent(deleg: bool) -> dict:
    return {
        "goal": "g",
        "backstory": "",
        "allow_delegation": deleg,
        "prompt_template": "{source_text}",
        "model_params": {"temperature": 0, "max_tokens": 64},
    }


GOLDEN_DOC = {
    "max_revisions": 2,
    "backend": {"kind": "scripted", "script": {"translation:0:0": "नमस्ते"}},
    "agents": {
        "translation": _agent(True),
        "interpretation": _agent(True),
        "synthesis": _agent(False),
        "evaluation": _agent(False),
    },
}


class TestJob:
    def test_defaults_and_normalization(self):
        decomposed = unicodedata.normalize("NFD", "Café")
        job = TranslationJob(source_text=decomposed, source_lang="en", target_lang="fr")
        assert job.source_text == "Café"
        assert job.cultural_domain.value == "general"
        assert len(job.job_id) == 32
        assert job.created_at.tzinfo is not None

    @pytest.mark.parametrize("text", ["", "   ", "\n\t"])
    def test_rejects_blank_text(self, text):
        with pytest.raises(DomainError):
            TranslationJob(source_text=text, source_lang="en", target_lang="hi")

    def test_rejects_same_language(self):
        with pytest.raises(DomainError):
            TranslationJob(source_text="x", source_lang="en", target_lang="EN")

    def test_rejects_unknown_domain(self):
        with pytest.raises(DomainError):
            TranslationJob(source_text="x", source_lang="en", target_lang="hi", cultural_domain="sport")

    def test_is_immutable(self):
        job = TranslationJob(source_text="x", source_lang="en", target_lang="hi")
        with pytest.raises(FrozenInstanceError):
            job.source_text = "y"  # type: ignore[misc]


class TestArtifacts:
    def test_preserve_forbids_replacement(self):
        with pytest.raises(DomainError):
            Annotation("Lakshmi Puja", "preserve", replacement="puja")

    @pytest.mark.parametrize("decision", ["adapt", "transliterate_with_clarifier"])
    def test_other_decisions_need_replacement(self, decision):
        with pytest.raises(DomainError):
            Annotation("diyas", decision)
        with pytest.raises(DomainError):
            Annotation("diyas", decision, replacement="  ")
        assert Annotation("diyas", decision, replacement="deepak").replacement == "deepak"

    def test_adaptation_span_check(self):
        adaptation = CulturalAdaptation("x", (Annotation("diyas", "adapt", "deepak"),))
        adaptation.check_spans(["light diyas in every home"])
        with pytest.raises(DomainError):
            adaptation.check_spans(["light lamps in every home"])

    def test_synthesized_text_keeps_preserved_terms(self):
        keep = Annotation("Lakshmi Puja", "preserve")
        SynthesizedText("Parivaar Lakshmi Puja karte hain.", (keep,))
        with pytest.raises(DomainError, match="Lakshmi Puja"):
            SynthesizedText("Parivaar puja karte hain.", (keep,))

    def test_raw_translation_nonempty(self):
        with pytest.raises(DomainError):
            RawTranslation(" ")

    def test_revise_needs_issues(self):
        with pytest.raises(DomainError):
            EvaluationReport("revise", ())

    def test_accept_forbids_blocking(self):
        blocking = Issue("coherence", "blocking", "synthesis", "broken")
        with pytest.raises(DomainError):
            EvaluationReport("accept", (blocking,))
        minor = Issue("coherence", "minor", "synthesis", "slightly off")
        assert EvaluationReport("accept", (minor,)).blocking_issues == ()

    def test_evidence_refs_in_bounds(self):
        ev = SearchEvidence("q", (), EPOCH, "fixture")
        ok = Issue("factual", "minor", "interpretation", "d", (0,))
        EvaluationReport("accept", (ok,), (ev,))
        bad = Issue("factual", "minor", "interpretation", "d", (1,))
        with pytest.raises(DomainError):
            EvaluationReport("accept", (bad,), (ev,))
        with pytest.raises(DomainError):
            EvaluationReport("accept", (Issue("factual", "minor", "interpretation", "d", (-1,)),), (ev,))

    def test_evaluation_cannot_be_responsible(self):
        with pytest.raises(DomainError):
            Issue("bias", "blocking", "evaluation", "d")

    def test_final_record_accepted_needs_output(self):
        with pytest.raises(DomainError):
            FinalRecord(RunStatus.ACCEPTED)
        FinalRecord(RunStatus.FAILED)

    def test_transcript_seq_strictly_increasing(self):
        job = TranslationJob(source_text="x", source_lang="en", target_lang="hi")
        e1 = Event(1, EventKind.STAGE_STARTED, Role.TRANSLATION, {}, EPOCH)
        e2 = Event(2, EventKind.STAGE_COMPLETED, Role.TRANSLATION, {}, EPOCH)
        Transcript(job, "0" * 64, (e1, e2))
        with pytest.raises(DomainError):
            Transcript(job, "0" * 64, (e2, e1))
        with pytest.raises(DomainError):
            Transcript(job, "0" * 64, (e1, e1))

    def test_event_payload_is_read_only(self):
        event = Event(1, EventKind.TOOL_CALL, Role.EVALUATION, {"query": "q", "list": [1, 2]}, EPOCH)
        with pytest.raises(TypeError):
            event.payload["query"] = "other"  # type: ignore[index]
        assert event.to_dict()["payload"] == {"query": "q", "list": [1, 2]}

    def test_naive_timestamps_rejected(self):
        with pytest.raises(DomainError):
            SearchEvidence("q", (), datetime(2024, 1, 1), "live")


class TestDigest:
    def test_golden_canonical_string(self):
        config = validate_config(GOLDEN_DOC)
        assert canonical_json(config.to_dict()) == GOLDEN_CANONICAL

    def test_golden_digest(self):
        assert hashlib.sha256(GOLDEN_CANONICAL.encode("utf-8")).hexdigest() == GOLDEN_DIGEST
        assert digest_config(validate_config(GOLDEN_DOC)) == GOLDEN_DIGEST

    def test_deterministic_and_sensitive(self):
        a = crew(happy_script())
        assert digest_config(a) == digest_config(crew(happy_script()))
        assert digest_config(a) != digest_config(crew(happy_script(), max_revisions=a.max_revisions + 1))
        assert len(digest_config(a)) == 64
        assert digest_config(a) == digest_config(a).lower()

    def test_stable_across_key_order(self):
        shuffled = {k: GOLDEN_DOC[k] for k in reversed(list(GOLDEN_DOC))}
        shuffled["agents"] = {k: dict(reversed(list(v.items()))) for k, v in reversed(list(GOLDEN_DOC["agents"].items()))}
        assert digest_config(validate_config(shuffled)) == GOLDEN_DIGEST


# ---------------------------------------------------------------------------
# Serialization round-trips

text = st.text(alphabet=st.characters(blacklist_categories=("Cs",)), min_size=0, max_size=20)
nonempty = text.filter(lambda s: s.strip() != "")
stamps = st.datetimes(
    min_value=datetime(2000, 1, 1), max_value=datetime(2100, 1, 1), timezones=st.just(timezone.utc)
)


@st.composite
def annotations(draw):
    decision = draw(st.sampled_from(["preserve", "adapt", "transliterate_with_clarifier"]))
    replacement = None if decision == "preserve" else draw(nonempty)
    return Annotation(draw(nonempty), decision, replacement, draw(text))


@st.composite
def synthesized(draw):
    anns = draw(st.lists(annotations(), max_size=4))
    body = draw(nonempty)
    # Make every preserved span occur in the text so the value is valid.
    final = " ".join([body, *(a.source_span for a in anns if a.decision.value == "preserve")])
    return SynthesizedText(final, tuple(anns))


evidence = st.builds(
    SearchEvidence,
    query=nonempty,
    results=st.lists(st.builds(SearchResult, title=text, snippet=text, url=text), max_size=3).map(tuple),
    fetched_at=stamps,
    origin=st.sampled_from(["live", "fixture", "cache"]),
)


@st.composite
def reports(draw):
    evs = tuple(draw(st.lists(evidence, max_size=3)))
    verdict = draw(st.sampled_from(["accept", "revise"]))
    severities = ["minor"] if verdict == "accept" else ["minor", "blocking"]
    refs = st.lists(st.integers(0, len(evs) - 1), max_size=2).map(tuple) if evs else st.just(())
    issue = st.builds(
        Issue,
        category=st.sampled_from(["grammar", "cultural_inaccuracy", "bias", "factual", "coherence"]),
        severity=st.sampled_from(severities),
        responsible=st.sampled_from(["translation", "interpretation", "synthesis"]),
        description=nonempty,
        evidence_refs=refs,
    )
    issues = draw(st.lists(issue, min_size=1 if verdict == "revise" else 0, max_size=3))
    return EvaluationReport(verdict, tuple(issues), evs)


jobs = st.builds(
    TranslationJob,
    source_text=nonempty,
    source_lang=st.sampled_from(["en", "de"]),
    target_lang=st.sampled_from(["hi", "tr", "he"]),
    cultural_domain=st.sampled_from(["festival", "religion", "history", "general"]),
    job_id=st.text("abcdef0123456789", min_size=1, max_size=12),
    created_at=stamps,
)


@settings(max_examples=60, deadline=None)
@given(st.one_of(
    st.builds(RawTranslation, nonempty, st.none() | text),
    st.builds(CulturalAdaptation, nonempty, st.lists(annotations(), max_size=4).map(tuple)),
    synthesized(),
    reports(),
    evidence,
    jobs,
))
def test_round_trip(value):
    assert type(value).from_dict(value.to_dict()) == value


@settings(max_examples=40, deadline=None)
@given(jobs, st.lists(st.sampled_from(list(EventKind)), max_size=6), st.none() | synthesized(), reports())
def test_transcript_round_trip(job, kinds, output, report):
    events = tuple(Event(n + 1, k, Role.TRANSLATION, {"n": n, "text": "ü"}, EPOCH) for n, k in enumerate(kinds))
    status = RunStatus.ACCEPTED if output is not None else RunStatus.FAILED
    transcript = Transcript(job, "a" * 64, events, FinalRecord(status, output, report))
    assert Transcript.from_dict(transcript.to_dict()) == transcript


def test_config_round_trip():
    config = crew(happy_script(), max_revisions=5)
    assert validate_config(config.to_dict()) == config
