"""Default agent definitions and the per-role output contracts.

The output contract is appended to every system message so that the
model knows the exact JSON document its stage must emit.
"""
from __future__ import annotations

from .domain import Role

DEFAULT_AGENTS: dict[Role, dict[str, object]] = {
    Role.TRANSLATION: {
        "goal": "Produce a grammatically correct, meaning-preserving translation of the source text.",
        "backstory": (
            "You are a careful professional translator. You care about syntax and "
            "precision first; cultural polishing is handled by colleagues."
        ),
        "allow_delegation": True,
        "prompt_template": (
            "Translate the following {source_lang} text into {target_lang}.\n"
            "Cultural domain: {cultural_domain}.\n\n"
            "Source text:\n{source_text}"
        ),
    },
    Role.INTERPRETATION: {
        "goal": "Make the translation culturally appropriate for readers of the target language.",
        "backstory": (
            "You are a cultural mediator fluent in both languages. You decide, term by "
            "term, whether a culturally loaded expression is kept as-is, adapted, or "
            "transliterated with a short clarifier."
        ),
        "allow_delegation": True,
        "prompt_template": (
            "Source ({source_lang}, domain {cultural_domain}):\n{source_text}\n\n"
            "Raw {target_lang} translation:\n{upstream_translation}\n\n"
            "Adapt idioms and cultural references and annotate every culturally "
            "significant span of the source or raw translation."
        ),
    },
    Role.SYNTHESIS: {
        "goal": "Turn the adapted translation into fluent, well-structured final text.",
        "backstory": (
            "You are an editor for target-language publications. You never drop a term "
            "that was marked to be preserved."
        ),
        "allow_delegation": False,
        "prompt_template": (
            "Raw translation:\n{upstream_translation}\n\n"
            "Culturally adapted text and annotations:\n{upstream_adaptation}\n\n"
            "Write the final {target_lang} text, applying every annotation."
        ),
    },
    Role.EVALUATION: {
        "goal": "Review the final translation for accuracy, bias and cultural misrepresentation.",
        "backstory": (
            "You are an independent reviewer. You check cultural references against the "
            "supplied search evidence and report problems precisely, naming which stage "
            "must fix each one."
        ),
        "allow_delegation": False,
        "prompt_template": (
            "Source ({source_lang}):\n{source_text}\n\n"
            "Final {target_lang} text:\n{upstream_final}\n\n"
            "Annotations:\n{upstream_adaptation}\n\n"
            "Search evidence:\n{evidence}"
        ),
    },
}

_ANNOTATION_SHAPE = (
    '{"source_span": "<exact span>", "decision": "preserve" | "adapt" | '
    '"transliterate_with_clarifier", "replacement": "<text, omitted for preserve>", '
    '"rationale": "<why>"}'
)

OUTPUT_CONTRACTS: dict[Role, str] = {
    Role.TRANSLATION: (
        'Respond with one JSON object: {"translated_text": "<translation>", "notes": "<optional>"}.'
    ),
    Role.INTERPRETATION: (
        'Respond with one JSON object: {"adapted_text": "<text>", "annotations": [ANNOTATION, ...]} '
        f"where ANNOTATION is {_ANNOTATION_SHAPE}. Every source_span must be copied exactly "
        "from the source text or the raw translation."
    ),
    Role.SYNTHESIS: (
        'Respond with one JSON object: {"final_text": "<text>", "applied_annotations": [ANNOTATION, ...]} '
        f"where ANNOTATION is {_ANNOTATION_SHAPE}. Every span marked preserve must appear verbatim "
        "in final_text."
    ),
    Role.EVALUATION: (
        'Respond with one JSON object: {"verdict": "accept" | "revise", "issues": [ISSUE, ...]} '
        'where ISSUE is {"category": "grammar" | "cultural_inaccuracy" | "bias" | "factual" | '
        '"coherence", "severity": "minor" | "blocking", "responsible": "translation" | '
        '"interpretation" | "synthesis", "description": "<text>", "evidence_refs": [<evidence index>, ...]}. '
        'Use "revise" only when at least one issue is blocking.'
    ),
}

DELEGATION_CONTRACT = (
    'If you need help from another agent, you may add a top-level "delegation" field: '
    '{"target": "<role>", "question": "<text>"}. It is answered at most once.'
)

CORRECTIVE_INSTRUCTION = (
    "Your previous reply could not be used: {reason}. "
    "Reply again with only the required JSON object."
)
