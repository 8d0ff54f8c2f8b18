"""Loading and validating crew configuration documents."""
from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import yaml

from . import domain
from .domain import (
    DELEGATING_ROLES,
    PIPELINE_ORDER,
    AgentSpec,
    BackendConfig,
    CrewConfig,
    DomainError,
    ModelParams,
    Role,
    SearchConfig,
)
from .prompts import DEFAULT_AGENTS

MISSING_ROLE = "MissingRole"
FORBIDDEN_DELEGATION = "ForbiddenDelegation"
BAD_PLACEHOLDER = "BadPlaceholder"
MISSING_FIELD = "MissingField"
UNKNOWN_FIELD = "UnknownField"
INVALID_VALUE = "InvalidValue"


@dataclass(frozen=True)
class FieldError:
    path: str
    code: str
    message: str

    def __str__(self) -> str:
        return f"{self.path}: {self.code}: {self.message}"


class ConfigError(Exception):
    """Raised with every violated field path of a configuration document."""

    def __init__(self, errors: list[FieldError]):
        self.errors = list(errors)
        super().__init__("; ".join(str(e) for e in self.errors))

    @property
    def paths(self) -> list[str]:
        return [e.path for e in self.errors]

    @property
    def codes(self) -> set[str]:
        return {e.code for e in self.errors}


_TOP_KEYS = {"agents", "max_revisions", "max_delegations_per_stage", "backend", "search"}
_AGENT_KEYS = {"role", "goal", "backstory", "allow_delegation", "prompt_template", "model_params"}
_BACKEND_KEYS = {"kind", "base_url", "model", "timeout_ms", "script"}
_SEARCH_KEYS = {"mode", "fixture_dir", "ttl_seconds", "max_results", "endpoint"}


class _Collector:
    def __init__(self) -> None:
        self.errors: list[FieldError] = []

    def add(self, path: str, code: str, message: str) -> None:
        self.errors.append(FieldError(path, code, message))

    def unknown(self, section: Mapping[str, Any], allowed: set[str], prefix: str) -> None:
        for key in section:
            if key not in allowed:
                self.add(f"{prefix}{key}", UNKNOWN_FIELD, "unknown field")

    def mapping(self, value: Any, path: str) -> Mapping[str, Any] | None:
        if not isinstance(value, Mapping):
            self.add(path, INVALID_VALUE, "must be a mapping")
            return None
        return value


def _nonneg_int(errors: _Collector, raw: Mapping[str, Any], key: str, default: int, cap: int | None = None) -> int:
    value = raw.get(key, default)
    if isinstance(value, bool) or not isinstance(value, int) or value < 0:
        errors.add(key, INVALID_VALUE, "must be a non-negative integer")
        return default
    if cap is not None and value > cap:
        errors.add(key, INVALID_VALUE, f"must be <= {cap}")
        return default
    return value


def _agent(errors: _Collector, role: Role, raw: Mapping[str, Any]) -> AgentSpec | None:
    prefix = f"agents.{role.value}."
    errors.unknown(raw, _AGENT_KEYS, prefix)
    defaults = DEFAULT_AGENTS[role]
    before = len(errors.errors)
    if raw.get("role", role.value) != role.value:
        errors.add(prefix + "role", INVALID_VALUE, f"must be {role.value!r} under agents.{role.value}")

    allow = raw.get("allow_delegation", defaults["allow_delegation"])
    if not isinstance(allow, bool):
        errors.add(prefix + "allow_delegation", INVALID_VALUE, "must be a boolean")
    elif allow and role not in DELEGATING_ROLES:
        errors.add(prefix + "allow_delegation", FORBIDDEN_DELEGATION, f"{role.value} agent must not delegate")

    template = raw.get("prompt_template", defaults["prompt_template"])
    if not isinstance(template, str) or not template.strip():
        errors.add(prefix + "prompt_template", INVALID_VALUE, "must be nonempty text")
    else:
        try:
            unknown = domain.unknown_placeholders(template)
        except DomainError as exc:
            errors.add(prefix + "prompt_template", BAD_PLACEHOLDER, str(exc))
        else:
            for name in unknown:
                errors.add(prefix + "prompt_template", BAD_PLACEHOLDER, f"unknown placeholder {{{name}}}")

    for key in ("goal", "backstory"):
        value = raw.get(key, defaults[key])
        if not isinstance(value, str) or (key == "goal" and not value.strip()):
            errors.add(prefix + key, INVALID_VALUE, "must be nonempty text" if key == "goal" else "must be text")

    params = ModelParams()
    if "model_params" in raw:
        mp = errors.mapping(raw["model_params"], prefix + "model_params")
        if mp is not None:
            errors.unknown(mp, {"temperature", "max_tokens"}, prefix + "model_params.")
            for key in ("temperature", "max_tokens"):
                try:
                    params = ModelParams(**{**params.to_dict(), key: mp.get(key, getattr(params, key))})
                except DomainError as exc:
                    errors.add(prefix + f"model_params.{key}", INVALID_VALUE, str(exc))

    if len(errors.errors) != before:
        return None
    return AgentSpec(
        role=role,
        goal=raw.get("goal", defaults["goal"]),
        backstory=raw.get("backstory", defaults["backstory"]),
        allow_delegation=allow,
        prompt_template=template,
        model_params=params,
    )


def _backend(errors: _Collector, raw: Any) -> BackendConfig | None:
    section = errors.mapping(raw, "backend")
    if section is None:
        return None
    errors.unknown(section, _BACKEND_KEYS, "backend.")
    kind = section.get("kind")
    if kind not in ("http", "scripted"):
        errors.add("backend.kind", INVALID_VALUE if kind is not None else MISSING_FIELD, "must be http or scripted")
        return None
    if kind == "http":
        for key in ("base_url", "model"):
            if not isinstance(section.get(key), str) or not section.get(key):
                errors.add(f"backend.{key}", MISSING_FIELD, "required for http backend")
    else:
        script = section.get("script")
        if not isinstance(script, Mapping):
            errors.add("backend.script", MISSING_FIELD, "required mapping for scripted backend")
        else:
            for key, value in script.items():
                if not isinstance(value, str):
                    errors.add(f"backend.script.{key}", INVALID_VALUE, "must be text")
    timeout = section.get("timeout_ms", domain.DEFAULT_TIMEOUT_MS)
    if isinstance(timeout, bool) or not isinstance(timeout, int) or timeout <= 0:
        errors.add("backend.timeout_ms", INVALID_VALUE, "must be a positive integer")
    if errors.errors:
        return None
    return BackendConfig(
        kind=kind,
        base_url=section.get("base_url"),
        model=section.get("model"),
        timeout_ms=timeout,
        script=section.get("script"),
    )


def _search(errors: _Collector, raw: Any, base_dir: Path | None) -> SearchConfig | None:
    if raw is None:
        return SearchConfig(base_dir=base_dir)
    section = errors.mapping(raw, "search")
    if section is None:
        return None
    errors.unknown(section, _SEARCH_KEYS, "search.")
    kwargs: dict[str, Any] = {k: section[k] for k in _SEARCH_KEYS if k in section}
    mode = kwargs.get("mode", "disabled")
    if mode not in ("live", "fixture", "disabled"):
        errors.add("search.mode", INVALID_VALUE, "must be live, fixture or disabled")
        return None
    for key in ("ttl_seconds", "max_results"):
        value = kwargs.get(key, 1)
        if isinstance(value, bool) or not isinstance(value, int) or value <= 0:
            errors.add(f"search.{key}", INVALID_VALUE, "must be a positive integer")
    if mode == "fixture":
        fixture_dir = kwargs.get("fixture_dir")
        if not isinstance(fixture_dir, str) or not fixture_dir:
            errors.add("search.fixture_dir", MISSING_FIELD, "required in fixture mode")
        else:
            probe = SearchConfig(mode="disabled", fixture_dir=fixture_dir, base_dir=base_dir)
            if not probe.resolved_fixture_dir().is_dir():
                errors.add("search.fixture_dir", INVALID_VALUE, f"directory {fixture_dir!r} does not exist")
    if errors.errors:
        return None
    return SearchConfig(base_dir=base_dir, **kwargs)


def validate_config(raw: Any, *, base_dir: Path | None = None) -> CrewConfig:
    """Validate a parsed configuration document and build a :class:`CrewConfig`.

    Agent fields other than the agent entry itself fall back to the shipped
    defaults. ``base_dir`` anchors a relative ``search.fixture_dir``.

    Raises:
        ConfigError: listing every violated field path, not just the first.
    """
    errors = _Collector()
    if not isinstance(raw, Mapping):
        raise ConfigError([FieldError("$", INVALID_VALUE, "configuration must be a mapping")])
    errors.unknown(raw, _TOP_KEYS, "")

    agents: dict[Role, AgentSpec] = {}
    agents_raw = raw.get("agents")
    if agents_raw is None:
        errors.add("agents", MISSING_FIELD, "required")
    elif errors.mapping(agents_raw, "agents") is not None:
        for key in agents_raw:
            if key not in {r.value for r in PIPELINE_ORDER}:
                errors.add(f"agents.{key}", UNKNOWN_FIELD, "unknown agent role")
        for role in PIPELINE_ORDER:
            if role.value not in agents_raw:
                errors.add(f"agents.{role.value}", MISSING_ROLE, "agent missing")
                continue
            section = agents_raw[role.value] or {}
            if errors.mapping(section, f"agents.{role.value}") is None:
                continue
            spec = _agent(errors, role, section)
            if spec is not None:
                agents[role] = spec

    max_revisions = _nonneg_int(errors, raw, "max_revisions", domain.DEFAULT_MAX_REVISIONS, domain.MAX_REVISIONS_CAP)
    max_delegations = _nonneg_int(errors, raw, "max_delegations_per_stage", domain.DEFAULT_MAX_DELEGATIONS)

    backend = None
    if "backend" not in raw:
        errors.add("backend", MISSING_FIELD, "required")
    else:
        sub = _Collector()
        backend = _backend(sub, raw["backend"])
        errors.errors.extend(sub.errors)

    sub = _Collector()
    search = _search(sub, raw.get("search"), base_dir)
    errors.errors.extend(sub.errors)

    if errors.errors:
        raise ConfigError(errors.errors)
    assert backend is not None and search is not None
    return CrewConfig(
        agents=agents,
        backend=backend,
        search=search,
        max_revisions=max_revisions,
        max_delegations_per_stage=max_delegations,
    )


def load_config(path: str | Path) -> CrewConfig:
    """Read a YAML (or JSON) configuration file and validate it."""
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError([FieldError("$", INVALID_VALUE, f"not a well-formed document: {exc}")]) from None
    return validate_config(raw, base_dir=path.parent.resolve())

