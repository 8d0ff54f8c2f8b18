"""Web-search validation tool with a TTL cache and an offline fixture mode."""
from __future__ import annotations

import html
import json
import logging
import re
import threading
import time
from collections.abc import Callable, Iterable, Mapping
from concurrent.futures import Future
from dataclasses import dataclass
from datetime import datetime
from html.parser import HTMLParser
from typing import Any
from urllib.parse import parse_qs, urlparse

import requests

from .domain import (
    Origin,
    SearchConfig,
    SearchEvidence,
    SearchMode,
    SearchResult,
    nfc,
    utcnow,
)

logger = logging.getLogger(__name__)

MAX_SLUG_LEN = 100
MAX_SNIPPET_LEN = 500
LIVE_TIMEOUT_S = 10.0

_NON_ALNUM = re.compile(r"[^0-9a-z]+")
_TAG = re.compile(r"<[^>]*>")
_WS = re.compile(r"\s+")


class SearchError(Exception):
    pass


class ToolDisabled(SearchError):
    pass


class UpstreamError(SearchError):
    pass


def slug(query: str) -> str:
    """Filename-safe key: lowercase, non-alphanumeric runs become one ``-``."""
    s = _NON_ALNUM.sub("-", query.lower()).strip("-")
    return s[:MAX_SLUG_LEN].rstrip("-") if len(s) > MAX_SLUG_LEN else s


def normalize_query(query: str) -> str:
    return _WS.sub(" ", nfc(query)).strip()


def clean_text(text: str, limit: int | None = None) -> str:
    text = _WS.sub(" ", html.unescape(_TAG.sub(" ", text))).strip()
    if limit is not None and len(text) > limit:
        text = text[:limit]
    return nfc(text)


@dataclass(frozen=True)
class SearchOutcome:
    evidence: SearchEvidence
    warning: str | None = None


class _ResultExtractor(HTMLParser):
    """Collects (title, url) anchors and snippet cells from a results page.

    Understands the DuckDuckGo lite (``result-link``/``result-snippet``) and
    html (``result__a``/``result__snippet``) class names.
    """

    _LINK = frozenset({"result-link", "result__a"})
    _SNIPPET = frozenset({"result-snippet", "result__snippet"})

    def __init__(self) -> None:
        super().__init__(convert_charrefs=True)
        self.links: list[tuple[str, str]] = []
        self.snippets: list[str] = []
        self._mode: str | None = None
        self._depth = 0
        self._buf: list[str] = []
        self._href = ""

    def handle_starttag(self, tag: str, attrs: list[tuple[str, str | None]]) -> None:
        if self._mode is not None:
            self._depth += 1
            return
        a = dict(attrs)
        classes = set((a.get("class") or "").split())
        if tag == "a" and classes & self._LINK:
            self._mode, self._href = "link", a.get("href") or ""
        elif classes & self._SNIPPET:
            self._mode = "snippet"
        else:
            return
        self._depth = 0
        self._buf = []

    def handle_endtag(self, tag: str) -> None:
        if self._mode is None:
            return
        if self._depth > 0:
            self._depth -= 1
            return
        text = "".join(self._buf)
        if self._mode == "link":
            self.links.append((text, self._href))
        else:
            self.snippets.append(text)
        self._mode = None

    def handle_data(self, data: str) -> None:
        if self._mode is not None:
            self._buf.append(data)


def _unwrap_redirect(href: str) -> str:
    if href.startswith("//"):
        href = "https:" + href
    parsed = urlparse(href)
    if parsed.path.startswith("/l/"):
        target = parse_qs(parsed.query).get("uddg")
        if target:
            return target[0]
    return href


def parse_results_page(page: str, max_results: int) -> list[SearchResult]:
    """Tolerant extraction of result (title, snippet, url) triples."""
    extractor = _ResultExtractor()
    try:
        extractor.feed(page)
        extractor.close()
    except Exception:  # noqa: BLE001 - markup drift must not fail the run
        logger.warning("could not parse search results page")
        return []
    results = []
    for n, (title, href) in enumerate(extractor.links[:max_results]):
        snippet = extractor.snippets[n] if n < len(extractor.snippets) else ""
        results.append(
            SearchResult(
                title=clean_text(title),
                snippet=clean_text(snippet, MAX_SNIPPET_LEN),
                url=_unwrap_redirect(href.strip()),
            )
        )
    return results


class SearchTool:
    """Runs validation queries according to a :class:`SearchConfig`.

    Results are cached per normalized query for ``ttl_seconds``. Concurrent
    misses for the same query share one in-flight fetch.
    """

    def __init__(
        self,
        config: SearchConfig,
        *,
        session: requests.Session | None = None,
        clock: Callable[[], float] = time.monotonic,
        now: Callable[[], datetime] = utcnow,
    ):
        self.config = config
        self.session = session
        self.clock = clock
        self.now = now
        self.reads = 0
        self._cache: dict[str, tuple[float, tuple[SearchResult, ...]]] = {}
        self._inflight: dict[str, Future] = {}
        self._lock = threading.Lock()

    @property
    def enabled(self) -> bool:
        return self.config.mode is not SearchMode.DISABLED

    def search(self, query: str) -> SearchEvidence:
        return self.lookup(query).evidence

    def lookup(self, query: str) -> SearchOutcome:
        """Like :meth:`search` but also reports a non-fatal warning.

        Raises:
            ToolDisabled: in disabled mode.
            UpstreamError: if a live fetch fails twice.
        """
        if not self.enabled:
            raise ToolDisabled("search tool is disabled")
        key = normalize_query(query)
        if not key:
            raise ValueError("query must be nonempty")
        with self._lock:
            hit = self._cache.get(key)
            if hit is not None and self.clock() - hit[0] < self.config.ttl_seconds:
                return SearchOutcome(self._evidence(key, hit[1], Origin.CACHE))
            future = self._inflight.get(key)
            owner = future is None
            if owner:
                future = Future()
                self._inflight[key] = future
        if not owner:
            results, origin, warning = future.result()
            return SearchOutcome(self._evidence(key, results, Origin.CACHE if warning is None else origin), warning)
        try:
            results, origin, warning = self._fetch(key)
        except BaseException as exc:
            with self._lock:
                del self._inflight[key]
            future.set_exception(exc)
            raise
        with self._lock:
            if warning is None:
                self._cache[key] = (self.clock(), results)
            del self._inflight[key]
        future.set_result((results, origin, warning))
        return SearchOutcome(self._evidence(key, results, origin), warning)

    def _evidence(self, query: str, results: Iterable[SearchResult], origin: Origin) -> SearchEvidence:
        return SearchEvidence(query=query, results=tuple(results), fetched_at=self.now(), origin=origin)

    def _fetch(self, query: str) -> tuple[tuple[SearchResult, ...], Origin, str | None]:
        self.reads += 1
        if self.config.mode is SearchMode.FIXTURE:
            return self._read_fixture(query)
        return self._fetch_live(query)

    def _read_fixture(self, query: str) -> tuple[tuple[SearchResult, ...], Origin, str | None]:
        path = self.config.resolved_fixture_dir() / f"{slug(query)}.json"
        if not path.is_file():
            warning = f"FixtureMiss: no fixture {path.name} for query {query!r}"
            logger.warning(warning)
            return (), Origin.FIXTURE, warning
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
            results = _normalize_results(doc.get("results", ()), self.config.max_results)
        except (ValueError, AttributeError, TypeError) as exc:
            warning = f"FixtureMiss: unreadable fixture {path.name}: {exc}"
            logger.warning(warning)
            return (), Origin.FIXTURE, warning
        return results, Origin.FIXTURE, None

    def _fetch_live(self, query: str) -> tuple[tuple[SearchResult, ...], Origin, str | None]:
        session = self.session or requests.Session()
        last: Exception | None = None
        for _attempt in range(2):
            try:
                resp = session.get(
                    self.config.endpoint,
                    params={"q": query},
                    headers={"Accept-Charset": "utf-8"},
                    timeout=LIVE_TIMEOUT_S,
                )
                if resp.status_code >= 500 or resp.status_code == 429:
                    last = UpstreamError(f"HTTP {resp.status_code} from search endpoint")
                    continue
                if resp.status_code >= 400:
                    raise UpstreamError(f"HTTP {resp.status_code} from search endpoint")
                resp.encoding = resp.encoding or "utf-8"
                results = parse_results_page(resp.text, self.config.max_results)
                warning = None if results else f"no results parsed for query {query!r}"
                if warning:
                    logger.warning(warning)
                return tuple(results), Origin.LIVE, warning
            except requests.RequestException as exc:
                last = exc
        raise UpstreamError(f"search for {query!r} failed after retry: {last}")


def _normalize_results(items: Any, max_results: int) -> tuple[SearchResult, ...]:
    out = []
    for item in list(items)[:max_results]:
        out.append(
            SearchResult(
                title=clean_text(str(item.get("title", ""))),
                snippet=clean_text(str(item.get("snippet", "")), MAX_SNIPPET_LEN),
                url=str(item.get("url", "")).strip(),
            )
        )
    return tuple(out)


class ReplaySearch:
    """Answers queries with evidence recorded in a transcript, in order."""

    def __init__(self, recorded: Iterable[tuple[str, Mapping[str, Any] | None, str | None]], enabled: bool = True):
        self._queues: dict[str, list[tuple[Mapping[str, Any] | None, str | None]]] = {}
        for query, evidence, warning in recorded:
            self._queues.setdefault(normalize_query(query), []).append((evidence, warning))
        self._enabled = enabled
        self._lock = threading.Lock()

    @property
    def enabled(self) -> bool:
        return self._enabled

    def search(self, query: str) -> SearchEvidence:
        return self.lookup(query).evidence

    def lookup(self, query: str) -> SearchOutcome:
        if not self._enabled:
            raise ToolDisabled("search tool is disabled")
        with self._lock:
            queue = self._queues.get(normalize_query(query))
            if not queue:
                raise UpstreamError(f"no recorded search result for {query!r}")
            evidence, warning = queue.pop(0)
        if evidence is None:
            raise UpstreamError(warning or "recorded search failure")
        return SearchOutcome(SearchEvidence.from_dict(evidence), warning)
