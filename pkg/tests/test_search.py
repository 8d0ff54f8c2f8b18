from __future__ import annotations

import json
import socket
import threading
import time

import pytest
import requests
from _support import CONFIGS
from hypothesis import given
from hypothesis import strategies as st

from crewline.domain import Origin, SearchConfig
from crewline.search import (
    SearchTool,
    ToolDisabled,
    UpstreamError,
    clean_text,
    normalize_query,
    parse_results_page,
    slug,
)

DIWALI_FIXTURES = CONFIGS / "fixtures" / "diwali"

LITE_PAGE = """<html><body><table>
<tr><td>1.&nbsp;</td><td><a rel="nofollow" href="//duckduckgo.com/l/?uddg=https%3A%2F%2Fexample.org%2Flakshmi&amp;rut=x" class='result-link'>Lakshmi <b>Puja</b></a></td></tr>
<tr><td>&nbsp;</td><td class='result-snippet'>Worship of the goddess Lakshmi on the <b>Diwali</b> evening.</td></tr>
<tr><td>2.&nbsp;</td><td><a rel="nofollow" href="https://example.org/diyas" class='result-link'>Diyas &amp; lamps</a></td></tr>
<tr><td>&nbsp;</td><td class='result-snippet'>Clay lamps   lit in rows.</td></tr>
</table></body></html>"""


class FakeResponse:
    def __init__(self, status: int, text: str = ""):
        self.status_code = status
        self.text = text
        self.encoding = "utf-8"


class FakeSession:
    def __init__(self, *responses):
        self.responses = list(responses)
        self.calls: list[dict] = []

    def get(self, url, params=None, **kwargs):
        self.calls.append({"url": url, "params": params})
        item = self.responses.pop(0) if len(self.responses) > 1 else self.responses[0]
        if isinstance(item, Exception):
            raise item
        return item


def fixture_tool(directory=DIWALI_FIXTURES, **kw) -> SearchTool:
    return SearchTool(SearchConfig(mode="fixture", fixture_dir=str(directory), **kw))


class TestSlug:
    def test_examples(self):
        assert slug("Lakshmi Puja Diwali tradition") == "lakshmi-puja-diwali-tradition"
        assert slug("  A  B  ") == "a-b"

    def test_truncation_preserves_prefix(self):
        query = "x" * 200
        assert slug(query) == "x" * 100
        query = "Shabbat candles " * 13
        assert len(query) > 200
        out = slug(query)
        assert len(out) <= 100
        assert slug(query.strip()).startswith(out)
        assert out.startswith("shabbat-candles-shabbat")

    @given(st.text(min_size=1, max_size=300))
    def test_idempotent_and_safe(self, query):
        out = slug(query)
        assert slug(out) == out
        assert len(out) <= 100
        assert set(out) <= set("abcdefghijklmnopqrstuvwxyz0123456789-")
        assert "--" not in out


def test_normalize_and_clean():
    assert normalize_query("  Lakshmi \t Puja\n") == "Lakshmi Puja"
    assert clean_text("<b>Diwali</b> &amp;  lights") == "Diwali & lights"
    assert len(clean_text("y" * 900, 500)) == 500


class TestFixtureMode:
    def test_three_result_fixture(self):
        evidence = fixture_tool().search("Lakshmi Puja Diwali tradition")
        assert len(evidence.results) == 3
        assert evidence.origin is Origin.FIXTURE
        assert evidence.query == "Lakshmi Puja Diwali tradition"

    def test_max_results_caps_fixture(self):
        assert len(fixture_tool(max_results=2).search("Lakshmi Puja Diwali tradition").results) == 2

    def test_cache_hit_reads_nothing(self, tmp_path):
        (tmp_path / "holi-festival-tradition.json").write_text(
            json.dumps({"query": "Holi festival tradition", "results": [{"title": "Holi", "snippet": "colours", "url": "u"}]}),
            encoding="utf-8",
        )
        tool = fixture_tool(tmp_path)
        first = tool.search("Holi festival tradition")
        # With the file gone, only the cache can answer.
        (tmp_path / "holi-festival-tradition.json").unlink()
        second = tool.search("  Holi   festival tradition ")
        assert tool.reads == 1
        assert second.origin is Origin.CACHE
        assert second.results == first.results

    def test_cache_expires_after_ttl(self):
        now = [0.0]
        tool = SearchTool(
            SearchConfig(mode="fixture", fixture_dir=str(DIWALI_FIXTURES), ttl_seconds=10), clock=lambda: now[0]
        )
        tool.search("Lakshmi Puja Diwali tradition")
        now[0] = 9.9
        assert tool.search("Lakshmi Puja Diwali tradition").origin is Origin.CACHE
        now[0] = 10.0
        assert tool.search("Lakshmi Puja Diwali tradition").origin is Origin.FIXTURE
        assert tool.reads == 2

    def test_miss_is_a_warning_not_an_error(self, tmp_path):
        tool = fixture_tool(tmp_path)
        outcome = tool.lookup("baklava festival tradition")
        assert outcome.evidence.results == ()
        assert outcome.warning is not None and outcome.warning.startswith("FixtureMiss")
        # Misses are not cached: a fixture added later is picked up.
        (tmp_path / "baklava-festival-tradition.json").write_text('{"results": [{"title": "t"}]}', encoding="utf-8")
        assert len(tool.search("baklava festival tradition").results) == 1

    def test_no_network(self, monkeypatch):
        def refuse(*args, **kwargs):
            raise AssertionError("network access attempted")

        monkeypatch.setattr(socket, "socket", refuse)
        monkeypatch.setattr(socket, "create_connection", refuse)
        assert len(fixture_tool().search("Lakshmi Puja Diwali tradition").results) == 3


def test_disabled_mode():
    tool = SearchTool(SearchConfig(mode="disabled"))
    assert not tool.enabled
    with pytest.raises(ToolDisabled):
        tool.search("anything")


class TestLiveMode:
    def test_parses_lite_page(self):
        results = parse_results_page(LITE_PAGE, 5)
        assert [r.title for r in results] == ["Lakshmi Puja", "Diyas & lamps"]
        assert results[0].url == "https://example.org/lakshmi"
        assert results[0].snippet == "Worship of the goddess Lakshmi on the Diwali evening."
        assert results[1].snippet == "Clay lamps lit in rows."

    def test_parses_html_variant(self):
        page = (
            '<div class="result"><a class="result__a" href="https://example.org/a">A</a>'
            '<a class="result__snippet" href="https://example.org/a">first <b>one</b></a></div>'
        )
        assert [(r.title, r.snippet) for r in parse_results_page(page, 5)] == [("A", "first one")]

    def test_garbage_page_gives_empty(self):
        assert parse_results_page("<html><p>captcha</p>", 5) == []
        assert parse_results_page("<<<>>>&&&", 5) == []

    def test_get_with_q_parameter(self):
        session = FakeSession(FakeResponse(200, LITE_PAGE))
        tool = SearchTool(SearchConfig(mode="live", max_results=1), session=session)
        evidence = tool.search("Lakshmi Puja")
        assert session.calls == [{"url": "https://lite.duckduckgo.com/lite/", "params": {"q": "Lakshmi Puja"}}]
        assert evidence.origin is Origin.LIVE
        assert len(evidence.results) == 1

    def test_one_retry_on_transient_failure(self):
        session = FakeSession(FakeResponse(503), FakeResponse(200, LITE_PAGE))
        tool = SearchTool(SearchConfig(mode="live"), session=session)
        assert len(tool.search("Lakshmi Puja").results) == 2
        assert len(session.calls) == 2

    def test_fails_after_one_retry(self):
        session = FakeSession(requests.ConnectionError("down"))
        tool = SearchTool(SearchConfig(mode="live"), session=session)
        with pytest.raises(UpstreamError):
            tool.search("Lakshmi Puja")
        assert len(session.calls) == 2

    def test_cache_hit_makes_no_request(self):
        session = FakeSession(FakeResponse(200, LITE_PAGE))
        tool = SearchTool(SearchConfig(mode="live"), session=session)
        first = tool.search("Lakshmi Puja")
        second = tool.search("Lakshmi Puja")
        assert len(session.calls) == 1
        assert second.origin is Origin.CACHE
        assert second.results == first.results

    def test_concurrent_identical_queries_coalesce(self):
        release = threading.Event()

        class SlowSession(FakeSession):
            def get(self, url, params=None, **kwargs):
                release.wait(2)
                return super().get(url, params=params, **kwargs)

        session = SlowSession(FakeResponse(200, LITE_PAGE))
        tool = SearchTool(SearchConfig(mode="live"), session=session)
        results = []
        threads = [threading.Thread(target=lambda: results.append(tool.search("Lakshmi Puja"))) for _ in range(8)]
        for t in threads:
            t.start()
        time.sleep(0.05)
        release.set()
        for t in threads:
            t.join()
        assert len(session.calls) == 1
        assert len(results) == 8
        assert len({r.results for r in results}) == 1
