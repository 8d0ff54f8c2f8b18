from __future__ import annotations

import json

import pytest
import yaml
from _support import (
    CONFIGS,
    DIWALI_TEXT,
    FIXTURES,
    crew,
    evaluate,
    happy_script,
    interp,
    issue,
    preserve,
    synth,
)

from crewline.cli import main

PAIR = FIXTURES / "transcripts"
DIWALI = CONFIGS / "diwali_hi.yaml"


def write_config(path, config):
    path.write_text(yaml.safe_dump(config.to_dict(), allow_unicode=True), encoding="utf-8")
    return path


def run_args(config, out, *extra, text=DIWALI_TEXT):
    return ["run", "--config", str(config), "--text", text, "--source", "en", "--target", "hi",
            "--domain", "festival", "--out", str(out), *extra]


class TestRun:
    def test_diwali(self, tmp_path, capsys):
        assert main(run_args(DIWALI, tmp_path, "--job-id", "d1")) == 0
        out, err = capsys.readouterr()
        assert "deepak" in out and "Lakshmi Puja" in out
        assert "status: accepted" in err
        assert "stage trace: T I S E" in err
        assert (tmp_path / "d1.transcript").is_file()
        assert (tmp_path / "d1.events").is_file()

    def test_input_file(self, tmp_path, capsys):
        source = tmp_path / "in.txt"
        source.write_text(DIWALI_TEXT, encoding="utf-8")
        args = ["run", "--config", str(DIWALI), "--input", str(source), "--source", "en", "--target", "hi",
                "--domain", "festival", "--out", str(tmp_path)]
        assert main(args) == 0
        assert "deepak" in capsys.readouterr().out

    def test_empty_text_is_usage_error(self, tmp_path, capsys):
        assert main(run_args(DIWALI, tmp_path, text="")) == 64
        assert "usage error" in capsys.readouterr().err

    def test_max_revisions_exceeded(self, tmp_path, capsys):
        config = write_config(
            tmp_path / "c.yaml",
            crew(happy_script(**{"evaluation:*:*": evaluate("revise", [issue("synthesis")])}), max_revisions=1),
        )
        assert main(run_args(config, tmp_path / "runs")) == 2
        out, err = capsys.readouterr()
        assert "max_revisions_exceeded" in err
        assert out.strip()  # the unvalidated output is still printed

    def test_failed_run(self, tmp_path, capsys):
        config = write_config(tmp_path / "c.yaml", crew(happy_script(**{"interpretation:*:*": "no"})))
        assert main(run_args(config, tmp_path / "runs")) == 1
        out, err = capsys.readouterr()
        assert out == ""
        assert "failed in interpretation" in err

    def test_search_override(self, tmp_path, capsys):
        fixtures = str(CONFIGS / "fixtures" / "diwali")
        script = happy_script(**{
            "interpretation:*:*": interp("Diwali Lakshmi Puja.", [preserve("Lakshmi Puja")]),
            "synthesis:*:*": synth("Diwali Lakshmi Puja.", [preserve("Lakshmi Puja")]),
        })
        config = write_config(tmp_path / "c.yaml", crew(script, search={"mode": "fixture", "fixture_dir": fixtures}))
        for mode, expect_tools in (("fixture", True), ("disabled", False)):
            assert main(run_args(config, tmp_path, "--search", mode, "--job-id", mode)) == 0
            doc = json.loads((tmp_path / f"{mode}.transcript").read_text(encoding="utf-8"))
            assert any(e["kind"] == "tool_call" for e in doc["events"]) is expect_tools
        capsys.readouterr()

    def test_missing_config(self, tmp_path, capsys):
        assert main(run_args(tmp_path / "nope.yaml", tmp_path)) == 1
        assert "not found" in capsys.readouterr().err


class TestValidate:
    def test_default(self, capsys):
        assert main(["validate", "--config", str(CONFIGS / "default.yaml")]) == 0
        assert "valid" in capsys.readouterr().out

    def test_delegation_on_evaluation(self, tmp_path, capsys):
        doc = yaml.safe_load((CONFIGS / "default.yaml").read_text(encoding="utf-8"))
        doc["agents"]["evaluation"]["allow_delegation"] = True
        path = tmp_path / "bad.yaml"
        path.write_text(yaml.safe_dump(doc), encoding="utf-8")
        assert main(["validate", "--config", str(path)]) == 1
        assert "agents.evaluation.allow_delegation" in capsys.readouterr().err

    def test_missing_backend(self, tmp_path, capsys):
        doc = yaml.safe_load((CONFIGS / "default.yaml").read_text(encoding="utf-8"))
        del doc["backend"]
        path = tmp_path / "bad.yaml"
        path.write_text(yaml.safe_dump(doc), encoding="utf-8")
        assert main(["validate", "--config", str(path)]) == 1
        assert "backend" in capsys.readouterr().err


class TestReplayAndDiff:
    def test_replay_ok_then_diverged(self, tmp_path, capsys):
        assert main(run_args(DIWALI, tmp_path, "--job-id", "r1")) == 0
        transcript = tmp_path / "r1.transcript"
        assert main(["replay", "--transcript", str(transcript), "--config", str(DIWALI)]) == 0
        assert "REPLAY OK" in capsys.readouterr().out

        doc = json.loads(transcript.read_text(encoding="utf-8"))
        first, second = doc["events"][1], doc["events"][2]
        doc["events"][1] = {**second, "seq": first["seq"]}
        doc["events"][2] = {**first, "seq": second["seq"]}
        transcript.write_text(json.dumps(doc, ensure_ascii=False), encoding="utf-8")
        assert main(["replay", "--transcript", str(transcript), "--config", str(DIWALI)]) == 3
        assert "REPLAY DIVERGED" in capsys.readouterr().out

    def test_replay_missing_file(self, tmp_path, capsys):
        assert main(["replay", "--transcript", str(tmp_path / "x.transcript"), "--config", str(DIWALI)]) == 1
        assert "not found" in capsys.readouterr().err

    def test_replay_with_other_config(self, capsys):
        nevruz = CONFIGS / "nevruz_tr.yaml"
        assert main(["replay", "--transcript", str(PAIR / "diwali_ours.transcript"), "--config", str(nevruz)]) == 1
        assert "REPLAY REFUSED" in capsys.readouterr().err

    def test_diff_identical(self, capsys):
        path = str(PAIR / "diwali_ours.transcript")
        assert main(["diff", "--a", path, "--b", path]) == 0
        assert capsys.readouterr().out.strip() == "NO DIFFERENCES"

    def test_diff_pair(self, capsys):
        args = ["diff", "--a", str(PAIR / "diwali_ours.transcript"), "--b", str(PAIR / "diwali_baseline.transcript")]
        assert main(args) == 0
        out = capsys.readouterr().out
        assert "only in diwali_ours.transcript: Lakshmi Puja" in out
        assert "final_text" in out


def test_scaffold(tmp_path, capsys):
    target = tmp_path / "fx"
    assert main(["scaffold", "--dir", str(target), "--query", "Holi festival tradition"]) == 0
    doc = json.loads((target / "holi-festival-tradition.json").read_text(encoding="utf-8"))
    assert doc["query"] == "Holi festival tradition"
    assert (target / "README.txt").is_file()
    # A second run leaves the edited stub alone.
    (target / "holi-festival-tradition.json").write_text('{"results": []}', encoding="utf-8")
    assert main(["scaffold", "--dir", str(target), "--query", "Holi festival tradition"]) == 0
    assert (target / "holi-festival-tradition.json").read_text(encoding="utf-8") == '{"results": []}'
    assert "exists" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [[], ["frobnicate"], ["run", "--config", "x.yaml"]])
def test_usage_errors(argv, capsys):
    assert main(argv) == 64
    assert "usage error" in capsys.readouterr().err
