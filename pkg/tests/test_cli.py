import io
import json
import subprocess
import sys

import pytest

from sarcexplain.cli import EXIT_CONFIG, EXIT_DEGRADED, EXIT_FAILURE, EXIT_OK, main

from conftest import GOLDEN, PIPELINE, WHITLAM, fixture_endpoint


def write_config(tmp_path, url):
    text = (PIPELINE / "config.toml").read_text()
    text = text.replace("http://fixture.invalid/v1", url)
    text = text.replace('strategies = ["zero", "few", "origin", "kg", "pmp"]', 'strategies = ["zero", "pmp"]')
    for name in ("flute", "besstie-au", "besstie-in", "search"):
        ext = "json" if name == "search" else "jsonl"
        text = text.replace(f'"{name}.{ext}"', json.dumps(str(PIPELINE / f"{name}.{ext}")))
    text = text.replace('cache_dir = "cache"', f'cache_dir = "{tmp_path / "cache"}"')
    text = text.replace('runs_dir = "runs"', f'runs_dir = "{tmp_path / "runs"}"')
    path = tmp_path / "config.toml"
    path.write_text(text)
    return path


def test_run_and_report_over_http(tmp_path, capsys):
    with fixture_endpoint().serve() as url:
        config = write_config(tmp_path, url)
        assert main(["run", "--config", str(config)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "### besstie-au" in out and "| mock-chat | pmp |" in out
    run_dir = next((tmp_path / "runs").iterdir())

    # replay offline from the warm cache, then resume, then re-render
    assert main(["run", "--config", str(config), "--offline"]) == EXIT_OK
    assert main(["run", "--config", str(config), "--offline", "--resume"]) == EXIT_OK
    capsys.readouterr()
    assert main(["report", "--from", str(run_dir), "--format", "csv"]) == EXIT_OK
    assert capsys.readouterr().out == (run_dir / "report.csv").read_text()
    assert main(["report", "--from", str(run_dir), "--format", "json", "--figures"]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["rows"]


def test_run_degraded_exit(tmp_path):
    config = write_config(tmp_path, "http://fixture.invalid/v1")
    assert main(["run", "--config", str(config), "--offline"]) == EXIT_DEGRADED


def test_run_config_errors(tmp_path):
    assert main(["run", "--config", str(tmp_path / "missing.toml")]) == EXIT_CONFIG
    config = write_config(tmp_path, "http://x/v1")
    assert main(["run", "--config", str(config), "--offline", "--resume"]) == EXIT_CONFIG
    assert main(["run", "--config", str(config), "--judge-template", str(tmp_path / "nope")]) == EXIT_CONFIG
    assert main(["run", "--config", str(config), "--max-steps", "0"]) == EXIT_CONFIG


def test_digest_mismatch_exit(tmp_path):
    config = write_config(tmp_path, "http://x/v1")
    run_dir = tmp_path / "fixed"
    assert main(["run", "--config", str(config), "--offline", "--run-dir", str(run_dir)]) == EXIT_DEGRADED
    assert main(["run", "--config", str(config), "--offline", "--run-dir", str(run_dir),
                 "--max-steps", "3"]) == EXIT_CONFIG


def test_report_missing(tmp_path):
    assert main(["report", "--from", str(tmp_path)]) == EXIT_FAILURE


def test_stats(capsys):
    assert main(["stats", "--dataset", str(PIPELINE / "besstie-au.jsonl"), str(PIPELINE / "besstie-in.jsonl")]) == 0
    out = capsys.readouterr().out
    assert out.startswith("| Subset | Samples |")
    assert "| besstie-au | 20 |" in out


def test_stats_variety_mismatch(capsys):
    assert main(["stats", "--dataset", str(PIPELINE / "flute.jsonl"), "--variety", "au"]) == EXIT_FAILURE


@pytest.mark.parametrize(
    "stdin,expected",
    [
        ("sarcastic. Explanation: It mocks Mondays.\n", {"label": "sarcastic", "explanation": "It mocks Mondays."}),
        ("Needs_Context", {"label": "need_context", "explanation": None}),
    ],
)
def test_parse(monkeypatch, capsys, stdin, expected):
    monkeypatch.setattr(sys, "stdin", io.StringIO(stdin))
    assert main(["parse"]) == EXIT_OK
    assert json.loads(capsys.readouterr().out) == expected


def test_parse_empty(monkeypatch):
    monkeypatch.setattr(sys, "stdin", io.StringIO(""))
    assert main(["parse", "--strategy", "pmp"]) == EXIT_FAILURE


def test_explain_prompt(capsys):
    assert main(["explain-prompt", "--strategy", "pmp", "--text", WHITLAM, "--variety", "au"]) == EXIT_OK
    assert capsys.readouterr().out == (GOLDEN / "pmp.txt").read_text()
    assert main(["explain-prompt", "--strategy", "origin", "--dataset", str(PIPELINE / "besstie-in.jsonl"),
                 "--id", "in-04"]) == EXIT_OK
    assert "This text is from Indian subreddit" in capsys.readouterr().out
    assert main(["explain-prompt", "--strategy", "origin", "--text", "hi"]) == EXIT_FAILURE
    assert main(["explain-prompt", "--strategy", "zero", "--dataset", str(PIPELINE / "flute.jsonl"),
                 "--id", "nope"]) == EXIT_FAILURE


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "sarcexplain", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "explain-prompt" in proc.stdout
