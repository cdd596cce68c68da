from __future__ import annotations

import json
import shutil
from pathlib import Path

import pytest
import yaml

from threadsim.corpus import Kind, RawRecord

FIXTURES = Path(__file__).resolve().parent / "fixtures"
ROOT = Path(__file__).resolve().parents[1]

# filled by test_acceptance.py, echoed after the run even without -s
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)


def post(pid, t=1_451_700_000, author="op", body="post body", sub="s"):
    return RawRecord(pid, author, body, t, sub, Kind.POST)


def comment(cid, parent, link, t, author="u", body=None, sub="s"):
    return RawRecord(cid, author, body or f"body of {cid}", t, sub, Kind.COMMENT, parent, link)


def jline(**kw) -> str:
    return json.dumps(kw)


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


def write_config(tmp_path: Path, **over) -> Path:
    """Copy the bundled fixture dumps into ``tmp_path`` and write a small mock config."""
    for name in ("trump.jsonl", "clinton.jsonl"):
        shutil.copy(FIXTURES / name, tmp_path / name)
    cfg = {
        "schema_version": 1,
        "out_dir": "out",
        "seed": 0,
        "backend": "mock",
        "workers": 2,
        "n_runs": 2,
        "subreddits": [
            {"name": "fixture_trump", "candidate": "Trump", "dumps": ["trump.jsonl"]},
            {"name": "fixture_clinton", "candidate": "Clinton", "dumps": ["clinton.jsonl"]},
        ],
        "generation": {"temperatures": [0.0], "max_targets_per_user": 2},
        "analysis": {"tsne": {"iterations": 300}},
        "detector": {"runs": 5},
    }
    for k, v in over.items():
        cfg[k] = v
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump(cfg), encoding="utf-8")
    return path


@pytest.fixture
def mock_config(tmp_path) -> Path:
    return write_config(tmp_path)
