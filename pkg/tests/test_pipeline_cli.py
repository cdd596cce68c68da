from __future__ import annotations

import csv
import hashlib
import json
from collections import Counter, defaultdict
from pathlib import Path

import pytest

from conftest import FIXTURES, write_config
from threadsim.cli import main

SUBS = ("fixture_trump", "fixture_clinton")


def tree_bytes(out: Path) -> dict[str, bytes]:
    return {p.relative_to(out).as_posix(): p.read_bytes() for p in sorted(out.rglob("*"))
            if p.is_file() and p.name != "manifest.json"}


def rows(path: Path) -> list[dict]:
    with path.open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def jsonl(path: Path) -> list[dict]:
    return [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines() if line]


def manifest(out: Path) -> dict:
    return json.loads((out / "manifest.json").read_text(encoding="utf-8"))


@pytest.fixture(scope="module")
def full_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("run")
    cfg = write_config(tmp)
    assert main(["run", "-c", str(cfg)]) == 0
    return cfg, tmp / "out"


# ---------------------------------------------------------- determinism


def test_byte_identical_across_runs(full_run, tmp_path):
    cfg, out = full_run
    other = tmp_path / "again"
    assert main(["run", "-c", str(cfg), "--out", str(other), "--workers", "1"]) == 0
    assert tree_bytes(other) == tree_bytes(out)


def test_same_seed_same_report_other_seed_differs(full_run, tmp_path):
    cfg, out = full_run
    assert main(["run", "-c", str(cfg), "--out", str(tmp_path / "s7"), "--seed", "7"]) == 0
    a = (out / "detect/fixture_trump/report.json").read_bytes()
    b = (tmp_path / "s7/detect/fixture_trump/report.json").read_bytes()
    assert a != b


# -------------------------------------------------------------- manifest


def test_manifest_lists_every_file_with_digest(full_run):
    _, out = full_run
    m = manifest(out)
    files = {p.relative_to(out).as_posix() for p in out.rglob("*") if p.is_file() and p.name != "manifest.json"}
    assert set(m["files"]) == files
    for rel, digest in m["files"].items():
        assert hashlib.sha256((out / rel).read_bytes()).hexdigest() == digest
    assert set(m["stages"]) == {"ingest", "simulate", "analyze", "detect"}
    assert all(s["status"] == "ok" for s in m["stages"].values())
    assert len(m["config_digest"]) == 64


def test_resume_is_served_from_cache(full_run):
    cfg, out = full_run
    before = tree_bytes(out)
    assert main(["run", "-c", str(cfg)]) == 0
    m = manifest(out)
    for stage in ("simulate", "analyze"):
        assert m["stages"][stage]["counters"]["backend_calls"] == 0
        assert m["stages"][stage]["counters"]["cache_hits"] > 0
    assert tree_bytes(out) == before


# ------------------------------------------------------------ exit codes


def test_missing_dump_exits_2(tmp_path, capsys):
    cfg = write_config(tmp_path)
    (tmp_path / "trump.jsonl").unlink()
    assert main(["run", "-c", str(cfg)]) == 2
    assert "does not exist" in capsys.readouterr().err
    assert not (tmp_path / "out").exists()


def test_unknown_config_key_exits_2(tmp_path):
    assert main(["run", "-c", str(write_config(tmp_path, colour="blue"))]) == 2


def test_budget_exhaustion_exits_3_with_partial_manifest(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert main(["run", "-c", str(cfg), "--max-calls", "10"]) == 3
    assert "budget exhausted" in capsys.readouterr().err
    m = manifest(tmp_path / "out")
    assert m["stages"]["ingest"]["status"] == "ok"
    assert m["stages"]["simulate"]["status"] == "BudgetExceeded"
    assert m["stages"]["simulate"]["counters"]["backend_calls"] == 10


def test_stage_without_inputs_exits_1(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert main(["analyze", "-c", str(cfg)]) == 1
    assert "error" in capsys.readouterr().err


def test_stages_one_at_a_time_match_run(full_run, tmp_path):
    cfg, out = full_run
    step = tmp_path / "step"
    for stage in ("ingest", "simulate", "analyze", "detect"):
        assert main([stage, "-c", str(cfg), "--out", str(step)]) == 0
    assert tree_bytes(step) == tree_bytes(out)


# ------------------------------------------------------------- contents


def test_records_per_target(tmp_path):
    cfg = write_config(tmp_path, n_runs=1)
    assert main(["ingest", "-c", str(cfg)]) == 0
    assert main(["simulate", "-c", str(cfg)]) == 0
    out = tmp_path / "out"
    for sub in SUBS:
        targets = jsonl(out / f"ingest/{sub}/targets.jsonl")
        gen = jsonl(out / f"simulate/{sub}/T0/generated.jsonl")
        by_target = defaultdict(list)
        for g in gen:
            by_target[g["target_ref"]].append(g["scenario"])
        assert len(by_target) == len(targets)
        for scen in by_target.values():
            assert sorted(scen) == sorted(["RealHistory", "NoHistory", "ProCandidate", "AntiCandidate"])
        assert all(g["text"].strip() for g in gen)


def test_two_targets_four_scenarios_one_run(tmp_path):
    cfg = write_config(tmp_path, n_runs=1, generation={"temperatures": [0.0], "max_targets_per_user": 2})
    assert main(["ingest", "-c", str(cfg)]) == 0
    assert main(["simulate", "-c", str(cfg)]) == 0
    gen = jsonl(tmp_path / "out/simulate/fixture_trump/T0/generated.jsonl")
    per_user = Counter(g["author"] for g in gen)
    assert set(per_user.values()) == {8}


def test_temperature_sweep_gives_disjoint_sets(tmp_path):
    cfg = write_config(tmp_path, n_runs=1, generation={"temperatures": [0.0, 0.5, 1.0], "max_targets_per_user": 1})
    assert main(["ingest", "-c", str(cfg)]) == 0
    assert main(["simulate", "-c", str(cfg)]) == 0
    base = tmp_path / "out/simulate/fixture_clinton"
    sets = {}
    for name, t in (("T0", 0.0), ("T0.5", 0.5), ("T1", 1.0)):
        recs = jsonl(base / name / "generated.jsonl")
        assert {r["temperature"] for r in recs} == {t}
        sets[name] = {r["text"] for r in recs}
    assert len({len(s) for s in sets.values()}) == 1
    assert not (sets["T0"] & sets["T0.5"]) and not (sets["T0"] & sets["T1"]) and not (sets["T0.5"] & sets["T1"])


@pytest.mark.parametrize("sub", SUBS)
def test_scripted_shares(full_run, sub):
    _, out = full_run
    share = {(r["group"], r["axis"]): r for r in rows(out / f"analyze/{sub}/shares.csv")}
    assert float(share[("ProCandidate", "party")]["share_pos"]) == 1.0
    assert float(share[("AntiCandidate", "party")]["share_neg"]) == 1.0
    assert float(share[("NoHistory", "party")]["share_zero"]) == 1.0


@pytest.mark.parametrize("sub", SUBS)
def test_share_rows_sum_to_one(full_run, sub):
    _, out = full_run
    for r in rows(out / f"analyze/{sub}/shares.csv"):
        total = sum(float(r[k]) for k in ("share_neg", "share_zero", "share_pos") if r[k] != "")
        assert abs(total - 1.0) <= 1e-9, r


@pytest.mark.parametrize("sub", SUBS)
def test_projection_covers_centroids(full_run, sub):
    _, out = full_run
    cents = {(r["group"], r["author"]) for r in rows(out / f"analyze/{sub}/centroids.csv")}
    proj = [(r["group"], r["author"]) for r in rows(out / f"analyze/{sub}/projection.csv")]
    assert len(proj) == len(set(proj)) and set(proj) == cents
    svg = (out / f"analyze/{sub}/projection.svg").read_text(encoding="utf-8")
    assert svg.startswith("<svg") and svg.count("<circle") == len(proj)


@pytest.mark.parametrize("sub", SUBS)
def test_real_users_separate_from_generated(full_run, sub):
    _, out = full_run
    dm = {r["group"]: r for r in rows(out / f"analyze/{sub}/distance_matrix.csv")}
    intra = float(dm["Real"]["Real"])
    for g in ("RealHistory", "NoHistory", "ProCandidate", "AntiCandidate"):
        assert float(dm["Real"][g]) > intra
    report = json.loads((out / f"detect/{sub}/report.json").read_text(encoding="utf-8"))
    f1 = {c: v["f1"]["mean"] for c, v in report["per_class"].items()}
    assert f1["Real"] == max(f1.values())
    assert report["runs"] == 5 and len(report["per_run_accuracy"]) == 5


def count_nodes(nodes) -> int:
    return sum(1 + count_nodes(n["children"]) for n in nodes)


def test_ingest_artifacts_conserve_lines(full_run):
    _, out = full_run
    summary = json.loads((out / "ingest/summary.json").read_text(encoding="utf-8"))
    for sub in SUBS:
        s = summary[sub]
        forest = jsonl(out / f"ingest/{sub}/forest.jsonl")
        in_trees = sum(1 + count_nodes(t["comments"]) for t in forest)
        orphans = jsonl(out / f"ingest/{sub}/orphans.jsonl")
        skipped = jsonl(out / f"ingest/{sub}/diagnostics.jsonl")
        assert s["trees"] == len(forest) and s["orphans"] == len(orphans) and s["skipped"] == len(skipped)
        n_lines = sum(1 for line in (FIXTURES / f"{sub.split('_')[1]}.jsonl").read_text().splitlines() if line.strip())
        assert n_lines == in_trees + len(orphans) + len(skipped)
