"""Pipeline stages behind the CLI: ingest -> simulate -> analyze -> detect.

Every stage reads only the artifacts of earlier stages (plus the config)
from the output directory and writes its own artifacts atomically. A
``manifest.json`` at the top of the output directory lists every file
with its SHA-256 digest.
"""
from __future__ import annotations

import csv
import datetime as dt
import gzip
import hashlib
import io
import json
import logging
import math
import os
import random
from collections import Counter, defaultdict
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import __version__
from .classify import (
    AXES,
    AveragedScore,
    aggregate_shares,
    bin_by_prompt_length,
    classify_corpus,
    cross_tab,
    user_mean_distribution,
)
from .config import RunConfig
from .corpus import (
    TargetComment,
    UserHistory,
    build_forest,
    extract_history,
    extract_targets,
    forest_from_jsonl,
    forest_to_jsonl,
    orphans_to_jsonl,
    parse_files,
    select_users,
)
from .detector import run_experiment
from .embedspace import (
    TSNEParams,
    group_distance_matrix,
    intra_group_similarity,
    project,
    similarity_exceedance,
    user_centroids,
)
from .embedspace.similarity import by_group
from .errors import ConfigError, OversizeContext, PerplexityTooLarge, SingletonGroup, ThreadSimError
from .gateway import Gateway, GenerationRequest, LiveBackend, MockBackend, RateLimiter, ResponseCache, RetryPolicy
from .scenario import GenerationParams, PromptBundle, ScenarioKind, build_scenarios
from .textstats import FEATURE_NAMES, features, ngram_table, rank_correlation, zipf_fit

log = logging.getLogger(__name__)

MANIFEST = "manifest.json"


# ------------------------------------------------------------------ file io


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_atomic(path: Path, data: str | bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    if isinstance(data, str):
        data = data.encode("utf-8")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def jsonl(rows) -> str:
    return "".join(dumps(r) + "\n" for r in rows)


def read_jsonl(path: Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(l) for l in fh if l.strip()]


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow(["" if v is None else v for v in row])
    return buf.getvalue()


def _fmt_t(t: float) -> str:
    return f"T{t:g}"


class MissingArtifact(ThreadSimError):
    pass


def _need(path: Path) -> Path:
    if not path.exists():
        raise MissingArtifact(f"missing artifact {path} (run the earlier stage first)")
    return path


# ----------------------------------------------------------------- manifest


class Manifest:
    def __init__(self, cfg: RunConfig):
        self.root = cfg.out_path
        self.path = self.root / MANIFEST
        if self.path.exists():
            self.data = json.loads(self.path.read_text(encoding="utf-8"))
        else:
            self.data = {"tool": "threadsim", "version": __version__, "stages": {}, "files": {}}
        self.data["config_digest"] = cfg.digest()
        self.data["version"] = __version__

    def _rel(self, p: Path) -> str:
        return p.resolve().relative_to(self.root.resolve()).as_posix()

    @contextmanager
    def stage(self, name: str, inputs: list[Path], gateway: Gateway | None = None):
        rec = {
            "started": dt.datetime.now(dt.timezone.utc).isoformat(),
            "inputs": {str(p): sha256_file(p) for p in inputs if p.exists()},
            "status": "running",
        }
        outputs: list[Path] = []
        try:
            yield outputs
            rec["status"] = "ok"
        except BaseException as exc:
            rec["status"] = type(exc).__name__
            rec["error"] = str(exc)
            raise
        finally:
            if gateway is not None:
                gateway.cache.compact()
                rec["counters"] = {"backend_calls": gateway.calls, "cache_hits": gateway.cache_hits,
                                   "max_calls": gateway.max_calls}
            rec["finished"] = dt.datetime.now(dt.timezone.utc).isoformat()
            rec["outputs"] = {self._rel(p): sha256_file(p) for p in outputs if p.exists()}
            self.data["stages"][name] = rec
            self.save()

    def save(self) -> None:
        files = {}
        if self.root.exists():
            for p in sorted(self.root.rglob("*")):
                if p.is_file() and p.name != MANIFEST and not p.name.endswith(".tmp"):
                    files[self._rel(p)] = sha256_file(p)
        self.data["files"] = files
        write_atomic(self.path, json.dumps(self.data, sort_keys=True, indent=2) + "\n")


def _emit(outputs: list[Path], path: Path, data: str | bytes) -> Path:
    write_atomic(path, data)
    outputs.append(path)
    return path


# ------------------------------------------------------------------ gateway


def make_gateway(cfg: RunConfig, cache_name: str, backend=None) -> Gateway:
    if backend is None:
        if cfg.backend == "mock":
            backend = MockBackend(dim=cfg.embedding.mock_dim, seed=cfg.seed)
        else:
            backend = LiveBackend(cfg.live.base_url, api_key_env=cfg.live.api_key_env, timeout=cfg.live.timeout)
    limiter = RateLimiter(
        max_in_flight=cfg.live.max_in_flight if cfg.backend == "live" else max(cfg.workers, 1),
        per_minute=cfg.live.requests_per_minute if cfg.backend == "live" else None,
    )
    retry = RetryPolicy(attempts=cfg.live.retry_attempts, base_delay=cfg.live.retry_base_delay,
                        rng=random.Random(cfg.seed))
    cache = ResponseCache(cfg.out_path / "cache" / f"{cache_name}.jsonl")
    return Gateway(backend, cache=cache, retry=retry, limiter=limiter, max_calls=cfg.max_calls)


def _map(cfg: RunConfig, fn, items):
    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as ex:
            return list(ex.map(fn, items))
    return [fn(i) for i in items]


# ------------------------------------------------------------------- ingest


def _sub_dir(cfg: RunConfig, stage: str, sub: str) -> Path:
    return cfg.out_path / stage / sub


def ingest(cfg: RunConfig) -> dict:
    """Parse dumps, build forests, select users and extract histories/targets."""
    for sub in cfg.subreddits:
        for p in sub.dumps:
            if not Path(p).is_file():
                raise ConfigError(f"input path does not exist: {p}")
    manifest = Manifest(cfg)
    summary = {}
    inputs = [Path(p) for s in cfg.subreddits for p in s.dumps]
    with manifest.stage("ingest", inputs) as outputs:
        for sub in cfg.subreddits:
            d = _sub_dir(cfg, "ingest", sub.name)
            parsed = parse_files(sub.dumps)
            forest = build_forest(parsed.records)
            hw, tw = cfg.history_window, cfg.target_window
            users = select_users(forest, forest, hw, tw)
            histories = [extract_history(u, forest, hw) for u in users]
            targets = []
            for u in users:
                ts = extract_targets(u, forest, tw)
                if cfg.generation.max_targets_per_user is not None:
                    ts = ts[: cfg.generation.max_targets_per_user]
                targets.extend(ts)
            targets.sort(key=lambda t: (t.tree_ref, t.node_ref))

            _emit(outputs, d / "forest.jsonl", forest_to_jsonl(forest))
            _emit(outputs, d / "orphans.jsonl", orphans_to_jsonl(forest))
            _emit(outputs, d / "diagnostics.jsonl", jsonl(x.to_dict() for x in parsed.skipped))
            _emit(outputs, d / "users.json", dumps({"subreddit": sub.name, "candidate": sub.candidate,
                                                   "users": users}) + "\n")
            _emit(outputs, d / "histories.jsonl", jsonl(h.to_dict() for h in histories))
            _emit(outputs, d / "targets.jsonl", jsonl(t.to_dict() for t in targets))
            summary[sub.name] = {
                "records": len(parsed.records), "skipped": len(parsed.skipped), "trees": len(forest),
                "orphans": len(forest.orphans), "users": len(users), "targets": len(targets),
            }
        _emit(outputs, cfg.out_path / "ingest" / "summary.json", dumps(summary) + "\n")
    return summary


def _load_ingest(cfg: RunConfig, sub: str):
    d = _sub_dir(cfg, "ingest", sub)
    forest = forest_from_jsonl(_need(d / "forest.jsonl").read_text(encoding="utf-8"),
                               _need(d / "orphans.jsonl").read_text(encoding="utf-8"))
    histories = {h["author"]: UserHistory.from_dict(h) for h in read_jsonl(_need(d / "histories.jsonl"))}
    targets = [TargetComment.from_dict(t) for t in read_jsonl(_need(d / "targets.jsonl"))]
    return forest, histories, targets


# ----------------------------------------------------------------- simulate


def _scenario_rank(s: str) -> int:
    return [k.value for k in ScenarioKind].index(s)


def simulate(cfg: RunConfig, backend=None) -> dict:
    """Generate comments for every target x scenario x temperature x run."""
    manifest = Manifest(cfg)
    gw = make_gateway(cfg, "generation", backend)
    summary = {}
    inputs = [_sub_dir(cfg, "ingest", s.name) / f for s in cfg.subreddits
              for f in ("forest.jsonl", "orphans.jsonl", "histories.jsonl", "targets.jsonl")]
    with manifest.stage("simulate", inputs, gw) as outputs:
        for sub in cfg.subreddits:
            forest, histories, targets = _load_ingest(cfg, sub.name)
            bundles: list[PromptBundle] = []
            skipped = []
            for t in targets:
                tree = forest.tree_of(t.tree_ref)
                try:
                    bundles.extend(build_scenarios(
                        tree, t, histories.get(t.author), sub.candidate, cfg.scenarios,
                        token_budget=cfg.generation.token_budget,
                        anonymize_salt=cfg.generation.anonymize_salt,
                    ))
                except OversizeContext as exc:
                    log.warning("skipping %s: %s", t.ref, exc)
                    skipped.append(t.ref)
            bundles.sort(key=lambda b: (b.target_ref, _scenario_rank(b.scenario.value)))
            d = _sub_dir(cfg, "simulate", sub.name)
            _emit(outputs, d / "prompts.jsonl", jsonl(b.to_dict() for b in bundles))

            counts = {}
            for temp in cfg.generation.temperatures:
                params = GenerationParams(temp, cfg.generation.top_p, cfg.generation.model)
                jobs = [GenerationRequest(b, params, r) for b in bundles for r in range(cfg.n_runs)]
                results = _map(cfg, gw.generate, jobs)
                hits = sum(r.cached for r in results)
                log.info("%s %s: %d generations (%d cache hits)", sub.name, _fmt_t(temp), len(results), hits)
                results.sort(key=lambda g: (g.target_ref, _scenario_rank(g.scenario.value), g.run_index))
                # the cache flag describes this invocation, not the result, so it stays out of the artifact
                rows = [{k: v for k, v in g.to_dict().items() if k != "cached"} for g in results]
                _emit(outputs, d / _fmt_t(temp) / "generated.jsonl", jsonl(rows))
                counts[_fmt_t(temp)] = len(results)
            summary[sub.name] = {"prompts": len(bundles), "generated": counts, "skipped_targets": skipped}
        _emit(outputs, cfg.out_path / "simulate" / "summary.json", dumps(summary) + "\n")
    return summary


# ------------------------------------------------------------------ analyze


def _modal(values: list[int]) -> int:
    c = Counter(values).most_common()
    if not c:
        return 0
    winners = [v for v, n in c if n == c[0][1]]
    return winners[0] if len(winners) == 1 else 0


def _svg_scatter(points, width: int = 640, height: int = 640) -> str:
    palette = {"Real": "#222222", "RealHistory": "#1f77b4", "NoHistory": "#7f7f7f",
               "ProCandidate": "#2ca02c", "AntiCandidate": "#d62728"}
    xs = [p[0] for p in points]
    ys = [p[1] for p in points]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    sx = (width - 40) / ((x1 - x0) or 1.0)
    sy = (height - 40) / ((y1 - y0) or 1.0)
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
           f'<rect width="{width}" height="{height}" fill="white"/>']
    for x, y, g, a in points:
        cx = 20 + (x - x0) * sx
        cy = height - 20 - (y - y0) * sy
        out.append(f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="4" fill="{palette.get(g, "#9467bd")}">'
                   f"<title>{g}: {a}</title></circle>")
    for i, (g, color) in enumerate(palette.items()):
        out.append(f'<text x="10" y="{16 + 14 * i}" font-size="12" fill="{color}">{g}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def analyze(cfg: RunConfig, backend=None) -> dict:
    """Classify, compute text statistics and embedding-space tables for every subreddit."""
    manifest = Manifest(cfg)
    # one gateway (and one call budget) for classification and embedding calls
    cls_gw = emb_gw = make_gateway(cfg, "analysis", backend)
    primary_t = cfg.generation.temperatures[0]
    inputs = []
    for s in cfg.subreddits:
        inputs += [_sub_dir(cfg, "ingest", s.name) / "targets.jsonl",
                   _sub_dir(cfg, "simulate", s.name) / "prompts.jsonl"]
        inputs += [_sub_dir(cfg, "simulate", s.name) / _fmt_t(t) / "generated.jsonl"
                   for t in cfg.generation.temperatures]
    summary = {}
    with manifest.stage("analyze", inputs, cls_gw) as outputs:
        for sub in cfg.subreddits:
            summary[sub.name] = _analyze_sub(cfg, sub, cls_gw, emb_gw, primary_t, outputs)
        _emit(outputs, cfg.out_path / "analyze" / "summary.json", dumps(summary) + "\n")
    return summary


def _analyze_sub(cfg, sub, cls_gw, emb_gw, primary_t, outputs) -> dict:
    forest, histories, targets = _load_ingest(cfg, sub.name)
    sim_dir = _sub_dir(cfg, "simulate", sub.name)
    prompts = read_jsonl(_need(sim_dir / "prompts.jsonl"))
    generated = {t: read_jsonl(_need(sim_dir / _fmt_t(t) / "generated.jsonl")) for t in cfg.generation.temperatures}
    out = _sub_dir(cfg, "analyze", sub.name)
    cparams = GenerationParams(cfg.classification.temperature, 1.0, cfg.classification.model)
    executor = ThreadPoolExecutor(max_workers=cfg.workers) if cfg.workers > 1 else None

    # --- classification
    texts: dict[str, str] = {}
    meta: dict[str, dict] = {}
    for t in targets:
        key = f"real/{t.ref}"
        texts[key] = t.body
        meta[key] = {"kind": "real", "group": "Real", "author": t.author, "target_ref": t.ref}
    if cfg.classification.classify_context:
        for tree_id in sorted({t.tree_ref for t in targets}):
            key = f"post/{tree_id}"
            texts[key] = forest.tree_of(tree_id).root.body
            meta[key] = {"kind": "post", "group": "Post", "tree_ref": tree_id}
        for author, hist in sorted(histories.items()):
            for i, e in enumerate(hist.entries):
                key = f"hist/{author}/{e.comment_id or i}"
                texts[key] = e.user_comment
                meta[key] = {"kind": "history", "group": "History", "author": author}
    for temp, rows in generated.items():
        for g in rows:
            key = f"gen/{_fmt_t(temp)}/{g['scenario']}/{g['target_ref']}/{g['run_index']}"
            texts[key] = g["text"]
            meta[key] = {"kind": "generated", "group": g["scenario"], "author": g["author"],
                         "target_ref": g["target_ref"], "run_index": g["run_index"], "temperature": temp}
    try:
        classified = classify_corpus(texts, sub.candidate, cfg.classification.n_runs, cls_gw, cparams, executor)
    finally:
        if executor:
            executor.shutdown()
    by_key = {c.key: c for c in classified}
    _emit(outputs, out / "classifications.jsonl", jsonl(
        {"key": c.key, **meta[c.key], "score": c.score.to_dict() if c.score else None,
         "malformed_runs": c.malformed_runs, "error": c.error}
        for c in sorted(classified, key=lambda c: c.key)
    ))

    # per-(temperature, scenario, target) score averaged over generation runs
    gen_runs: dict[tuple, list] = defaultdict(list)
    for key, m in meta.items():
        if m["kind"] == "generated" and by_key[key].score is not None:
            gen_runs[(m["temperature"], m["group"], m["target_ref"])].extend(by_key[key].score.runs)
    gen_scores: dict[tuple, AveragedScore | None] = {}
    for temp, rows in generated.items():
        for g in rows:
            k = (temp, g["scenario"], g["target_ref"])
            gen_scores[k] = AveragedScore.from_runs(gen_runs[k]) if gen_runs.get(k) else None

    real_scores = {t.ref: by_key[f"real/{t.ref}"].score for t in targets}
    author_of = {t.ref: t.author for t in targets}

    # --- shares
    share_rows = []

    def add_shares(group, temp, scores):
        if not scores:
            return
        for axis in AXES:
            sb = aggregate_shares(scores, axis, cfg.analysis.share_mode)
            neg = sb.share(-1) if axis != "violence" else None
            share_rows.append([group, "" if temp is None else temp, axis, cfg.analysis.share_mode, sb.n,
                               sb.unclassified, neg, sb.share(0), sb.share(1)])

    contexts = defaultdict(list)
    for key, m in meta.items():
        if m["kind"] in ("post", "history"):
            contexts[m["group"]].append(by_key[key].score)
    add_shares("History", None, contexts.get("History"))
    add_shares("Post", None, contexts.get("Post"))
    add_shares("Real", None, list(real_scores.values()))
    scenarios_present = [s for s in (k.value for k in ScenarioKind) if s in cfg.scenarios]
    for temp in cfg.generation.temperatures:
        for sc in scenarios_present:
            add_shares(sc, temp, [v for (t, s, _), v in sorted(gen_scores.items()) if t == temp and s == sc])
    _emit(outputs, out / "shares.csv", csv_text(
        ["group", "temperature", "axis", "mode", "n", "unclassified", "share_neg", "share_zero", "share_pos"],
        share_rows))

    # --- per-user mean party score (distribution over users)
    mean_rows, hist_rows = [], []

    def add_user_means(group, temp, pairs):
        grouped = defaultdict(list)
        for author, score in pairs:
            if score is not None:
                grouped[author].append(score)
        if not grouped:
            return
        h = user_mean_distribution(grouped, bins=cfg.analysis.histogram_bins)
        tval = "" if temp is None else temp
        mean_rows.extend([group, tval, a, m] for a, m in h.author_means.items())
        hist_rows.extend([group, tval, float(h.edges[i]), float(h.edges[i + 1]), int(c)]
                         for i, c in enumerate(h.counts))

    add_user_means("Real", None, [(author_of[r], s) for r, s in sorted(real_scores.items())])
    for temp in cfg.generation.temperatures:
        for sc in scenarios_present:
            add_user_means(sc, temp, [(author_of[r], v) for (t, s, r), v in sorted(gen_scores.items())
                                      if t == temp and s == sc])
    _emit(outputs, out / "user_means.csv", csv_text(["group", "temperature", "author", "party_mean"], mean_rows))
    _emit(outputs, out / "user_mean_hist.csv",
          csv_text(["group", "temperature", "bin_lo", "bin_hi", "count"], hist_rows))

    # --- party alignment vs prompt length
    tokens = {(p["scenario"], p["target_ref"]): p["token_estimate"] for p in prompts}
    bin_rows = []
    for temp in cfg.generation.temperatures:
        for sc in scenarios_present:
            pairs = [(v.party_mean, tokens[(s, r)]) for (t, s, r), v in sorted(gen_scores.items())
                     if t == temp and s == sc and v is not None and (s, r) in tokens]
            if not pairs:
                continue
            for b in bin_by_prompt_length([p[0] for p in pairs], [p[1] for p in pairs], cfg.analysis.bin_width):
                bin_rows.append([temp, sc, b.lo, b.hi, b.count, b.mean])
    _emit(outputs, out / "length_bins.csv",
          csv_text(["temperature", "scenario", "bin_lo", "bin_hi", "count", "mean_party"], bin_rows))

    # --- cross tabs: generated label vs history label / post label
    if cfg.classification.classify_context:
        hist_label = {}
        for author in histories:
            for axis_i, axis in enumerate(("party", "sentiment")):
                labels = [by_key[k].score.modal_triple.as_tuple()[axis_i] for k, m in meta.items()
                          if m["kind"] == "history" and m["author"] == author and by_key[k].score is not None]
                hist_label[(author, axis)] = _modal(labels) if labels else None
        post_label = {}
        for k, m in meta.items():
            if m["kind"] == "post" and by_key[k].score is not None:
                trip = by_key[k].score.modal_triple
                post_label[(m["tree_ref"], "party")] = trip.party
                post_label[(m["tree_ref"], "sentiment")] = trip.sentiment
        for cond_name in ("history", "post"):
            rows = []
            for temp in cfg.generation.temperatures:
                for sc in scenarios_present:
                    for axis_i, axis in enumerate(("party", "sentiment")):
                        cond, outc = [], []
                        for (t, s, r), v in sorted(gen_scores.items()):
                            if t != temp or s != sc or v is None:
                                continue
                            if cond_name == "history":
                                c = hist_label.get((author_of[r], axis))
                            else:
                                c = post_label.get((r.split("/")[0], axis))
                            if c is None:
                                continue
                            cond.append(c)
                            outc.append(v.modal_triple.as_tuple()[axis_i])
                        if not cond:
                            continue
                        ct = cross_tab(cond, outc)
                        for i, cl in enumerate(ct.labels):
                            for j, ol in enumerate(ct.labels):
                                rows.append([temp, sc, axis, cl, ol, int(ct.counts[i, j]),
                                             float(ct.fractions[i, j]), int(cl in ct.empty_rows)])
            _emit(outputs, out / f"crosstab_{cond_name}.csv", csv_text(
                ["temperature", "scenario", "axis", "conditioner_label", "outcome_label", "count",
                 "row_fraction", "empty_row"], rows))

    # --- text statistics (primary temperature)
    corpora = {"Real": [t.body for t in targets]}
    for sc in scenarios_present:
        corpora[sc] = [g["text"] for g in generated[primary_t] if g["scenario"] == sc]
    feat_rows, zipf_rows, corr_rows = [], [], []
    tables = {}
    for group, corpus in corpora.items():
        if not corpus:
            continue
        try:
            fr = features(corpus)
        except ThreadSimError:
            continue
        for name in FEATURE_NAMES:
            st = getattr(fr, name)
            feat_rows.append([group, name, st.mean, st.sd, st.se, fr.n_texts])
        for n in (1, 2, 3):
            table = ngram_table(corpus, n)
            tables[(group, n)] = table
            if cfg.analysis.ngram_tsv:
                _emit(outputs, out / "ngrams" / f"{group}_n{n}.tsv.gz",
                      gzip.compress(table.to_tsv().encode("utf-8"), mtime=0))
            try:
                z = zipf_fit(table, cfg.analysis.min_count)
                zipf_rows.append([group, n, z.s, z.C, z.r2, z.n_points, ""])
            except ThreadSimError as exc:
                zipf_rows.append([group, n, None, None, None, 0, str(exc)])
    for group in corpora:
        if group == "Real":
            continue
        for n in (1, 2, 3):
            if (group, n) in tables and ("Real", n) in tables:
                try:
                    r, shared = rank_correlation(tables[("Real", n)], tables[(group, n)])
                    corr_rows.append([group, n, r, shared])
                except ThreadSimError:
                    corr_rows.append([group, n, None, 0])
    _emit(outputs, out / "features.csv", csv_text(["group", "feature", "mean", "sd", "se", "n_texts"], feat_rows))
    _emit(outputs, out / "zipf.csv", csv_text(["group", "n", "s", "C", "r2", "n_points", "note"], zipf_rows))
    _emit(outputs, out / "rank_correlations.csv", csv_text(["group", "n", "pearson_r", "n_shared"], corr_rows))

    # --- embeddings (primary temperature)
    items = []
    for t in targets:
        items.append((t.author, "Real", t.body))
    for g in generated[primary_t]:
        items.append((g["author"], g["scenario"], g["text"]))
    vecs = _map(cfg, lambda it: emb_gw.embed(it[2], cfg.embedding.model).values, items)
    cents = user_centroids((a, grp, v) for (a, grp, _), v in zip(items, vecs))
    cents = [c for c in cents if not c.is_zero]
    dim = cents[0].vector.shape[0] if cents else 0
    _emit(outputs, out / "centroids.csv", csv_text(
        ["author", "group", "n_comments"] + [f"v{i}" for i in range(dim)],
        ([c.author, c.group, c.n_comments] + [float(x) for x in c.vector] for c in cents)))

    real = [c for c in cents if c.group == "Real"]
    gen = [c for c in cents if c.group != "Real"]
    exc_rows = []
    for baseline in ("RandomMatch", "AllRealMean"):
        if gen and real:
            res = similarity_exceedance(gen, real, baseline, seed=cfg.seed, n_shuffles=cfg.analysis.exceedance_shuffles)
            for g, r in res.items():
                exc_rows.append([g, baseline, r.proportion, r.n_users, r.threshold])
    _emit(outputs, out / "exceedance.csv", csv_text(["group", "baseline", "proportion", "n_users", "threshold"],
                                                     exc_rows))
    intra_rows = []
    for g, members in by_group(cents).items():
        try:
            intra_rows.append([g, intra_group_similarity(members), len(members)])
        except SingletonGroup:
            intra_rows.append([g, None, len(members)])
    _emit(outputs, out / "intra_similarity.csv", csv_text(["group", "mean_pairwise_similarity", "n_users"],
                                                          intra_rows))
    if cents:
        dm = group_distance_matrix(cents)
        _emit(outputs, out / "distance_matrix.csv", csv_text(
            ["group"] + list(dm.groups),
            ([g] + [None if math.isnan(x) else float(x) for x in dm.values[i]] for i, g in enumerate(dm.groups))))

    proj_n = 0
    if len(cents) >= 4:
        tp = cfg.analysis.tsne
        params = TSNEParams(perplexity=tp.perplexity, iterations=tp.iterations, learning_rate=tp.learning_rate,
                            early_exaggeration=tp.early_exaggeration, exaggeration_iters=tp.exaggeration_iters,
                            seed=cfg.seed)
        try:
            X = np.vstack([c.vector for c in cents])
            proj = project(X, [c.group for c in cents], [c.author for c in cents], params)
            _emit(outputs, out / "projection.csv",
                  csv_text(["x", "y", "group", "author"], ([x, y, g, a] for x, y, g, a in proj.points)))
            _emit(outputs, out / "projection_params.json",
                  dumps({"params": proj.params, "kl_trace": proj.kl_trace, "items": "user_centroids"}) + "\n")
            if cfg.analysis.svg:
                _emit(outputs, out / "projection.svg", _svg_scatter(proj.points))
            proj_n = len(proj.points)
        except PerplexityTooLarge as exc:
            log.warning("projection skipped: %s", exc)

    return {
        "texts_classified": sum(c.classified for c in classified),
        "texts_unclassified": sum(not c.classified for c in classified),
        "centroids": len(cents),
        "projected": proj_n,
    }


# ------------------------------------------------------------------- detect


def load_centroid_csv(path: Path) -> tuple[np.ndarray, list[str], list[str]]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        vcols = [i for i, h in enumerate(header) if h.startswith("v")]
        X, y, authors = [], [], []
        for row in reader:
            authors.append(row[0])
            y.append(row[1])
            X.append([float(row[i]) for i in vcols])
    return np.asarray(X, dtype=float), y, authors


def detect(cfg: RunConfig) -> dict:
    """Train/evaluate the one-vs-rest linear SVM on each subreddit's user centroids."""
    manifest = Manifest(cfg)
    inputs = [_sub_dir(cfg, "analyze", s.name) / "centroids.csv" for s in cfg.subreddits]
    summary = {}
    with manifest.stage("detect", inputs) as outputs:
        for sub in cfg.subreddits:
            X, y, _ = load_centroid_csv(_need(_sub_dir(cfg, "analyze", sub.name) / "centroids.csv"))
            dc = cfg.detector
            report = run_experiment(X, y, dc.split_fraction, dc.runs, cfg.seed, dc.C, dc.max_epochs, dc.tol,
                                    dc.normalize)
            d = _sub_dir(cfg, "detect", sub.name)
            _emit(outputs, d / "report.json", json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n")
            _emit(outputs, d / "confusion.csv", csv_text(
                ["true\\predicted"] + report.classes,
                ([c] + report.confusion[i].tolist() for i, c in enumerate(report.classes))))
            summary[sub.name] = {"accuracy": report.accuracy.mean, "accuracy_std": report.accuracy.std,
                                 "f1": {c: report.f1[c].mean for c in report.classes}}
    return summary
